#pragma once

#include "mmgmrf/error.hpp"
#include "mmgmrf/numeric.hpp"
#include "mmgmrf/network.hpp"
#include "mmgmrf/observation.hpp"
#include "mmgmrf/stopgo.hpp"
#include "mmgmrf/markov.hpp"
#include "mmgmrf/factor.hpp"
#include "mmgmrf/gmrf.hpp"
#include "mmgmrf/inference.hpp"
#include "mmgmrf/synth.hpp"
#include "mmgmrf/eval.hpp"
#include "mmgmrf/parallel.hpp"
#include "mmgmrf/pipeline.hpp"
