#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "mmgmrf/network.hpp"

using namespace mmgmrf;

namespace {

RoadNetwork chain(std::size_t n, int m) {
  RoadNetwork net;
  net.downstream.resize(n);
  for (LinkId l = 0; l + 1 < n; ++l) net.downstream[l].push_back(l + 1);
  net.modes.assign(n, m);
  net.length_m.assign(n, 100.0);
  return net;
}

std::set<std::pair<VarId, VarId>> entry_set(const EdgePattern& p) {
  return {p.entries().begin(), p.entries().end()};
}

}  // namespace

TEST(VariableIndex, SingleLinkSingleMode) {
  const auto idx = build_variable_index(chain(1, 1));
  EXPECT_EQ(idx.size(), 1u);
  EXPECT_EQ(idx.beta(0, 0), 0u);
}

TEST(VariableIndex, RoundTrip) {
  const auto idx = build_variable_index(chain(2, 2));
  ASSERT_EQ(idx.size(), 4u);
  std::set<VarId> seen;
  for (LinkId l = 0; l < 2; ++l) {
    for (int s = 0; s < 2; ++s) {
      const VarId v = idx.beta(l, s);
      EXPECT_EQ(idx.link_of(v), l);
      EXPECT_EQ(idx.state_of(v), s);
      seen.insert(v);
    }
  }
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_EQ(*seen.rbegin(), 3u);
}

TEST(VariableIndex, MixedModesAreDenseAndContiguous) {
  auto net = chain(4, 1);
  net.modes = {1, 3, 2, 1};
  const auto idx = build_variable_index(net);
  ASSERT_EQ(idx.size(), 7u);
  VarId expect = 0;
  for (LinkId l = 0; l < 4; ++l)
    for (int s = 0; s < net.modes[l]; ++s) EXPECT_EQ(idx.beta(l, s), expect++);
}

TEST(VariableIndex, GridDimensionIsTwiceLinkCount) {
  const auto net = make_grid_network(20, 20, 2);
  // Directed 4-neighbour grid: 2 * (2WH - W - H) links.
  EXPECT_EQ(net.size(), 2u * (2 * 20 * 20 - 20 - 20));
  EXPECT_EQ(build_variable_index(net).size(), 2 * net.size());
}

TEST(EdgePattern, IsolatedLink) {
  const auto net = chain(1, 2);
  const auto p = build_edge_pattern(net, build_variable_index(net));
  const std::set<std::pair<VarId, VarId>> want{{0, 0}, {1, 1}, {0, 1}};
  EXPECT_EQ(entry_set(p), want);
}

TEST(EdgePattern, DisconnectedLinksHaveNoCrossEdges) {
  RoadNetwork net;
  net.downstream.resize(2);
  net.modes = {2, 2};
  net.length_m = {1.0, 1.0};
  const auto idx = build_variable_index(net);
  const auto p = build_edge_pattern(net, idx);
  for (auto [u, v] : p.entries()) EXPECT_EQ(idx.link_of(u), idx.link_of(v));
  EXPECT_EQ(net.component_count(), 2u);
}

TEST(EdgePattern, ChainOmitsSecondNeighbours) {
  const auto net = chain(3, 1);
  const auto p = build_edge_pattern(net, build_variable_index(net));
  const std::set<std::pair<VarId, VarId>> want{{0, 0}, {1, 1}, {2, 2}, {0, 1}, {1, 2}};
  EXPECT_EQ(entry_set(p), want);
  EXPECT_FALSE(p.contains(0, 2));
}

TEST(EdgePattern, SymmetricWithFullDiagonal) {
  const auto net = make_grid_network(6, 5, 2);
  const auto p = build_edge_pattern(net, build_variable_index(net));
  for (VarId u = 0; u < p.dim(); ++u) {
    EXPECT_TRUE(p.contains(u, u));
    for (VarId v : p.row(u)) {
      EXPECT_TRUE(p.contains(v, u));
      EXPECT_EQ(p.find(u, v), p.find(v, u));
    }
  }
  EXPECT_EQ(p.nnz(), 2 * p.entry_count() - p.dim());
}

TEST(EdgePattern, SizeGrowsLinearlyOnGrids) {
  std::vector<double> ratios;
  for (int n : {10, 20, 40}) {
    const auto net = make_grid_network(n, n, 2);
    const auto p = build_edge_pattern(net, build_variable_index(net));
    ratios.push_back(static_cast<double>(p.nnz()) / static_cast<double>(p.dim()));
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  EXPECT_LE(*hi / *lo, 1.10);
}

TEST(EdgePattern, FromPairsRejectsOutOfRange) {
  EXPECT_THROW(EdgePattern::from_pairs(2, {{0, 5}}), InvalidArgument);
}

TEST(Network, CsvRoundTrip) {
  auto net = make_grid_network(3, 2, 2);
  net.length_m[3] = 123.456789012345;
  std::stringstream ss;
  write_network_csv(ss, net);
  const auto back = read_network_csv(ss, 2);
  EXPECT_EQ(back.downstream, net.downstream);
  EXPECT_EQ(back.length_m, net.length_m);
  EXPECT_EQ(back.modes, net.modes);
}

TEST(Network, CsvRejectsDanglingReference) {
  std::stringstream ss("link_id,length_m,downstream_ids\n0,10,1\n1,10,7\n");
  EXPECT_THROW(read_network_csv(ss, 2), InvalidNetwork);
}

TEST(Network, CsvRejectsBadHeaderAndNumbers) {
  std::stringstream a("id,len,down\n0,1,\n");
  EXPECT_THROW(read_network_csv(a, 2), ParseError);
  std::stringstream b("link_id,length_m,downstream_ids\n0,abc,\n");
  EXPECT_THROW(read_network_csv(b, 2), ParseError);
}

TEST(Network, ValidateRejectsZeroModes) {
  auto net = chain(2, 2);
  net.modes[1] = 0;
  EXPECT_THROW(net.validate(), InvalidNetwork);
}

TEST(Network, GridIsConnectedAndAvoidsUTurns) {
  const auto net = make_grid_network(4, 4, 2);
  EXPECT_EQ(net.component_count(), 1u);
  for (LinkId l = 0; l < net.size(); ++l) {
    EXPECT_FALSE(net.downstream[l].empty());
    // A U-turn successor u of l has l among u's successors too; only
    // allowed when it is the sole option.
    for (LinkId d : net.downstream[l])
      if (net.adjacent(d, l) && net.downstream[l].size() > 1) ADD_FAILURE() << "u-turn at " << l;
  }
}
