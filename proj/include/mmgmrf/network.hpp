#pragma once

// Road graph, (link, state) -> variable indexing, and the precision sparsity
// pattern derived from link adjacency.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmgmrf/error.hpp"

namespace mmgmrf {

using LinkId = std::uint32_t;
using VarId = std::uint32_t;

/// Directed link graph. Links are dense ids 0..n-1.
struct RoadNetwork {
  std::vector<std::vector<LinkId>> downstream;
  std::vector<int> modes;          // m_l, number of discrete states per link
  std::vector<double> length_m;

  std::size_t size() const noexcept { return downstream.size(); }

  bool adjacent(LinkId from, LinkId to) const {
    const auto& ds = downstream.at(from);
    return std::find(ds.begin(), ds.end(), to) != ds.end();
  }

  std::vector<std::vector<LinkId>> upstream() const {
    std::vector<std::vector<LinkId>> up(size());
    for (LinkId u = 0; u < size(); ++u)
      for (LinkId l : downstream[u]) up[l].push_back(u);
    return up;
  }

  void validate() const {
    if (modes.size() != size() || length_m.size() != size())
      throw InvalidNetwork("network arrays have inconsistent sizes");
    for (LinkId l = 0; l < size(); ++l) {
      if (modes[l] < 1) throw InvalidNetwork("link " + std::to_string(l) + " has m < 1");
      if (!(length_m[l] > 0.0))
        throw InvalidNetwork("link " + std::to_string(l) + " has non-positive length");
      for (LinkId d : downstream[l])
        if (d >= size())
          throw InvalidNetwork("link " + std::to_string(l) + " references unknown link " +
                               std::to_string(d));
    }
  }

  /// Weakly connected components; disconnected networks are reported, not rejected.
  std::size_t component_count() const {
    std::vector<LinkId> parent(size());
    std::iota(parent.begin(), parent.end(), 0u);
    auto find = [&](LinkId x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (LinkId u = 0; u < size(); ++u)
      for (LinkId d : downstream[u]) parent[find(u)] = find(d);
    std::size_t count = 0;
    for (LinkId u = 0; u < size(); ++u) count += (find(u) == u);
    return count;
  }
};

/// W x H grid of intersections with one directed link per ordered pair of
/// 4-neighbours. U-turns are only allowed at dead ends.
inline RoadNetwork make_grid_network(int width, int height, int modes, double length_m = 150.0) {
  if (width < 1 || height < 1) throw InvalidArgument("grid dimensions must be >= 1");
  struct Arc {
    int tail, head;
  };
  std::vector<Arc> arcs;
  auto node = [&](int x, int y) { return y * width + x; };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (x + 1 < width) arcs.push_back({node(x, y), node(x + 1, y)});
      if (y + 1 < height) arcs.push_back({node(x, y), node(x, y + 1)});
      if (x > 0) arcs.push_back({node(x, y), node(x - 1, y)});
      if (y > 0) arcs.push_back({node(x, y), node(x, y - 1)});
    }
  }
  std::vector<std::vector<LinkId>> out_of(static_cast<std::size_t>(width * height));
  for (LinkId a = 0; a < arcs.size(); ++a) out_of[arcs[a].tail].push_back(a);

  RoadNetwork net;
  net.downstream.resize(arcs.size());
  net.modes.assign(arcs.size(), modes);
  net.length_m.assign(arcs.size(), length_m);
  for (LinkId a = 0; a < arcs.size(); ++a) {
    std::optional<LinkId> reverse;
    for (LinkId b : out_of[arcs[a].head]) {
      if (arcs[b].head == arcs[a].tail) {
        reverse = b;
      } else {
        net.downstream[a].push_back(b);
      }
    }
    if (net.downstream[a].empty() && reverse) net.downstream[a].push_back(*reverse);
  }
  return net;
}

/// Bijection (link, state) <-> variable id; variables of one link are contiguous.
class VariableIndex {
 public:
  VariableIndex() = default;

  explicit VariableIndex(const RoadNetwork& network) {
    offsets_.resize(network.size() + 1, 0);
    for (LinkId l = 0; l < network.size(); ++l)
      offsets_[l + 1] = offsets_[l] + static_cast<VarId>(network.modes[l]);
    link_of_.resize(offsets_.back());
    state_of_.resize(offsets_.back());
    for (LinkId l = 0; l < network.size(); ++l) {
      for (VarId v = offsets_[l]; v < offsets_[l + 1]; ++v) {
        link_of_[v] = l;
        state_of_[v] = static_cast<int>(v - offsets_[l]);
      }
    }
  }

  VarId beta(LinkId link, int state) const { return offsets_[link] + static_cast<VarId>(state); }
  LinkId link_of(VarId v) const { return link_of_[v]; }
  int state_of(VarId v) const { return state_of_[v]; }
  int modes(LinkId link) const { return static_cast<int>(offsets_[link + 1] - offsets_[link]); }
  VarId first(LinkId link) const { return offsets_[link]; }
  std::size_t size() const noexcept { return link_of_.size(); }
  std::size_t link_count() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }

 private:
  std::vector<VarId> offsets_;
  std::vector<LinkId> link_of_;
  std::vector<int> state_of_;
};

inline VariableIndex build_variable_index(const RoadNetwork& network) { return VariableIndex(network); }

/// Symmetric sparsity pattern with full diagonal, in CSR form. Each unordered
/// pair {u, v} (including u == v) is an "entry" with a stable id; symmetric
/// matrices over the pattern store one value per entry.
class EdgePattern {
 public:
  EdgePattern() = default;

  /// Pattern containing the diagonal plus the given unordered pairs.
  static EdgePattern from_pairs(std::size_t d, std::vector<std::pair<VarId, VarId>> pairs) {
    std::vector<std::vector<VarId>> rows(d);
    for (VarId u = 0; u < d; ++u) rows[u].push_back(u);
    for (auto [u, v] : pairs) {
      if (u >= d || v >= d) throw InvalidArgument("pattern pair out of range");
      if (u == v) continue;
      rows[u].push_back(v);
      rows[v].push_back(u);
    }
    return from_rows(std::move(rows));
  }

  /// Pattern from per-row neighbour lists (must be symmetric and contain u in row u).
  static EdgePattern from_rows(std::vector<std::vector<VarId>> rows) {
    return EdgePattern(std::move(rows));
  }

  std::size_t dim() const noexcept { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t entry_count() const noexcept { return entries_.size(); }
  /// Number of structural nonzeros of the full symmetric matrix.
  std::size_t nnz() const noexcept { return cols_.size(); }

  std::span<const VarId> row(VarId u) const {
    return {cols_.data() + row_ptr_[u], cols_.data() + row_ptr_[u + 1]};
  }
  /// Entry ids aligned with row(u).
  std::span<const std::uint32_t> row_entries(VarId u) const {
    return {slot_entry_.data() + row_ptr_[u], slot_entry_.data() + row_ptr_[u + 1]};
  }

  const std::vector<std::pair<VarId, VarId>>& entries() const noexcept { return entries_; }
  std::uint32_t diag_entry(VarId u) const { return diag_entry_[u]; }

  /// Entry id of {u, v}, or -1 when the pair is off-pattern.
  std::int64_t find(VarId u, VarId v) const {
    auto r = row(u);
    auto it = std::lower_bound(r.begin(), r.end(), v);
    if (it == r.end() || *it != v) return -1;
    return slot_entry_[row_ptr_[u] + static_cast<std::size_t>(it - r.begin())];
  }
  bool contains(VarId u, VarId v) const { return find(u, v) >= 0; }

 private:
  explicit EdgePattern(std::vector<std::vector<VarId>> rows) {
    const std::size_t d = rows.size();
    row_ptr_.assign(d + 1, 0);
    for (VarId u = 0; u < d; ++u) {
      auto& r = rows[u];
      std::sort(r.begin(), r.end());
      r.erase(std::unique(r.begin(), r.end()), r.end());
      row_ptr_[u + 1] = row_ptr_[u] + r.size();
    }
    cols_.reserve(row_ptr_.back());
    for (auto& r : rows) cols_.insert(cols_.end(), r.begin(), r.end());

    // Entries are numbered in (u, v>=u) row-major order; the mirrored slot
    // (v, u) is resolved by a forward scan since rows are sorted.
    slot_entry_.assign(cols_.size(), 0);
    diag_entry_.assign(d, 0);
    for (VarId u = 0; u < d; ++u) {
      for (std::size_t s = row_ptr_[u]; s < row_ptr_[u + 1]; ++s) {
        const VarId v = cols_[s];
        if (v < u) continue;
        const auto id = static_cast<std::uint32_t>(entries_.size());
        entries_.emplace_back(u, v);
        slot_entry_[s] = id;
        if (u == v) diag_entry_[u] = id;
      }
    }
    for (VarId u = 0; u < d; ++u) {
      for (std::size_t s = row_ptr_[u]; s < row_ptr_[u + 1]; ++s) {
        const VarId v = cols_[s];
        if (v >= u) continue;
        auto r = row(v);
        auto it = std::lower_bound(r.begin(), r.end(), u);
        slot_entry_[s] = slot_entry_[row_ptr_[v] + static_cast<std::size_t>(it - r.begin())];
      }
    }
  }

  std::vector<std::size_t> row_ptr_;
  std::vector<VarId> cols_;
  std::vector<std::uint32_t> slot_entry_;
  std::vector<std::uint32_t> diag_entry_;
  std::vector<std::pair<VarId, VarId>> entries_;
};

/// (beta(l,s), beta(l',s')) is in the pattern iff l == l' or the links are
/// adjacent in either direction.
inline EdgePattern build_edge_pattern(const RoadNetwork& network, const VariableIndex& index) {
  const auto up = network.upstream();
  std::vector<std::vector<VarId>> rows(index.size());
  std::vector<LinkId> nbrs;
  for (LinkId l = 0; l < network.size(); ++l) {
    nbrs.assign(1, l);
    nbrs.insert(nbrs.end(), network.downstream[l].begin(), network.downstream[l].end());
    nbrs.insert(nbrs.end(), up[l].begin(), up[l].end());
    std::vector<VarId> cols;
    for (LinkId n : nbrs)
      for (int s = 0; s < index.modes(n); ++s) cols.push_back(index.beta(n, s));
    for (int s = 0; s < index.modes(l); ++s) rows[index.beta(l, s)] = cols;
  }
  return EdgePattern::from_rows(std::move(rows));
}

// ---------------------------------------------------------------------------
// CSV persistence: header `link_id,length_m,downstream_ids`, downstream ids
// separated by ';'.

inline void write_network_csv(std::ostream& os, const RoadNetwork& network) {
  os << "link_id,length_m,downstream_ids\n";
  std::ostringstream num;
  num.precision(17);
  for (LinkId l = 0; l < network.size(); ++l) {
    num.str("");
    num << network.length_m[l];
    os << l << ',' << num.str() << ',';
    for (std::size_t i = 0; i < network.downstream[l].size(); ++i) {
      if (i) os << ';';
      os << network.downstream[l][i];
    }
    os << '\n';
  }
}

inline RoadNetwork read_network_csv(std::istream& is, int default_modes) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("network CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "link_id,length_m,downstream_ids")
    throw ParseError("network CSV header must be 'link_id,length_m,downstream_ids'");

  struct Row {
    long id;
    double length;
    std::vector<long> down;
  };
  std::vector<Row> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
      throw ParseError("network CSV line " + std::to_string(lineno) + ": expected 3 fields");
    Row row;
    try {
      row.id = std::stol(line.substr(0, c1));
      row.length = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      std::stringstream ds(line.substr(c2 + 1));
      std::string tok;
      while (std::getline(ds, tok, ';'))
        if (!tok.empty()) row.down.push_back(std::stol(tok));
    } catch (const std::logic_error&) {
      throw ParseError("network CSV line " + std::to_string(lineno) + ": malformed number");
    }
    rows.push_back(std::move(row));
  }

  RoadNetwork net;
  const std::size_t n = rows.size();
  net.downstream.resize(n);
  net.length_m.assign(n, 0.0);
  net.modes.assign(n, default_modes);
  std::vector<bool> seen(n, false);
  for (const auto& r : rows) {
    if (r.id < 0 || static_cast<std::size_t>(r.id) >= n || seen[static_cast<std::size_t>(r.id)])
      throw InvalidNetwork("link ids must be dense 0..n-1 without duplicates (bad id " +
                           std::to_string(r.id) + ")");
    const auto id = static_cast<std::size_t>(r.id);
    seen[id] = true;
    net.length_m[id] = r.length;
    for (long d : r.down) {
      if (d < 0 || static_cast<std::size_t>(d) >= n)
        throw InvalidNetwork("link " + std::to_string(r.id) + " references unknown link " +
                             std::to_string(d));
      net.downstream[id].push_back(static_cast<LinkId>(d));
    }
  }
  net.validate();
  return net;
}

inline RoadNetwork load_network(const std::string& path, int default_modes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open network file " + path);
  return read_network_csv(in, default_modes);
}

inline void save_network(const std::string& path, const RoadNetwork& network) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write network file " + path);
  write_network_csv(out, network);
}

}  // namespace mmgmrf
