#include "adn/topology.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace adn {

NetworkTopology::NetworkTopology(const std::vector<BranchSpec>& branches,
                                 const std::vector<double>& load_p_orig,
                                 const std::vector<double>& load_q_orig,
                                 double base_mva, double base_kv)
    : base_mva_(base_mva), base_kv_(base_kv) {
  if (base_mva <= 0.0 || base_kv <= 0.0)
    throw ConfigError("per-unit bases must be positive");
  const int n_branches = static_cast<int>(branches.size());
  const int n_nodes = n_branches + 1;

  // Collect node ids; require 0..N contiguous for the original labeling.
  std::set<int> ids{0};
  for (const auto& b : branches) {
    if (b.from == b.to)
      throw TopologyError("self-loop branch (" + std::to_string(b.from) + "," +
                          std::to_string(b.to) + ")");
    if (b.from < 0 || b.to < 0) throw TopologyError("negative node id");
    if (b.z.real() < 0.0)
      throw TopologyError("branch (" + std::to_string(b.from) + "," +
                          std::to_string(b.to) + ") has negative resistance");
    ids.insert(b.from);
    ids.insert(b.to);
  }
  if (static_cast<int>(ids.size()) != n_nodes)
    throw TopologyError("branch list references " +
                        std::to_string(ids.size()) + " nodes but defines " +
                        std::to_string(n_branches) + " branches");
  if (*ids.rbegin() != n_nodes - 1 || *ids.begin() != 0)
    throw TopologyError("node ids must be contiguous 0..N");

  // Adjacency, then BFS from the substation; children visited in ascending id
  // order so the relabeling is reproducible.
  std::vector<std::vector<std::pair<int, cplx>>> adj(n_nodes);
  for (const auto& b : branches) {
    adj[b.from].push_back({b.to, b.z});
    adj[b.to].push_back({b.from, b.z});
  }
  for (auto& a : adj)
    std::sort(a.begin(), a.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });

  node_id_.assign(1, 0);
  topo_of_.assign(n_nodes, -1);
  topo_of_[0] = 0;
  parent_.assign(1, -1);
  std::vector<cplx> z_of_node(1, cplx{0.0, 0.0});
  std::queue<int> frontier;
  frontier.push(0);
  while (!frontier.empty()) {
    const int id = frontier.front();
    frontier.pop();
    for (const auto& [nbr, z] : adj[id]) {
      if (topo_of_[nbr] >= 0) continue;
      topo_of_[nbr] = static_cast<int>(node_id_.size());
      node_id_.push_back(nbr);
      parent_.push_back(topo_of_[id]);
      z_of_node.push_back(z);
      frontier.push(nbr);
    }
  }
  if (static_cast<int>(node_id_.size()) != n_nodes)
    throw TopologyError("graph is not connected: only " +
                        std::to_string(node_id_.size()) + " of " +
                        std::to_string(n_nodes) + " nodes reachable");
  // N branches reaching N+1 nodes via a spanning tree means every branch was
  // used exactly once; a revisited node would have tripped the count above,
  // but a cycle plus a disconnected island would not, so check explicitly.
  std::set<std::pair<int, int>> seen;
  for (const auto& b : branches) {
    auto key = std::minmax(b.from, b.to);
    if (!seen.insert(key).second)
      throw TopologyError("duplicate branch (" + std::to_string(b.from) + "," +
                          std::to_string(b.to) + ")");
  }

  branch_z_.resize(n_branches);
  for (int n = 1; n < n_nodes; ++n) branch_z_[n - 1] = z_of_node[n];

  load_p_.assign(n_branches, 0.0);
  load_q_.assign(n_branches, 0.0);
  for (int id = 0; id < static_cast<int>(load_p_orig.size()); ++id) {
    if (load_p_orig[id] == 0.0 && load_q_orig[id] == 0.0) continue;
    if (id == 0) throw ConfigError("load declared at the substation node");
    const int n = topo_of_[id];
    load_p_[n - 1] = load_p_orig[id];
    load_q_[n - 1] = load_q_orig[id];
  }
}

int NetworkTopology::topo_index(int id) const {
  if (id < 0 || id >= static_cast<int>(topo_of_.size()))
    throw ConfigError("node id " + std::to_string(id) + " out of range");
  return topo_of_[id];
}

std::vector<int> NetworkTopology::path_branches(int n) const {
  std::vector<int> path;
  while (n != 0) {
    path.push_back(n - 1);
    n = parent_[n];
  }
  std::reverse(path.begin(), path.end());
  return path;
}

NetworkTopology load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feeder file: " + path);

  std::vector<BranchSpec> branches;
  std::map<int, std::pair<double, double>> loads_kw;
  double base_mva = 0.0, base_kv = 0.0;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    auto fail = [&](const std::string& what) -> ParseError {
      return ParseError(path + ":" + std::to_string(lineno) + ": " + what);
    };
    if (key == "base_mva") {
      if (!(ss >> base_mva)) throw fail("expected 'base_mva <S>'");
    } else if (key == "base_kv") {
      if (!(ss >> base_kv)) throw fail("expected 'base_kv <V>'");
    } else if (key == "branch") {
      BranchSpec b;
      double r, x;
      if (!(ss >> b.from >> b.to >> r >> x))
        throw fail("expected 'branch <from> <to> <r_ohm> <x_ohm>'");
      b.z = cplx{r, x};
      branches.push_back(b);
    } else if (key == "load") {
      int node;
      double p, q;
      if (!(ss >> node >> p >> q))
        throw fail("expected 'load <node> <p_kw> <q_kvar>'");
      loads_kw[node] = {p, q};
    } else {
      throw fail("unknown record '" + key + "'");
    }
  }
  if (base_mva <= 0.0 || base_kv <= 0.0)
    throw ParseError(path + ": missing base_mva/base_kv header");
  if (branches.empty()) throw ParseError(path + ": no branches");

  const double z_base = base_kv * base_kv / base_mva;  // ohm
  for (auto& b : branches) b.z /= z_base;

  int max_id = 0;
  for (const auto& b : branches) max_id = std::max({max_id, b.from, b.to});
  std::vector<double> lp(max_id + 1, 0.0), lq(max_id + 1, 0.0);
  for (const auto& [node, pq] : loads_kw) {
    if (node < 0 || node > max_id)
      throw ParseError(path + ": load at unknown node " + std::to_string(node));
    lp[node] = pq.first / (1000.0 * base_mva);
    lq[node] = pq.second / (1000.0 * base_mva);
  }
  return NetworkTopology(branches, lp, lq, base_mva, base_kv);
}

void DerPlacement::validate(int node_count) const {
  std::set<int> used;
  auto check = [&](const std::vector<int>& nodes, const char* what) {
    for (int n : nodes) {
      if (n < 1 || n >= node_count)
        throw ConfigError(std::string(what) + " node index " +
                          std::to_string(n) + " out of range");
      if (!used.insert(n).second)
        throw ConfigError("node " + std::to_string(n) +
                          " hosts more than one controllable unit");
    }
  };
  check(dg_nodes, "dg");
  check(pv_nodes, "pv");
  check(bess_nodes, "bess");
  check(vshp_nodes, "vshp");
  for (int n : load_nodes)
    if (n < 1 || n >= node_count)
      throw ConfigError("load node index out of range");
}

}  // namespace adn
