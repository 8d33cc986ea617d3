#pragma once

#include <string>
#include <vector>

#include "adn/common.hpp"

namespace adn {

/// One branch of the feeder description, in original node numbering.
struct BranchSpec {
  int from = 0;
  int to = 0;
  cplx z;  // series impedance, per-unit
};

/// Radial distribution network in per-unit, with nodes relabeled so that the
/// topological index of a parent is always smaller than that of its child.
/// Node 0 is the substation; non-slack nodes are 1..N. Branch b (0-based)
/// connects parent(b+1) -> b+1 in topological indexing.
///
/// Immutable after construction.
class NetworkTopology {
 public:
  /// Build from a branch list with original node ids and consumption-positive
  /// nodal loads (per-unit). Validates radiality and relabels topologically.
  NetworkTopology(const std::vector<BranchSpec>& branches,
                  const std::vector<double>& load_p_orig,
                  const std::vector<double>& load_q_orig, double base_mva,
                  double base_kv);

  int branch_count() const { return static_cast<int>(branch_z_.size()); }
  int node_count() const { return branch_count() + 1; }

  /// Parent of topological node n (n in 1..N).
  int parent(int n) const { return parent_.at(n); }
  /// Impedance of branch b (connecting parent(b+1) -> b+1), per-unit.
  cplx branch_impedance(int b) const { return branch_z_.at(b); }
  /// Original node id of topological node n.
  int node_id(int n) const { return node_id_.at(n); }
  /// Topological index of an original node id.
  int topo_index(int id) const;

  /// Per-unit load (consumption positive) at topological node n in 1..N.
  double load_p(int n) const { return load_p_.at(n - 1); }
  double load_q(int n) const { return load_q_.at(n - 1); }

  double base_mva() const { return base_mva_; }
  double base_kv() const { return base_kv_; }

  /// Branch indices on the unique path from node 0 to topological node n.
  std::vector<int> path_branches(int n) const;

 private:
  std::vector<int> parent_;    // size N+1, parent_[0] = -1
  std::vector<cplx> branch_z_; // size N
  std::vector<int> node_id_;   // topo index -> original id
  std::vector<int> topo_of_;   // original id -> topo index
  std::vector<double> load_p_, load_q_;  // size N, topo nodes 1..N
  double base_mva_ = 0.0;
  double base_kv_ = 0.0;
};

/// Parse a feeder description file.
///
/// Format (whitespace separated, '#' starts a comment):
///   base_mva <S>
///   base_kv  <V>
///   branch <from> <to> <r_ohm> <x_ohm>
///   load <node> <p_kw> <q_kvar>
///
/// Impedances and loads are converted to per-unit using the declared bases.
NetworkTopology load_feeder(const std::string& path);

/// Node-index sets of the controllable units and loads, in topological indices.
struct DerPlacement {
  std::vector<int> dg_nodes;
  std::vector<int> pv_nodes;
  std::vector<int> bess_nodes;
  std::vector<int> vshp_nodes;
  std::vector<int> load_nodes;

  int n_g() const {
    return static_cast<int>(dg_nodes.size() + pv_nodes.size() +
                            bess_nodes.size() + vshp_nodes.size());
  }

  /// Throws ConfigError if an index is out of range or a node hosts more than
  /// one controllable unit.
  void validate(int node_count) const;
};

}  // namespace adn
