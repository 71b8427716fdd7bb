#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dse/graph.hpp"

namespace dse {

enum class MotifKind { House = 0, Cycle = 1, Crane = 2 };

inline constexpr std::array<MotifKind, 3> kMotifs = {MotifKind::House, MotifKind::Cycle, MotifKind::Crane};

std::string_view motif_name(MotifKind kind);
/// Throws ConfigError for names other than house, cycle, crane.
MotifKind motif_from_name(std::string_view name);

/// Node count plus edge list of a motif, nodes numbered 0..size-1.
struct MotifTemplate {
  int node_count = 0;
  EdgeList edges;
};

/// house: square 0-1-2-3 with apex 4 on top of 0 and 1 (5 nodes, 6 edges).
/// cycle: hexagon (6 nodes, 6 edges).
/// crane: triangle head 0-1-2, neck 2-3-4, body 4-5 and legs 5-6, 5-7
///        (8 nodes, 8 edges).
MotifTemplate motif_template(MotifKind kind);

struct Tr3Config {
  int num_graphs = 3000;
  int base_nodes_min = 8;
  int base_nodes_max = 15;
  std::uint64_t seed = 17;
  /// Number of feature columns. All are constant ones unless
  /// `degree_feature` is set, in which case the last column holds the node
  /// degree in the full graph.
  int feature_dim = 1;
  bool degree_feature = false;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Edges of a labelled tree decoded from a Prüfer sequence over n = seq.size() + 2 nodes.
EdgeList tree_from_pruefer(const std::vector<int>& sequence);

/// Balanced dataset: graph i carries motif i % 3 and is built from seed + i.
std::vector<Graph> generate_dataset(const Tr3Config& cfg);

/// Single graph with the given motif; used by generate_dataset.
Graph generate_graph(const Tr3Config& cfg, int index, MotifKind kind);

/// Config echo, class counts and the documented template choices.
nlohmann::json dataset_manifest(const Tr3Config& cfg, const std::vector<Graph>& graphs);

}  // namespace dse
