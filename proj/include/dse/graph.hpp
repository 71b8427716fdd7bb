#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dse {

/// Undirected edge stored with `u < v`. Ordering is lexicographic on (u, v).
struct Edge {
  int u = 0;
  int v = 0;

  Edge() = default;
  Edge(int a, int b) : u(a < b ? a : b), v(a < b ? b : a) {}

  auto operator<=>(const Edge&) const = default;
};

using EdgeList = std::vector<Edge>;

/// Immutable undirected attributed graph with a class label.
///
/// Edges are kept sorted and unique; the ground-truth explanation, when
/// present, is a non-empty sorted subset of the edges.
class Graph {
 public:
  /// Validates and normalizes. Throws InvariantError on self-loops, out of
  /// range endpoints, duplicate edges, feature row mismatch, or ground-truth
  /// edges missing from the edge set.
  static Graph create(std::string id, int node_count, EdgeList edges, Eigen::MatrixXd node_features,
                      int label, std::optional<EdgeList> ground_truth = std::nullopt);

  const std::string& id() const noexcept { return id_; }
  int node_count() const noexcept { return node_count_; }
  const EdgeList& edges() const noexcept { return edges_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const Eigen::MatrixXd& node_features() const noexcept { return features_; }
  int feature_dim() const noexcept { return static_cast<int>(features_.cols()); }
  int label() const noexcept { return label_; }
  const std::optional<EdgeList>& ground_truth() const noexcept { return ground_truth_; }

  bool has_edge(const Edge& e) const;
  /// Position of `e` in edges(), or -1.
  int edge_index(const Edge& e) const;

  /// Dense symmetric 0/1 adjacency.
  Eigen::MatrixXd adjacency() const;
  /// Dense symmetric adjacency with `weights[k]` on edges()[k].
  Eigen::MatrixXd weighted_adjacency(std::span<const double> weights) const;

  /// Same nodes, features, label and id with a replaced edge set. Ground
  /// truth is carried over only where it remains a subset.
  Graph with_edges(EdgeList edges) const;

  friend bool operator==(const Graph& a, const Graph& b);

 private:
  Graph() = default;

  std::string id_;
  int node_count_ = 0;
  EdgeList edges_;
  Eigen::MatrixXd features_;
  int label_ = 0;
  std::optional<EdgeList> ground_truth_;
};

/// Per-edge scores over a parent graph plus the selected subgraph.
struct EdgeMask {
  std::string parent_id;
  EdgeList edges;               // the parent's edges, in parent order
  std::vector<double> scores;   // scores[k] belongs to edges[k]
  EdgeList selected;            // sorted subset of edges

  double score_of(const Edge& e) const;
};

/// All pairs i < j over `node_count` nodes in lexicographic order.
EdgeList all_pairs(int node_count);

/// Sorted set operations on edge lists.
EdgeList edge_union(const EdgeList& a, const EdgeList& b);
EdgeList edge_difference(const EdgeList& a, const EdgeList& b);
EdgeList edge_intersection(const EdgeList& a, const EdgeList& b);

/// Keeps every node (isolated ones included) but only `mask.selected` edges.
/// Throws IdentityError if the mask was built for another graph.
Graph induce_subgraph(const Graph& g, const EdgeMask& mask);

/// Number of edges a ratio selects: ceil(ratio * edge_count), at least one.
std::size_t selection_size(std::size_t edge_count, double ratio);

/// Selects the ceil(ratio * |E|) highest scoring edges; ties go to the
/// lexicographically smaller edge. Throws EmptyInputError on empty scores.
EdgeMask top_fraction_mask(const Graph& parent, std::vector<double> scores, double ratio);

/// Mask selecting exactly `selected` (scores 1 on selected, 0 elsewhere).
EdgeMask mask_from_selection(const Graph& parent, EdgeList selected);

/// Mask selecting the parent's edges not selected by `mask`.
EdgeMask complement_mask(const Graph& parent, const EdgeMask& mask);

/// Line-oriented text format:
///   graph <id> <node_count> <label>
///   feat <i> v1 v2 ...      (one per node)
///   edge <u> <v>            (one per edge)
///   gt <u> <v>              (optional, ground-truth edges)
std::string serialize_graph(const Graph& g);
Graph parse_graph(std::string_view text);

/// Dataset file: graphs separated by a blank line.
std::string serialize_dataset(std::span<const Graph> graphs);
std::vector<Graph> parse_dataset(std::string_view text);

std::vector<Graph> load_dataset(const std::string& path);
void save_dataset(const std::string& path, std::span<const Graph> graphs);

}  // namespace dse
