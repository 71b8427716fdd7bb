#include "dse/tr3.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "dse/errors.hpp"
#include "dse/random.hpp"

namespace dse {

std::string_view motif_name(MotifKind kind) {
  switch (kind) {
    case MotifKind::House: return "house";
    case MotifKind::Cycle: return "cycle";
    case MotifKind::Crane: return "crane";
  }
  return "unknown";
}

MotifKind motif_from_name(std::string_view name) {
  for (MotifKind k : kMotifs) {
    if (motif_name(k) == name) return k;
  }
  throw ConfigError("unknown motif kind '" + std::string(name) + "'");
}

MotifTemplate motif_template(MotifKind kind) {
  switch (kind) {
    case MotifKind::House:
      return {5, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 4}, {1, 4}}};
    case MotifKind::Cycle:
      return {6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}}};
    case MotifKind::Crane:
      return {8, {{0, 1}, {1, 2}, {2, 0}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {5, 7}}};
  }
  throw ConfigError("unknown motif kind");
}

void Tr3Config::validate() const {
  if (num_graphs <= 0) throw ConfigError("num_graphs must be positive");
  if (num_graphs % 3 != 0) throw ConfigError("num_graphs must be divisible by 3 for balanced classes");
  if (base_nodes_min < 3) throw ConfigError("base_nodes_min must be at least 3");
  if (base_nodes_max < base_nodes_min) throw ConfigError("base_nodes_max must be >= base_nodes_min");
  if (feature_dim < 1) throw ConfigError("feature_dim must be positive");
  if (degree_feature && feature_dim < 2) throw ConfigError("degree_feature needs feature_dim >= 2");
}

nlohmann::json Tr3Config::to_json() const {
  return {{"num_graphs", num_graphs},
          {"base_nodes_min", base_nodes_min},
          {"base_nodes_max", base_nodes_max},
          {"seed", seed},
          {"feature_dim", feature_dim},
          {"degree_feature", degree_feature},
          {"motif_set", {"house", "cycle", "crane"}}};
}

EdgeList tree_from_pruefer(const std::vector<int>& sequence) {
  const int n = static_cast<int>(sequence.size()) + 2;
  std::vector<int> degree(static_cast<std::size_t>(n), 1);
  for (int x : sequence) {
    if (x < 0 || x >= n) throw InvariantError("Pruefer entry out of range");
    ++degree[static_cast<std::size_t>(x)];
  }
  EdgeList edges;
  edges.reserve(static_cast<std::size_t>(n - 1));
  for (int x : sequence) {
    int leaf = 0;
    while (degree[static_cast<std::size_t>(leaf)] != 1) ++leaf;
    edges.emplace_back(leaf, x);
    --degree[static_cast<std::size_t>(leaf)];
    --degree[static_cast<std::size_t>(x)];
  }
  int a = -1;
  for (int i = 0; i < n; ++i) {
    if (degree[static_cast<std::size_t>(i)] == 1) {
      if (a < 0) {
        a = i;
      } else {
        edges.emplace_back(a, i);
        break;
      }
    }
  }
  return edges;
}

Graph generate_graph(const Tr3Config& cfg, int index, MotifKind kind) {
  Rng rng(cfg.seed + static_cast<std::uint64_t>(index));
  std::uniform_int_distribution<int> size_dist(cfg.base_nodes_min, cfg.base_nodes_max);
  const int tree_nodes = size_dist(rng);

  std::vector<int> sequence(static_cast<std::size_t>(tree_nodes - 2));
  std::uniform_int_distribution<int> label_dist(0, tree_nodes - 1);
  for (int& x : sequence) x = label_dist(rng);
  EdgeList raw = tree_from_pruefer(sequence);

  const MotifTemplate motif = motif_template(kind);
  EdgeList motif_raw;
  for (const Edge& e : motif.edges) motif_raw.emplace_back(e.u + tree_nodes, e.v + tree_nodes);
  raw.insert(raw.end(), motif_raw.begin(), motif_raw.end());

  const int tree_anchor = std::uniform_int_distribution<int>(0, tree_nodes - 1)(rng);
  const int motif_anchor = std::uniform_int_distribution<int>(0, motif.node_count - 1)(rng);
  raw.emplace_back(tree_anchor, tree_nodes + motif_anchor);

  // Shuffle node ids so motif nodes do not always occupy the highest indices.
  const int n = tree_nodes + motif.node_count;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = std::uniform_int_distribution<int>(0, i)(rng);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  auto relabel = [&](const Edge& e) {
    return Edge(perm[static_cast<std::size_t>(e.u)], perm[static_cast<std::size_t>(e.v)]);
  };
  EdgeList edges;
  for (const Edge& e : raw) edges.push_back(relabel(e));
  EdgeList gt;
  for (const Edge& e : motif_raw) gt.push_back(relabel(e));

  Eigen::MatrixXd features = Eigen::MatrixXd::Ones(n, cfg.feature_dim);
  if (cfg.degree_feature) {
    Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
    for (const Edge& e : edges) {
      degree(e.u) += 1.0;
      degree(e.v) += 1.0;
    }
    features.col(cfg.feature_dim - 1) = degree;
  }

  char id[32];
  std::snprintf(id, sizeof(id), "tr3-%05d", index);
  return Graph::create(id, n, std::move(edges), std::move(features), static_cast<int>(kind), std::move(gt));
}

std::vector<Graph> generate_dataset(const Tr3Config& cfg) {
  cfg.validate();
  std::vector<Graph> graphs;
  graphs.reserve(static_cast<std::size_t>(cfg.num_graphs));
  for (int i = 0; i < cfg.num_graphs; ++i) {
    graphs.push_back(generate_graph(cfg, i, kMotifs[static_cast<std::size_t>(i % 3)]));
  }
  return graphs;
}

nlohmann::json dataset_manifest(const Tr3Config& cfg, const std::vector<Graph>& graphs) {
  std::vector<int> counts(kMotifs.size(), 0);
  for (const Graph& g : graphs) ++counts.at(static_cast<std::size_t>(g.label()));
  nlohmann::json class_counts;
  for (MotifKind k : kMotifs) {
    class_counts[std::string(motif_name(k))] = counts[static_cast<std::size_t>(k)];
  }
  nlohmann::json templates;
  for (MotifKind k : kMotifs) {
    const MotifTemplate t = motif_template(k);
    nlohmann::json edges = nlohmann::json::array();
    for (const Edge& e : t.edges) edges.push_back({e.u, e.v});
    templates[std::string(motif_name(k))] = {{"nodes", t.node_count}, {"edges", edges}};
  }
  return {{"config", cfg.to_json()},
          {"num_graphs", graphs.size()},
          {"class_counts", class_counts},
          {"labels", {"house", "cycle", "crane"}},
          {"motif_templates", templates},
          {"node_features", cfg.degree_feature
                                ? "constant ones with the full-graph node degree in the last column"
                                : "constant ones; structure is visible to the classifier only through message passing"},
          {"notes",
           {"motif topologies and node features are local choices; compare results by direction, "
            "not absolute value",
            "crane is a fixed 8-node, 8-edge template (triangle head, neck, body, two legs)"}}};
}

}  // namespace dse
