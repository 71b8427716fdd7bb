#include <algorithm>
#include <filesystem>
#include <map>
#include <queue>
#include <set>

#include <gtest/gtest.h>

#include "dse/errors.hpp"
#include "dse/graph.hpp"
#include "dse/tr3.hpp"
#include "support.hpp"

using namespace dse;
using dse::testing::make_graph;
using dse::testing::small_graph;

TEST(Graph, NormalizesEdgeOrder) {
  const Graph g = make_graph("g", 4, {{3, 2}, {1, 0}, {2, 0}});
  const EdgeList expected = {{0, 1}, {0, 2}, {2, 3}};
  EXPECT_EQ(g.edges(), expected);
  for (const Edge& e : g.edges()) EXPECT_LT(e.u, e.v);
}

TEST(Graph, RejectsMalformedInput) {
  EXPECT_THROW(make_graph("g", 3, {{1, 1}}), InvariantError);
  EXPECT_THROW(make_graph("g", 3, {{0, 3}}), InvariantError);
  EXPECT_THROW(make_graph("g", 3, {{0, 1}, {1, 0}}), InvariantError);
  EXPECT_THROW(make_graph("g", 3, {{0, 1}}, 0, EdgeList{{1, 2}}), InvariantError);
  EXPECT_THROW(Graph::create("g", 3, {{0, 1}}, Eigen::MatrixXd::Ones(2, 1), 0), InvariantError);
}

TEST(Graph, AdjacencyIsSymmetricZeroDiagonal) {
  const Graph g = small_graph();
  const Eigen::MatrixXd a = g.adjacency();
  EXPECT_TRUE(a.isApprox(a.transpose()));
  EXPECT_EQ(a.diagonal().sum(), 0.0);
  EXPECT_EQ(a.sum(), 2.0 * static_cast<double>(g.edge_count()));
}

TEST(Graph, WithEdgesDropsGroundTruthThatNoLongerFits) {
  const Graph g = small_graph();
  EXPECT_TRUE(g.with_edges(g.edges()).ground_truth().has_value());
  EXPECT_FALSE(g.with_edges({{2, 3}}).ground_truth().has_value());
}

TEST(EdgeLists, SetOperations) {
  const EdgeList a = {{0, 1}, {1, 2}, {2, 3}};
  const EdgeList b = {{1, 2}, {3, 4}};
  EXPECT_EQ(edge_union(a, b), (EdgeList{{0, 1}, {1, 2}, {2, 3}, {3, 4}}));
  EXPECT_EQ(edge_difference(a, b), (EdgeList{{0, 1}, {2, 3}}));
  EXPECT_EQ(edge_intersection(a, b), (EdgeList{{1, 2}}));
  EXPECT_EQ(all_pairs(4).size(), 6u);
}

TEST(Masks, SelectionSize) {
  EXPECT_EQ(selection_size(18, 0.15), 3u);
  EXPECT_EQ(selection_size(20, 0.15), 3u);
  EXPECT_EQ(selection_size(3, 0.01), 1u);
  EXPECT_EQ(selection_size(7, 1.0), 7u);
}

TEST(Masks, TopFractionBreaksTiesLexicographically) {
  const Graph g = small_graph();
  const EdgeMask m = top_fraction_mask(g, {0.5, 0.9, 0.5, 0.5, 0.1}, 0.4);
  // edges sorted: (0,1) (0,2) (1,2) (2,3) (3,4); two selected
  EXPECT_EQ(m.selected, (EdgeList{{0, 1}, {0, 2}}));
  EXPECT_THROW(top_fraction_mask(make_graph("e", 2, {}), {}, 0.5), EmptyInputError);
}

TEST(Masks, ComplementAndInducedSubgraph) {
  const Graph g = small_graph();
  const EdgeMask m = mask_from_selection(g, {{2, 3}});
  const EdgeMask c = complement_mask(g, m);
  EXPECT_EQ(edge_union(m.selected, c.selected), g.edges());
  EXPECT_TRUE(edge_intersection(m.selected, c.selected).empty());
  const Graph s = induce_subgraph(g, m);
  EXPECT_EQ(s.node_count(), g.node_count());
  EXPECT_EQ(s.edges(), m.selected);
  const Graph other = small_graph("other");
  EXPECT_THROW(induce_subgraph(other, m), IdentityError);
}

TEST(Serialization, GraphRoundTripWithArbitraryFeatures) {
  Rng rng(3);
  std::normal_distribution<double> normal(0.0, 1e3);
  Eigen::MatrixXd x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  x(0, 0) = 1.0 / 3.0;
  x(1, 1) = -0.0;
  x(2, 2) = 5e-310;  // subnormal
  const Graph g = Graph::create("odd-id_1", 4, {{0, 1}, {2, 3}}, x, 2, EdgeList{{2, 3}});
  const Graph back = parse_graph(serialize_graph(g));
  EXPECT_EQ(back, g);
  EXPECT_EQ(serialize_graph(back), serialize_graph(g));
}

TEST(Serialization, DatasetRoundTripOverThousandGraphs) {
  Tr3Config cfg;
  cfg.num_graphs = 1200;
  cfg.feature_dim = 2;
  cfg.degree_feature = true;
  const auto graphs = generate_dataset(cfg);
  const std::string text = serialize_dataset(graphs);
  const auto back = parse_dataset(text);
  ASSERT_EQ(back.size(), graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) ASSERT_EQ(back[i], graphs[i]) << graphs[i].id();

  const auto path = std::filesystem::temp_directory_path() / "dse_roundtrip_dataset.txt";
  save_dataset(path.string(), graphs);
  EXPECT_EQ(load_dataset(path.string()), graphs);
  std::filesystem::remove(path);
}

TEST(Serialization, MalformedInputReportsOffset) {
  EXPECT_THROW(parse_graph("graph g 3 0\nfeat 0 1\nfeat 1 1\nfeat 2 1\nedge 0 x\n"), ParseError);
  EXPECT_THROW(parse_graph("grph g 3 0\n"), ParseError);
  EXPECT_THROW(parse_graph("graph g 2 0\nfeat 0 1\nfeat 1 1\nedge 0 0\n"), Error);
  EXPECT_THROW(load_dataset("/nonexistent/dse/data.txt"), MissingArtifactError);
}

// ---------------------------------------------------------------- synthetic data

namespace {

bool connected(const Graph& g) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(g.node_count()));
  for (const Edge& e : g.edges()) {
    adj[static_cast<std::size_t>(e.u)].push_back(e.v);
    adj[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  std::vector<bool> seen(adj.size(), false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  int count = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        ++count;
        q.push(v);
      }
    }
  }
  return count == g.node_count();
}

std::multiset<int> degree_sequence(const EdgeList& edges) {
  std::map<int, int> deg;
  for (const Edge& e : edges) {
    ++deg[e.u];
    ++deg[e.v];
  }
  std::multiset<int> out;
  for (const auto& [_, d] : deg) out.insert(d);
  return out;
}

}  // namespace

TEST(Tr3, PrueferDecodingOfKnownSequence) {
  // Sequence (3, 3, 3, 4) over 6 nodes is the star at 3 plus edge 3-4 and 4-5.
  const EdgeList edges = tree_from_pruefer({3, 3, 3, 4});
  EdgeList sorted;
  for (const Edge& e : edges) sorted.push_back(e);
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (EdgeList{{0, 3}, {1, 3}, {2, 3}, {3, 4}, {4, 5}}));
}

TEST(Tr3, BalancedConnectedAndMotifShaped) {
  Tr3Config cfg;
  cfg.num_graphs = 300;
  const auto graphs = generate_dataset(cfg);
  std::map<int, int> counts;
  for (const Graph& g : graphs) {
    ++counts[g.label()];
    ASSERT_TRUE(g.ground_truth().has_value());
    const MotifTemplate t = motif_template(kMotifs[static_cast<std::size_t>(g.label())]);
    EXPECT_EQ(g.ground_truth()->size(), t.edges.size());
    EXPECT_EQ(degree_sequence(*g.ground_truth()), degree_sequence(t.edges));
    const int tree_nodes = g.node_count() - t.node_count;
    EXPECT_GE(tree_nodes, cfg.base_nodes_min);
    EXPECT_LE(tree_nodes, cfg.base_nodes_max);
    // tree edges + motif edges + one attaching edge
    EXPECT_EQ(g.edge_count(), static_cast<std::size_t>(tree_nodes - 1) + t.edges.size() + 1);
    EXPECT_TRUE(connected(g)) << g.id();
    EXPECT_TRUE((g.node_features().array() == 1.0).all());
  }
  EXPECT_EQ(counts[0], 100);
  EXPECT_EQ(counts[1], 100);
  EXPECT_EQ(counts[2], 100);
}

TEST(Tr3, DeterministicPerSeed) {
  Tr3Config a;
  a.num_graphs = 30;
  Tr3Config b = a;
  b.seed = a.seed + 1000;
  EXPECT_EQ(generate_dataset(a), generate_dataset(a));
  EXPECT_NE(generate_dataset(a), generate_dataset(b));
}

TEST(Tr3, DegreeFeatureAndValidation) {
  Tr3Config cfg;
  cfg.num_graphs = 3;
  cfg.feature_dim = 2;
  cfg.degree_feature = true;
  for (const Graph& g : generate_dataset(cfg)) {
    const Eigen::VectorXd deg = g.adjacency().rowwise().sum();
    EXPECT_TRUE(g.node_features().col(1).isApprox(deg));
    EXPECT_TRUE((g.node_features().col(0).array() == 1.0).all());
  }
  Tr3Config bad;
  bad.degree_feature = true;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = Tr3Config{};
  bad.base_nodes_min = 10;
  bad.base_nodes_max = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(motif_from_name("grid"), ConfigError);
}

TEST(Tr3, ManifestCountsClasses) {
  Tr3Config cfg;
  cfg.num_graphs = 9;
  const auto graphs = generate_dataset(cfg);
  const auto m = dataset_manifest(cfg, graphs);
  EXPECT_EQ(m.at("config").at("num_graphs"), 9);
  EXPECT_TRUE(m.contains("class_counts"));
}
