#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "dse/cvgae.hpp"
#include "dse/graph.hpp"
#include "dse/nn.hpp"
#include "dse/predictor.hpp"
#include "dse/random.hpp"

namespace dse::testing {

inline Graph make_graph(const std::string& id, int n, EdgeList edges, int label = 0,
                        std::optional<EdgeList> gt = std::nullopt, int feature_dim = 1) {
  return Graph::create(id, n, std::move(edges), Eigen::MatrixXd::Ones(n, feature_dim), label, std::move(gt));
}

/// Triangle with one pendant path: 0-1-2-0 plus 2-3-4.
inline Graph small_graph(const std::string& id = "g") {
  return make_graph(id, 5, {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}}, 1, EdgeList{{0, 1}, {1, 2}, {0, 2}});
}

/// Predictor with every parameter (readout included) drawn at random, so
/// class probabilities depend on the input.
inline Predictor random_predictor(int feature_dim, int num_classes, std::uint64_t seed, int hidden = 8,
                                  int layers = 2) {
  PredictorConfig cfg;
  cfg.hidden_dim = hidden;
  cfg.num_layers = layers;
  Rng rng(seed);
  Predictor p(feature_dim, num_classes, cfg, rng);
  std::normal_distribution<double> normal(0.0, 0.7);
  p.visit([&](const std::string&, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  });
  return p;
}

/// Small generator; `deterministic` pushes log sigma to -1e4 so z = mu.
inline Cvgae tiny_generator(int feature_dim, std::uint64_t seed, bool deterministic = false, int encode_dim = 4) {
  GeneratorConfig cfg;
  cfg.encode_dim = encode_dim;
  cfg.seed = seed;
  Rng rng(seed);
  Cvgae g(feature_dim, cfg, rng);
  if (deterministic) g.f_sigma().layers.back().bias.setConstant(-1e4);
  return g;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace dse::testing
