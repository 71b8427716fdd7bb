#include "dse/explainers.hpp"

#include <algorithm>
#include <cmath>

#include "dse/errors.hpp"
#include "dse/random.hpp"

namespace dse {

namespace {

void check_target(const Predictor& model, int target_class) {
  if (target_class < 0 || target_class >= model.num_classes()) throw ShapeError("target class out of range");
}

Eigen::RowVectorXd unit_row(int size, int k) {
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(size);
  r(k) = 1.0;
  return r;
}

/// d/dw_e for w_e shared by A(u,v) and A(v,u).
std::vector<double> edge_gradients(const Graph& g, const Eigen::MatrixXd& d_adj) {
  std::vector<double> out;
  out.reserve(g.edge_count());
  for (const Edge& e : g.edges()) out.push_back(d_adj(e.u, e.v) + d_adj(e.v, e.u));
  return out;
}

double target_prob(const Predictor& model, const Graph& g, const EdgeList& edges, int target_class) {
  const Eigen::MatrixXd adj = g.with_edges(edges).adjacency();
  return model.forward(adj, g.node_features())(target_class);
}

}  // namespace

std::string_view explainer_name(ExplainerKind kind) {
  switch (kind) {
    case ExplainerKind::Sa: return "sa";
    case ExplainerKind::GradCam: return "gradcam";
    case ExplainerKind::MaskOpt: return "maskopt";
    case ExplainerKind::Occlusion: return "occlusion";
    case ExplainerKind::Screener: return "screener";
    case ExplainerKind::Random: return "random";
  }
  return "unknown";
}

ExplainerKind explainer_from_name(std::string_view name) {
  for (ExplainerKind k : kExplainers) {
    if (explainer_name(k) == name) return k;
  }
  throw ConfigError("unknown explainer '" + std::string(name) + "'");
}

void ExplainerConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask_ratio must lie in (0, 1]");
  if (maskopt_steps < 0) throw ConfigError("maskopt_steps must be non-negative");
  if (!(maskopt_lr > 0.0)) throw ConfigError("maskopt_lr must be positive");
  if (maskopt_sparsity_coeff < 0.0) throw ConfigError("maskopt_sparsity_coeff must be non-negative");
}

nlohmann::json ExplainerConfig::to_json() const {
  return {{"kind", explainer_name(kind)},
          {"mask_ratio", mask_ratio},
          {"maskopt_steps", maskopt_steps},
          {"maskopt_lr", maskopt_lr},
          {"maskopt_sparsity_coeff", maskopt_sparsity_coeff},
          {"seed", seed}};
}

EdgeMask explain_sa(const Predictor& model, const Graph& g, int target_class, double ratio) {
  check_target(model, target_class);
  const Predictor::Pass pass = model.run(g.adjacency(), g.node_features());
  Predictor scratch = model.zeros_like();
  Eigen::MatrixXd d_adj;
  model.backward(pass, unit_row(model.num_classes(), target_class), scratch, nullptr, &d_adj);
  std::vector<double> scores = edge_gradients(g, d_adj);
  for (double& s : scores) s = std::abs(s);
  return top_fraction_mask(g, std::move(scores), ratio);
}

EdgeMask explain_gradcam(const Predictor& model, const Graph& g, int target_class, double ratio) {
  check_target(model, target_class);
  const Predictor::Pass pass = model.run(g.adjacency(), g.node_features());
  Predictor scratch = model.zeros_like();
  Eigen::MatrixXd d_h;
  model.backward(pass, unit_row(model.num_classes(), target_class), scratch, nullptr, nullptr, &d_h);
  const Eigen::RowVectorXd alpha = d_h.colwise().mean();
  const Eigen::VectorXd node = (pass.node_embeddings * alpha.transpose()).cwiseMax(0.0);
  std::vector<double> scores;
  scores.reserve(g.edge_count());
  for (const Edge& e : g.edges()) scores.push_back(0.5 * (node(e.u) + node(e.v)));
  return top_fraction_mask(g, std::move(scores), ratio);
}

EdgeMask explain_maskopt(const Predictor& model, const Graph& g, int target_class, const ExplainerConfig& cfg) {
  check_target(model, target_class);
  cfg.validate();
  const auto m = static_cast<Eigen::Index>(g.edge_count());
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(1, m);
  Eigen::MatrixXd d_theta(1, m);
  Adam adam({.learning_rate = cfg.maskopt_lr});
  Predictor scratch = model.zeros_like();
  std::vector<double> w(static_cast<std::size_t>(m));

  for (int step = 0; step < cfg.maskopt_steps; ++step) {
    for (Eigen::Index k = 0; k < m; ++k) w[static_cast<std::size_t>(k)] = sigmoid(theta(0, k));
    const Predictor::Pass pass = model.run(g.weighted_adjacency(w), g.node_features());
    const double lse = log_sum_exp(pass.logits.transpose());
    double sparsity = 0.0;
    for (double x : w) sparsity += x;
    const double loss = lse - pass.logits(target_class) + cfg.maskopt_sparsity_coeff * sparsity;
    if (!std::isfinite(loss)) throw TrainingError("maskopt objective is not finite", 0, step);

    Eigen::RowVectorXd d_logits = (pass.logits.array() - lse).exp().matrix();
    d_logits(target_class) -= 1.0;
    Eigen::MatrixXd d_adj;
    model.backward(pass, d_logits, scratch, nullptr, &d_adj);
    const std::vector<double> d_w = edge_gradients(g, d_adj);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double s = w[static_cast<std::size_t>(k)];
      d_theta(0, k) = (d_w[static_cast<std::size_t>(k)] + cfg.maskopt_sparsity_coeff) * s * (1.0 - s);
    }
    adam.step({&theta}, {&d_theta});
  }

  std::vector<double> scores(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) scores[static_cast<std::size_t>(k)] = sigmoid(theta(0, k));
  return top_fraction_mask(g, std::move(scores), cfg.mask_ratio);
}

EdgeMask explain_occlusion(const Predictor& model, const Graph& g, int target_class, double ratio) {
  check_target(model, target_class);
  const double base = model.forward(g)(target_class);
  std::vector<double> scores;
  scores.reserve(g.edge_count());
  for (std::size_t k = 0; k < g.edge_count(); ++k) {
    EdgeList rest = g.edges();
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
    scores.push_back(base - target_prob(model, g, rest, target_class));
  }
  return top_fraction_mask(g, std::move(scores), ratio);
}

EdgeMask explain_screener(const Predictor& model, const Graph& g, int target_class, std::size_t budget, double ratio) {
  check_target(model, target_class);
  const std::size_t m = g.edge_count();
  budget = std::min(budget, m);
  std::vector<double> scores(m, 0.0);
  std::vector<bool> taken(m, false);
  EdgeList chosen;
  for (std::size_t k = 0; k < budget; ++k) {
    std::size_t best = m;
    double best_p = -1.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (taken[c]) continue;
      EdgeList trial = chosen;
      trial.push_back(g.edges()[c]);
      std::sort(trial.begin(), trial.end());
      const double p = target_prob(model, g, trial, target_class);
      if (p > best_p) {
        best_p = p;
        best = c;
      }
    }
    taken[best] = true;
    chosen.push_back(g.edges()[best]);
    std::sort(chosen.begin(), chosen.end());
    scores[best] = static_cast<double>(budget - k) / static_cast<double>(budget);
  }
  return top_fraction_mask(g, std::move(scores), ratio);
}

EdgeMask explain_random(const Graph& g, std::uint64_t seed, double ratio) {
  Rng rng(derive_seed(seed, g.id()));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(g.edge_count());
  for (double& s : scores) s = u(rng);
  return top_fraction_mask(g, std::move(scores), ratio);
}

EdgeMask explain(const Predictor& model, const Graph& g, int target_class, const ExplainerConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case ExplainerKind::Sa: return explain_sa(model, g, target_class, cfg.mask_ratio);
    case ExplainerKind::GradCam: return explain_gradcam(model, g, target_class, cfg.mask_ratio);
    case ExplainerKind::MaskOpt: return explain_maskopt(model, g, target_class, cfg);
    case ExplainerKind::Occlusion: return explain_occlusion(model, g, target_class, cfg.mask_ratio);
    case ExplainerKind::Screener:
      return explain_screener(model, g, target_class, selection_size(g.edge_count(), cfg.mask_ratio),
                              cfg.mask_ratio);
    case ExplainerKind::Random: return explain_random(g, cfg.seed, cfg.mask_ratio);
  }
  throw ConfigError("unknown explainer kind");
}

}  // namespace dse
