#include "dse/frontdoor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "dse/errors.hpp"
#include "dse/random.hpp"

namespace dse {

namespace {

Eigen::MatrixXd adjacency_of(int n, const EdgeList& edges) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const Edge& e : edges) a(e.u, e.v) = a(e.v, e.u) = 1.0;
  return a;
}

EdgeList free_pairs(int n, const EdgeList& conditioning) { return edge_difference(all_pairs(n), conditioning); }

using CompletionFn = std::function<void(const EdgeList& edges, double weight)>;

/// Calls `fn` once per completion of `conditioning`: every assignment of the
/// free pairs with its probability when enumeration applies, else one
/// Bernoulli draw with weight 1.
void for_each_completion(const Graph& g, const EdgeList& conditioning, const EdgeProbMatrix& probs,
                         int enumerate_up_to, Rng& rng, const CompletionFn& fn) {
  const EdgeList free = free_pairs(g.node_count(), conditioning);
  if (static_cast<int>(free.size()) > enumerate_up_to) {
    const SurrogateSample s = sample_from_probs(g, conditioning, probs, rng);
    fn(s.edges, 1.0);
    return;
  }
  const std::size_t f = free.size();
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << f); ++bits) {
    double w = 1.0;
    EdgeList on;
    for (std::size_t k = 0; k < f; ++k) {
      const double p = probs(free[k].u, free[k].v);
      if ((bits >> k) & 1U) {
        w *= p;
        on.push_back(free[k]);
      } else {
        w *= 1.0 - p;
      }
    }
    if (w == 0.0) continue;
    fn(edge_union(conditioning, on), w);
  }
}

void check_target(const Predictor& model, int target_class) {
  if (target_class < 0 || target_class >= model.num_classes()) throw ShapeError("target class out of range");
}

}  // namespace

std::string_view estimator_name(Estimator e) { return e == Estimator::Reduced ? "reduced" : "weighted"; }

Estimator estimator_from_name(std::string_view name) {
  if (name == "reduced") return Estimator::Reduced;
  if (name == "weighted") return Estimator::Weighted;
  throw ConfigError("unknown estimator '" + std::string(name) + "'");
}

void DseConfig::validate() const {
  if (num_surrogates < 1) throw ConfigError("num_surrogates must be at least 1");
  if (pool_size < 1) throw ConfigError("pool_size must be at least 1");
  if (enumerate_up_to < 0 || enumerate_up_to > 20) throw ConfigError("enumerate_up_to must lie in [0, 20]");
}

nlohmann::json DseConfig::to_json() const {
  return {{"num_surrogates", num_surrogates},   {"estimator", estimator_name(estimator)},
          {"pool_size", pool_size},             {"enumerate_up_to", enumerate_up_to},
          {"compute_deletion", compute_deletion}, {"seed", seed}};
}

std::uint64_t stream_seed(std::uint64_t base, std::string_view graph_id, std::string_view explainer) {
  return derive_seed(derive_seed(base, graph_id), explainer);
}

DseEstimate imp_dse_reduced(const Predictor& model, const SurrogateGenerator& gen, const Graph& g,
                            const EdgeMask& mask, int target_class, const DseConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  check_target(model, target_class);
  const Graph g_s = induce_subgraph(g, mask);
  DseEstimate est;
  double sum = 0.0;
  for (int k = 0; k < cfg.num_surrogates; ++k) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(k)));
    const EdgeProbMatrix probs = gen.edge_probs(g, g_s, rng);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(model.num_classes());
    for_each_completion(g, mask.selected, probs, cfg.enumerate_up_to, rng, [&](const EdgeList& edges, double w) {
      acc += w * model.forward(adjacency_of(g.node_count(), edges), g.node_features());
    });
    sum += acc(target_class);
    est.surrogate_probs.push_back(std::move(acc));
  }
  est.value = sum / cfg.num_surrogates;
  return est;
}

DseEstimate imp_dse_weighted(const Predictor& model, const SurrogateGenerator& gen, const Graph& g,
                             const EdgeMask& mask, int target_class, const DseConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  check_target(model, target_class);
  const Graph g_s = induce_subgraph(g, mask);

  // Adjustment pool: random masks of g with as many edges as the explanation.
  Rng pool_rng(derive_seed(stream, "pool"));
  std::vector<Graph> pool;
  const std::size_t size = mask.selected.size();
  for (int j = 0; j < cfg.pool_size; ++j) {
    EdgeList edges = g.edges();
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t r = std::uniform_int_distribution<std::size_t>(i, edges.size() - 1)(pool_rng);
      std::swap(edges[i], edges[r]);
    }
    edges.resize(size);
    std::sort(edges.begin(), edges.end());
    pool.push_back(g.with_edges(std::move(edges)));
  }
  const double log_prior = -std::log(static_cast<double>(cfg.pool_size));

  DseEstimate est;
  double sum = 0.0;
  for (int k = 0; k < cfg.num_surrogates; ++k) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(k)));
    const EdgeProbMatrix probs = gen.edge_probs(g, g_s, rng);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(model.num_classes());
    for_each_completion(g, mask.selected, probs, cfg.enumerate_up_to, rng, [&](const EdgeList& edges, double w) {
      const Graph g_star = g.with_edges(edges);
      Eigen::VectorXd log_w(cfg.pool_size);
      for (int j = 0; j < cfg.pool_size; ++j) {
        const Graph& member = pool[static_cast<std::size_t>(j)];
        const double ll = edge_set_log_likelihood(gen.mean_edge_probs(g_star, member), member.edges());
        log_w(j) = std::isfinite(ll) ? log_prior - ll : -std::numeric_limits<double>::infinity();
      }
      const double norm = log_sum_exp(log_w);
      if (!std::isfinite(norm)) {
        throw DegenerateWeightsError("every adjustment-pool member has zero posterior for a surrogate of '" +
                                     g.id() + "'");
      }
      const Eigen::RowVectorXd f = model.forward(adjacency_of(g.node_count(), edges), g.node_features());
      Eigen::RowVectorXd mixed = Eigen::RowVectorXd::Zero(f.size());
      for (int j = 0; j < cfg.pool_size; ++j) mixed += std::exp(log_w(j) - norm) * f;
      acc += w * mixed;
    });
    sum += acc(target_class);
    est.surrogate_probs.push_back(std::move(acc));
  }
  est.value = sum / cfg.num_surrogates;
  return est;
}

DseEstimate imp_dse(const Predictor& model, const SurrogateGenerator& gen, const Graph& g, const EdgeMask& mask,
                    int target_class, const DseConfig& cfg, std::uint64_t stream) {
  return cfg.estimator == Estimator::Reduced ? imp_dse_reduced(model, gen, g, mask, target_class, cfg, stream)
                                             : imp_dse_weighted(model, gen, g, mask, target_class, cfg, stream);
}

double imp_dse_deletion(const Predictor& model, const SurrogateGenerator& gen, const Graph& g, const EdgeMask& mask,
                        int target_class, const DseConfig& cfg, std::uint64_t stream) {
  check_target(model, target_class);
  const double full = model.forward(g)(target_class);
  const EdgeMask rest = complement_mask(g, mask);
  return full - imp_dse_reduced(model, gen, g, rest, target_class, cfg, derive_seed(stream, "deletion")).value;
}

// ---------------------------------------------------------------- records

namespace {

nlohmann::json edge_json(const Edge& e) { return nlohmann::json::array({e.u, e.v}); }
Edge edge_from_json(const nlohmann::json& j) { return Edge(j.at(0).get<int>(), j.at(1).get<int>()); }

}  // namespace

nlohmann::json mask_record_to_json(const MaskRecord& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (std::size_t k = 0; k < r.mask.edges.size(); ++k) {
    scores.push_back({r.mask.edges[k].u, r.mask.edges[k].v, r.mask.scores[k]});
  }
  nlohmann::json selected = nlohmann::json::array();
  for (const Edge& e : r.mask.selected) selected.push_back(edge_json(e));
  return {{"graph_id", r.graph_id}, {"explainer", r.explainer}, {"scores", scores}, {"selected", selected}};
}

MaskRecord mask_record_from_json(const nlohmann::json& j) {
  MaskRecord r;
  r.graph_id = j.at("graph_id").get<std::string>();
  r.explainer = j.at("explainer").get<std::string>();
  r.mask.parent_id = r.graph_id;
  for (const auto& s : j.at("scores")) {
    r.mask.edges.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
    r.mask.scores.push_back(s.at(2).get<double>());
  }
  for (const auto& e : j.at("selected")) r.mask.selected.push_back(edge_from_json(e));
  std::sort(r.mask.selected.begin(), r.mask.selected.end());
  return r;
}

nlohmann::json importance_record_to_json(const ImportanceRecord& r) {
  nlohmann::json probs = nlohmann::json::array();
  for (const auto& p : r.surrogate_probs) probs.push_back(std::vector<double>(p.data(), p.data() + p.size()));
  return {{"graph_id", r.graph_id},
          {"explainer", r.explainer},
          {"target_class", r.target_class},
          {"imp_re", r.imp_re},
          {"imp_dse", r.imp_dse},
          {"imp_dse_deletion", r.imp_dse_deletion ? nlohmann::json(*r.imp_dse_deletion) : nlohmann::json(nullptr)},
          {"estimator", r.estimator},
          {"surrogate_probs", probs}};
}

ImportanceRecord importance_record_from_json(const nlohmann::json& j) {
  ImportanceRecord r;
  r.graph_id = j.at("graph_id").get<std::string>();
  r.explainer = j.at("explainer").get<std::string>();
  r.target_class = j.at("target_class").get<int>();
  r.imp_re = j.at("imp_re").get<double>();
  r.imp_dse = j.at("imp_dse").get<double>();
  if (!j.at("imp_dse_deletion").is_null()) r.imp_dse_deletion = j.at("imp_dse_deletion").get<double>();
  r.estimator = j.at("estimator").get<std::string>();
  for (const auto& p : j.at("surrogate_probs")) {
    const auto v = p.get<std::vector<double>>();
    r.surrogate_probs.push_back(Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return r;
}

std::vector<ImportanceRecord> evaluate_all(const std::vector<Graph>& dataset, const std::vector<MaskRecord>& masks,
                                           const Predictor& model, const SurrogateGenerator& gen,
                                           const DseConfig& cfg) {
  cfg.validate();
  std::map<std::string, const Graph*> by_id;
  for (const Graph& g : dataset) by_id[g.id()] = &g;
  std::vector<const MaskRecord*> order;
  for (const MaskRecord& m : masks) order.push_back(&m);
  std::sort(order.begin(), order.end(), [](const MaskRecord* a, const MaskRecord* b) {
    return std::tie(a->graph_id, a->explainer) < std::tie(b->graph_id, b->explainer);
  });

  std::vector<ImportanceRecord> out;
  out.reserve(order.size());
  for (const MaskRecord* m : order) {
    auto it = by_id.find(m->graph_id);
    if (it == by_id.end()) throw IdentityError("mask refers to unknown graph '" + m->graph_id + "'");
    const Graph& g = *it->second;
    const std::uint64_t stream = stream_seed(cfg.seed, g.id(), m->explainer);
    ImportanceRecord r;
    r.graph_id = g.id();
    r.explainer = m->explainer;
    r.target_class = g.label();
    r.estimator = std::string(estimator_name(cfg.estimator));
    r.imp_re = importance_removal(model, m->mask, g, r.target_class);
    DseEstimate est = imp_dse(model, gen, g, m->mask, r.target_class, cfg, stream);
    r.imp_dse = est.value;
    r.surrogate_probs = std::move(est.surrogate_probs);
    if (cfg.compute_deletion) {
      r.imp_dse_deletion = imp_dse_deletion(model, gen, g, m->mask, r.target_class, cfg, stream);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dse
