#include "dse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dse/errors.hpp"
#include "dse/explainers.hpp"

namespace dse {

double precision(const EdgeMask& mask, const Graph& g) {
  if (!g.ground_truth()) throw InvariantError("precision: graph '" + g.id() + "' has no ground-truth explanation");
  if (mask.parent_id != g.id()) throw IdentityError("precision: mask belongs to another graph");
  if (mask.selected.empty()) return 0.0;
  return static_cast<double>(edge_intersection(mask.selected, *g.ground_truth()).size()) /
         static_cast<double>(mask.selected.size());
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("pearson: lists differ in length");
  if (xs.size() < 2) throw ShapeError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("correlation undefined: a list has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

nlohmann::json Correlation::to_json() const {
  if (value) return {{"value", *value}, {"reason", nullptr}};
  return {{"value", nullptr}, {"reason", reason}};
}

Correlation try_pearson(std::span<const double> xs, std::span<const double> ys) {
  try {
    return {pearson(xs, ys), {}};
  } catch (const Error& e) {
    return {std::nullopt, e.what()};
  }
}

Correlation try_spearman(std::span<const double> a, std::span<const double> b) {
  try {
    return {spearman(a, b), {}};
  } catch (const Error& e) {
    return {std::nullopt, e.what()};
  }
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<ExplainerSummary> rho_comparison(const std::vector<Graph>& dataset, const std::vector<MaskRecord>& masks,
                                             const std::vector<ImportanceRecord>& records) {
  std::map<std::string, const Graph*> graphs;
  for (const Graph& g : dataset) graphs[g.id()] = &g;
  std::map<std::pair<std::string, std::string>, const MaskRecord*> by_key;
  for (const MaskRecord& m : masks) by_key[{m.graph_id, m.explainer}] = &m;

  std::vector<const ImportanceRecord*> sorted;
  for (const ImportanceRecord& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const ImportanceRecord* a, const ImportanceRecord* b) {
    return std::tie(a->explainer, a->graph_id) < std::tie(b->explainer, b->graph_id);
  });

  std::map<std::string, ExplainerSummary> out;
  for (const ImportanceRecord* r : sorted) {
    auto g = graphs.find(r->graph_id);
    auto m = by_key.find({r->graph_id, r->explainer});
    if (g == graphs.end() || m == by_key.end()) {
      throw IdentityError("record (" + r->graph_id + ", " + r->explainer + ") has no matching graph or mask");
    }
    ExplainerSummary& s = out[r->explainer];
    s.explainer = r->explainer;
    s.graph_ids.push_back(r->graph_id);
    s.precision.push_back(precision(m->second->mask, *g->second));
    s.imp_re.push_back(r->imp_re);
    s.imp_dse.push_back(r->imp_dse);
    if (r->imp_dse_deletion) s.imp_dse_deletion.push_back(*r->imp_dse_deletion);
  }
  std::vector<ExplainerSummary> result;
  for (auto& [name, s] : out) {
    s.mean_precision = mean_of(s.precision);
    s.mean_imp_re = mean_of(s.imp_re);
    s.mean_imp_dse = mean_of(s.imp_dse);
    s.rho_re = try_pearson(s.precision, s.imp_re);
    s.rho_dse = try_pearson(s.precision, s.imp_dse);
    if (s.imp_dse_deletion.size() == s.precision.size()) {
      s.rho_deletion = try_pearson(s.precision, s.imp_dse_deletion);
    } else {
      s.rho_deletion = {std::nullopt, "deletion importance not computed"};
    }
    result.push_back(std::move(s));
  }
  return result;
}

std::vector<std::string> ranking(const std::vector<std::string>& names, const std::vector<double>& values) {
  if (names.size() != values.size()) throw ShapeError("ranking: names and values differ in length");
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return names[a] < names[b];
  });
  std::vector<std::string> out;
  for (std::size_t i : order) out.push_back(names[i]);
  return out;
}

double val_metric(const std::vector<Graph>& graphs, const SurrogateGenerator& gen, const Predictor& model,
                  const DseConfig& cfg) {
  double sum = 0.0;
  int count = 0;
  for (const Graph& g : graphs) {
    if (!g.ground_truth()) continue;
    const EdgeMask gt = mask_from_selection(g, *g.ground_truth());
    const double re = importance_removal(model, gt, g, g.label());
    const double dse = imp_dse_reduced(model, gen, g, gt, g.label(), cfg, stream_seed(cfg.seed, g.id(), "val")).value;
    sum += dse - re;
    ++count;
  }
  if (count == 0) throw EmptyInputError("val_metric: no graph carries a ground-truth explanation");
  return sum / count;
}

double fid_metric(const std::vector<Graph>& graphs, const SurrogateGenerator& gen, const Predictor& model,
                  int num_random_masks, double ratio, const DseConfig& cfg) {
  if (graphs.empty()) throw EmptyInputError("fid_metric: no graphs");
  if (num_random_masks < 1) throw ConfigError("fid_metric: need at least one random mask");
  double sum = 0.0;
  long terms = 0;
  for (const Graph& g : graphs) {
    const Eigen::RowVectorXd full = model.forward(g);
    for (int m = 0; m < num_random_masks; ++m) {
      const std::string tag = "fid" + std::to_string(m);
      const EdgeMask mask = explain_random(g, derive_seed(cfg.seed, tag), ratio);
      const DseEstimate est = imp_dse_reduced(model, gen, g, mask, g.label(), cfg, stream_seed(cfg.seed, g.id(), tag));
      Eigen::RowVectorXd avg = Eigen::RowVectorXd::Zero(full.size());
      for (const auto& p : est.surrogate_probs) avg += p;
      avg /= static_cast<double>(est.surrogate_probs.size());
      sum += (full - avg).squaredNorm() / static_cast<double>(full.size());
      ++terms;
    }
  }
  return sum / static_cast<double>(terms);
}

}  // namespace dse
