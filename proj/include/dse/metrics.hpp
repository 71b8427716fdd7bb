#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dse/cvgae.hpp"
#include "dse/frontdoor.hpp"
#include "dse/graph.hpp"
#include "dse/predictor.hpp"

namespace dse {

/// |selected ∩ ground truth| / |selected|, 0 for an empty selection.
/// Throws InvariantError when g has no ground truth.
double precision(const EdgeMask& mask, const Graph& g);

/// Throws ShapeError on unequal lengths or fewer than two points and
/// UndefinedCorrelationError when either list has zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// 1-based ranks in ascending order; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of the average-rank vectors.
double spearman(std::span<const double> a, std::span<const double> b);

/// A correlation that may be undefined; `reason` says why when it is.
struct Correlation {
  std::optional<double> value;
  std::string reason;

  nlohmann::json to_json() const;
};

Correlation try_pearson(std::span<const double> xs, std::span<const double> ys);
Correlation try_spearman(std::span<const double> a, std::span<const double> b);

struct ExplainerSummary {
  std::string explainer;
  std::vector<std::string> graph_ids;
  std::vector<double> precision;
  std::vector<double> imp_re;
  std::vector<double> imp_dse;
  std::vector<double> imp_dse_deletion;
  double mean_precision = 0.0;
  double mean_imp_re = 0.0;
  double mean_imp_dse = 0.0;
  Correlation rho_re;
  Correlation rho_dse;
  Correlation rho_deletion;
};

/// Per explainer, Pearson correlation between precision and each importance
/// list over the graphs it was evaluated on. Explainers are returned sorted by name.
std::vector<ExplainerSummary> rho_comparison(const std::vector<Graph>& dataset, const std::vector<MaskRecord>& masks,
                                             const std::vector<ImportanceRecord>& records);

/// Explainer names ordered by descending value (ties by name).
std::vector<std::string> ranking(const std::vector<std::string>& names, const std::vector<double>& values);

/// Mean over graphs of imp_dse_reduced(ground truth) - imp_re(ground truth).
/// Graph g uses stream_seed(cfg.seed, g.id(), "val") so generators are compared on matched draws.
double val_metric(const std::vector<Graph>& graphs, const SurrogateGenerator& gen, const Predictor& model,
                  const DseConfig& cfg);

/// Mean over graphs, `num_random_masks` random masks at `ratio` and all K
/// classes of (f_y(G) - mean_k f_y(G*_k))^2.
double fid_metric(const std::vector<Graph>& graphs, const SurrogateGenerator& gen, const Predictor& model,
                  int num_random_masks, double ratio, const DseConfig& cfg);

}  // namespace dse
