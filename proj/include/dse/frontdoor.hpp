#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dse/cvgae.hpp"
#include "dse/graph.hpp"
#include "dse/predictor.hpp"

namespace dse {

enum class Estimator { Reduced, Weighted };

std::string_view estimator_name(Estimator e);
Estimator estimator_from_name(std::string_view name);

struct DseConfig {
  int num_surrogates = 50;
  Estimator estimator = Estimator::Reduced;
  int pool_size = 32;
  /// When the number of free pairs is at most this, each latent draw
  /// contributes the exact expectation over all completions instead of one
  /// Bernoulli sample. 0 disables enumeration.
  int enumerate_up_to = 0;
  bool compute_deletion = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Base seed of the surrogate streams for one (graph, explainer) pair.
std::uint64_t stream_seed(std::uint64_t base, std::string_view graph_id, std::string_view explainer);

struct DseEstimate {
  double value = 0.0;
  /// Class-probability vector per latent draw (expected over completions in enumeration mode).
  std::vector<Eigen::RowVectorXd> surrogate_probs;
};

/// Mean target probability over surrogates drawn from `gen` conditioned on mask.
/// Draw k uses the stream derive_seed(stream, k).
DseEstimate imp_dse_reduced(const Predictor& model, const SurrogateGenerator& gen, const Graph& g,
                            const EdgeMask& mask, int target_class, const DseConfig& cfg, std::uint64_t stream);

/// Importance-weighted variant over a pool of K random same-size masks of g with
/// uniform prior. Weights P(G') / P_hat(G' | G*) are normalized per surrogate;
/// members with zero posterior are dropped. Throws DegenerateWeightsError when
/// every member has zero posterior.
DseEstimate imp_dse_weighted(const Predictor& model, const SurrogateGenerator& gen, const Graph& g,
                             const EdgeMask& mask, int target_class, const DseConfig& cfg, std::uint64_t stream);

/// Dispatches on cfg.estimator.
DseEstimate imp_dse(const Predictor& model, const SurrogateGenerator& gen, const Graph& g, const EdgeMask& mask,
                    int target_class, const DseConfig& cfg, std::uint64_t stream);

/// f(g)[target] minus the front-door importance of the complement mask.
double imp_dse_deletion(const Predictor& model, const SurrogateGenerator& gen, const Graph& g, const EdgeMask& mask,
                        int target_class, const DseConfig& cfg, std::uint64_t stream);

struct MaskRecord {
  std::string graph_id;
  std::string explainer;
  EdgeMask mask;
};

nlohmann::json mask_record_to_json(const MaskRecord& r);
MaskRecord mask_record_from_json(const nlohmann::json& j);

struct ImportanceRecord {
  std::string graph_id;
  std::string explainer;
  int target_class = 0;
  double imp_re = 0.0;
  double imp_dse = 0.0;
  std::optional<double> imp_dse_deletion;
  std::vector<Eigen::RowVectorXd> surrogate_probs;
  std::string estimator;

  friend bool operator==(const ImportanceRecord&, const ImportanceRecord&) = default;
};

nlohmann::json importance_record_to_json(const ImportanceRecord& r);
ImportanceRecord importance_record_from_json(const nlohmann::json& j);

/// One record per mask, sorted by (graph_id, explainer). The target class is
/// the graph's label. Throws IdentityError for a mask whose graph is missing.
std::vector<ImportanceRecord> evaluate_all(const std::vector<Graph>& dataset, const std::vector<MaskRecord>& masks,
                                           const Predictor& model, const SurrogateGenerator& gen,
                                           const DseConfig& cfg);

}  // namespace dse
