#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dse/graph.hpp"
#include "dse/predictor.hpp"

namespace dse {

enum class ExplainerKind { Sa, GradCam, MaskOpt, Occlusion, Screener, Random };

inline constexpr std::array<ExplainerKind, 6> kExplainers = {ExplainerKind::Sa,        ExplainerKind::GradCam,
                                                             ExplainerKind::MaskOpt,   ExplainerKind::Occlusion,
                                                             ExplainerKind::Screener,  ExplainerKind::Random};

std::string_view explainer_name(ExplainerKind kind);
/// Accepts sa, gradcam, maskopt, occlusion, screener, random.
ExplainerKind explainer_from_name(std::string_view name);

struct ExplainerConfig {
  ExplainerKind kind = ExplainerKind::Sa;
  double mask_ratio = 0.15;
  int maskopt_steps = 200;
  double maskopt_lr = 0.01;
  double maskopt_sparsity_coeff = 0.005;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

/// |d logit_target / d w_e| at w = 1, where w_e weights both directions of edge e.
EdgeMask explain_sa(const Predictor& model, const Graph& g, int target_class, double ratio);

/// Node score ReLU(h_i . alpha) with alpha the node-averaged gradient of the
/// target logit w.r.t. the last embeddings; edge score = mean of its endpoints.
EdgeMask explain_gradcam(const Predictor& model, const Graph& g, int target_class, double ratio);

/// Sigmoid edge mask trained with Adam on -log p_target + c * sum(mask).
/// Throws TrainingError when the objective turns non-finite.
EdgeMask explain_maskopt(const Predictor& model, const Graph& g, int target_class, const ExplainerConfig& cfg);

/// p_target(g) - p_target(g without e).
EdgeMask explain_occlusion(const Predictor& model, const Graph& g, int target_class, double ratio);

/// Greedy growth of `budget` edges maximizing p_target of the induced
/// subgraph. The k-th pick (0-based) scores (budget - k) / budget, the rest 0.
EdgeMask explain_screener(const Predictor& model, const Graph& g, int target_class, std::size_t budget, double ratio);

/// Uniform scores in [0, 1) from a stream derived from (seed, graph id).
EdgeMask explain_random(const Graph& g, std::uint64_t seed, double ratio);

/// Dispatches on cfg.kind.
EdgeMask explain(const Predictor& model, const Graph& g, int target_class, const ExplainerConfig& cfg);

}  // namespace dse
