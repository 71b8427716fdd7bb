#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dse/checkpoint.hpp"
#include "dse/graph.hpp"
#include "dse/nn.hpp"

namespace dse {

struct PredictorConfig {
  int hidden_dim = 64;
  int num_layers = 3;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int max_epochs = 100;
  int batch_size = 32;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PredictorConfig from_json(const nlohmann::json& j);
};

/// Message-passing graph classifier: `num_layers` ReLU message-passing
/// layers, mean pooling over nodes and a linear readout.
class Predictor {
 public:
  /// Intermediate values of one forward pass, kept for backward().
  struct Pass {
    Eigen::MatrixXd adjacency;
    GnnStack<double>::Caches caches;
    Eigen::MatrixXd node_embeddings;  // N x hidden (last layer output)
    Eigen::RowVectorXd pooled;
    Eigen::RowVectorXd logits;
  };

  Predictor() = default;
  /// Glorot-initialized message passing, zero readout.
  Predictor(int feature_dim, int num_classes, const PredictorConfig& cfg, Rng& rng);

  static Predictor from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint(const nlohmann::json& extra_metadata = nlohmann::json::object()) const;

  int feature_dim() const { return gnn_.in_dim(); }
  int num_classes() const { return readout_.out_dim(); }
  int hidden_dim() const { return readout_.in_dim(); }

  /// Class probabilities; throws ShapeError on a feature-dimension mismatch.
  Eigen::RowVectorXd forward(const Graph& g) const;
  /// Class probabilities with `edge_weights[k]` on g.edges()[k].
  Eigen::RowVectorXd forward(const Graph& g, std::span<const double> edge_weights) const;
  /// Class probabilities on an explicit (possibly dense, weighted) adjacency.
  Eigen::RowVectorXd forward(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& features) const;

  Pass run(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& features) const;
  /// Backpropagates d logits. `grad` must come from zeros_like(); d_features
  /// and d_adjacency are written when non-null.
  void backward(const Pass& pass, const Eigen::RowVectorXd& d_logits, Predictor& grad,
                Eigen::MatrixXd* d_features = nullptr, Eigen::MatrixXd* d_adjacency = nullptr,
                Eigen::MatrixXd* d_embeddings = nullptr) const;

  Predictor zeros_like() const;

  template <typename F>
  void visit(F&& f) {
    gnn_.visit("gnn", f);
    readout_.visit("readout", f);
  }

  GnnStack<double>& gnn() { return gnn_; }
  const GnnStack<double>& gnn() const { return gnn_; }
  Dense<double>& readout() { return readout_; }
  const Dense<double>& readout() const { return readout_; }

  const PredictorConfig& config() const { return cfg_; }

 private:
  void check_features(const Eigen::MatrixXd& features) const;

  PredictorConfig cfg_;
  GnnStack<double> gnn_;
  Dense<double> readout_;
};

/// Cross-entropy of the predictor on `label`; optionally fills d loss / d features.
double cross_entropy(const Predictor& model, const Graph& g, int label, Eigen::MatrixXd* d_features = nullptr);

/// Deterministic train/test split of `n` items; returns (train, test) index lists.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double test_fraction, std::uint64_t seed);

struct PredictorEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainedPredictor {
  Predictor model;  // parameters already rounded to checkpoint precision
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  std::uint64_t split_seed = 0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::vector<PredictorEpoch> history;

  Checkpoint checkpoint() const;
};

/// Supervised training with Adam; throws TrainingError on a non-finite loss.
TrainedPredictor train_predictor(const std::vector<Graph>& dataset, const PredictorConfig& cfg);

double accuracy(const Predictor& model, const std::vector<Graph>& dataset, std::span<const int> indices);

/// Removal-based importance: the target probability on the masked subgraph alone.
double importance_removal(const Predictor& model, const EdgeMask& mask, const Graph& g, int target_class);

}  // namespace dse
