#include "dse/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dse/errors.hpp"

namespace dse {

void PredictorConfig::validate() const {
  if (hidden_dim <= 0) throw ConfigError("predictor hidden_dim must be positive");
  if (num_layers <= 0) throw ConfigError("predictor num_layers must be positive");
  if (!(learning_rate > 0)) throw ConfigError("predictor learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("predictor weight_decay must be non-negative");
  if (max_epochs < 0) throw ConfigError("predictor max_epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("predictor batch_size must be positive");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("predictor test_fraction must lie in [0, 1)");
}

nlohmann::json PredictorConfig::to_json() const {
  return {{"hidden_dim", hidden_dim},       {"num_layers", num_layers}, {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},   {"max_epochs", max_epochs}, {"batch_size", batch_size},
          {"test_fraction", test_fraction}, {"seed", seed}};
}

PredictorConfig PredictorConfig::from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.test_fraction = j.at("test_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Predictor::Predictor(int feature_dim, int num_classes, const PredictorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  std::vector<int> dims{feature_dim};
  for (int l = 0; l < cfg.num_layers; ++l) dims.push_back(cfg.hidden_dim);
  gnn_ = GnnStack<double>::glorot(dims, Activation::Relu, Activation::Relu, rng);
  readout_ = Dense<double>(cfg.hidden_dim, num_classes);
}

Predictor Predictor::from_checkpoint(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  if (meta.value("kind", "") != "predictor") throw ShapeError("checkpoint is not a predictor");
  Predictor p;
  p.cfg_ = PredictorConfig::from_json(meta.at("config"));
  const int feature_dim = meta.at("feature_dim").get<int>();
  const int num_classes = meta.at("num_classes").get<int>();
  std::vector<int> dims{feature_dim};
  for (int l = 0; l < p.cfg_.num_layers; ++l) dims.push_back(p.cfg_.hidden_dim);
  Rng unused(0);
  p.gnn_ = GnnStack<double>::glorot(dims, Activation::Relu, Activation::Relu, unused);
  p.readout_ = Dense<double>(p.cfg_.hidden_dim, num_classes);
  p.visit([&](const std::string& name, Eigen::MatrixXd& m) {
    Eigen::MatrixXd stored = ckpt.matrix(name);
    if (stored.rows() != m.rows() || stored.cols() != m.cols()) {
      throw ShapeError("predictor tensor '" + name + "' has the wrong shape");
    }
    m = std::move(stored);
  });
  return p;
}

Checkpoint Predictor::to_checkpoint(const nlohmann::json& extra_metadata) const {
  Checkpoint ckpt;
  ckpt.metadata = extra_metadata;
  ckpt.metadata["kind"] = "predictor";
  ckpt.metadata["config"] = cfg_.to_json();
  ckpt.metadata["feature_dim"] = feature_dim();
  ckpt.metadata["num_classes"] = num_classes();
  Predictor copy = *this;
  copy.visit([&](const std::string& name, Eigen::MatrixXd& m) { ckpt.put(name, m); });
  return ckpt;
}

void Predictor::check_features(const Eigen::MatrixXd& features) const {
  if (features.cols() != feature_dim()) {
    throw ShapeError("graph has feature dimension " + std::to_string(features.cols()) + ", predictor expects " +
                     std::to_string(feature_dim()));
  }
}

Predictor::Pass Predictor::run(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& features) const {
  check_features(features);
  if (adjacency.rows() != features.rows() || adjacency.cols() != features.rows()) {
    throw ShapeError("adjacency does not match the node count");
  }
  Pass pass;
  pass.adjacency = adjacency;
  pass.node_embeddings = gnn_.forward(adjacency, features, pass.caches);
  pass.pooled = pass.node_embeddings.colwise().mean();
  pass.logits = readout_.forward(pass.pooled);
  return pass;
}

void Predictor::backward(const Pass& pass, const Eigen::RowVectorXd& d_logits, Predictor& grad,
                         Eigen::MatrixXd* d_features, Eigen::MatrixXd* d_adjacency,
                         Eigen::MatrixXd* d_embeddings) const {
  const Eigen::MatrixXd d_pooled = readout_.backward(pass.pooled, d_logits, grad.readout_);
  const auto n = pass.node_embeddings.rows();
  Eigen::MatrixXd d_h = d_pooled.replicate(n, 1) / static_cast<double>(n);
  if (d_embeddings) *d_embeddings = d_h;
  if (d_adjacency) {
    if (d_adjacency->rows() != n) *d_adjacency = Eigen::MatrixXd::Zero(n, n);
  }
  gnn_.backward(pass.adjacency, pass.caches, d_h, grad.gnn_, d_features, d_adjacency);
}

Predictor Predictor::zeros_like() const {
  Predictor p;
  p.cfg_ = cfg_;
  p.gnn_ = gnn_.zeros_like();
  p.readout_ = readout_.zeros_like();
  return p;
}

Eigen::RowVectorXd Predictor::forward(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& features) const {
  return softmax(run(adjacency, features).logits);
}

Eigen::RowVectorXd Predictor::forward(const Graph& g) const { return forward(g.adjacency(), g.node_features()); }

Eigen::RowVectorXd Predictor::forward(const Graph& g, std::span<const double> edge_weights) const {
  return forward(g.weighted_adjacency(edge_weights), g.node_features());
}

double cross_entropy(const Predictor& model, const Graph& g, int label, Eigen::MatrixXd* d_features) {
  const Predictor::Pass pass = model.run(g.adjacency(), g.node_features());
  const Eigen::RowVectorXd probs = softmax(pass.logits);
  const double loss = -(pass.logits(label) - log_sum_exp(pass.logits.transpose()));
  if (d_features) {
    Eigen::RowVectorXd d_logits = probs;
    d_logits(label) -= 1.0;
    Predictor scratch = model.zeros_like();
    model.backward(pass, d_logits, scratch, d_features);
  }
  return loss;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double test_fraction, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = std::uniform_int_distribution<int>(0, i)(rng);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const int n_test = n < 2 ? 0 : static_cast<int>(std::floor(test_fraction * n + 1e-9));
  std::vector<int> test(order.begin(), order.begin() + n_test);
  std::vector<int> train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

double accuracy(const Predictor& model, const std::vector<Graph>& dataset, std::span<const int> indices) {
  if (indices.empty()) return 0.0;
  int correct = 0;
  for (int i : indices) {
    const Graph& g = dataset[static_cast<std::size_t>(i)];
    Eigen::Index argmax = 0;
    model.forward(g).maxCoeff(&argmax);
    if (argmax == g.label()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

Checkpoint TrainedPredictor::checkpoint() const {
  nlohmann::json meta;
  meta["split_seed"] = split_seed;
  meta["train_accuracy"] = train_accuracy;
  meta["test_accuracy"] = test_accuracy ? nlohmann::json(*test_accuracy) : nlohmann::json(nullptr);
  meta["train_size"] = train_indices.size();
  meta["test_indices"] = test_indices;
  return model.to_checkpoint(meta);
}

TrainedPredictor train_predictor(const std::vector<Graph>& dataset, const PredictorConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw EmptyInputError("train_predictor: empty dataset");
  int num_classes = 0;
  const int feature_dim = dataset.front().feature_dim();
  for (const Graph& g : dataset) {
    if (g.feature_dim() != feature_dim) throw ShapeError("train_predictor: inconsistent feature dimensions");
    num_classes = std::max(num_classes, g.label() + 1);
  }
  num_classes = std::max(num_classes, 2);

  TrainedPredictor out;
  out.split_seed = derive_seed(cfg.seed, "split");
  std::tie(out.train_indices, out.test_indices) =
      split_indices(static_cast<int>(dataset.size()), cfg.test_fraction, out.split_seed);

  Rng init_rng(derive_seed(cfg.seed, "init"));
  Predictor model(feature_dim, num_classes, cfg, init_rng);
  Predictor grad = model.zeros_like();
  auto param_refs = parameter_refs(model);
  auto grad_refs = parameter_refs(grad);
  std::vector<Eigen::MatrixXd*> params, grads;
  for (auto& [name, m] : param_refs) params.push_back(m);
  for (auto& [name, m] : grad_refs) grads.push_back(m);

  Adam adam({.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});

  std::vector<Eigen::MatrixXd> adjacency(dataset.size());
  for (int i : out.train_indices) adjacency[static_cast<std::size_t>(i)] = dataset[static_cast<std::size_t>(i)].adjacency();

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<int> order = out.train_indices;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (auto* g : grads) g->setZero();
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto idx = static_cast<std::size_t>(order[b]);
        const Graph& g = dataset[idx];
        const Predictor::Pass pass = model.run(adjacency[idx], g.node_features());
        const double lse = log_sum_exp(pass.logits.transpose());
        const double loss = lse - pass.logits(g.label());
        if (!std::isfinite(loss)) throw TrainingError("predictor loss is not finite", epoch);
        epoch_loss += loss;
        Eigen::Index argmax = 0;
        pass.logits.maxCoeff(&argmax);
        if (argmax == g.label()) ++correct;
        Eigen::RowVectorXd d_logits = (pass.logits.array() - lse).exp().matrix() * scale;
        d_logits(g.label()) -= scale;
        model.backward(pass, d_logits, grad);
      }
      adam.step(params, grads);
    }
    const double n = static_cast<double>(order.size());
    out.history.push_back({epoch, epoch_loss / n, correct / n});
  }

  // Downstream stages see exactly the parameters a checkpoint round-trip reproduces.
  model.visit([](const std::string&, Eigen::MatrixXd& m) { m = round_to_float(m); });
  out.model = std::move(model);
  out.train_accuracy = accuracy(out.model, dataset, out.train_indices);
  if (!out.test_indices.empty()) out.test_accuracy = accuracy(out.model, dataset, out.test_indices);
  return out;
}

double importance_removal(const Predictor& model, const EdgeMask& mask, const Graph& g, int target_class) {
  const Eigen::RowVectorXd probs = model.forward(induce_subgraph(g, mask));
  if (target_class < 0 || target_class >= probs.size()) throw ShapeError("target class out of range");
  return probs(target_class);
}

}  // namespace dse
