#include "dse/cvgae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dse/errors.hpp"

namespace dse {

namespace {

constexpr double kProbFloor = 1e-12;

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& pre) { return (pre.array() > 0.0).cast<double>().matrix(); }

std::vector<int> gnn_dims(int in, int width, int layers) {
  std::vector<int> dims{in};
  for (int l = 0; l < layers; ++l) dims.push_back(width);
  return dims;
}

template <typename Model>
void load_params(Model& model, const Checkpoint& ckpt, const std::string& what) {
  model.visit([&](const std::string& name, Eigen::MatrixXd& m) {
    Eigen::MatrixXd stored = ckpt.matrix(name);
    if (stored.rows() != m.rows() || stored.cols() != m.cols()) {
      throw ShapeError(what + " tensor '" + name + "' has the wrong shape");
    }
    m = std::move(stored);
  });
}

template <typename Model>
std::pair<std::vector<Eigen::MatrixXd*>, std::vector<Eigen::MatrixXd*>> param_lists(Model& params, Model& grads) {
  std::vector<Eigen::MatrixXd*> p, g;
  for (auto& [name, m] : parameter_refs(params)) p.push_back(m);
  for (auto& [name, m] : parameter_refs(grads)) g.push_back(m);
  return {p, g};
}

}  // namespace

// ---------------------------------------------------------------- config

void GeneratorConfig::validate() const {
  if (encode_dim <= 0) throw ConfigError("encode_dim must be positive");
  if (batch_size <= 0) throw ConfigError("generator batch_size must be positive");
  if (!(learning_rate > 0)) throw ConfigError("generator learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("generator weight_decay must be non-negative");
  if (kl_weight < 0) throw ConfigError("kl_weight must be non-negative");
  if (contrastive_weight < 0) throw ConfigError("contrastive_weight must be non-negative");
  if (adversarial_weight < 0) throw ConfigError("adversarial_weight must be non-negative");
  if (penalty_weight < 0) throw ConfigError("penalty_weight must be non-negative");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (!(masking_ratio > 0 && masking_ratio < 1)) throw ConfigError("masking_ratio must lie in (0, 1)");
  if (max_epochs < 0) throw ConfigError("generator max_epochs must be non-negative");
  if (critic_hidden <= 0 || critic_layers <= 0) throw ConfigError("critic size must be positive");
  if (node_id_dim < 0) throw ConfigError("node_id_dim must be non-negative");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"encode_dim", encode_dim},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"kl_weight", kl_weight},
          {"contrastive_weight", contrastive_weight},
          {"adversarial_weight", adversarial_weight},
          {"penalty_weight", penalty_weight},
          {"temperature", temperature},
          {"masking_ratio", masking_ratio},
          {"max_epochs", max_epochs},
          {"critic_hidden", critic_hidden},
          {"critic_layers", critic_layers},
          {"log_sigma_max", log_sigma_max},
          {"node_id_dim", node_id_dim},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.encode_dim = j.at("encode_dim").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.kl_weight = j.at("kl_weight").get<double>();
  c.contrastive_weight = j.at("contrastive_weight").get<double>();
  c.adversarial_weight = j.at("adversarial_weight").get<double>();
  c.penalty_weight = j.at("penalty_weight").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.masking_ratio = j.at("masking_ratio").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.critic_hidden = j.at("critic_hidden").get<int>();
  c.critic_layers = j.at("critic_layers").get<int>();
  c.log_sigma_max = j.at("log_sigma_max").get<double>();
  c.node_id_dim = j.value("node_id_dim", 0);
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// ---------------------------------------------------------------- constant generator

EdgeProbMatrix ConstantGenerator::edge_probs(const Graph& g, const Graph& g_s, Rng&) const {
  return mean_edge_probs(g, g_s);
}

EdgeProbMatrix ConstantGenerator::mean_edge_probs(const Graph& g, const Graph&) const {
  const int n = g.node_count();
  EdgeProbMatrix out{Eigen::MatrixXd::Constant(n, n, p_)};
  out.probs.diagonal().setZero();
  return out;
}

double edge_density(const std::vector<Graph>& graphs) {
  if (graphs.empty()) throw EmptyInputError("edge_density: empty dataset");
  double sum = 0.0;
  for (const Graph& g : graphs) {
    const double n = g.node_count();
    const double pairs = n * (n - 1.0) / 2.0;
    sum += pairs > 0 ? static_cast<double>(g.edge_count()) / pairs : 0.0;
  }
  return sum / static_cast<double>(graphs.size());
}

// ---------------------------------------------------------------- Cvgae

Cvgae::Cvgae(int feature_dim, const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int e = cfg.encode_dim;
  const int d = 2 * e;
  const int in = feature_dim + cfg.node_id_dim;
  f_mu_ = GnnStack<double>::glorot(gnn_dims(in, e, 3), Activation::Relu, Activation::Identity, rng);
  f_sigma_ = GnnStack<double>::glorot(gnn_dims(in, e, 3), Activation::Relu, Activation::Identity, rng);
  const Eigen::MatrixXd w1 = glorot_uniform(2 * d, e, rng);
  w1a_ = w1.topRows(d);
  w1b_ = w1.bottomRows(d);
  b1_ = Eigen::MatrixXd::Zero(1, e);
  dec2_ = Dense<double>::glorot(e, e, rng);
  dec3_ = Dense<double>::glorot(e, 1, rng);
}

Cvgae Cvgae::from_checkpoint(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  if (meta.value("kind", "") != "cvgae") throw ShapeError("checkpoint is not a cvgae generator");
  GeneratorConfig cfg = GeneratorConfig::from_json(meta.at("config"));
  Rng unused(0);
  Cvgae g(meta.at("feature_dim").get<int>(), cfg, unused);
  g.name_ = meta.value("name", "cvgae");
  load_params(g, ckpt, "generator");
  return g;
}

Checkpoint Cvgae::to_checkpoint(const nlohmann::json& extra_metadata) const {
  Checkpoint ckpt;
  ckpt.metadata = extra_metadata;
  ckpt.metadata["kind"] = "cvgae";
  ckpt.metadata["name"] = name_;
  ckpt.metadata["config"] = cfg_.to_json();
  ckpt.metadata["feature_dim"] = feature_dim();
  Cvgae copy = *this;
  copy.visit([&](const std::string& name, Eigen::MatrixXd& m) { ckpt.put(name, m); });
  return ckpt;
}

Cvgae Cvgae::zeros_like() const {
  Cvgae g;
  g.cfg_ = cfg_;
  g.name_ = name_;
  g.f_mu_ = f_mu_.zeros_like();
  g.f_sigma_ = f_sigma_.zeros_like();
  g.w1a_ = Eigen::MatrixXd::Zero(w1a_.rows(), w1a_.cols());
  g.w1b_ = Eigen::MatrixXd::Zero(w1b_.rows(), w1b_.cols());
  g.b1_ = Eigen::MatrixXd::Zero(b1_.rows(), b1_.cols());
  g.dec2_ = dec2_.zeros_like();
  g.dec3_ = dec3_.zeros_like();
  return g;
}

Cvgae::EncoderPass Cvgae::encode_pass(const Graph& g, const Graph& g_s, Rng* rng) const {
  if (g.node_count() != g_s.node_count()) {
    throw ShapeError("encode: conditioning graph has " + std::to_string(g_s.node_count()) + " nodes, graph has " +
                     std::to_string(g.node_count()));
  }
  return encode_pass(g.adjacency(), g_s.adjacency(), g.node_features(), rng);
}

Cvgae::EncoderPass Cvgae::encode_pass(const Eigen::MatrixXd& adj_g, const Eigen::MatrixXd& adj_s,
                                      const Eigen::MatrixXd& x, Rng* rng) const {
  if (x.cols() != feature_dim()) throw ShapeError("encode: feature dimension mismatch");
  if (adj_g.rows() != x.rows() || adj_s.rows() != x.rows()) throw ShapeError("encode: node-set mismatch");
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd input = x;
  if (cfg_.node_id_dim > 0) {
    if (n > cfg_.node_id_dim) {
      throw ShapeError("encode: " + std::to_string(n) + " nodes exceed node_id_dim " + std::to_string(cfg_.node_id_dim));
    }
    input = Eigen::MatrixXd::Zero(n, x.cols() + cfg_.node_id_dim);
    input.leftCols(x.cols()) = x;
    input.rightCols(cfg_.node_id_dim).leftCols(n).setIdentity();
  }
  const int e = encode_dim();
  EncoderPass p;
  p.adj_g = adj_g;
  p.adj_s = adj_s;
  p.code.mu.resize(n, 2 * e);
  p.raw_log_sigma.resize(n, 2 * e);
  p.code.mu.leftCols(e) = f_mu_.forward(adj_g, input, p.mu_g);
  p.code.mu.rightCols(e) = f_mu_.forward(adj_s, input, p.mu_s);
  p.raw_log_sigma.leftCols(e) = f_sigma_.forward(adj_g, input, p.sig_g);
  p.raw_log_sigma.rightCols(e) = f_sigma_.forward(adj_s, input, p.sig_s);
  p.code.log_sigma = p.raw_log_sigma.cwiseMin(cfg_.log_sigma_max);
  p.eps = Eigen::MatrixXd::Zero(n, 2 * e);
  if (rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < p.eps.cols(); ++j)
      for (Eigen::Index i = 0; i < n; ++i) p.eps(i, j) = normal(*rng);
  }
  p.code.z = p.code.mu + p.code.sigma().cwiseProduct(p.eps);
  return p;
}

LatentCode Cvgae::encode(const Graph& g, const Graph& g_s, Rng* rng) const { return encode_pass(g, g_s, rng).code; }

void Cvgae::encode_backward(const EncoderPass& pass, const Eigen::MatrixXd& d_mu, const Eigen::MatrixXd& d_log_sigma,
                            const Eigen::MatrixXd& d_z, Cvgae& grad) const {
  const int e = encode_dim();
  const Eigen::MatrixXd dm = d_mu + d_z;
  Eigen::MatrixXd dls = d_log_sigma + d_z.cwiseProduct(pass.eps).cwiseProduct(pass.code.sigma());
  dls = dls.cwiseProduct((pass.raw_log_sigma.array() <= cfg_.log_sigma_max).cast<double>().matrix());
  f_mu_.backward(pass.adj_g, pass.mu_g, dm.leftCols(e), grad.f_mu_, nullptr, nullptr);
  f_mu_.backward(pass.adj_s, pass.mu_s, dm.rightCols(e), grad.f_mu_, nullptr, nullptr);
  f_sigma_.backward(pass.adj_g, pass.sig_g, dls.leftCols(e), grad.f_sigma_, nullptr, nullptr);
  f_sigma_.backward(pass.adj_s, pass.sig_s, dls.rightCols(e), grad.f_sigma_, nullptr, nullptr);
}

DecoderPass Cvgae::decode_pass(const Eigen::MatrixXd& z) const {
  if (z.cols() != w1a_.rows()) throw ShapeError("decode: latent dimension mismatch");
  DecoderPass p;
  p.n = static_cast<int>(z.rows());
  const int n = p.n;
  p.z = z;
  const Eigen::MatrixXd a = z * w1a_;
  const Eigen::MatrixXd b = z * w1b_;
  p.pre1.resize(static_cast<Eigen::Index>(n) * n, b1_.cols());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) p.pre1.row(i * n + j) = a.row(i) + b.row(j) + b1_.row(0);
  p.h1 = p.pre1.cwiseMax(0.0);
  p.pre2 = dec2_.forward(p.h1);
  p.h2 = p.pre2.cwiseMax(0.0);
  const Eigen::MatrixXd out = dec3_.forward(p.h2);
  p.logits.resize(n, n);
  p.probs.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p.logits(i, j) = 0.5 * (out(i * n + j, 0) + out(j * n + i, 0));
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) p.probs(i, j) = i == j ? 0.0 : sigmoid(p.logits(i, j));
  return p;
}

EdgeProbMatrix Cvgae::decode(const Eigen::MatrixXd& z) const { return {decode_pass(z).probs}; }

Eigen::MatrixXd Cvgae::decode_backward(const DecoderPass& pass, const Eigen::MatrixXd& d_logits, Cvgae& grad) const {
  const int n = pass.n;
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * n, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      d_out(i * n + j, 0) += 0.5 * d_logits(i, j);
      d_out(j * n + i, 0) += 0.5 * d_logits(i, j);
    }
  }
  const Eigen::MatrixXd d_h2 = dec3_.backward(pass.h2, d_out, grad.dec3_);
  const Eigen::MatrixXd d_pre2 = d_h2.cwiseProduct(relu_mask(pass.pre2));
  const Eigen::MatrixXd d_h1 = dec2_.backward(pass.h1, d_pre2, grad.dec2_);
  const Eigen::MatrixXd d_pre1 = d_h1.cwiseProduct(relu_mask(pass.pre1));
  Eigen::MatrixXd d_a = Eigen::MatrixXd::Zero(n, d_pre1.cols());
  Eigen::MatrixXd d_b = Eigen::MatrixXd::Zero(n, d_pre1.cols());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      d_a.row(i) += d_pre1.row(i * n + j);
      d_b.row(j) += d_pre1.row(i * n + j);
    }
  }
  grad.b1_ += d_pre1.colwise().sum();
  grad.w1a_.noalias() += pass.z.transpose() * d_a;
  grad.w1b_.noalias() += pass.z.transpose() * d_b;
  return d_a * w1a_.transpose() + d_b * w1b_.transpose();
}

EdgeProbMatrix Cvgae::edge_probs(const Graph& g, const Graph& g_s, Rng& rng) const {
  return decode(encode(g, g_s, &rng).z);
}

EdgeProbMatrix Cvgae::mean_edge_probs(const Graph& g, const Graph& g_s) const {
  return decode(encode(g, g_s, nullptr).z);
}

// ---------------------------------------------------------------- critic

Critic::Critic(int feature_dim, int num_classes, const GeneratorConfig& cfg, Rng& rng)
    : feature_dim_(feature_dim), num_classes_(num_classes), cfg_(cfg) {
  net_.gnn = GnnStack<double>::glorot(gnn_dims(feature_dim + num_classes, cfg.critic_hidden, cfg.critic_layers),
                                      Activation::Relu, Activation::Relu, rng);
  net_.out = Dense<double>::glorot(cfg.critic_hidden, 1, rng);
}

Critic Critic::from_checkpoint(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  if (meta.value("kind", "") != "critic") throw ShapeError("checkpoint is not a critic");
  Rng unused(0);
  Critic c(meta.at("feature_dim").get<int>(), meta.at("num_classes").get<int>(),
           GeneratorConfig::from_json(meta.at("config")), unused);
  load_params(c.net_, ckpt, "critic");
  return c;
}

Checkpoint Critic::to_checkpoint(const nlohmann::json& extra_metadata) const {
  Checkpoint ckpt;
  ckpt.metadata = extra_metadata;
  ckpt.metadata["kind"] = "critic";
  ckpt.metadata["config"] = cfg_.to_json();
  ckpt.metadata["feature_dim"] = feature_dim_;
  ckpt.metadata["num_classes"] = num_classes_;
  CriticNet<double> copy = net_;
  copy.visit([&](const std::string& name, Eigen::MatrixXd& m) { ckpt.put(name, m); });
  return ckpt;
}

Eigen::MatrixXd Critic::node_input(const Eigen::MatrixXd& x, int label) const {
  if (x.cols() != feature_dim_) throw ShapeError("critic: feature dimension mismatch");
  if (label < 0 || label >= num_classes_) throw ShapeError("critic: label out of range");
  Eigen::MatrixXd in = Eigen::MatrixXd::Zero(x.rows(), feature_dim_ + num_classes_);
  in.leftCols(feature_dim_) = x;
  in.col(feature_dim_ + label).setOnes();
  return in;
}

double Critic::score(const Eigen::MatrixXd& adj, const Eigen::MatrixXd& input) const {
  const Eigen::MatrixXd h = net_.gnn.forward(adj, input);
  return net_.out.forward(h.colwise().mean())(0, 0);
}

double Critic::score_grad(const Eigen::MatrixXd& adj, const Eigen::MatrixXd& input, double scale,
                          Eigen::MatrixXd* d_adj, CriticNet<double>* grad) const {
  GnnStack<double>::Caches caches;
  const Eigen::MatrixXd h = net_.gnn.forward(adj, input, caches);
  const Eigen::MatrixXd pooled = h.colwise().mean();
  const double s = net_.out.forward(pooled)(0, 0);
  CriticNet<double> scratch;
  CriticNet<double>& g = grad ? *grad : (scratch = net_.zeros_like());
  const Eigen::MatrixXd d_pooled = net_.out.backward(pooled, Eigen::MatrixXd::Constant(1, 1, scale), g.out);
  const Eigen::MatrixXd d_h = d_pooled.replicate(h.rows(), 1) / static_cast<double>(h.rows());
  if (d_adj && d_adj->rows() != adj.rows()) *d_adj = Eigen::MatrixXd::Zero(adj.rows(), adj.cols());
  net_.gnn.backward(adj, caches, d_h, g.gnn, nullptr, d_adj);
  return s;
}

double Critic::penalty(const Eigen::MatrixXd& adj, const Eigen::MatrixXd& input, double scale,
                       CriticNet<double>* grad, double* grad_norm) const {
  const Eigen::Index n = adj.rows();
  Eigen::MatrixXd d_adj;
  score_grad(adj, input, 1.0, &d_adj, nullptr);
  Eigen::MatrixXd sym = Eigen::MatrixXd::Zero(n, n);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double gp = d_adj(i, j) + d_adj(j, i);
      sym(i, j) = sym(j, i) = gp;
      sq += gp * gp;
    }
  }
  const double norm = std::sqrt(sq);
  if (grad_norm) *grad_norm = norm;
  const double pen = (norm - 1.0) * (norm - 1.0);
  if (!grad || norm == 0.0 || scale == 0.0) return pen;

  // Forward-over-reverse: seeding the adjacency tangent with g/||g|| makes the
  // tangent of each parameter gradient equal d(||g||)/d(param).
  const CriticNet<Dual> dnet = net_.cast<Dual>();
  Matrix<Dual> adj_d(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) adj_d(i, j) = Dual(adj(i, j), sym(i, j) / norm);
  const Matrix<Dual> in_d = input.cast<Dual>();
  GnnStack<Dual>::Caches caches;
  const Matrix<Dual> h = dnet.gnn.forward(adj_d, in_d, caches);
  const Matrix<Dual> pooled = h.colwise().sum() / Dual(static_cast<double>(n));
  CriticNet<Dual> dgrad = dnet.zeros_like();
  const Matrix<Dual> d_pooled = dnet.out.backward(pooled, Matrix<Dual>::Constant(1, 1, Dual(1.0)), dgrad.out);
  const Matrix<Dual> d_h = d_pooled.replicate(n, 1) / Dual(static_cast<double>(n));
  dnet.gnn.backward(adj_d, caches, d_h, dgrad.gnn, nullptr, nullptr);

  const double coeff = scale * 2.0 * (norm - 1.0);
  std::vector<Eigen::MatrixXd*> targets;
  grad->visit([&](const std::string&, Eigen::MatrixXd& m) { targets.push_back(&m); });
  std::size_t k = 0;
  dgrad.visit([&](const std::string&, Matrix<Dual>& m) {
    Eigen::MatrixXd& t = *targets[k++];
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) t(i, j) += coeff * tangent_of(m(i, j));
  });
  return pen;
}

// ---------------------------------------------------------------- sampling

EdgeList random_broken_edges(const Graph& g, double ratio, Rng& rng) {
  const std::size_t m = g.edge_count();
  if (m == 0) return {};
  const std::size_t remove = std::min(selection_size(m, ratio), m);
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < remove; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, m - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  std::vector<bool> drop(m, false);
  for (std::size_t i = 0; i < remove; ++i) drop[idx[i]] = true;
  EdgeList kept;
  for (std::size_t k = 0; k < m; ++k)
    if (!drop[k]) kept.push_back(g.edges()[k]);
  return kept;
}

SurrogateSample sample_from_probs(const Graph& g, const EdgeList& conditioning, const EdgeProbMatrix& probs,
                                  Rng& rng) {
  const int n = g.node_count();
  if (probs.node_count() != n) throw ShapeError("sample_surrogate: probability matrix does not match the node set");
  SurrogateSample s;
  s.parent_id = g.id();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t c = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Edge e(i, j);
      while (c < conditioning.size() && conditioning[c] < e) ++c;
      if (c < conditioning.size() && conditioning[c] == e) {
        s.edges.push_back(e);
        continue;
      }
      const double p = probs(i, j);
      const bool on = u(rng) < p;
      if (on) s.edges.push_back(e);
      s.log_likelihood += on ? safe_log(p) : safe_log(1.0 - p);
    }
  }
  s.contains_subgraph = std::includes(s.edges.begin(), s.edges.end(), conditioning.begin(), conditioning.end());
  return s;
}

SurrogateSample sample_surrogate(const SurrogateGenerator& gen, const Graph& g, const EdgeMask& mask, Rng& rng) {
  const Graph g_s = induce_subgraph(g, mask);
  const EdgeProbMatrix probs = gen.edge_probs(g, g_s, rng);
  return sample_from_probs(g, mask.selected, probs, rng);
}

double edge_set_log_likelihood(const EdgeProbMatrix& probs, const EdgeList& edges) {
  const int n = probs.node_count();
  double ll = 0.0;
  std::size_t c = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Edge e(i, j);
      while (c < edges.size() && edges[c] < e) ++c;
      const bool on = c < edges.size() && edges[c] == e;
      const double p = probs(i, j);
      if (on) {
        if (p <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += std::log(p);
      } else {
        if (p >= 1.0) return -std::numeric_limits<double>::infinity();
        ll += std::log1p(-p);
      }
    }
  }
  return ll;
}

// ---------------------------------------------------------------- losses

double kl_divergence(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_sigma) {
  const Eigen::ArrayXXd s2 = (2.0 * log_sigma.array()).exp();
  return 0.5 * (mu.array().square() + s2 - 1.0 - 2.0 * log_sigma.array()).sum();
}

double reconstruction_loss(const DecoderPass& pass, const Eigen::MatrixXd& target, const EdgeList& conditioning,
                           Eigen::MatrixXd* d_logits) {
  const int n = pass.n;
  if (d_logits) *d_logits = Eigen::MatrixXd::Zero(n, n);
  double loss = 0.0;
  std::size_t c = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Edge e(i, j);
      while (c < conditioning.size() && conditioning[c] < e) ++c;
      if (c < conditioning.size() && conditioning[c] == e) continue;
      const double x = pass.logits(i, j);
      const double y = target(i, j);
      // BCE with logits: softplus(x) - y x
      loss += softplus(x) - y * x;
      if (d_logits) (*d_logits)(i, j) = pass.probs(i, j) - y;
    }
  }
  return loss;
}

double contrastive_loss(const Eigen::MatrixXd& emb, const std::vector<int>& labels, double temperature,
                        Eigen::MatrixXd* d_emb) {
  const Eigen::Index b = emb.rows();
  if (static_cast<Eigen::Index>(labels.size()) != b) throw ShapeError("contrastive_loss: label count mismatch");
  const Eigen::MatrixXd sim = emb * emb.transpose() / temperature;
  Eigen::MatrixXd d_sim = Eigen::MatrixXd::Zero(b, b);
  double total = 0.0;
  int anchors = 0;
  for (Eigen::Index a = 0; a < b; ++a) {
    std::vector<Eigen::Index> all, pos;
    for (Eigen::Index o = 0; o < b; ++o) {
      if (o == a) continue;
      all.push_back(o);
      if (labels[static_cast<std::size_t>(o)] == labels[static_cast<std::size_t>(a)]) pos.push_back(o);
    }
    if (pos.empty()) continue;
    Eigen::VectorXd s_all(static_cast<Eigen::Index>(all.size()));
    Eigen::VectorXd s_pos(static_cast<Eigen::Index>(pos.size()));
    for (std::size_t k = 0; k < all.size(); ++k) s_all(static_cast<Eigen::Index>(k)) = sim(a, all[k]);
    for (std::size_t k = 0; k < pos.size(); ++k) s_pos(static_cast<Eigen::Index>(k)) = sim(a, pos[k]);
    const double lse_all = log_sum_exp(s_all);
    const double lse_pos = log_sum_exp(s_pos);
    total += lse_all - lse_pos;
    ++anchors;
    for (std::size_t k = 0; k < all.size(); ++k) d_sim(a, all[k]) += std::exp(s_all(static_cast<Eigen::Index>(k)) - lse_all);
    for (std::size_t k = 0; k < pos.size(); ++k) d_sim(a, pos[k]) -= std::exp(s_pos(static_cast<Eigen::Index>(k)) - lse_pos);
  }
  if (anchors == 0) {
    if (d_emb) *d_emb = Eigen::MatrixXd::Zero(emb.rows(), emb.cols());
    return 0.0;
  }
  if (d_emb) {
    d_sim /= static_cast<double>(anchors);
    *d_emb = (d_sim + d_sim.transpose()) * emb / temperature;
  }
  return total / anchors;
}

double loss_discriminator(const Critic& critic, const std::vector<Eigen::MatrixXd>& real_adj,
                          const std::vector<Eigen::MatrixXd>& fake_adj, const std::vector<Eigen::MatrixXd>& interp_adj,
                          const std::vector<Eigen::MatrixXd>& inputs, double penalty_weight) {
  const std::size_t b = real_adj.size();
  if (fake_adj.size() != b || interp_adj.size() != b || inputs.size() != b || b == 0) {
    throw ShapeError("loss_discriminator: batch size mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    total += critic.score(real_adj[k], inputs[k]) - critic.score(fake_adj[k], inputs[k]);
    if (penalty_weight != 0.0) total -= penalty_weight * critic.penalty(interp_adj[k], inputs[k], 0.0, nullptr);
  }
  return total / static_cast<double>(b);
}

// ---------------------------------------------------------------- training

namespace {

/// Decoder probabilities with conditioning edges clamped to 1.
Eigen::MatrixXd fake_adjacency(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& adj_s) {
  return probs.cwiseMax(adj_s);
}

}  // namespace

TrainedGenerator train_generator(const std::vector<Graph>& dataset, const GeneratorConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw EmptyInputError("train_generator: empty dataset");
  const int feature_dim = dataset.front().feature_dim();
  int num_classes = 2;
  for (const Graph& g : dataset) {
    if (g.feature_dim() != feature_dim) throw ShapeError("train_generator: inconsistent feature dimensions");
    num_classes = std::max(num_classes, g.label() + 1);
  }

  Rng init_rng(derive_seed(cfg.seed, "generator-init"));
  TrainedGenerator out;
  out.generator = Cvgae(feature_dim, cfg, init_rng);
  out.critic = Critic(feature_dim, num_classes, cfg, init_rng);
  Cvgae& gen = out.generator;
  Critic& critic = out.critic;

  Cvgae gen_grad = gen.zeros_like();
  CriticNet<double> critic_grad = critic.net().zeros_like();
  auto [gen_params, gen_grads] = param_lists(gen, gen_grad);
  auto [crit_params, crit_grads] = param_lists(critic.net(), critic_grad);
  Adam gen_opt({.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});
  Adam crit_opt({.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});
  const bool adversarial = cfg.adversarial_weight > 0.0;

  std::vector<Eigen::MatrixXd> adjacency;
  std::vector<Eigen::MatrixXd> critic_input;
  adjacency.reserve(dataset.size());
  for (const Graph& g : dataset) {
    adjacency.push_back(g.adjacency());
    critic_input.push_back(critic.node_input(g.node_features(), g.label()));
  }

  Rng shuffle_rng(derive_seed(cfg.seed, "generator-shuffle"));
  Rng noise_rng(derive_seed(cfg.seed, "generator-noise"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  int step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    GeneratorLosses sums;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++step) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_b = 1.0 / static_cast<double>(end - start);

      // Critic update.
      double l_d = 0.0;
      if (adversarial) {
        for (auto* g : crit_grads) g->setZero();
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t idx = order[k];
          const Graph& g = dataset[idx];
          const Eigen::MatrixXd adj_s = g.with_edges(random_broken_edges(g, cfg.masking_ratio, noise_rng)).adjacency();
          const auto enc = gen.encode_pass(adjacency[idx], adj_s, g.node_features(), &noise_rng);
          const Eigen::MatrixXd fake = fake_adjacency(gen.decode(enc.code.z).probs, adj_s);
          const double alpha = unit(noise_rng);
          const Eigen::MatrixXd interp = alpha * adjacency[idx] + (1.0 - alpha) * fake;
          const double d_real = critic.score_grad(adjacency[idx], critic_input[idx], -inv_b, nullptr, &critic_grad);
          const double d_fake = critic.score_grad(fake, critic_input[idx], inv_b, nullptr, &critic_grad);
          double pen = 0.0;
          if (cfg.penalty_weight != 0.0) {
            pen = critic.penalty(interp, critic_input[idx], cfg.penalty_weight * inv_b, &critic_grad);
          }
          l_d += (d_real - d_fake - cfg.penalty_weight * pen) * inv_b;
        }
        if (!std::isfinite(l_d)) throw TrainingError("discriminator loss is not finite", epoch, step);
        crit_opt.step(crit_params, crit_grads);
      }

      // Generator update with fresh masks and noise.
      for (auto* g : gen_grads) g->setZero();
      std::vector<Cvgae::EncoderPass> passes;
      std::vector<EdgeList> kept;
      passes.reserve(end - start);
      Eigen::MatrixXd emb(static_cast<Eigen::Index>(end - start), gen.latent_dim());
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const Graph& g = dataset[idx];
        kept.push_back(random_broken_edges(g, cfg.masking_ratio, noise_rng));
        passes.push_back(
            gen.encode_pass(adjacency[idx], g.with_edges(kept.back()).adjacency(), g.node_features(), &noise_rng));
        emb.row(static_cast<Eigen::Index>(k - start)) = passes.back().code.z.colwise().mean();
        labels.push_back(g.label());
      }
      Eigen::MatrixXd d_emb;
      double l_c = 0.0;
      if (cfg.contrastive_weight > 0.0) {
        l_c = contrastive_loss(emb, labels, cfg.temperature, &d_emb);
        d_emb *= cfg.contrastive_weight;
      } else {
        l_c = contrastive_loss(emb, labels, cfg.temperature, nullptr);
      }

      double l_vae = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const Graph& g = dataset[idx];
        const auto& enc = passes[k - start];
        const DecoderPass dec = gen.decode_pass(enc.code.z);
        Eigen::MatrixXd d_logits;
        const double rec = reconstruction_loss(dec, adjacency[idx], kept[k - start], &d_logits);
        const double kl = kl_divergence(enc.code.mu, enc.code.log_sigma);
        l_vae += (rec + cfg.kl_weight * kl) * inv_b;
        d_logits *= inv_b;

        if (adversarial) {
          const Eigen::MatrixXd adj_s = g.with_edges(kept[k - start]).adjacency();
          const Eigen::MatrixXd fake = fake_adjacency(dec.probs, adj_s);
          Eigen::MatrixXd d_fake;
          critic.score_grad(fake, critic_input[idx], -cfg.adversarial_weight * inv_b, &d_fake, nullptr);
          const int n = dec.n;
          for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
              if (adj_s(i, j) != 0.0) continue;
              const double p = dec.probs(i, j);
              d_logits(i, j) += (d_fake(i, j) + d_fake(j, i)) * p * (1.0 - p);
            }
          }
        }

        Eigen::MatrixXd d_z = gen.decode_backward(dec, d_logits, gen_grad);
        if (cfg.contrastive_weight > 0.0) {
          d_z.rowwise() += d_emb.row(static_cast<Eigen::Index>(k - start)) / static_cast<double>(d_z.rows());
        }
        const Eigen::MatrixXd d_mu = cfg.kl_weight * inv_b * enc.code.mu;
        const Eigen::MatrixXd d_ls =
            cfg.kl_weight * inv_b * ((2.0 * enc.code.log_sigma.array()).exp() - 1.0).matrix();
        gen.encode_backward(enc, d_mu, d_ls, d_z, gen_grad);
      }
      if (!std::isfinite(l_vae) || !std::isfinite(l_c)) {
        throw TrainingError("generator loss is not finite", epoch, step);
      }
      gen_opt.step(gen_params, gen_grads);

      sums.vae += l_vae;
      sums.contrastive += l_c;
      sums.discriminator += l_d;
      ++batches;
    }
    GeneratorEpoch rec;
    rec.epoch = epoch;
    if (batches > 0) {
      rec.losses.vae = sums.vae / batches;
      rec.losses.contrastive = sums.contrastive / batches;
      rec.losses.discriminator = sums.discriminator / batches;
    }
    rec.total = rec.losses.vae + cfg.contrastive_weight * rec.losses.contrastive +
                cfg.adversarial_weight * rec.losses.discriminator;
    out.history.push_back(rec);
  }

  gen.visit([](const std::string&, Eigen::MatrixXd& m) { m = round_to_float(m); });
  critic.net().visit([](const std::string&, Eigen::MatrixXd& m) { m = round_to_float(m); });
  return out;
}

std::string losses_csv(const std::vector<GeneratorEpoch>& history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,L_VAE,L_C,L_D,total\n";
  for (const auto& e : history) {
    os << e.epoch << ',' << e.losses.vae << ',' << e.losses.contrastive << ',' << e.losses.discriminator << ','
       << e.total << '\n';
  }
  return os.str();
}

}  // namespace dse
