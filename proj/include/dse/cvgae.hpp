#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dse/checkpoint.hpp"
#include "dse/graph.hpp"
#include "dse/nn.hpp"
#include "dse/random.hpp"

namespace dse {

struct GeneratorConfig {
  int encode_dim = 256;
  int batch_size = 256;
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  double kl_weight = 1e-4;           // beta
  double contrastive_weight = 3.0;   // gamma
  double adversarial_weight = 5.0;   // omega
  double penalty_weight = 5.0;       // lambda
  double temperature = 0.1;          // tau
  double masking_ratio = 0.3;        // r, fraction of edges removed from G to form G_s
  int max_epochs = 100;
  int critic_hidden = 32;
  int critic_layers = 3;
  /// Upper clamp on log sigma; keeps exp() finite early in training.
  double log_sigma_max = 5.0;
  /// One-hot node-index columns appended to the encoder input so that nodes
  /// with identical neighbourhoods get distinct codes. 0 disables; otherwise
  /// graphs may have at most this many nodes.
  int node_id_dim = 0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Per-node Gaussian code. Rows are [mu_1i, mu_2i] (from G and from G_s).
struct LatentCode {
  Eigen::MatrixXd mu;         // N x 2*encode_dim
  Eigen::MatrixXd log_sigma;  // N x 2*encode_dim, already clamped
  Eigen::MatrixXd z;          // N x 2*encode_dim

  Eigen::MatrixXd sigma() const { return log_sigma.array().exp().matrix(); }
};

/// Symmetric edge probabilities with a zero diagonal.
struct EdgeProbMatrix {
  Eigen::MatrixXd probs;

  int node_count() const { return static_cast<int>(probs.rows()); }
  double operator()(int i, int j) const { return probs(i, j); }
};

/// Source of conditional edge probabilities used to complete a subgraph.
class SurrogateGenerator {
 public:
  virtual ~SurrogateGenerator() = default;
  virtual std::string name() const = 0;
  /// One stochastic draw of edge probabilities for completing g_s inside g.
  virtual EdgeProbMatrix edge_probs(const Graph& g, const Graph& g_s, Rng& rng) const = 0;
  /// Probabilities under the mean latent code (deterministic).
  virtual EdgeProbMatrix mean_edge_probs(const Graph& g, const Graph& g_s) const = 0;
  /// True when edge_probs ignores rng, so one draw is exact.
  virtual bool deterministic() const { return false; }
};

/// Fixed probability on every free pair. p = 0 returns the subgraph itself.
class ConstantGenerator final : public SurrogateGenerator {
 public:
  ConstantGenerator(std::string name, double p) : name_(std::move(name)), p_(p) {}
  std::string name() const override { return name_; }
  EdgeProbMatrix edge_probs(const Graph& g, const Graph& g_s, Rng& rng) const override;
  EdgeProbMatrix mean_edge_probs(const Graph& g, const Graph& g_s) const override;
  bool deterministic() const override { return true; }
  double probability() const { return p_; }

 private:
  std::string name_;
  double p_;
};

/// Mean of |E| / C(N, 2) over a dataset; the random generator's edge probability.
double edge_density(const std::vector<Graph>& graphs);

/// Intermediate values of a decoder pass, kept for backward().
struct DecoderPass {
  int n = 0;
  Eigen::MatrixXd z;
  Eigen::MatrixXd pre1, h1, pre2, h2;  // (n*n) x hidden, row i*n + j holds pair (i, j)
  Eigen::MatrixXd logits;              // n x n, symmetrized
  Eigen::MatrixXd probs;               // n x n, zero diagonal
};

/// Conditional variational graph auto-encoder: GNN heads for mu and log sigma
/// run on G and on G_s, and a pairwise MLP decoder over [z_i, z_j].
class Cvgae final : public SurrogateGenerator {
 public:
  struct EncoderPass {
    Eigen::MatrixXd adj_g, adj_s;
    GnnStack<double>::Caches mu_g, mu_s, sig_g, sig_s;
    Eigen::MatrixXd raw_log_sigma;  // before clamping
    Eigen::MatrixXd eps;
    LatentCode code;
  };

  Cvgae() = default;
  Cvgae(int feature_dim, const GeneratorConfig& cfg, Rng& rng);

  static Cvgae from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint(const nlohmann::json& extra_metadata = nlohmann::json::object()) const;

  std::string name() const override { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  int feature_dim() const { return f_mu_.in_dim() - cfg_.node_id_dim; }
  int encode_dim() const { return f_mu_.out_dim(); }
  int latent_dim() const { return 2 * encode_dim(); }
  const GeneratorConfig& config() const { return cfg_; }

  /// Reparameterized code; `rng == nullptr` returns z = mu. Throws ShapeError
  /// when g and g_s have different node counts.
  LatentCode encode(const Graph& g, const Graph& g_s, Rng* rng) const;
  EncoderPass encode_pass(const Graph& g, const Graph& g_s, Rng* rng) const;
  EncoderPass encode_pass(const Eigen::MatrixXd& adj_g, const Eigen::MatrixXd& adj_s, const Eigen::MatrixXd& x,
                          Rng* rng) const;
  /// Accumulates parameter gradients from d mu, d log sigma (post clamp) and d z.
  void encode_backward(const EncoderPass& pass, const Eigen::MatrixXd& d_mu, const Eigen::MatrixXd& d_log_sigma,
                       const Eigen::MatrixXd& d_z, Cvgae& grad) const;

  EdgeProbMatrix decode(const Eigen::MatrixXd& z) const;
  DecoderPass decode_pass(const Eigen::MatrixXd& z) const;
  /// `d_logits` is d loss / d symmetric logit, read on the upper triangle.
  /// Accumulates decoder gradients and returns d z.
  Eigen::MatrixXd decode_backward(const DecoderPass& pass, const Eigen::MatrixXd& d_logits, Cvgae& grad) const;

  EdgeProbMatrix edge_probs(const Graph& g, const Graph& g_s, Rng& rng) const override;
  EdgeProbMatrix mean_edge_probs(const Graph& g, const Graph& g_s) const override;

  Cvgae zeros_like() const;

  template <typename F>
  void visit(F&& f) {
    f_mu_.visit("encoder.mu", f);
    f_sigma_.visit("encoder.sigma", f);
    f("decoder.w1a", w1a_);
    f("decoder.w1b", w1b_);
    f("decoder.b1", b1_);
    dec2_.visit("decoder.fc2", f);
    dec3_.visit("decoder.out", f);
  }

  GnnStack<double>& f_mu() { return f_mu_; }
  GnnStack<double>& f_sigma() { return f_sigma_; }
  Dense<double>& decoder_out() { return dec3_; }

 private:
  GeneratorConfig cfg_;
  std::string name_ = "cvgae";
  GnnStack<double> f_mu_, f_sigma_;
  Eigen::MatrixXd w1a_, w1b_, b1_;
  Dense<double> dec2_, dec3_;
};

/// Class-conditional WGAN critic: message passing over [X, onehot(y)] on a
/// dense weighted adjacency, mean pooling and a linear score.
template <typename S>
struct CriticNet {
  GnnStack<S> gnn;
  Dense<S> out;

  template <typename F>
  void visit(F&& f) {
    gnn.visit("critic.gnn", f);
    out.visit("critic.out", f);
  }

  template <typename T>
  CriticNet<T> cast() const {
    return {gnn.template cast<T>(), out.template cast<T>()};
  }

  CriticNet zeros_like() const { return {gnn.zeros_like(), out.zeros_like()}; }
};

class Critic {
 public:
  Critic() = default;
  Critic(int feature_dim, int num_classes, const GeneratorConfig& cfg, Rng& rng);

  static Critic from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint(const nlohmann::json& extra_metadata = nlohmann::json::object()) const;

  int num_classes() const { return num_classes_; }
  /// Conditioned node input [X, onehot(label)].
  Eigen::MatrixXd node_input(const Eigen::MatrixXd& x, int label) const;

  double score(const Eigen::MatrixXd& adj, const Eigen::MatrixXd& input) const;
  /// Score. Backpropagates `scale` as d loss / d score: adds to `d_adj`
  /// (full n x n) and to the parameter gradients in `grad` when non-null.
  double score_grad(const Eigen::MatrixXd& adj, const Eigen::MatrixXd& input, double scale, Eigen::MatrixXd* d_adj,
                    CriticNet<double>* grad) const;

  /// Gradient penalty (||g|| - 1)^2 where g_p = d score / d w_p over unordered
  /// pairs p. Returns the penalty and accumulates `scale` * d penalty / d params.
  double penalty(const Eigen::MatrixXd& adj, const Eigen::MatrixXd& input, double scale,
                 CriticNet<double>* grad, double* grad_norm = nullptr) const;

  CriticNet<double>& net() { return net_; }
  const CriticNet<double>& net() const { return net_; }

 private:
  int feature_dim_ = 0;
  int num_classes_ = 0;
  GeneratorConfig cfg_;
  CriticNet<double> net_;
};

/// Edges of g minus a uniformly chosen ceil(ratio * |E|) subset (the broken graph G_s).
EdgeList random_broken_edges(const Graph& g, double ratio, Rng& rng);

struct SurrogateSample {
  std::string parent_id;
  EdgeList edges;
  double log_likelihood = 0.0;
  bool contains_subgraph = false;
};

/// Forces mask.selected in and draws every other pair of g's node set from `probs`.
SurrogateSample sample_from_probs(const Graph& g, const EdgeList& conditioning, const EdgeProbMatrix& probs,
                                  Rng& rng);
SurrogateSample sample_surrogate(const SurrogateGenerator& gen, const Graph& g, const EdgeMask& mask, Rng& rng);

/// Sum of log Bernoulli(probs) over the unordered pairs of `edges`' node set.
double edge_set_log_likelihood(const EdgeProbMatrix& probs, const EdgeList& edges);

/// Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over all entries.
double kl_divergence(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_sigma);

/// Sum over pairs i < j not in `conditioning` of BCE(probs_ij, target_ij).
/// Optionally writes d loss / d symmetric logit (upper triangle).
double reconstruction_loss(const DecoderPass& pass, const Eigen::MatrixXd& target, const EdgeList& conditioning,
                           Eigen::MatrixXd* d_logits);

/// Supervised InfoNCE over graph embeddings (rows of `emb`). Anchors without a
/// positive are skipped; the anchor is never its own positive or negative.
/// Returns the mean over counted anchors and optionally d loss / d emb.
double contrastive_loss(const Eigen::MatrixXd& emb, const std::vector<int>& labels, double temperature,
                        Eigen::MatrixXd* d_emb);

struct GeneratorLosses {
  double vae = 0.0;
  double contrastive = 0.0;
  double discriminator = 0.0;
};

/// L_D = mean over pairs of d(real) - d(fake) - lambda * (||grad d(interp)|| - 1)^2.
double loss_discriminator(const Critic& critic, const std::vector<Eigen::MatrixXd>& real_adj,
                          const std::vector<Eigen::MatrixXd>& fake_adj, const std::vector<Eigen::MatrixXd>& interp_adj,
                          const std::vector<Eigen::MatrixXd>& inputs, double penalty_weight);

struct GeneratorEpoch {
  int epoch = 0;
  GeneratorLosses losses;
  double total = 0.0;
};

struct TrainedGenerator {
  Cvgae generator;
  Critic critic;
  std::vector<GeneratorEpoch> history;
};

/// Alternating critic / generator updates. Throws TrainingError on a
/// non-finite loss with the epoch and step index.
TrainedGenerator train_generator(const std::vector<Graph>& dataset, const GeneratorConfig& cfg);

/// losses.csv content: epoch,L_VAE,L_C,L_D,total
std::string losses_csv(const std::vector<GeneratorEpoch>& history);

}  // namespace dse
