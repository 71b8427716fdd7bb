#pragma once

// Dense building blocks for the graph models. Every layer is templated on
// its scalar so the same code runs in double precision and in dual numbers
// (for exact Hessian-vector products in the gradient penalty). Backward
// passes accumulate parameter gradients into an object of the layer's own
// type.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dse/dual.hpp"
#include "dse/random.hpp"

namespace dse {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

enum class Activation { Identity, Relu, Tanh };

template <typename S>
Matrix<S> activate(const Matrix<S>& pre, Activation act) {
  switch (act) {
    case Activation::Identity:
      return pre;
    case Activation::Relu:
      return pre.unaryExpr([](const S& x) { return value_of(x) > 0.0 ? x : S(0.0); });
    case Activation::Tanh:
      return pre.unaryExpr([](const S& x) {
        using std::tanh;
        return S(tanh(x));
      });
  }
  return pre;
}

/// d activation / d pre, elementwise.
template <typename S>
Matrix<S> activation_grad(const Matrix<S>& pre, Activation act) {
  switch (act) {
    case Activation::Identity:
      return Matrix<S>::Constant(pre.rows(), pre.cols(), S(1.0));
    case Activation::Relu:
      return pre.unaryExpr([](const S& x) { return value_of(x) > 0.0 ? S(1.0) : S(0.0); });
    case Activation::Tanh:
      return pre.unaryExpr([](const S& x) {
        using std::tanh;
        const S t = tanh(x);
        return S(S(1.0) - t * t);
      });
  }
  return pre;
}

inline Eigen::MatrixXd glorot_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return m;
}

/// y = x W + b
template <typename S>
struct Dense {
  Matrix<S> weight;  // in x out
  Matrix<S> bias;    // 1 x out

  Dense() = default;
  Dense(int in, int out) : weight(Matrix<S>::Zero(in, out)), bias(Matrix<S>::Zero(1, out)) {}

  static Dense glorot(int in, int out, Rng& rng) {
    Dense d(in, out);
    d.weight = glorot_uniform(in, out, rng).template cast<S>();
    return d;
  }

  int in_dim() const { return static_cast<int>(weight.rows()); }
  int out_dim() const { return static_cast<int>(weight.cols()); }

  Matrix<S> forward(const Matrix<S>& x) const {
    Matrix<S> y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  /// Accumulates into `grad`; returns d x.
  Matrix<S> backward(const Matrix<S>& x, const Matrix<S>& d_out, Dense& grad) const {
    grad.weight.noalias() += x.transpose() * d_out;
    grad.bias += d_out.colwise().sum();
    return d_out * weight.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }

  template <typename T>
  Dense<T> cast() const {
    Dense<T> d;
    d.weight = weight.template cast<T>();
    d.bias = bias.template cast<T>();
    return d;
  }

  Dense zeros_like() const { return Dense(in_dim(), out_dim()); }
};

/// Message passing over a dense weighted adjacency:
///   H' = act(H W_self + (A H) W_nbr + b)
template <typename S>
struct MessagePassing {
  Matrix<S> w_self;
  Matrix<S> w_nbr;
  Matrix<S> bias;
  Activation act = Activation::Relu;

  struct Cache {
    Matrix<S> input;
    Matrix<S> aggregated;
    Matrix<S> pre;
  };

  MessagePassing() = default;
  MessagePassing(int in, int out, Activation a)
      : w_self(Matrix<S>::Zero(in, out)), w_nbr(Matrix<S>::Zero(in, out)), bias(Matrix<S>::Zero(1, out)), act(a) {}

  static MessagePassing glorot(int in, int out, Activation a, Rng& rng) {
    MessagePassing m(in, out, a);
    m.w_self = glorot_uniform(in, out, rng).template cast<S>();
    m.w_nbr = glorot_uniform(in, out, rng).template cast<S>();
    return m;
  }

  int in_dim() const { return static_cast<int>(w_self.rows()); }
  int out_dim() const { return static_cast<int>(w_self.cols()); }

  Matrix<S> forward(const Matrix<S>& adj, const Matrix<S>& h, Cache& cache) const {
    cache.input = h;
    cache.aggregated.noalias() = adj * h;
    cache.pre.noalias() = h * w_self;
    cache.pre.noalias() += cache.aggregated * w_nbr;
    cache.pre.rowwise() += bias.row(0);
    return activate(cache.pre, act);
  }

  /// Accumulates parameter gradients into `grad`, writes d input to `d_in`
  /// and adds d adjacency into `d_adj` when those are non-null.
  void backward(const Matrix<S>& adj, const Cache& cache, const Matrix<S>& d_out, MessagePassing& grad,
                Matrix<S>* d_in, Matrix<S>* d_adj) const {
    const Matrix<S> d_pre = d_out.cwiseProduct(activation_grad(cache.pre, act));
    grad.w_self.noalias() += cache.input.transpose() * d_pre;
    grad.w_nbr.noalias() += cache.aggregated.transpose() * d_pre;
    grad.bias += d_pre.colwise().sum();
    const Matrix<S> d_agg = d_pre * w_nbr.transpose();
    if (d_in) {
      d_in->noalias() = d_pre * w_self.transpose();
      d_in->noalias() += adj.transpose() * d_agg;
    }
    if (d_adj) d_adj->noalias() += d_agg * cache.input.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_self", w_self);
    f(prefix + ".w_nbr", w_nbr);
    f(prefix + ".bias", bias);
  }

  template <typename T>
  MessagePassing<T> cast() const {
    MessagePassing<T> m;
    m.w_self = w_self.template cast<T>();
    m.w_nbr = w_nbr.template cast<T>();
    m.bias = bias.template cast<T>();
    m.act = act;
    return m;
  }

  MessagePassing zeros_like() const { return MessagePassing(in_dim(), out_dim(), act); }
};

/// A stack of message-passing layers sharing one adjacency.
template <typename S>
struct GnnStack {
  std::vector<MessagePassing<S>> layers;

  using Caches = std::vector<typename MessagePassing<S>::Cache>;

  GnnStack() = default;

  /// `dims` = {in, hidden..., out}; hidden layers use `hidden_act`, the last uses `out_act`.
  static GnnStack glorot(const std::vector<int>& dims, Activation hidden_act, Activation out_act, Rng& rng) {
    GnnStack g;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const Activation a = (i + 2 == dims.size()) ? out_act : hidden_act;
      g.layers.push_back(MessagePassing<S>::glorot(dims[i], dims[i + 1], a, rng));
    }
    return g;
  }

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }

  Matrix<S> forward(const Matrix<S>& adj, const Matrix<S>& x, Caches& caches) const {
    caches.resize(layers.size());
    Matrix<S> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) h = layers[l].forward(adj, h, caches[l]);
    return h;
  }

  Matrix<S> forward(const Matrix<S>& adj, const Matrix<S>& x) const {
    Caches caches;
    return forward(adj, x, caches);
  }

  /// Backpropagates d output. Optionally returns d x and accumulates d adjacency.
  void backward(const Matrix<S>& adj, const Caches& caches, const Matrix<S>& d_out, GnnStack& grad,
                Matrix<S>* d_x, Matrix<S>* d_adj) const {
    Matrix<S> d = d_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
      Matrix<S> d_in;
      const bool need_input = l > 0 || d_x != nullptr;
      layers[l].backward(adj, caches[l], d, grad.layers[l], need_input ? &d_in : nullptr, d_adj);
      if (l > 0) d = std::move(d_in);
      else if (d_x) *d_x = std::move(d_in);
    }
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(prefix + ".layer" + std::to_string(l), f);
  }

  template <typename T>
  GnnStack<T> cast() const {
    GnnStack<T> g;
    for (const auto& l : layers) g.layers.push_back(l.template cast<T>());
    return g;
  }

  GnnStack zeros_like() const {
    GnnStack g;
    for (const auto& l : layers) g.layers.push_back(l.zeros_like());
    return g;
  }
};

/// Named references to every parameter matrix of a model, in visit order.
template <typename Model>
std::vector<std::pair<std::string, Eigen::MatrixXd*>> parameter_refs(Model& model) {
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> refs;
  model.visit([&](const std::string& name, Eigen::MatrixXd& m) { refs.emplace_back(name, &m); });
  return refs;
}

/// Adam with L2 weight decay added to the gradient.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
  };

  explicit Adam(Options opts) : opts_(opts) {}

  /// Updates `params` in place from `grads` (same order and shapes).
  void step(const std::vector<Eigen::MatrixXd*>& params, const std::vector<Eigen::MatrixXd*>& grads);

  long steps() const { return t_; }

 private:
  Options opts_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

/// Numerically stable log(1 + exp(x)).
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Softmax of a row vector, computed with the max subtracted.
Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits);
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x);

bool all_finite(const Eigen::MatrixXd& m);

}  // namespace dse
