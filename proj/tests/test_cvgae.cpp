#include <cmath>

#include <gtest/gtest.h>

#include "dse/errors.hpp"
#include "dse/cvgae.hpp"
#include "dse/tr3.hpp"
#include "support.hpp"

using namespace dse;
using dse::testing::make_graph;
using dse::testing::relative_error;
using dse::testing::small_graph;
using dse::testing::tiny_generator;

namespace {

// Central differences agree when the relative error is small or both sides
// are numerically zero.
bool grad_close(double analytic, double fd) {
  return relative_error(analytic, fd) <= 1e-3 || std::abs(analytic - fd) <= 1e-8;
}

// L_VAE for a fixed noise stream, the quantity the generator step differentiates.
double vae_loss(const Cvgae& gen, const Graph& g, const EdgeList& kept, double beta, std::uint64_t noise) {
  Rng rng(noise);
  const auto enc = gen.encode_pass(g.adjacency(), g.with_edges(kept).adjacency(), g.node_features(), &rng);
  const DecoderPass dec = gen.decode_pass(enc.code.z);
  return reconstruction_loss(dec, g.adjacency(), kept, nullptr) + beta * kl_divergence(enc.code.mu, enc.code.log_sigma);
}

Critic tiny_critic(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.critic_hidden = 5;
  cfg.critic_layers = 2;
  Rng rng(seed);
  Critic c(1, 3, cfg, rng);
  std::normal_distribution<double> normal(0.0, 0.6);
  c.net().visit([&](const std::string&, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  });
  return c;
}

}  // namespace

TEST(Encoder, IdenticalInputsGiveIdenticalHalves) {
  const Cvgae gen = tiny_generator(1, 3);
  const Graph g = small_graph();
  const LatentCode code = gen.encode(g, g, nullptr);
  ASSERT_EQ(code.mu.rows(), 5);
  ASSERT_EQ(code.mu.cols(), 8);
  EXPECT_EQ(code.mu.leftCols(4), code.mu.rightCols(4));
  EXPECT_EQ(code.log_sigma.leftCols(4), code.log_sigma.rightCols(4));
  EXPECT_EQ(code.z, code.mu);
  EXPECT_THROW(gen.encode(g, make_graph("h", 4, {{0, 1}}), nullptr), ShapeError);
}

TEST(Encoder, VanishingSigmaCollapsesToMean) {
  const Cvgae gen = tiny_generator(1, 4, true);
  const Graph g = small_graph();
  Rng rng(8);
  const LatentCode code = gen.encode(g, g.with_edges({{0, 1}}), &rng);
  EXPECT_EQ(code.z, code.mu);
}

TEST(Encoder, NodeIdColumnsRequireEnoughSlots) {
  GeneratorConfig cfg;
  cfg.encode_dim = 4;
  cfg.node_id_dim = 3;
  Rng rng(1);
  const Cvgae gen(1, cfg, rng);
  EXPECT_EQ(gen.feature_dim(), 1);
  EXPECT_THROW(gen.encode(small_graph(), small_graph(), nullptr), ShapeError);
  const Graph tri = make_graph("t", 3, {{0, 1}, {1, 2}});
  // identical rows of X are told apart by their index columns
  const LatentCode code = gen.encode(tri, tri, nullptr);
  EXPECT_NE(code.mu.row(0), code.mu.row(2));
  cfg.node_id_dim = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Decoder, SymmetricProbabilitiesWithZeroDiagonal) {
  Cvgae gen = tiny_generator(1, 5);
  Rng rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(6, gen.latent_dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  const EdgeProbMatrix p = gen.decode(z);
  EXPECT_EQ(p.probs, p.probs.transpose());
  EXPECT_EQ(p.probs.diagonal().cwiseAbs().sum(), 0.0);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i != j) {
        EXPECT_GT(p(i, j), 0.0);
        EXPECT_LT(p(i, j), 1.0);
      }

  gen.decoder_out().weight.setZero();
  gen.decoder_out().bias.setZero();
  const EdgeProbMatrix half = gen.decode(z);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_EQ(half(i, j), i == j ? 0.0 : 0.5);
  EXPECT_THROW(gen.decode(Eigen::MatrixXd::Zero(3, 3)), ShapeError);
}

TEST(Sampling, SurrogatesAlwaysContainTheExplanation) {
  const Cvgae gen = tiny_generator(1, 6);
  Tr3Config data;
  data.num_graphs = 21;
  const auto graphs = generate_dataset(data);
  Rng rng(4);
  int checked = 0;
  for (int s = 0; s < 1000; ++s) {
    const Graph& g = graphs[static_cast<std::size_t>(s) % graphs.size()];
    const EdgeMask mask = mask_from_selection(g, random_broken_edges(g, 0.6, rng));
    const SurrogateSample sample = sample_surrogate(gen, g, mask, rng);
    EXPECT_TRUE(sample.contains_subgraph);
    ASSERT_TRUE(std::includes(sample.edges.begin(), sample.edges.end(), mask.selected.begin(), mask.selected.end()));
    const std::size_t n = static_cast<std::size_t>(g.node_count());
    EXPECT_GE(sample.edges.size(), mask.selected.size());
    EXPECT_LE(sample.edges.size(), n * (n - 1) / 2);
    EXPECT_EQ(sample.parent_id, g.id());
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}

TEST(Sampling, ExtremeProbabilitiesAreExact) {
  const Graph g = small_graph();
  const EdgeMask m = mask_from_selection(g, {{0, 1}});
  Rng rng(1);
  EXPECT_EQ(sample_surrogate(ConstantGenerator("none", 0.0), g, m, rng).edges, m.selected);
  EXPECT_EQ(sample_surrogate(ConstantGenerator("all", 1.0), g, m, rng).edges, all_pairs(5));
}

TEST(Sampling, BrokenEdgesRemoveTheRequestedFraction) {
  const Graph g = small_graph();
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const EdgeList kept = random_broken_edges(g, 0.3, rng);
    EXPECT_EQ(kept.size(), g.edge_count() - selection_size(g.edge_count(), 0.3));
    EXPECT_EQ(edge_intersection(kept, g.edges()), kept);
  }
}

TEST(Sampling, LogLikelihoodMatchesBernoulliProduct) {
  Eigen::MatrixXd p(3, 3);
  p << 0, 0.2, 0.7, 0.2, 0, 0.4, 0.7, 0.4, 0;
  const EdgeProbMatrix probs{p};
  EXPECT_NEAR(edge_set_log_likelihood(probs, {{0, 2}}), std::log(0.8 * 0.7 * 0.6), 1e-12);
  EXPECT_TRUE(std::isinf(edge_set_log_likelihood(EdgeProbMatrix{Eigen::MatrixXd::Zero(3, 3)}, {{0, 1}})));
}

TEST(Kl, ClosedFormProperties) {
  EXPECT_EQ(kl_divergence(Eigen::MatrixXd::Zero(3, 4), Eigen::MatrixXd::Zero(3, 4)), 0.0);
  Rng rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd mu(2, 3), ls(2, 3);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      mu.data()[i] = normal(rng);
      ls.data()[i] = normal(rng);
    }
    EXPECT_GE(kl_divergence(mu, ls), 0.0);
  }
}

TEST(Kl, ClosedFormMatchesMonteCarlo) {
  Eigen::MatrixXd mu(2, 2), ls(2, 2);
  mu << 0.8, -1.2, 0.3, 1.5;
  ls << -0.5, 0.2, -0.9, 0.4;
  const double closed = kl_divergence(mu, ls);
  Rng rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int samples = 100000;
  double sum = 0.0;
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const double sigma = std::exp(ls.data()[i]);
      const double eps = normal(rng);
      const double z = mu.data()[i] + sigma * eps;
      // log q(z) - log p(z), constants cancel
      sum += -ls.data()[i] - 0.5 * eps * eps + 0.5 * z * z;
    }
  }
  EXPECT_LE(std::abs(sum / samples - closed) / closed, 0.02) << "closed " << closed << " mc " << sum / samples;
}

TEST(Reparameterization, VaeGradientMatchesCentralDifferences) {
  GeneratorConfig cfg;
  cfg.encode_dim = 3;
  cfg.kl_weight = 0.3;
  Rng init(5);
  Cvgae gen(1, cfg, init);
  // Nonzero f_sigma output so the noise path is exercised.
  gen.f_sigma().layers.back().bias.setConstant(-0.4);
  const Graph g = small_graph();
  const EdgeList kept = {{0, 1}, {2, 3}};
  const std::uint64_t noise = 77;

  Rng rng(noise);
  const auto enc = gen.encode_pass(g.adjacency(), g.with_edges(kept).adjacency(), g.node_features(), &rng);
  const DecoderPass dec = gen.decode_pass(enc.code.z);
  Eigen::MatrixXd d_logits;
  reconstruction_loss(dec, g.adjacency(), kept, &d_logits);
  Cvgae grad = gen.zeros_like();
  const Eigen::MatrixXd d_z = gen.decode_backward(dec, d_logits, grad);
  const Eigen::MatrixXd d_mu = cfg.kl_weight * enc.code.mu;
  const Eigen::MatrixXd d_ls = cfg.kl_weight * ((2.0 * enc.code.log_sigma.array()).exp() - 1.0).matrix();
  gen.encode_backward(enc, d_mu, d_ls, d_z, grad);

  const double h = 1e-6;
  auto params = parameter_refs(gen);
  auto grads = parameter_refs(grad);
  ASSERT_EQ(params.size(), grads.size());
  int checked = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::MatrixXd& w = *params[k].second;
    for (Eigen::Index i = 0; i < w.size(); i += 2) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = vae_loss(gen, g, kept, cfg.kl_weight, noise);
      w.data()[i] = saved - h;
      const double down = vae_loss(gen, g, kept, cfg.kl_weight, noise);
      w.data()[i] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_TRUE(grad_close(grads[k].second->data()[i], fd))
          << params[k].first << "[" << i << "] analytic " << grads[k].second->data()[i] << " fd " << fd;
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Contrastive, DegenerateBatchesAreZero) {
  Eigen::MatrixXd emb(3, 2);
  emb << 1, 0, 0, 1, 0.5, 0.5;
  EXPECT_NEAR(contrastive_loss(emb, {2, 2, 2}, 0.5, nullptr), 0.0, 1e-12);
  EXPECT_EQ(contrastive_loss(emb, {0, 1, 2}, 0.5, nullptr), 0.0);
  EXPECT_THROW(contrastive_loss(emb, {0, 1}, 0.5, nullptr), ShapeError);
}

TEST(Contrastive, PullingPositivesTogetherLowersLoss) {
  Eigen::MatrixXd emb(4, 2);
  emb << 1, 0, 0.2, 1, 0, 1, 1, 0.1;
  const std::vector<int> labels = {0, 0, 1, 1};
  const double before = contrastive_loss(emb, labels, 0.5, nullptr);
  Eigen::MatrixXd closer = emb;
  closer.row(1) << 0.9, 0.1;
  closer.row(3) << 0.1, 0.9;
  EXPECT_LT(contrastive_loss(closer, labels, 0.5, nullptr), before);
  // separated classes: a sharper temperature only lowers the loss
  double prev = contrastive_loss(closer, labels, 2.0, nullptr);
  for (double tau : {1.0, 0.5, 0.2, 0.1}) {
    const double cur = contrastive_loss(closer, labels, tau, nullptr);
    EXPECT_LT(cur, prev) << tau;
    prev = cur;
  }
}

TEST(Contrastive, GradientMatchesCentralDifferences) {
  Rng rng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd emb(5, 3);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = normal(rng);
  const std::vector<int> labels = {0, 1, 0, 2, 1};
  Eigen::MatrixXd d;
  contrastive_loss(emb, labels, 0.3, &d);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < emb.size(); ++i) {
    Eigen::MatrixXd up = emb, down = emb;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (contrastive_loss(up, labels, 0.3, nullptr) - contrastive_loss(down, labels, 0.3, nullptr)) / (2 * h);
    EXPECT_TRUE(grad_close(d.data()[i], fd)) << i;
  }
}

TEST(Critic, DiscriminatorLossWithoutPenaltyIsScoreGap) {
  const Critic critic = tiny_critic(3);
  const Graph g = small_graph();
  const Eigen::MatrixXd real = g.adjacency();
  const Eigen::MatrixXd fake = Eigen::MatrixXd::Constant(5, 5, 0.3) - 0.3 * Eigen::MatrixXd::Identity(5, 5);
  const Eigen::MatrixXd input = critic.node_input(g.node_features(), 1);
  const double gap = critic.score(real, input) - critic.score(fake, input);
  EXPECT_NEAR(loss_discriminator(critic, {real}, {fake}, {real}, {input}, 0.0), gap, 1e-12);
  const double with_gp = loss_discriminator(critic, {real}, {fake}, {fake}, {input}, 5.0);
  EXPECT_LE(with_gp, gap);
  EXPECT_THROW(loss_discriminator(critic, {real}, {}, {real}, {input}, 1.0), ShapeError);
}

TEST(Critic, ScoreAdjacencyGradientMatchesCentralDifferences) {
  const Critic critic = tiny_critic(4);
  const Graph g = small_graph();
  const Eigen::MatrixXd input = critic.node_input(g.node_features(), 2);
  Eigen::MatrixXd adj = 0.8 * g.adjacency();
  adj(0, 4) = adj(4, 0) = 0.35;
  Eigen::MatrixXd d_adj = Eigen::MatrixXd::Zero(5, 5);
  critic.score_grad(adj, input, 1.0, &d_adj, nullptr);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) {
      Eigen::MatrixXd up = adj, down = adj;
      up(i, j) += h;
      down(i, j) -= h;
      const double fd = (critic.score(up, input) - critic.score(down, input)) / (2 * h);
      EXPECT_TRUE(grad_close(d_adj(i, j), fd)) << i << "," << j;
    }
  }
}

TEST(Critic, PenaltyIsNonNegativeAndItsGradientMatchesCentralDifferences) {
  Critic critic = tiny_critic(5);
  const Graph g = small_graph();
  const Eigen::MatrixXd input = critic.node_input(g.node_features(), 0);
  Eigen::MatrixXd adj = 0.6 * g.adjacency();
  adj(1, 4) = adj(4, 1) = 0.25;
  double norm = 0.0;
  CriticNet<double> grad = critic.net().zeros_like();
  const double pen = critic.penalty(adj, input, 1.0, &grad, &norm);
  EXPECT_GE(pen, 0.0);
  EXPECT_NEAR(pen, (norm - 1.0) * (norm - 1.0), 1e-12);

  const double h = 1e-6;
  auto params = parameter_refs(critic.net());
  auto grads = parameter_refs(grad);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::MatrixXd& w = *params[k].second;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = critic.penalty(adj, input, 0.0, nullptr);
      w.data()[i] = saved - h;
      const double down = critic.penalty(adj, input, 0.0, nullptr);
      w.data()[i] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_TRUE(grad_close(grads[k].second->data()[i], fd))
          << params[k].first << "[" << i << "] analytic " << grads[k].second->data()[i] << " fd " << fd;
    }
  }
}

TEST(Training, LossesFallAndRunsAreDeterministic) {
  Tr3Config data;
  data.num_graphs = 24;
  const auto graphs = generate_dataset(data);
  GeneratorConfig cfg;
  cfg.encode_dim = 8;
  cfg.batch_size = 8;
  cfg.learning_rate = 5e-3;
  cfg.max_epochs = 12;
  cfg.critic_hidden = 8;
  cfg.seed = 4;
  const TrainedGenerator a = train_generator(graphs, cfg);
  ASSERT_EQ(a.history.size(), 12u);
  EXPECT_LT(a.history.back().losses.vae, a.history.front().losses.vae);
  const TrainedGenerator b = train_generator(graphs, cfg);
  EXPECT_TRUE(a.generator.to_checkpoint() == b.generator.to_checkpoint());
  EXPECT_EQ(losses_csv(a.history), losses_csv(b.history));
  EXPECT_EQ(losses_csv(a.history).substr(0, 24), "epoch,L_VAE,L_C,L_D,tota");

  GeneratorConfig bad = cfg;
  bad.masking_ratio = 1.5;
  EXPECT_THROW(train_generator(graphs, bad), ConfigError);
  EXPECT_THROW(train_generator({}, cfg), EmptyInputError);
}

TEST(Training, CheckpointRoundTripPreservesBehaviour) {
  GeneratorConfig cfg;
  cfg.encode_dim = 4;
  cfg.node_id_dim = 12;
  Rng rng(7);
  Cvgae gen(1, cfg, rng);
  gen.set_name("probe");
  const Checkpoint ckpt = gen.to_checkpoint();
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(ckpt));
  EXPECT_TRUE(back == ckpt);
  const Cvgae loaded = Cvgae::from_checkpoint(back);
  EXPECT_EQ(loaded.config().node_id_dim, 12);
  EXPECT_TRUE(loaded.to_checkpoint() == ckpt);
  const Cvgae again = Cvgae::from_checkpoint(loaded.to_checkpoint());
  const Graph g = small_graph();
  const Graph gs = g.with_edges({{0, 1}});
  EXPECT_EQ(again.mean_edge_probs(g, gs).probs, loaded.mean_edge_probs(g, gs).probs);

  const Critic critic = tiny_critic(2);
  const Critic critic_back = Critic::from_checkpoint(parse_checkpoint(serialize_checkpoint(critic.to_checkpoint())));
  EXPECT_TRUE(critic_back.to_checkpoint() == critic.to_checkpoint());
}

TEST(Generators, ConstantGeneratorAndDensity) {
  const Graph g = small_graph();
  Rng rng(1);
  const EdgeProbMatrix p = ConstantGenerator("c", 0.25).edge_probs(g, g, rng);
  EXPECT_EQ(p(0, 3), 0.25);
  EXPECT_EQ(p(2, 2), 0.0);
  EXPECT_DOUBLE_EQ(edge_density({g}), 0.5);
  EXPECT_THROW(edge_density({}), EmptyInputError);
}
