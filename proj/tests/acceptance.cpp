// Acceptance run: trains the desk-scale pipeline once, then prints one
// PASS/FAIL line per criterion. Exit status is nonzero when any line fails.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "dse/checkpoint.hpp"
#include "dse/cvgae.hpp"
#include "dse/errors.hpp"
#include "dse/frontdoor.hpp"
#include "dse/harness.hpp"
#include "dse/predictor.hpp"
#include "dse/tr3.hpp"

using namespace dse;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

Predictor random_model(int classes, std::uint64_t seed) {
  PredictorConfig cfg;
  cfg.hidden_dim = 8;
  Rng rng(seed);
  Predictor p(1, classes, cfg, rng);
  std::normal_distribution<double> normal(0.0, 0.7);
  p.visit([&](const std::string&, Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  });
  return p;
}

Graph ones_graph(const std::string& id, int n, EdgeList edges, int label = 0) {
  return Graph::create(id, n, std::move(edges), Eigen::MatrixXd::Ones(n, 1), label);
}

// ---------------------------------------------------------------- criterion 6

void estimator_oracle() {
  GeneratorConfig gc;
  gc.encode_dim = 4;
  Rng init(17);
  Cvgae frozen(1, gc, init);
  frozen.f_sigma().layers.back().bias.setConstant(-1e4);
  const std::vector<Graph> graphs = {ones_graph("path", 3, {{0, 1}, {1, 2}}), ones_graph("tri", 3, {{0, 1}, {1, 2}, {0, 2}}),
                                     ones_graph("one", 3, {{0, 2}})};
  double worst = 0.0;
  bool bit_exact = true;
  int cases = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const Predictor model = random_model(3, seed);
    for (const Graph& g : graphs) {
      const std::size_t m = g.edge_count();
      for (unsigned sel = 0; sel < (1U << m); ++sel) {
        EdgeList kept;
        for (std::size_t k = 0; k < m; ++k)
          if (sel & (1U << k)) kept.push_back(g.edges()[k]);
        const EdgeMask mask = mask_from_selection(g, kept);
        const EdgeProbMatrix probs = frozen.mean_edge_probs(g, induce_subgraph(g, mask));
        const EdgeList free = edge_difference(all_pairs(3), kept);
        for (int target = 0; target < 3; ++target) {
          double oracle = 0.0;
          for (unsigned bits = 0; bits < (1U << free.size()); ++bits) {
            double p = 1.0;
            EdgeList edges = kept;
            for (std::size_t k = 0; k < free.size(); ++k) {
              const double q = probs(free[k].u, free[k].v);
              p *= (bits & (1U << k)) ? q : 1.0 - q;
              if (bits & (1U << k)) edges.push_back(free[k]);
            }
            oracle += p * model.forward(g.with_edges(edges))(target);
          }
          DseConfig cfg;
          cfg.num_surrogates = 2;
          cfg.enumerate_up_to = 3;
          cfg.pool_size = 4;
          worst = std::max(worst, std::abs(imp_dse_reduced(model, frozen, g, mask, target, cfg, 9).value - oracle));
          worst = std::max(worst, std::abs(imp_dse_weighted(model, frozen, g, mask, target, cfg, 9).value - oracle));
          // sampled mode, single pool member
          DseConfig one;
          one.num_surrogates = 4;
          one.pool_size = 1;
          Cvgae noisy = frozen;
          noisy.f_sigma().layers.back().bias.setZero();
          bit_exact = bit_exact && imp_dse_reduced(model, noisy, g, mask, target, one, 11).value ==
                                       imp_dse_weighted(model, noisy, g, mask, target, one, 11).value;
          ++cases;
        }
      }
    }
  }
  verdict(6, "estimator oracle", worst <= 1e-6 && bit_exact,
          std::to_string(cases) + " toy cases, max |estimate - enumeration| " + num(worst) +
              ", weighted K=1 bit-identical: " + (bit_exact ? "yes" : "no"));
}

// ---------------------------------------------------------------- criterion 7

double predictor_gradient_error() {
  const Predictor model = random_model(3, 21);
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.2, 1.5);
  Eigen::MatrixXd x(5, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  const Graph g = Graph::create("p", 5, {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}}, x, 1);
  Eigen::MatrixXd d_x;
  cross_entropy(model, g, 2, &d_x);
  double worst = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (cross_entropy(model, Graph::create("p", 5, g.edges(), xp, 1), 2) -
                       cross_entropy(model, Graph::create("p", 5, g.edges(), xm, 1), 2)) /
                      (2 * h);
    worst = std::max(worst, rel_err(d_x.data()[i], fd));
  }
  return worst;
}

double reparam_gradient_error() {
  GeneratorConfig gc;
  gc.encode_dim = 3;
  gc.kl_weight = 0.3;
  Rng init(5);
  Cvgae gen(1, gc, init);
  gen.f_sigma().layers.back().bias.setConstant(-0.4);
  const Graph g = ones_graph("g", 5, {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}});
  const EdgeList kept = {{0, 1}, {2, 3}};
  auto loss = [&](const Cvgae& m, Cvgae* grad) {
    Rng rng(77);
    const auto enc = m.encode_pass(g.adjacency(), g.with_edges(kept).adjacency(), g.node_features(), &rng);
    const DecoderPass dec = m.decode_pass(enc.code.z);
    Eigen::MatrixXd d_logits;
    const double l = reconstruction_loss(dec, g.adjacency(), kept, grad ? &d_logits : nullptr) +
                     gc.kl_weight * kl_divergence(enc.code.mu, enc.code.log_sigma);
    if (grad) {
      const Eigen::MatrixXd d_z = m.decode_backward(dec, d_logits, *grad);
      m.encode_backward(enc, gc.kl_weight * enc.code.mu,
                        gc.kl_weight * ((2.0 * enc.code.log_sigma.array()).exp() - 1.0).matrix(), d_z, *grad);
    }
    return l;
  };
  Cvgae grad = gen.zeros_like();
  loss(gen, &grad);
  auto params = parameter_refs(gen);
  auto grads = parameter_refs(grad);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::MatrixXd& w = *params[k].second;
    for (Eigen::Index i = 0; i < w.size(); i += 2) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = loss(gen, nullptr);
      w.data()[i] = saved - h;
      const double down = loss(gen, nullptr);
      w.data()[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double a = grads[k].second->data()[i];
      if (std::abs(a - fd) > 1e-8) worst = std::max(worst, rel_err(a, fd));
    }
  }
  return worst;
}

double kl_monte_carlo_error() {
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
      const double eps = normal(rng);
      const double z = mu.data()[i] + std::exp(ls.data()[i]) * eps;
      sum += -ls.data()[i] - 0.5 * eps * eps + 0.5 * z * z;
    }
  }
  return std::abs(sum / samples - closed) / closed;
}

double softmax_error() {
  Rng rng(1);
  std::normal_distribution<double> normal(0.0, 30.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Eigen::RowVectorXd logits(7);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = normal(rng);
    worst = std::max(worst, std::abs(softmax(logits).sum() - 1.0));
  }
  return worst;
}

void numerical_suites(const std::vector<Graph>& dataset, const Predictor& model, const SurrogateGenerator& gen) {
  const double pred = predictor_gradient_error();
  const double rep = reparam_gradient_error();
  const double kl = kl_monte_carlo_error();
  const double sm = softmax_error();

  int samples = 0, contained = 0;
  Rng rng(3);
  for (std::size_t i = 0; i < 200 && i < dataset.size(); ++i) {
    const Graph& g = dataset[i];
    const EdgeMask mask = mask_from_selection(g, random_broken_edges(g, 0.7, rng));
    for (int k = 0; k < 5; ++k) {
      const SurrogateSample s = sample_surrogate(gen, g, mask, rng);
      ++samples;
      if (s.contains_subgraph &&
          std::includes(s.edges.begin(), s.edges.end(), mask.selected.begin(), mask.selected.end())) {
        ++contained;
      }
    }
  }

  const Graph& g = dataset.front();
  const EdgeMask mask = mask_from_selection(g, *g.ground_truth());
  auto variance = [&](int n) {
    DseConfig cfg;
    cfg.num_surrogates = n;
    std::vector<double> xs;
    for (std::uint64_t r = 0; r < 60; ++r) xs.push_back(imp_dse_reduced(model, gen, g, mask, g.label(), cfg, 500 + r).value);
    double mean = 0.0;
    for (double x : xs) mean += x / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(xs.size() - 1);
  };
  const double v25 = variance(25), v400 = variance(400);

  const bool ok = pred <= 1e-3 && rep <= 1e-3 && kl <= 0.02 && sm <= 1e-6 && contained == samples && v400 <= v25 / 8.0;
  verdict(7, "numerical suites", ok,
          "predictor grad rel err " + num(pred) + ", reparam grad rel err " + num(rep) + ", KL vs MC " + num(kl) +
              ", softmax |sum-1| " + num(sm) + ", forced inclusion " + std::to_string(contained) + "/" +
              std::to_string(samples) + ", var(400)/var(25) " + num(v400 / v25));
}

// ---------------------------------------------------------------- criterion 8

void determinism_and_round_trips(const fs::path& run_dir, const std::vector<Graph>& dataset) {
  const char* ini = "[run]\nresume = false\n[data]\nnum_graphs = 60\n[predictor]\nhidden_dim = 8\nmax_epochs = 3\n"
                    "[generator]\nencode_dim = 4\nbatch_size = 8\nmax_epochs = 2\ncritic_hidden = 6\n"
                    "critic_layers = 2\nnode_id_dim = 32\nseeds = 1\ntrain_graphs = 12\n"
                    "[explainers]\nmaskopt_steps = 5\n[dse]\nnum_surrogates = 3\neval_graphs = 5\nfid_masks = 1\n"
                    "[sweep]\nenabled = false\n";
  ExperimentConfig a = parse_experiment_config(ini);
  ExperimentConfig b = a;
  a.run_dir = run_dir / "determinism_a";
  b.run_dir = run_dir / "determinism_b";
  run_experiment(a);
  run_experiment(b);
  const bool same_report = read_artifact(a.run_dir / "report.json") == read_artifact(b.run_dir / "report.json");
  const bool same_manifest = read_artifact(a.run_dir / "manifest.json") == read_artifact(b.run_dir / "manifest.json");

  const std::string text = serialize_dataset(dataset);
  const bool graphs_ok = parse_dataset(text) == dataset && serialize_dataset(parse_dataset(text)) == text;

  bool ckpt_ok = true;
  std::vector<fs::path> ckpts = {run_dir / "predictor.ckpt"};
  for (const auto& e : fs::directory_iterator(run_dir / "generators"))
    if (e.path().extension() == ".ckpt") ckpts.push_back(e.path());
  for (const fs::path& p : ckpts) {
    const std::string bytes = read_artifact(p);
    ckpt_ok = ckpt_ok && serialize_checkpoint(parse_checkpoint(bytes)) == bytes;
  }
  verdict(8, "determinism and round-trips", same_report && same_manifest && graphs_ok && ckpt_ok,
          std::string("reports identical: ") + (same_report && same_manifest ? "yes" : "no") + ", " +
              std::to_string(dataset.size()) + " graphs round-trip: " + (graphs_ok ? "yes" : "no") + ", " +
              std::to_string(ckpts.size()) + " checkpoints round-trip: " + (ckpt_ok ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale acceptance run"};
  std::string config = DSE_DESK_CONFIG;
  std::string run_dir = "desk_run";
  bool resume = false;
  app.add_option("--config", config, "experiment INI");
  app.add_option("--run-dir", run_dir, "output directory");
  app.add_flag("--resume", resume, "reuse stage outputs whose inputs are unchanged");
  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_experiment_config(config);
    cfg.run_dir = run_dir;
    cfg.resume = resume;
    const auto start = std::chrono::steady_clock::now();
    const nlohmann::json report = run_experiment(cfg, &std::cerr);
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto timings = nlohmann::json::parse(read_artifact(fs::path(run_dir) / "timings.json"));

    // 1
    const double acc = report["predictor"]["test_accuracy"];
    const double pred_time = timings["predictor"];
    verdict(1, "predictor quality", acc >= 0.90 && pred_time <= 600.0 && cfg.data.num_graphs >= 3000,
            "test accuracy " + num(acc) + " on " + std::to_string(cfg.data.num_graphs) + " graphs, training " +
                num(pred_time) + " s");

    // 2
    const auto& ood = report["ood"];
    const double full = ood["mean_full_probability"], removal = ood["mean_imp_re_ground_truth"];
    const int ood_graphs = ood["graphs"];
    verdict(2, "OOD gap", ood_graphs >= 500 && removal <= full - 0.30,
            "mean f(G)[y] " + num(full) + ", mean Imp_re(gt) " + num(removal) + ", gap " + num(full - removal) +
                " over " + std::to_string(ood_graphs) + " graphs");

    // 3 and 5
    std::map<std::string, std::map<std::uint64_t, nlohmann::json>> rows;
    nlohmann::json random_row;
    for (const auto& row : report["generators"]) {
      if (row["variant"] == "random") random_row = row;
      if (!row["seed"].is_null()) rows[row["variant"]][row["seed"].get<std::uint64_t>()] = row;
    }
    const double val_rand = random_row["val"], fid_rand = random_row["fid"];
    bool valid = cfg.generator_seeds.size() >= 3;
    bool ablation = valid;
    std::string detail3, detail5;
    for (std::uint64_t s : cfg.generator_seeds) {
      const double val = rows["cvgae"][s]["val"], fid = rows["cvgae"][s]["fid"];
      const double val_nc = rows["no_contrastive"][s]["val"], val_np = rows["no_penalty"][s]["val"];
      valid = valid && val > 0.0 && val > val_rand && fid < fid_rand;
      ablation = ablation && val >= val_nc && val >= val_np;
      detail3 += " s" + std::to_string(s) + " VAL " + num(val) + " FID " + num(fid) + ";";
      detail5 += " s" + std::to_string(s) + " full " + num(val) + " gamma=0 " + num(val_nc) + " lambda=0 " +
                 num(val_np) + ";";
    }
    verdict(3, "generator validity", valid,
            "random VAL " + num(val_rand) + " FID " + num(fid_rand) + ";" + detail3);

    // 4
    int wins = 0, total_explainers = 0;
    std::string detail4;
    for (const auto& row : report["explainers"]) {
      ++total_explainers;
      const auto& re = row["rho_re"]["value"];
      const auto& dse_rho = row["rho_dse"]["value"];
      const bool win = !re.is_null() && !dse_rho.is_null() && dse_rho.get<double>() > re.get<double>();
      wins += win;
      detail4 += " " + row["explainer"].get<std::string>() + " " + (re.is_null() ? "n/a" : num(re.get<double>())) +
                 "->" + (dse_rho.is_null() ? "n/a" : num(dse_rho.get<double>())) + ";";
    }
    const auto& sp_re = report["spearman_re"]["value"];
    const auto& sp_dse = report["spearman_dse"]["value"];
    const bool rank_ok = !sp_dse.is_null() && (sp_re.is_null() || sp_dse.get<double>() > sp_re.get<double>());
    verdict(4, "deconfounding benefit", wins >= 4 && total_explainers == 6 && rank_ok,
            std::to_string(wins) + "/" + std::to_string(total_explainers) + " explainers with rho_dse > rho_re (" +
                detail4 + " ), ranking Spearman re " + (sp_re.is_null() ? "n/a" : num(sp_re.get<double>())) +
                " dse " + (sp_dse.is_null() ? "n/a" : num(sp_dse.get<double>())));

    verdict(5, "ablation ordering", ablation, detail5.substr(1));

    estimator_oracle();

    const std::vector<Graph> dataset = load_dataset((fs::path(run_dir) / "dataset.txt").string());
    const Predictor model = Predictor::from_checkpoint(load_checkpoint((fs::path(run_dir) / "predictor.ckpt").string()));
    const Cvgae gen = Cvgae::from_checkpoint(load_checkpoint(
        (fs::path(run_dir) / "generators" / ("cvgae_s" + std::to_string(cfg.generator_seeds.front()) + ".ckpt")).string()));
    numerical_suites(dataset, model, gen);
    determinism_and_round_trips(run_dir, dataset);

    verdict(9, "pipeline runtime", total <= 3600.0, "desk pipeline " + num(total) + " s (limit 3600 s)");
  } catch (const Error& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
