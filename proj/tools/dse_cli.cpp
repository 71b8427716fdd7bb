// Command-line front end: one subcommand per pipeline stage plus `report`,
// which runs the whole experiment from a config file.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dse/checkpoint.hpp"
#include "dse/cvgae.hpp"
#include "dse/errors.hpp"
#include "dse/explainers.hpp"
#include "dse/frontdoor.hpp"
#include "dse/graph.hpp"
#include "dse/harness.hpp"
#include "dse/predictor.hpp"
#include "dse/tr3.hpp"

namespace fs = std::filesystem;
using namespace dse;

namespace {

std::vector<Graph> load_data(const std::string& path) {
  return parse_dataset(read_artifact(path, "dse_cli gen-data"));
}

// Graph selection shared by explain and train-generator: optionally restrict
// to one side of the predictor's train/test split, then keep the first `limit`.
std::vector<Graph> select_graphs(const std::vector<Graph>& data, const std::string& split,
                                 const std::string& predictor_path, int limit) {
  std::vector<int> idx;
  if (split == "all") {
    idx.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) idx[i] = static_cast<int>(i);
  } else {
    if (predictor_path.empty()) throw ConfigError("--split " + split + " needs --predictor to recover the split");
    const Checkpoint ckpt = load_checkpoint(predictor_path);
    const auto cfg = PredictorConfig::from_json(ckpt.metadata.at("config"));
    auto [train, test] = split_indices(static_cast<int>(data.size()), cfg.test_fraction,
                                       ckpt.metadata.at("split_seed").get<std::uint64_t>());
    idx = split == "train" ? train : test;
    std::sort(idx.begin(), idx.end());
  }
  std::vector<Graph> out;
  for (int i : idx) {
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(data[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deconfounded subgraph evaluation pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the three-motif synthetic dataset");
  std::string gen_out;
  std::string gen_manifest;
  Tr3Config tr3;
  gen->add_option("--out", gen_out, "Dataset file")->required();
  gen->add_option("--num", tr3.num_graphs, "Number of graphs");
  gen->add_option("--seed", tr3.seed, "Seed");
  gen->add_option("--base-min", tr3.base_nodes_min, "Smallest base tree");
  gen->add_option("--base-max", tr3.base_nodes_max, "Largest base tree");
  gen->add_option("--feature-dim", tr3.feature_dim, "Node feature columns");
  gen->add_flag("--degree-feature", tr3.degree_feature, "Store node degree in the last feature column");
  gen->add_option("--manifest", gen_manifest, "Manifest path (default: manifest.json next to --out)");

  // train-predictor
  auto* tp = app.add_subcommand("train-predictor", "Train the graph classifier");
  std::string tp_data, tp_out;
  PredictorConfig pcfg;
  tp->add_option("--data", tp_data, "Dataset file")->required();
  tp->add_option("--out", tp_out, "Checkpoint path")->required();
  tp->add_option("--epochs", pcfg.max_epochs, "Epochs");
  tp->add_option("--seed", pcfg.seed, "Seed");
  tp->add_option("--hidden", pcfg.hidden_dim, "Hidden width");
  tp->add_option("--layers", pcfg.num_layers, "Message-passing layers");
  tp->add_option("--lr", pcfg.learning_rate, "Learning rate");
  tp->add_option("--batch", pcfg.batch_size, "Batch size");
  tp->add_option("--test-fraction", pcfg.test_fraction, "Held-out fraction");

  // explain
  auto* ex = app.add_subcommand("explain", "Run explainers and write one mask record per (graph, explainer)");
  std::string ex_data, ex_ckpt, ex_out, ex_kinds = "sa,gradcam,maskopt,occlusion,screener,random", ex_split = "all";
  int ex_limit = 0;
  ExplainerConfig ecfg;
  ex->add_option("--data", ex_data, "Dataset file")->required();
  ex->add_option("--ckpt", ex_ckpt, "Predictor checkpoint")->required();
  ex->add_option("--explainer", ex_kinds, "Comma-separated explainers");
  ex->add_option("--ratio", ecfg.mask_ratio, "Fraction of edges selected");
  ex->add_option("--seed", ecfg.seed, "Seed of the random explainer");
  ex->add_option("--maskopt-steps", ecfg.maskopt_steps, "Mask optimisation steps");
  ex->add_option("--split", ex_split, "all, train or test")->check(CLI::IsMember({"all", "train", "test"}));
  ex->add_option("--limit", ex_limit, "Explain only the first N selected graphs");
  ex->add_option("--out", ex_out, "masks.jsonl")->required();

  // train-generator
  auto* tg = app.add_subcommand("train-generator", "Train the conditional surrogate generator");
  std::string tg_data, tg_out, tg_pred, tg_split = "all";
  int tg_limit = 0;
  GeneratorConfig gcfg;
  tg->add_option("--data", tg_data, "Dataset file")->required();
  tg->add_option("--out", tg_out, "Output prefix")->required();
  tg->add_option("--gamma", gcfg.contrastive_weight, "Contrastive weight");
  tg->add_option("--omega", gcfg.adversarial_weight, "Adversarial weight");
  tg->add_option("--lambda", gcfg.penalty_weight, "Gradient-penalty weight");
  tg->add_option("--tau", gcfg.temperature, "Contrastive temperature");
  tg->add_option("--ratio", gcfg.masking_ratio, "Fraction of edges removed to form broken graphs");
  tg->add_option("--beta", gcfg.kl_weight, "KL weight");
  tg->add_option("--epochs", gcfg.max_epochs, "Epochs");
  tg->add_option("--seed", gcfg.seed, "Seed");
  tg->add_option("--encode-dim", gcfg.encode_dim, "Latent width per head");
  tg->add_option("--batch", gcfg.batch_size, "Batch size");
  tg->add_option("--lr", gcfg.learning_rate, "Learning rate");
  tg->add_option("--node-id-dim", gcfg.node_id_dim, "One-hot node-index columns for the encoder (0 disables)");
  tg->add_option("--predictor", tg_pred, "Predictor checkpoint, used to recover the train split");
  tg->add_option("--split", tg_split, "all, train or test")->check(CLI::IsMember({"all", "train", "test"}));
  tg->add_option("--limit", tg_limit, "Train on the first N selected graphs");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Front-door importance of every mask");
  std::string ev_data, ev_masks, ev_pred, ev_gen, ev_out, ev_est = "reduced";
  bool ev_no_deletion = false;
  DseConfig dcfg;
  ev->add_option("--data", ev_data, "Dataset file")->required();
  ev->add_option("--masks", ev_masks, "masks.jsonl")->required();
  ev->add_option("--predictor", ev_pred, "Predictor checkpoint")->required();
  ev->add_option("--generator", ev_gen, "Generator checkpoint, or random:<p> for a constant generator")->required();
  ev->add_option("--n", dcfg.num_surrogates, "Surrogates per estimate");
  ev->add_option("--estimator", ev_est, "reduced or weighted")->check(CLI::IsMember({"reduced", "weighted"}));
  ev->add_option("--pool-size", dcfg.pool_size, "Adjustment pool size of the weighted estimator");
  ev->add_option("--seed", dcfg.seed, "Seed");
  ev->add_flag("--no-deletion", ev_no_deletion, "Skip the deletion-based importance");
  ev->add_option("--out", ev_out, "records.jsonl")->required();

  // report
  auto* rp = app.add_subcommand("report", "Run or resume the full experiment from a config file");
  std::string rp_config;
  rp->add_option("--config", rp_config, "INI config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto graphs = generate_dataset(tr3);
      save_dataset(gen_out, graphs);
      const fs::path manifest =
          gen_manifest.empty() ? fs::path(gen_out).parent_path() / "manifest.json" : fs::path(gen_manifest);
      write_text_file(manifest, dataset_manifest(tr3, graphs).dump(2) + "\n");
      std::cout << "wrote " << graphs.size() << " graphs to " << gen_out << "\n";
    } else if (*tp) {
      const auto data = load_data(tp_data);
      const TrainedPredictor trained = train_predictor(data, pcfg);
      save_checkpoint(tp_out, trained.checkpoint());
      std::cout << "train accuracy " << trained.train_accuracy;
      if (trained.test_accuracy) std::cout << ", test accuracy " << *trained.test_accuracy;
      std::cout << "\n";
    } else if (*ex) {
      const auto data = load_data(ex_data);
      const Predictor model = Predictor::from_checkpoint(load_checkpoint(ex_ckpt));
      std::vector<ExplainerKind> kinds;
      std::stringstream ss(ex_kinds);
      for (std::string item; std::getline(ss, item, ',');) kinds.push_back(explainer_from_name(item));
      std::vector<MaskRecord> masks;
      for (const Graph& g : select_graphs(data, ex_split, ex_ckpt, ex_limit)) {
        for (ExplainerKind k : kinds) {
          ExplainerConfig c = ecfg;
          c.kind = k;
          masks.push_back({g.id(), std::string(explainer_name(k)), explain(model, g, g.label(), c)});
        }
      }
      std::sort(masks.begin(), masks.end(), [](const MaskRecord& a, const MaskRecord& b) {
        return std::tie(a.graph_id, a.explainer) < std::tie(b.graph_id, b.explainer);
      });
      save_masks(ex_out, masks);
      std::cout << "wrote " << masks.size() << " mask records to " << ex_out << "\n";
    } else if (*tg) {
      const auto data = load_data(tg_data);
      const auto graphs = select_graphs(data, tg_split, tg_pred, tg_limit);
      const TrainedGenerator trained = train_generator(graphs, gcfg);
      save_checkpoint(tg_out + ".ckpt", trained.generator.to_checkpoint());
      save_checkpoint(tg_out + ".critic.ckpt", trained.critic.to_checkpoint());
      write_text_file(tg_out + ".losses.csv", losses_csv(trained.history));
      std::cout << "wrote " << tg_out << ".ckpt, " << tg_out << ".critic.ckpt and " << tg_out << ".losses.csv\n";
    } else if (*ev) {
      const auto data = load_data(ev_data);
      const auto masks = load_masks(ev_masks);
      const Predictor model = Predictor::from_checkpoint(load_checkpoint(ev_pred));
      dcfg.estimator = estimator_from_name(ev_est);
      dcfg.compute_deletion = !ev_no_deletion;
      std::vector<ImportanceRecord> records;
      if (ev_gen.rfind("random:", 0) == 0) {
        const ConstantGenerator constant("random", std::stod(ev_gen.substr(7)));
        records = evaluate_all(data, masks, model, constant, dcfg);
      } else {
        const Cvgae generator = Cvgae::from_checkpoint(load_checkpoint(ev_gen));
        records = evaluate_all(data, masks, model, generator, dcfg);
      }
      save_records(ev_out, records);
      std::cout << "wrote " << records.size() << " records to " << ev_out << "\n";
    } else if (*rp) {
      const ExperimentConfig cfg = load_experiment_config(rp_config);
      run_experiment(cfg, &std::cerr);
      std::cout << "report: " << (cfg.run_dir / "report.json").string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
