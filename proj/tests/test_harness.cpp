#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "dse/errors.hpp"
#include "dse/harness.hpp"

using namespace dse;
namespace fs = std::filesystem;

namespace {

const char* kTinyIni = R"([run]
resume = false
[data]
num_graphs = 60
base_nodes_min = 6
base_nodes_max = 8
[predictor]
hidden_dim = 8
max_epochs = 4
[generator]
encode_dim = 4
batch_size = 8
learning_rate = 0.005
max_epochs = 2
critic_hidden = 6
critic_layers = 2
node_id_dim = 16
seeds = 1, 2
train_graphs = 16
[explainers]
maskopt_steps = 5
[dse]
num_surrogates = 3
eval_graphs = 6
fid_masks = 1
[sweep]
lambdas = 1
gammas = 0.5, 2
eval_graphs = 4
num_surrogates = 2
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dse_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const fs::path& dir) {
  ExperimentConfig c = parse_experiment_config(kTinyIni);
  c.run_dir = dir;
  return c;
}

std::string slurp(const fs::path& p) { return read_artifact(p); }

}  // namespace

TEST(Harness, TinyRunWritesEveryArtifactAndIsReproducible) {
  const fs::path a = scratch("a"), b = scratch("b");
  write_text_file(a / "generators" / "stale.ckpt", "left over\n");
  const nlohmann::json report = run_experiment(tiny(a));

  for (const char* key : {"config", "seeds", "metadata", "predictor", "ood", "explainers", "rankings", "spearman_re",
                          "spearman_dse", "ground_truth", "generators", "sensitivity"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report["explainers"].size(), kExplainers.size());
  for (const auto& row : report["explainers"]) {
    EXPECT_EQ(row["graphs"], 6);
    EXPECT_TRUE(row["rho_re"].contains("value"));
  }
  // 4 variants x 2 seeds plus the random and identity baselines
  EXPECT_EQ(report["generators"].size(), 10u);
  EXPECT_EQ(report["sensitivity"].size(), 2u);
  EXPECT_EQ(report["rankings"]["precision"].size(), kExplainers.size());

  for (const char* f : {"dataset.txt", "dataset_manifest.json", "predictor.ckpt", "masks.jsonl", "records.jsonl",
                        "report.json", "table2.csv", "table3.csv", "table4.csv", "ablation.csv", "sensitivity.csv",
                        "fig2.csv", "fig2.svg", "losses.csv", "manifest.json", "timings.json"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a / "generators" / "cvgae_s1.ckpt"));
  EXPECT_TRUE(fs::exists(a / "generators" / "vgae_s2.losses.csv"));

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest["files"]["report.json"], git_blob_sha1(slurp(a / "report.json")));
  EXPECT_TRUE(manifest["files"].contains("generators/cvgae_s1.ckpt"));
  EXPECT_FALSE(manifest["files"].contains("generators/stale.ckpt"));

  run_experiment(tiny(b));
  for (const char* f : {"report.json", "table2.csv", "table4.csv", "ablation.csv", "sensitivity.csv", "fig2.svg",
                        "records.jsonl", "masks.jsonl", "predictor.ckpt", "manifest.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }

  // Resuming reuses every stage and reproduces the same report.
  ExperimentConfig resumed = tiny(a);
  resumed.resume = true;
  const std::string before = slurp(a / "report.json");
  std::ostringstream log;
  const nlohmann::json again = run_experiment(resumed, &log);
  EXPECT_NE(log.str().find("predictor: reused"), std::string::npos) << log.str();
  nlohmann::json lhs = again, rhs = nlohmann::json::parse(before);
  lhs["config"]["run"].erase("resume");
  rhs["config"]["run"].erase("resume");
  EXPECT_EQ(lhs, rhs);

  // Stored masks and records parse back.
  EXPECT_EQ(load_masks(a / "masks.jsonl").size(), 6u * kExplainers.size());
  EXPECT_EQ(load_records(a / "records.jsonl").size(), 6u * kExplainers.size());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Harness, MissingInputsAreNamed) {
  ExperimentConfig c = tiny(scratch("missing"));
  c.data_path = "/nonexistent/dataset.txt";
  EXPECT_THROW(run_experiment(c), MissingArtifactError);
  EXPECT_THROW(load_masks("/nonexistent/masks.jsonl"), MissingArtifactError);

  const fs::path bad = scratch("bad") / "records.jsonl";
  write_text_file(bad, "{\"graph_id\": \"g\"}\nnot json\n");
  EXPECT_THROW(load_records(bad), Error);
  fs::remove_all(bad.parent_path());
}
