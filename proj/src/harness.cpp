#include "dse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "dse/errors.hpp"
#include "dse/metrics.hpp"

namespace dse {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (data_path.empty()) data.validate();
  predictor.validate();
  generator.validate();
  explainer.validate();
  dse.validate();
  if (generator_seeds.empty()) throw ConfigError("[generator] seeds must list at least one seed");
  if (generator_train_graphs < 0) throw ConfigError("[generator] train_graphs must be non-negative");
  if (explainers.empty()) throw ConfigError("[explainers] kinds must list at least one explainer");
  if (eval_graphs < 2) throw ConfigError("[dse] eval_graphs must be at least 2");
  if (fid_masks < 1) throw ConfigError("[dse] fid_masks must be at least 1");
  if (ood_graphs < 0) throw ConfigError("[dse] ood_graphs must be non-negative");
  if (sweep.mode != "grid" && sweep.mode != "axes") throw ConfigError("[sweep] mode must be grid or axes");
  if (sweep.max_epochs < 0 || sweep.train_graphs < 0) throw ConfigError("[sweep] sizes must be non-negative");
  if (sweep.eval_graphs < 1 || sweep.num_surrogates < 1) throw ConfigError("[sweep] eval sizes must be positive");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json kinds = nlohmann::json::array();
  for (ExplainerKind k : explainers) kinds.push_back(explainer_name(k));
  nlohmann::json expl = explainer.to_json();
  expl.erase("kind");
  return {{"run", {{"resume", resume}}},
          {"data", data_path.empty() ? data.to_json() : nlohmann::json{{"path", data_path.filename().string()}}},
          {"predictor", predictor.to_json()},
          {"generator", {{"config", generator.to_json()},
                         {"seeds", generator_seeds},
                         {"train_graphs", generator_train_graphs}}},
          {"explainers", {{"kinds", kinds}, {"config", expl}}},
          {"dse", {{"config", dse.to_json()},
                   {"eval_graphs", eval_graphs},
                   {"fid_masks", fid_masks},
                   {"ood_graphs", ood_graphs}}},
          {"sweep", {{"enabled", sweep.enabled},
                     {"lambdas", sweep.lambdas},
                     {"gammas", sweep.gammas},
                     {"mode", sweep.mode},
                     {"max_epochs", sweep.max_epochs},
                     {"train_graphs", sweep.train_graphs},
                     {"eval_graphs", sweep.eval_graphs},
                     {"num_surrogates", sweep.num_surrogates}}}};
}

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Reads keys of one section, remembering which were consumed so leftovers
// can be reported as typos.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!tree_) return;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return;
    used_.insert(key);
    const std::string raw = it->second.get_value<std::string>();
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (raw == "true" || raw == "1" || raw == "yes") {
          out = true;
        } else if (raw == "false" || raw == "0" || raw == "no") {
          out = false;
        } else {
          throw ConfigError("not a boolean");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        out = raw;
      } else {
        std::size_t pos = 0;
        if constexpr (std::is_floating_point_v<T>) {
          out = std::stod(raw, &pos);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          out = std::stoull(raw, &pos);
        } else {
          out = static_cast<T>(std::stol(raw, &pos));
        }
        if (pos != raw.size()) throw ConfigError("trailing characters");
      }
    } catch (const std::exception&) {
      throw ConfigError("[" + name_ + "] " + key + ": cannot parse '" + raw + "'");
    }
  }

  std::vector<std::string> list(const std::string& key) {
    std::string raw;
    get(key, raw);
    return split_list(raw);
  }

  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

  void finish() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in section [" + name_ + "]");
    }
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

template <typename T>
std::vector<T> parse_numbers(const std::vector<std::string>& items, const std::string& what) {
  std::vector<T> out;
  for (const std::string& s : items) {
    try {
      std::size_t pos = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(std::stod(s, &pos));
      } else {
        out.push_back(static_cast<T>(std::stoull(s, &pos)));
      }
      if (pos != s.size()) throw ConfigError("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse '" + s + "'");
    }
  }
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view ini_text, const fs::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(ini_text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> known = {"run", "data", "predictor", "generator", "explainers", "dse", "sweep"};
  for (const auto& [name, _] : tree) {
    if (!known.count(name)) throw ConfigError("unknown config section [" + name + "]");
  }
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return Section(it == tree.not_found() ? nullptr : &it->second, name);
  };
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };

  ExperimentConfig c;
  {
    Section s = section("run");
    std::string dir = "run";
    s.get("dir", dir);
    c.run_dir = resolve(dir);
    s.get("resume", c.resume);
    s.finish();
  }
  {
    Section s = section("data");
    std::string path;
    s.get("path", path);
    if (!path.empty()) c.data_path = resolve(path);
    s.get("num_graphs", c.data.num_graphs);
    s.get("base_nodes_min", c.data.base_nodes_min);
    s.get("base_nodes_max", c.data.base_nodes_max);
    s.get("seed", c.data.seed);
    s.get("feature_dim", c.data.feature_dim);
    s.get("degree_feature", c.data.degree_feature);
    s.finish();
  }
  {
    Section s = section("predictor");
    s.get("hidden_dim", c.predictor.hidden_dim);
    s.get("num_layers", c.predictor.num_layers);
    s.get("learning_rate", c.predictor.learning_rate);
    s.get("weight_decay", c.predictor.weight_decay);
    s.get("max_epochs", c.predictor.max_epochs);
    s.get("batch_size", c.predictor.batch_size);
    s.get("test_fraction", c.predictor.test_fraction);
    s.get("seed", c.predictor.seed);
    s.finish();
  }
  {
    Section s = section("generator");
    GeneratorConfig& g = c.generator;
    s.get("encode_dim", g.encode_dim);
    s.get("batch_size", g.batch_size);
    s.get("learning_rate", g.learning_rate);
    s.get("weight_decay", g.weight_decay);
    s.get("kl_weight", g.kl_weight);
    s.get("contrastive_weight", g.contrastive_weight);
    s.get("adversarial_weight", g.adversarial_weight);
    s.get("penalty_weight", g.penalty_weight);
    s.get("temperature", g.temperature);
    s.get("masking_ratio", g.masking_ratio);
    s.get("max_epochs", g.max_epochs);
    s.get("critic_hidden", g.critic_hidden);
    s.get("critic_layers", g.critic_layers);
    s.get("log_sigma_max", g.log_sigma_max);
    s.get("node_id_dim", g.node_id_dim);
    if (s.has("seeds")) c.generator_seeds = parse_numbers<std::uint64_t>(s.list("seeds"), "[generator] seeds");
    s.get("train_graphs", c.generator_train_graphs);
    s.finish();
  }
  {
    Section s = section("explainers");
    if (s.has("kinds")) {
      c.explainers.clear();
      for (const std::string& k : s.list("kinds")) c.explainers.push_back(explainer_from_name(k));
    }
    s.get("mask_ratio", c.explainer.mask_ratio);
    s.get("maskopt_steps", c.explainer.maskopt_steps);
    s.get("maskopt_lr", c.explainer.maskopt_lr);
    s.get("maskopt_sparsity_coeff", c.explainer.maskopt_sparsity_coeff);
    s.get("seed", c.explainer.seed);
    s.finish();
  }
  {
    Section s = section("dse");
    s.get("num_surrogates", c.dse.num_surrogates);
    std::string est(estimator_name(c.dse.estimator));
    s.get("estimator", est);
    c.dse.estimator = estimator_from_name(est);
    s.get("pool_size", c.dse.pool_size);
    s.get("enumerate_up_to", c.dse.enumerate_up_to);
    s.get("compute_deletion", c.dse.compute_deletion);
    s.get("seed", c.dse.seed);
    s.get("eval_graphs", c.eval_graphs);
    s.get("fid_masks", c.fid_masks);
    s.get("ood_graphs", c.ood_graphs);
    s.finish();
  }
  {
    Section s = section("sweep");
    s.get("enabled", c.sweep.enabled);
    if (s.has("lambdas")) c.sweep.lambdas = parse_numbers<double>(s.list("lambdas"), "[sweep] lambdas");
    if (s.has("gammas")) c.sweep.gammas = parse_numbers<double>(s.list("gammas"), "[sweep] gammas");
    s.get("mode", c.sweep.mode);
    s.get("max_epochs", c.sweep.max_epochs);
    s.get("train_graphs", c.sweep.train_graphs);
    s.get("eval_graphs", c.sweep.eval_graphs);
    s.get("num_surrogates", c.sweep.num_surrogates);
    s.finish();
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const std::string text = read_artifact(path);
  return parse_experiment_config(text, path.parent_path());
}

// ---------------------------------------------------------------- files

std::string git_blob_sha1(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string read_artifact(const fs::path& path, std::string_view produced_by) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (produced_by.empty()) throw MissingArtifactError(path.string());
    throw MissingArtifactError(path.string(), std::string(produced_by));
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

namespace {

template <typename T, typename F>
std::vector<T> read_jsonl(const fs::path& path, std::string_view produced_by, F parse) {
  const std::string text = read_artifact(path, produced_by);
  std::vector<T> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what(), static_cast<std::size_t>(lineno));
    }
  }
  return out;
}

}  // namespace

std::vector<MaskRecord> load_masks(const fs::path& path) {
  return read_jsonl<MaskRecord>(path, "dse_cli explain", mask_record_from_json);
}

void save_masks(const fs::path& path, const std::vector<MaskRecord>& masks) {
  std::string text;
  for (const MaskRecord& m : masks) text += mask_record_to_json(m).dump() + "\n";
  write_text_file(path, text);
}

std::vector<ImportanceRecord> load_records(const fs::path& path) {
  return read_jsonl<ImportanceRecord>(path, "dse_cli evaluate", importance_record_from_json);
}

void save_records(const fs::path& path, const std::vector<ImportanceRecord>& records) {
  std::string text;
  for (const ImportanceRecord& r : records) text += importance_record_to_json(r).dump() + "\n";
  write_text_file(path, text);
}

// ---------------------------------------------------------------- figure

std::string fig2_svg(const std::vector<std::string>& explainers, const std::vector<double>& rho_re,
                     const std::vector<double>& rho_dse) {
  if (explainers.size() != rho_re.size() || explainers.size() != rho_dse.size()) {
    throw ShapeError("fig2_svg: series lengths differ");
  }
  const int group = 90, bar = 30, left = 60, top = 30, height = 240;
  const int width = left + group * static_cast<int>(explainers.size()) + 40;
  const double mid = top + height / 2.0;  // y of rho = 0; the axis spans [-1, 1]
  auto y_of = [&](double v) { return mid - v * height / 2.0; };
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 60
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << left << "\" y=\"18\">correlation with precision</text>\n";
  for (double t : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    s << "<line x1=\"" << left - 5 << "\" y1=\"" << y_of(t) << "\" x2=\"" << width - 20 << "\" y2=\"" << y_of(t)
      << "\" stroke=\"" << (t == 0.0 ? "#000" : "#ddd") << "\"/>\n";
    s << "<text x=\"" << left - 10 << "\" y=\"" << y_of(t) + 4 << "\" text-anchor=\"end\">" << t << "</text>\n";
  }
  for (std::size_t i = 0; i < explainers.size(); ++i) {
    const int x0 = left + group * static_cast<int>(i) + 10;
    const std::pair<double, const char*> series[2] = {{rho_re[i], "#d95f02"}, {rho_dse[i], "#1b9e77"}};
    for (int k = 0; k < 2; ++k) {
      const double v = series[k].first;
      if (!std::isfinite(v)) continue;
      const double y = std::min(y_of(v), mid);
      s << "<rect x=\"" << x0 + k * bar << "\" y=\"" << y << "\" width=\"" << bar - 4 << "\" height=\""
        << std::abs(y_of(v) - mid) << "\" fill=\"" << series[k].second << "\"/>\n";
    }
    s << "<text x=\"" << x0 + bar << "\" y=\"" << top + height + 20 << "\" text-anchor=\"middle\">" << explainers[i]
      << "</text>\n";
  }
  const int ly = top + height + 42;
  s << "<rect x=\"" << left << "\" y=\"" << ly - 10 << "\" width=\"12\" height=\"12\" fill=\"#d95f02\"/>"
    << "<text x=\"" << left + 16 << "\" y=\"" << ly << "\">rho_re</text>\n";
  s << "<rect x=\"" << left + 90 << "\" y=\"" << ly - 10 << "\" width=\"12\" height=\"12\" fill=\"#1b9e77\"/>"
    << "<text x=\"" << left + 106 << "\" y=\"" << ly << "\">rho_dse</text>\n";
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------- pipeline

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Artifacts are reused only when a sidecar stamp holds the same inputs.
class Stage {
 public:
  Stage(const fs::path& artifact, nlohmann::json inputs, bool resume)
      : artifact_(artifact), stamp_(artifact.string() + ".stamp.json"), inputs_(std::move(inputs)) {
    if (!resume || !fs::exists(artifact_) || !fs::exists(stamp_)) return;
    try {
      fresh_ = nlohmann::json::parse(read_artifact(stamp_)) == inputs_;
    } catch (const nlohmann::json::exception&) {
      fresh_ = false;
    }
  }
  bool fresh() const { return fresh_; }
  void done() const { write_text_file(stamp_, inputs_.dump(2) + "\n"); }

 private:
  fs::path artifact_;
  fs::path stamp_;
  nlohmann::json inputs_;
  bool fresh_ = false;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string fmt(const Correlation& c) { return c.value ? fmt(*c.value) : ""; }

struct GeneratorRun {
  std::string variant;
  std::uint64_t seed = 0;
  GeneratorConfig cfg;
};

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

nlohmann::json run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const fs::path dir = cfg.run_dir;
  fs::create_directories(dir / "generators");
  auto say = [&](const std::string& msg) {
    if (log) *log << "[run] " << msg << std::endl;
  };
  nlohmann::json timings = nlohmann::json::object();
  const nlohmann::json echo = cfg.to_json();

  // data
  Stopwatch clock;
  std::vector<Graph> dataset;
  const fs::path data_file = dir / "dataset.txt";
  {
    nlohmann::json inputs = echo["data"];
    if (!cfg.data_path.empty()) inputs["sha1"] = git_blob_sha1(read_artifact(cfg.data_path, "dse_cli gen-data"));
    Stage stage(data_file, inputs, cfg.resume);
    if (stage.fresh()) {
      dataset = load_dataset(data_file.string());
      say("data: reused " + std::to_string(dataset.size()) + " graphs");
    } else {
      if (!cfg.data_path.empty()) {
        dataset = parse_dataset(read_artifact(cfg.data_path, "dse_cli gen-data"));
      } else {
        dataset = generate_dataset(cfg.data);
        write_text_file(dir / "dataset_manifest.json", dataset_manifest(cfg.data, dataset).dump(2) + "\n");
      }
      save_dataset(data_file.string(), dataset);
      stage.done();
      say("data: " + std::to_string(dataset.size()) + " graphs");
    }
  }
  timings["data"] = clock.seconds();

  // predictor
  clock = Stopwatch();
  const fs::path pred_file = dir / "predictor.ckpt";
  Predictor model;
  nlohmann::json pred_meta;
  {
    nlohmann::json inputs = {{"data", git_blob_sha1(read_artifact(data_file))}, {"predictor", echo["predictor"]}};
    Stage stage(pred_file, inputs, cfg.resume);
    if (stage.fresh()) {
      const Checkpoint ckpt = load_checkpoint(pred_file.string());
      model = Predictor::from_checkpoint(ckpt);
      pred_meta = ckpt.metadata;
      say("predictor: reused");
    } else {
      say("predictor: training");
      TrainedPredictor trained = train_predictor(dataset, cfg.predictor);
      const Checkpoint ckpt = trained.checkpoint();
      save_checkpoint(pred_file.string(), ckpt);
      model = trained.model;
      pred_meta = ckpt.metadata;
      stage.done();
    }
  }
  auto [train_idx, test_idx] =
      split_indices(static_cast<int>(dataset.size()), cfg.predictor.test_fraction, derive_seed(cfg.predictor.seed, "split"));
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  const double test_accuracy = accuracy(model, dataset, test_idx);
  say("predictor: test accuracy " + fmt(test_accuracy));
  timings["predictor"] = clock.seconds();

  auto take = [&](const std::vector<int>& idx, int count) {
    std::vector<Graph> out;
    const std::size_t n = count > 0 ? std::min<std::size_t>(idx.size(), static_cast<std::size_t>(count)) : idx.size();
    for (std::size_t i = 0; i < n; ++i) out.push_back(dataset[static_cast<std::size_t>(idx[i])]);
    return out;
  };
  const std::vector<Graph> eval_set = take(test_idx, cfg.eval_graphs);
  const std::vector<Graph> train_set = take(train_idx, cfg.generator_train_graphs);
  if (static_cast<int>(eval_set.size()) < 2) throw EmptyInputError("evaluation split has fewer than two graphs");
  const std::string pred_sha = git_blob_sha1(read_artifact(pred_file));

  // OOD gap over the test split
  clock = Stopwatch();
  nlohmann::json ood;
  {
    const std::vector<Graph> ood_set = take(test_idx, cfg.ood_graphs);
    std::vector<double> full, removal;
    for (const Graph& g : ood_set) {
      if (!g.ground_truth()) continue;
      full.push_back(model.forward(g)(g.label()));
      removal.push_back(importance_removal(model, mask_from_selection(g, *g.ground_truth()), g, g.label()));
    }
    ood = {{"graphs", full.size()},
           {"mean_full_probability", mean_of(full)},
           {"mean_imp_re_ground_truth", mean_of(removal)},
           {"gap", mean_of(full) - mean_of(removal)}};
  }
  timings["ood"] = clock.seconds();

  // explanations
  clock = Stopwatch();
  const fs::path masks_file = dir / "masks.jsonl";
  std::vector<MaskRecord> masks;
  {
    nlohmann::json inputs = {{"predictor", pred_sha}, {"explainers", echo["explainers"]}, {"eval_graphs", cfg.eval_graphs}};
    Stage stage(masks_file, inputs, cfg.resume);
    if (stage.fresh()) {
      masks = load_masks(masks_file);
      say("explain: reused " + std::to_string(masks.size()) + " masks");
    } else {
      say("explain: " + std::to_string(eval_set.size()) + " graphs x " + std::to_string(cfg.explainers.size()) +
          " explainers");
      for (const Graph& g : eval_set) {
        for (ExplainerKind kind : cfg.explainers) {
          ExplainerConfig ec = cfg.explainer;
          ec.kind = kind;
          masks.push_back({g.id(), std::string(explainer_name(kind)), explain(model, g, g.label(), ec)});
        }
      }
      std::sort(masks.begin(), masks.end(), [](const MaskRecord& a, const MaskRecord& b) {
        return std::tie(a.graph_id, a.explainer) < std::tie(b.graph_id, b.explainer);
      });
      save_masks(masks_file, masks);
      stage.done();
    }
  }
  timings["explain"] = clock.seconds();

  // generators
  clock = Stopwatch();
  std::vector<GeneratorRun> runs;
  for (std::uint64_t seed : cfg.generator_seeds) {
    GeneratorConfig base = cfg.generator;
    base.seed = seed;
    GeneratorConfig no_c = base;
    no_c.contrastive_weight = 0.0;
    GeneratorConfig no_gp = base;
    no_gp.penalty_weight = 0.0;
    GeneratorConfig vgae = base;
    vgae.contrastive_weight = 0.0;
    vgae.adversarial_weight = 0.0;
    runs.push_back({"cvgae", seed, base});
    runs.push_back({"no_contrastive", seed, no_c});
    runs.push_back({"no_penalty", seed, no_gp});
    runs.push_back({"vgae", seed, vgae});
  }
  const std::string data_sha = git_blob_sha1(read_artifact(data_file));
  std::set<std::string> used_tags;  // only these checkpoints go into the manifest
  auto train_or_load = [&](const std::string& tag, const GeneratorConfig& gc, const std::vector<Graph>& graphs,
                           int train_graphs) {
    const fs::path file = dir / "generators" / (tag + ".ckpt");
    used_tags.insert(tag);
    nlohmann::json inputs = {{"data", data_sha},
                             {"split", {{"test_fraction", cfg.predictor.test_fraction}, {"seed", cfg.predictor.seed}}},
                             {"train_graphs", train_graphs},
                             {"generator", gc.to_json()}};
    Stage stage(file, inputs, cfg.resume);
    if (stage.fresh()) {
      say("generator " + tag + ": reused");
      Cvgae gen = Cvgae::from_checkpoint(load_checkpoint(file.string()));
      gen.set_name(tag);
      return gen;
    }
    say("generator " + tag + ": training on " + std::to_string(graphs.size()) + " graphs");
    Stopwatch t;
    TrainedGenerator trained = train_generator(graphs, gc);
    trained.generator.set_name(tag);
    save_checkpoint(file.string(), trained.generator.to_checkpoint());
    save_checkpoint((dir / "generators" / (tag + ".critic.ckpt")).string(), trained.critic.to_checkpoint());
    write_text_file(dir / "generators" / (tag + ".losses.csv"), losses_csv(trained.history));
    stage.done();
    say("generator " + tag + ": " + fmt(t.seconds()) + " s");
    return trained.generator;
  };
  std::map<std::string, Cvgae> trained;
  for (const GeneratorRun& r : runs) {
    const std::string tag = r.variant + "_s" + std::to_string(r.seed);
    trained.emplace(tag, train_or_load(tag, r.cfg, train_set, cfg.generator_train_graphs));
  }
  const std::string main_tag = "cvgae_s" + std::to_string(cfg.generator_seeds.front());
  const Cvgae& main_gen = trained.at(main_tag);
  write_text_file(dir / "losses.csv", read_artifact(dir / "generators" / (main_tag + ".losses.csv")));
  timings["generators"] = clock.seconds();

  // importance records under the main generator
  clock = Stopwatch();
  const fs::path records_file = dir / "records.jsonl";
  std::vector<ImportanceRecord> records;
  {
    nlohmann::json inputs = {{"masks", git_blob_sha1(read_artifact(masks_file))},
                             {"predictor", pred_sha},
                             {"generator", git_blob_sha1(read_artifact(dir / "generators" / (main_tag + ".ckpt")))},
                             {"dse", echo["dse"]["config"]}};
    Stage stage(records_file, inputs, cfg.resume);
    if (stage.fresh()) {
      records = load_records(records_file);
      say("evaluate: reused " + std::to_string(records.size()) + " records");
    } else {
      say("evaluate: " + std::to_string(masks.size()) + " masks");
      records = evaluate_all(dataset, masks, model, main_gen, cfg.dse);
      save_records(records_file, records);
      stage.done();
    }
  }
  timings["evaluate"] = clock.seconds();

  // generator metrics on matched streams
  clock = Stopwatch();
  const ConstantGenerator random_gen("random", edge_density(train_set));
  const ConstantGenerator identity_gen("identity", 0.0);
  auto metrics_of = [&](const std::string& tag, const SurrogateGenerator& gen, const std::vector<Graph>& graphs,
                        const DseConfig& dc, const std::string& gen_sha) {
    const fs::path file = dir / "generators" / (tag + ".metrics.json");
    nlohmann::json inputs = {{"predictor", pred_sha},     {"generator", gen_sha}, {"graphs", graphs.size()},
                             {"dse", dc.to_json()},       {"fid_masks", cfg.fid_masks},
                             {"ratio", cfg.explainer.mask_ratio}};
    Stage stage(file, inputs, cfg.resume);
    if (stage.fresh()) return nlohmann::json::parse(read_artifact(file));
    const nlohmann::json m = {{"val", val_metric(graphs, gen, model, dc)},
                              {"fid", fid_metric(graphs, gen, model, cfg.fid_masks, cfg.explainer.mask_ratio, dc)}};
    write_text_file(file, m.dump(2) + "\n");
    stage.done();
    say("metrics " + tag + ": VAL " + fmt(m["val"].get<double>()) + " FID " + fmt(m["fid"].get<double>()));
    return m;
  };
  nlohmann::json generators = nlohmann::json::array();
  for (const GeneratorRun& r : runs) {
    const std::string tag = r.variant + "_s" + std::to_string(r.seed);
    const nlohmann::json m = metrics_of(tag, trained.at(tag), eval_set, cfg.dse,
                                        git_blob_sha1(read_artifact(dir / "generators" / (tag + ".ckpt"))));
    generators.push_back({{"variant", r.variant}, {"seed", r.seed}, {"val", m["val"]}, {"fid", m["fid"]}});
  }
  for (const ConstantGenerator* gen : {&random_gen, &identity_gen}) {
    const nlohmann::json m =
        metrics_of(gen->name(), *gen, eval_set, cfg.dse, "constant:" + fmt(gen->probability()));
    generators.push_back({{"variant", gen->name()}, {"seed", nullptr}, {"val", m["val"]}, {"fid", m["fid"]}});
  }
  timings["generator_metrics"] = clock.seconds();

  // sensitivity sweep
  clock = Stopwatch();
  nlohmann::json sensitivity = nlohmann::json::array();
  if (cfg.sweep.enabled) {
    std::vector<std::pair<double, double>> cells;  // (lambda, gamma)
    if (cfg.sweep.mode == "grid") {
      for (double l : cfg.sweep.lambdas)
        for (double g : cfg.sweep.gammas) cells.emplace_back(l, g);
    } else {
      for (double l : cfg.sweep.lambdas) cells.emplace_back(l, cfg.generator.contrastive_weight);
      for (double g : cfg.sweep.gammas) cells.emplace_back(cfg.generator.penalty_weight, g);
    }
    const int sweep_train = cfg.sweep.train_graphs > 0 ? cfg.sweep.train_graphs : cfg.generator_train_graphs;
    const std::vector<Graph> sweep_train_set = take(train_idx, sweep_train);
    const std::vector<Graph> sweep_eval(eval_set.begin(),
                                        eval_set.begin() + std::min<std::ptrdiff_t>(eval_set.size(), cfg.sweep.eval_graphs));
    DseConfig dc = cfg.dse;
    dc.num_surrogates = cfg.sweep.num_surrogates;
    for (const auto& [lambda, gamma] : cells) {
      GeneratorConfig gc = cfg.generator;
      gc.seed = cfg.generator_seeds.front();
      gc.penalty_weight = lambda;
      gc.contrastive_weight = gamma;
      if (cfg.sweep.max_epochs > 0) gc.max_epochs = cfg.sweep.max_epochs;
      const std::string tag = "sweep_l" + fmt(lambda) + "_g" + fmt(gamma);
      const Cvgae gen = train_or_load(tag, gc, sweep_train_set, sweep_train);
      const nlohmann::json m =
          metrics_of(tag, gen, sweep_eval, dc, git_blob_sha1(read_artifact(dir / "generators" / (tag + ".ckpt"))));
      sensitivity.push_back({{"lambda", lambda}, {"gamma", gamma}, {"val", m["val"]}, {"fid", m["fid"]}});
    }
  }
  timings["sweep"] = clock.seconds();

  // explainer-level metrics
  const std::vector<ExplainerSummary> summaries = rho_comparison(dataset, masks, records);
  std::vector<std::string> names;
  std::vector<double> mean_prec, mean_re, mean_dse;
  nlohmann::json explainer_rows = nlohmann::json::array();
  for (const ExplainerSummary& s : summaries) {
    names.push_back(s.explainer);
    mean_prec.push_back(s.mean_precision);
    mean_re.push_back(s.mean_imp_re);
    mean_dse.push_back(s.mean_imp_dse);
    explainer_rows.push_back({{"explainer", s.explainer},
                              {"graphs", s.graph_ids.size()},
                              {"precision", s.precision},
                              {"imp_re", s.imp_re},
                              {"imp_dse", s.imp_dse},
                              {"imp_dse_deletion", s.imp_dse_deletion},
                              {"mean_precision", s.mean_precision},
                              {"mean_imp_re", s.mean_imp_re},
                              {"mean_imp_dse", s.mean_imp_dse},
                              {"rho_re", s.rho_re.to_json()},
                              {"rho_dse", s.rho_dse.to_json()},
                              {"rho_deletion", s.rho_deletion.to_json()}});
  }
  const Correlation spearman_re = try_spearman(mean_re, mean_prec);
  const Correlation spearman_dse = try_spearman(mean_dse, mean_prec);

  // ground truth versus random masks under the main generator
  double gt_dse = 0.0, gt_re = 0.0;
  for (const Graph& g : eval_set) {
    gt_re += importance_removal(model, mask_from_selection(g, *g.ground_truth()), g, g.label());
  }
  gt_re /= static_cast<double>(eval_set.size());
  for (const auto& row : generators) {
    if (row["variant"] == "cvgae" && row["seed"] == cfg.generator_seeds.front()) gt_dse = gt_re + row["val"].get<double>();
  }
  double random_dse = 0.0;
  int random_count = 0;
  for (const ImportanceRecord& r : records) {
    if (r.explainer == "random") {
      random_dse += r.imp_dse;
      ++random_count;
    }
  }

  nlohmann::json report = {
      {"config", echo},
      {"seeds",
       {{"data", cfg.data.seed},
        {"predictor", cfg.predictor.seed},
        {"generators", cfg.generator_seeds},
        {"explainers", cfg.explainer.seed},
        {"dse", cfg.dse.seed}}},
      {"metadata",
       {{"correlation", "pearson"},
        {"rank_correlation", "spearman with average ranks"},
        {"ranking_aggregation", "mean over evaluation graphs"},
        {"target_class", "graph label"},
        {"main_generator", main_tag},
        {"estimator", estimator_name(cfg.dse.estimator)}}},
      {"predictor",
       {{"test_accuracy", test_accuracy},
        {"test_graphs", test_idx.size()},
        {"train_accuracy", pred_meta.value("train_accuracy", nlohmann::json())}}},
      {"ood", ood},
      {"explainers", explainer_rows},
      {"rankings",
       {{"precision", ranking(names, mean_prec)}, {"imp_re", ranking(names, mean_re)}, {"imp_dse", ranking(names, mean_dse)}}},
      {"spearman_re", spearman_re.to_json()},
      {"spearman_dse", spearman_dse.to_json()},
      {"ground_truth",
       {{"graphs", eval_set.size()},
        {"mean_imp_re", gt_re},
        {"mean_imp_dse", gt_dse},
        {"mean_imp_dse_random_masks", random_count ? nlohmann::json(random_dse / random_count) : nlohmann::json()}}},
      {"generators", generators},
      {"sensitivity", sensitivity}};

  // tables
  {
    std::ostringstream t2;
    t2 << "explainer,graphs,mean_precision,mean_imp_re,mean_imp_dse,rho_re,rho_dse,rho_deletion,rank_precision,"
          "rank_re,rank_dse\n";
    auto rank_pos = [&](const std::vector<double>& values, const std::string& name) {
      const auto order = ranking(names, values);
      return std::find(order.begin(), order.end(), name) - order.begin() + 1;
    };
    for (const ExplainerSummary& s : summaries) {
      t2 << s.explainer << ',' << s.graph_ids.size() << ',' << fmt(s.mean_precision) << ',' << fmt(s.mean_imp_re)
         << ',' << fmt(s.mean_imp_dse) << ',' << fmt(s.rho_re) << ',' << fmt(s.rho_dse) << ','
         << fmt(s.rho_deletion) << ',' << rank_pos(mean_prec, s.explainer) << ',' << rank_pos(mean_re, s.explainer)
         << ',' << rank_pos(mean_dse, s.explainer) << '\n';
    }
    t2 << "spearman_vs_precision,,,,," << fmt(spearman_re) << ',' << fmt(spearman_dse) << ",,,,\n";
    write_text_file(dir / "table2.csv", t2.str());

    std::ostringstream t3;
    t3 << "quantity,value\n";
    t3 << "graphs," << ood["graphs"].get<std::size_t>() << '\n';
    t3 << "mean_full_probability," << fmt(ood["mean_full_probability"].get<double>()) << '\n';
    t3 << "mean_imp_re_ground_truth," << fmt(ood["mean_imp_re_ground_truth"].get<double>()) << '\n';
    t3 << "gap," << fmt(ood["gap"].get<double>()) << '\n';
    t3 << "mean_imp_dse_ground_truth_eval," << fmt(gt_dse) << '\n';
    write_text_file(dir / "table3.csv", t3.str());

    std::ostringstream t4, ab;
    t4 << "generator,seed,val,fid\n";
    ab << "variant,seed,val,fid\n";
    for (const auto& row : generators) {
      const std::string seed = row["seed"].is_null() ? "" : std::to_string(row["seed"].get<std::uint64_t>());
      const std::string line = row["variant"].get<std::string>() + ',' + seed + ',' + fmt(row["val"].get<double>()) +
                               ',' + fmt(row["fid"].get<double>()) + '\n';
      const std::string v = row["variant"];
      if (v == "cvgae" || v == "vgae" || v == "random" || v == "identity") t4 << line;
      if (v == "cvgae" || v == "no_contrastive" || v == "no_penalty") ab << line;
    }
    write_text_file(dir / "table4.csv", t4.str());
    write_text_file(dir / "ablation.csv", ab.str());

    std::ostringstream sens;
    sens << "lambda,gamma,val,fid\n";
    for (const auto& row : sensitivity) {
      sens << fmt(row["lambda"].get<double>()) << ',' << fmt(row["gamma"].get<double>()) << ','
           << fmt(row["val"].get<double>()) << ',' << fmt(row["fid"].get<double>()) << '\n';
    }
    write_text_file(dir / "sensitivity.csv", sens.str());

    std::ostringstream f2;
    f2 << "explainer,rho_re,rho_dse\n";
    std::vector<double> re_vals, dse_vals;
    for (const ExplainerSummary& s : summaries) {
      f2 << s.explainer << ',' << fmt(s.rho_re) << ',' << fmt(s.rho_dse) << '\n';
      re_vals.push_back(s.rho_re.value.value_or(std::nan("")));
      dse_vals.push_back(s.rho_dse.value.value_or(std::nan("")));
    }
    write_text_file(dir / "fig2.csv", f2.str());
    write_text_file(dir / "fig2.svg", fig2_svg(names, re_vals, dse_vals));
  }

  const std::string report_text = report.dump(2) + "\n";
  write_text_file(dir / "report.json", report_text);

  nlohmann::json manifest = nlohmann::json::object();
  std::vector<fs::path> hashed = {data_file, pred_file, masks_file, records_file, dir / "report.json"};
  if (!cfg.data_path.empty()) hashed.push_back(cfg.data_path);
  for (const std::string& tag : used_tags) {
    hashed.push_back(dir / "generators" / (tag + ".ckpt"));
    hashed.push_back(dir / "generators" / (tag + ".critic.ckpt"));
  }
  std::sort(hashed.begin(), hashed.end());
  for (const fs::path& p : hashed) {
    const std::string key = p.parent_path() == dir / "generators" ? "generators/" + p.filename().string()
                                                                   : p.filename().string();
    manifest["files"][key] = git_blob_sha1(read_artifact(p));
  }
  manifest["config"] = echo;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text_file(dir / "timings.json", timings.dump(2) + "\n");
  say("report written to " + (dir / "report.json").string());
  return report;
}

}  // namespace dse
