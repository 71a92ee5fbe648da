#include "experiment.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "error.hpp"
#include "parallel.hpp"

#ifndef MIXR_VERSION
#define MIXR_VERSION "0.0.0"
#endif

namespace mixr {

namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object with unknown-key rejection. Every error
// message starts with the field path.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [key, value] : obj_.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw ConfigError(where(key) + "unknown key");
      }
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& at(const std::string& key) const { return obj_.at(key); }
  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_number()) throw ConfigError(where(key) + "expected a number");
    return at(key).get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return as_count(at(key), path(key));
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_boolean()) throw ConfigError(where(key) + "expected true or false");
    return at(key).get<bool>();
  }

  std::optional<std::string> text(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_string()) throw ConfigError(where(key) + "expected a string");
    return at(key).get<std::string>();
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_array()) throw ConfigError(where(key) + "expected an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < at(key).size(); ++i) {
      out.push_back(as_count(at(key)[i], path(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  static std::uint64_t as_count(const json& v, const std::string& path) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(path + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

 private:
  std::string where(const std::string& key) const {
    const std::string p = key.empty() ? path_ : path(key);
    return (p.empty() ? std::string("config") : p) + ": ";
  }

  const json& obj_;
  std::string path_;
};

SyntheticSpec parse_synthetic(const Fields& f) {
  f.allow({"kind", "train", "val", "test", "noise", "seed", "dims", "label_dims", "degree", "segments",
           "clusters", "planted_k", "cluster_width", "slope_step", "eval_margin"});
  SyntheticSpec s;
  auto kind = f.text("kind");
  if (!kind) throw ConfigError(f.path("kind") + ": required");
  try {
    s.kind = parse_synthetic_kind(*kind);
  } catch (const Error& e) {
    throw ConfigError(f.path("kind") + ": " + e.what());
  }
  s.train_count = f.count("train", 0);
  s.val_count = f.count("val", 0);
  s.test_count = f.count("test", 0);
  s.noise = f.number("noise", 0.0);
  s.seed = f.count("seed", 0);
  s.dims = f.count("dims", s.dims);
  s.label_dims = f.count("label_dims", s.label_dims);
  s.degree = f.count("degree", s.degree);
  s.segments = f.count("segments", s.segments);
  s.clusters = f.count("clusters", s.clusters);
  s.planted_k = f.count("planted_k", s.planted_k);
  s.cluster_width = f.number("cluster_width", s.cluster_width);
  s.slope_step = f.number("slope_step", s.slope_step);
  s.eval_margin = f.number("eval_margin", s.eval_margin);
  if (s.noise < 0.0) throw ConfigError(f.path("noise") + ": must be non-negative");
  return s;
}

json synthetic_to_json(const SyntheticSpec& s) {
  return {{"kind", to_string(s.kind)},   {"train", s.train_count},       {"val", s.val_count},
          {"test", s.test_count},        {"noise", s.noise},             {"seed", s.seed},
          {"dims", s.dims},              {"label_dims", s.label_dims},   {"degree", s.degree},
          {"segments", s.segments},      {"clusters", s.clusters},       {"planted_k", s.planted_k},
          {"cluster_width", s.cluster_width}, {"slope_step", s.slope_step},
          {"eval_margin", s.eval_margin}};
}

DatasetSource parse_dataset(const Fields& f) {
  f.allow({"csv", "train_csv", "val_csv", "test_csv", "labels", "synthetic"});
  DatasetSource d;
  if (auto v = f.text("csv")) d.csv = *v;
  if (auto v = f.text("train_csv")) d.train_csv = *v;
  if (auto v = f.text("val_csv")) d.val_csv = *v;
  if (auto v = f.text("test_csv")) d.test_csv = *v;
  if (f.has("synthetic")) d.synthetic = parse_synthetic(Fields(f.at("synthetic"), f.path("synthetic")));
  if (f.has("labels")) {
    const auto& labels = f.at("labels");
    if (!labels.is_array() || labels.empty()) {
      throw ConfigError(f.path("labels") + ": expected a non-empty array of column names");
    }
    for (const auto& l : labels) {
      if (!l.is_string()) throw ConfigError(f.path("labels") + ": expected column names");
      d.labels.push_back(l.get<std::string>());
    }
  }
  const int sources = (d.csv ? 1 : 0) + (d.train_csv ? 1 : 0) + (d.synthetic ? 1 : 0);
  if (sources != 1) {
    throw ConfigError("dataset: set exactly one of csv, train_csv or synthetic");
  }
  if ((d.val_csv || d.test_csv) && !d.train_csv) {
    throw ConfigError("dataset.val_csv/test_csv: only valid together with dataset.train_csv");
  }
  if (!d.synthetic && d.labels.empty()) throw ConfigError("dataset.labels: required for CSV data");
  return d;
}

MethodSpec parse_method(const json& v, const std::string& path) {
  MethodSpec m;
  if (v.is_string()) {
    try {
      m.kind = parse_method_kind(v.get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(path + ": " + e.what());
    }
    return m;
  }
  Fields f(v, path);
  f.allow({"kind", "alpha", "lambda", "n_pairs", "eligible_layers", "tuner_budget"});
  auto kind = f.text("kind");
  if (!kind) throw ConfigError(f.path("kind") + ": required");
  try {
    m.kind = parse_method_kind(*kind);
  } catch (const Error& e) {
    throw ConfigError(f.path("kind") + ": " + e.what());
  }
  m.alpha = f.number("alpha", m.alpha);
  if (f.has("lambda")) m.fixed_lambda = f.number("lambda", 0.5);
  m.n_pairs = f.count("n_pairs", m.n_pairs);
  m.eligible_layers = f.counts("eligible_layers", m.eligible_layers);
  m.tuner_budget = f.count("tuner_budget", m.tuner_budget);
  return m;
}

json method_to_json(const MethodSpec& m) {
  json j{{"kind", to_string(m.kind)},
         {"alpha", m.alpha},
         {"n_pairs", m.n_pairs},
         {"eligible_layers", m.eligible_layers},
         {"tuner_budget", m.tuner_budget}};
  if (m.fixed_lambda) j["lambda"] = *m.fixed_lambda;
  return j;
}

void parse_search(const Fields& f, SearchConfig& s) {
  f.allow({"samples_per_iteration", "max_iterations", "patience", "improvement_threshold", "clip",
           "ppo_epochs", "entropy_weight", "baseline_weight", "controller_lr", "eps_loss",
           "common_model_seed", "final_evaluations", "controller"});
  s.samples_per_iteration = f.count("samples_per_iteration", s.samples_per_iteration);
  s.max_iterations = f.count("max_iterations", s.max_iterations);
  s.patience = f.count("patience", s.patience);
  s.improvement_threshold = f.number("improvement_threshold", s.improvement_threshold);
  s.clip = f.number("clip", s.clip);
  s.ppo_epochs = f.count("ppo_epochs", s.ppo_epochs);
  s.entropy_weight = f.number("entropy_weight", s.entropy_weight);
  s.baseline_weight = f.number("baseline_weight", s.baseline_weight);
  s.controller_lr = f.number("controller_lr", s.controller_lr);
  s.eps_loss = f.number("eps_loss", s.eps_loss);
  s.common_model_seed = f.flag("common_model_seed", s.common_model_seed);
  s.final_evaluations = f.count("final_evaluations", s.final_evaluations);
  if (f.has("controller")) {
    Fields c(f.at("controller"), f.path("controller"));
    c.allow({"input_length", "hidden"});
    s.controller.input_length = c.count("input_length", s.controller.input_length);
    s.controller.hidden = c.counts("hidden", s.controller.hidden);
    if (s.controller.input_length == 0) throw ConfigError(c.path("input_length") + ": must be positive");
  }
}

AnalysisConfig parse_analysis(const Fields& f) {
  f.allow({"bands", "pair_cap", "label_error", "band_study", "histogram", "model"});
  AnalysisConfig a;
  if (f.has("bands")) {
    const auto& b = f.at("bands");
    if (b.is_number()) {
      const auto n = Fields::as_count(b, f.path("bands"));
      if (n == 0) throw ConfigError(f.path("bands") + ": must be positive");
      a.bands = uniform_bands(n);
    } else if (b.is_array() && !b.empty()) {
      a.bands.clear();
      for (std::size_t i = 0; i < b.size(); ++i) {
        const std::string p = f.path("bands") + "[" + std::to_string(i) + "]";
        if (!b[i].is_array() || b[i].size() != 2 || !b[i][0].is_number() || !b[i][1].is_number()) {
          throw ConfigError(p + ": expected [lo, hi]");
        }
        DistanceBand band{b[i][0].get<double>(), b[i][1].get<double>()};
        if (!(band.lo >= 0.0 && band.lo < band.hi && band.hi <= 1.0)) {
          throw ConfigError(p + ": need 0 <= lo < hi <= 1");
        }
        a.bands.push_back(band);
      }
    } else {
      throw ConfigError(f.path("bands") + ": expected a band count or a list of [lo, hi]");
    }
  }
  a.pair_cap = f.count("pair_cap", a.pair_cap);
  if (a.pair_cap == 0) throw ConfigError(f.path("pair_cap") + ": must be positive");
  a.label_error = f.flag("label_error", a.label_error);
  a.band_study = f.flag("band_study", a.band_study);
  a.histogram = f.flag("histogram", a.histogram);
  if (auto m = f.text("model")) a.model = *m;
  return a;
}

MethodSpec method_of(MethodKind kind) {
  MethodSpec m;
  m.kind = kind;
  return m;
}

std::vector<MethodSpec> default_methods() {
  std::vector<MethodSpec> out;
  for (auto kind : {MethodKind::kNone, MethodKind::kOriginalMixup, MethodKind::kManifoldMixup,
                    MethodKind::kGlobalKnn, MethodKind::kMixr}) {
    out.push_back(method_of(kind));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Dataset require(const std::optional<Dataset>& d, const std::string& what, const std::string& command) {
  if (!d) throw ConfigError(command + " needs a non-empty " + what + " split");
  return *d;
}

json metrics_to_json(const Metrics& m) {
  return {{"rmse", m.rmse}, {"r2", m.r2}, {"rmse_per_dim", m.rmse_per_dim}, {"r2_per_dim", m.r2_per_dim},
          {"n", m.n}};
}

json result_to_json(const MethodResult& r) {
  json per_seed = json::array();
  for (const auto& m : r.per_seed) per_seed.push_back(metrics_to_json(m));
  return {{"method", r.method},         {"seeds", r.seeds},       {"per_seed", per_seed},
          {"rmse_mean", r.rmse_mean},   {"rmse_std", r.rmse_std}, {"r2_mean", r.r2_mean},
          {"r2_std", r.r2_std},         {"runtime_minutes", r.runtime_minutes}};
}

MixPolicy search_and_persist(const RunConfig& cfg, const PreparedData& data, const fs::path& out,
                             CommandOutcome& outcome) {
  const Dataset val = require(data.val, "validation", "search");
  const KnnOptions options = resolve_options(cfg, data.train.size());
  SearchConfig scfg = cfg.search;
  scfg.seed = cfg.seed;
  scfg.workers = cfg.workers;
  scfg.regression = cfg.regression;
  scfg.mix = cfg.mix;
  auto result = run_search(data.train, val, options, scfg, [](const IterationStats& s) {
    spdlog::info("iteration {}: mean loss {:.6g}, min loss {:.6g}, entropy {:.4g}", s.iteration,
                 s.mean_loss, s.min_loss, s.entropy);
  });

  const Matrix probs = softmax_rows(policy_logits(result.controller));
  std::vector<double> chosen(result.policy.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = probs(i, result.policy.choice(i));
  write_policy_csv(result.policy, chosen, out / "policy.csv");

  std::string trace = "iteration,mean_reward,max_reward,mean_loss,min_loss,baseline,entropy\n";
  for (const auto& s : result.reward_trace) {
    trace += std::to_string(s.iteration) + "," + number(s.mean_reward) + "," + number(s.max_reward) +
             "," + number(s.mean_loss) + "," + number(s.min_loss) + "," + number(s.baseline) + "," +
             number(s.entropy) + "\n";
  }
  write_text(out / "reward_trace.csv", trace);

  json controller{{"options", options.values()},
                  {"source", result.source},
                  {"validation_loss", result.validation_loss},
                  {"mode_loss", result.mode_loss},
                  {"best_sample_loss", result.best_sample_loss},
                  {"iterations", result.iterations},
                  {"network", json::parse(model_to_json(result.controller.body()))}};
  write_text(out / "controller.json", controller.dump(2) + "\n");

  outcome.artifacts["policy"] = "policy.csv";
  outcome.artifacts["reward_trace"] = "reward_trace.csv";
  outcome.artifacts["controller"] = "controller.json";
  return result.policy;
}

MixPolicy load_policy_for(const RunConfig& cfg, const PreparedData& data) {
  std::optional<KnnOptions> options;
  try {
    options = resolve_options(cfg, data.train.size());
  } catch (const Error&) {
    options.reset();
  }
  MixPolicy policy = [&] {
    try {
      return read_policy_csv(*cfg.policy, options);
    } catch (const InputError&) {
      return read_policy_csv(*cfg.policy);
    }
  }();
  if (policy.size() != data.train.size()) {
    throw InputError("policy file '" + cfg.policy->string() + "' has " + std::to_string(policy.size()) +
                     " rows but the training set has " + std::to_string(data.train.size()));
  }
  return policy;
}

}  // namespace

json load_config_document(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError("config file '" + path.string() + "': " + e.what());
  }
  if (doc.is_object() && doc.contains("tool") && doc.contains("config")) return doc.at("config");
  return doc;
}

RunConfig parse_run_config(const json& doc, const RunOverrides& overrides) {
  Fields root(doc, "");
  root.allow({"dataset", "split", "standardize", "model", "knn_options", "mix", "search", "methods",
              "analysis", "repeats", "seed", "workers", "policy"});
  RunConfig cfg;
  if (!root.has("dataset")) throw ConfigError("dataset: required");
  cfg.dataset = parse_dataset(Fields(root.at("dataset"), "dataset"));
  cfg.seed = root.count("seed", 0);
  cfg.workers = root.count("workers", 0);
  cfg.repeats = root.count("repeats", 5);
  if (cfg.repeats == 0) throw ConfigError("repeats: must be positive");

  if (root.has("split")) {
    Fields f(root.at("split"), "split");
    f.allow({"train", "val", "test", "seed"});
    cfg.split = SplitSpec{f.count("train", 0), f.count("val", 0), f.count("test", 0), f.count("seed", cfg.seed)};
    if (cfg.split->train_size == 0) throw ConfigError("split.train: must be positive");
  }
  if (root.has("standardize")) {
    Fields f(root.at("standardize"), "standardize");
    f.allow({"features", "labels"});
    cfg.standardize_features = f.flag("features", true);
    cfg.standardize_labels = f.flag("labels", false);
  }
  if (root.has("model")) {
    Fields f(root.at("model"), "model");
    f.allow({"hidden", "layer_norm", "lr", "batch_size", "epochs"});
    cfg.regression.hidden = f.counts("hidden", cfg.regression.hidden);
    for (auto h : cfg.regression.hidden) {
      if (h == 0) throw ConfigError("model.hidden: layer widths must be positive");
    }
    cfg.regression.layer_norm = f.flag("layer_norm", cfg.regression.layer_norm);
    cfg.regression.train.lr = f.number("lr", cfg.regression.train.lr);
    cfg.regression.train.batch_size = f.count("batch_size", cfg.regression.train.batch_size);
    cfg.regression.train.epochs = f.count("epochs", cfg.regression.train.epochs);
    if (!(cfg.regression.train.lr > 0.0)) throw ConfigError("model.lr: must be positive");
    if (cfg.regression.train.batch_size == 0) throw ConfigError("model.batch_size: must be positive");
    if (cfg.regression.train.epochs == 0) throw ConfigError("model.epochs: must be positive");
  }
  if (root.has("knn_options")) {
    Fields f(root.at("knn_options"), "knn_options");
    f.allow({"exponential", "linear", "values"});
    const int given = (f.has("exponential") ? 1 : 0) + (f.has("linear") ? 1 : 0) + (f.has("values") ? 1 : 0);
    if (given != 1) throw ConfigError("knn_options: set exactly one of exponential, linear or values");
    if (f.has("exponential")) {
      Fields e(f.at("exponential"), "knn_options.exponential");
      e.allow({"base", "max_exponent"});
      cfg.series = ExponentialSeries{e.count("base", 2), e.count("max_exponent", 7)};
    } else if (f.has("linear")) {
      Fields l(f.at("linear"), "knn_options.linear");
      l.allow({"step", "count"});
      cfg.series = LinearSeries{l.count("step", 10), l.count("count", 19)};
    } else {
      cfg.option_values = f.counts("values", {});
      try {
        KnnOptions check(*cfg.option_values);
      } catch (const Error& e) {
        throw ConfigError(std::string("knn_options.values: ") + e.what());
      }
    }
  }
  if (root.has("mix")) {
    Fields f(root.at("mix"), "mix");
    f.allow({"mode", "lambda", "alpha"});
    const std::string mode = f.text("mode").value_or("fixed");
    if (mode == "fixed") {
      cfg.mix.mode = MixConfig::Mode::kFixed;
    } else if (mode == "beta") {
      cfg.mix.mode = MixConfig::Mode::kBeta;
    } else {
      throw ConfigError("mix.mode: expected \"fixed\" or \"beta\"");
    }
    cfg.mix.lambda = f.number("lambda", cfg.mix.lambda);
    cfg.mix.alpha = f.number("alpha", cfg.mix.alpha);
    try {
      cfg.mix.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("mix: ") + e.what());
    }
  }
  if (root.has("search")) parse_search(Fields(root.at("search"), "search"), cfg.search);
  try {
    cfg.search.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("search: ") + e.what());
  }

  std::vector<MethodKind> explicit_layers;
  if (root.has("methods")) {
    const auto& m = root.at("methods");
    if (!m.is_array() || m.empty()) throw ConfigError("methods: expected a non-empty array");
    for (std::size_t i = 0; i < m.size(); ++i) {
      cfg.methods.push_back(parse_method(m[i], "methods[" + std::to_string(i) + "]"));
      if (m[i].is_object() && m[i].contains("eligible_layers")) explicit_layers.push_back(cfg.methods.back().kind);
    }
  } else {
    cfg.methods = default_methods();
  }
  if (root.has("analysis")) cfg.analysis = parse_analysis(Fields(root.at("analysis"), "analysis"));
  if (auto p = root.text("policy")) cfg.policy = *p;

  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.workers) cfg.workers = *overrides.workers;
  if (overrides.policy) cfg.policy = *overrides.policy;
  if (!overrides.methods.empty()) {
    std::vector<MethodSpec> chosen;
    for (const auto& name : overrides.methods) {
      const MethodKind kind = parse_method_kind(name);
      auto it = std::ranges::find_if(cfg.methods, [&](const MethodSpec& s) { return s.kind == kind; });
      chosen.push_back(it != cfg.methods.end() ? *it : method_of(kind));
    }
    cfg.methods = std::move(chosen);
  }
  const std::size_t layers = cfg.regression.hidden.size() + 1;
  for (auto& method : cfg.methods) {
    // Default eligible layers shrink to fit shallow models.
    if (std::ranges::find(explicit_layers, method.kind) == explicit_layers.end()) {
      std::erase_if(method.eligible_layers, [&](std::size_t l) { return l >= layers; });
    }
  }
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    try {
      cfg.methods[i].validate(layers);
    } catch (const Error& e) {
      throw ConfigError("methods[" + std::to_string(i) + "]: " + e.what());
    }
  }
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json dataset = json::object();
  if (cfg.dataset.csv) dataset["csv"] = cfg.dataset.csv->string();
  if (cfg.dataset.train_csv) dataset["train_csv"] = cfg.dataset.train_csv->string();
  if (cfg.dataset.val_csv) dataset["val_csv"] = cfg.dataset.val_csv->string();
  if (cfg.dataset.test_csv) dataset["test_csv"] = cfg.dataset.test_csv->string();
  if (!cfg.dataset.labels.empty()) dataset["labels"] = cfg.dataset.labels;
  if (cfg.dataset.synthetic) dataset["synthetic"] = synthetic_to_json(*cfg.dataset.synthetic);

  json j{{"dataset", dataset},
         {"standardize", {{"features", cfg.standardize_features}, {"labels", cfg.standardize_labels}}},
         {"model",
          {{"hidden", cfg.regression.hidden},
           {"layer_norm", cfg.regression.layer_norm},
           {"lr", cfg.regression.train.lr},
           {"batch_size", cfg.regression.train.batch_size},
           {"epochs", cfg.regression.train.epochs}}},
         {"repeats", cfg.repeats},
         {"seed", cfg.seed},
         {"workers", cfg.workers}};
  if (cfg.split) {
    j["split"] = {{"train", cfg.split->train_size},
                  {"val", cfg.split->val_size},
                  {"test", cfg.split->test_size},
                  {"seed", cfg.split->seed}};
  }
  if (cfg.option_values) {
    j["knn_options"] = {{"values", *cfg.option_values}};
  } else if (const auto* e = std::get_if<ExponentialSeries>(&cfg.series)) {
    j["knn_options"] = {{"exponential", {{"base", e->base}, {"max_exponent", e->max_exponent}}}};
  } else {
    const auto& l = std::get<LinearSeries>(cfg.series);
    j["knn_options"] = {{"linear", {{"step", l.step}, {"count", l.count}}}};
  }
  j["mix"] = {{"mode", cfg.mix.mode == MixConfig::Mode::kFixed ? "fixed" : "beta"},
              {"lambda", cfg.mix.lambda},
              {"alpha", cfg.mix.alpha}};
  const auto& s = cfg.search;
  j["search"] = {{"samples_per_iteration", s.samples_per_iteration},
                 {"max_iterations", s.max_iterations},
                 {"patience", s.patience},
                 {"improvement_threshold", s.improvement_threshold},
                 {"clip", s.clip},
                 {"ppo_epochs", s.ppo_epochs},
                 {"entropy_weight", s.entropy_weight},
                 {"baseline_weight", s.baseline_weight},
                 {"controller_lr", s.controller_lr},
                 {"eps_loss", s.eps_loss},
                 {"common_model_seed", s.common_model_seed},
                 {"final_evaluations", s.final_evaluations},
                 {"controller", {{"input_length", s.controller.input_length}, {"hidden", s.controller.hidden}}}};
  j["methods"] = json::array();
  for (const auto& m : cfg.methods) j["methods"].push_back(method_to_json(m));
  json bands = json::array();
  for (const auto& b : cfg.analysis.bands) bands.push_back({b.lo, b.hi});
  j["analysis"] = {{"bands", bands},
                   {"pair_cap", cfg.analysis.pair_cap},
                   {"label_error", cfg.analysis.label_error},
                   {"band_study", cfg.analysis.band_study},
                   {"histogram", cfg.analysis.histogram}};
  if (cfg.analysis.model) j["analysis"]["model"] = cfg.analysis.model->string();
  if (cfg.policy) j["policy"] = cfg.policy->string();
  return j;
}

PreparedData prepare_data(const RunConfig& cfg) {
  const auto& src = cfg.dataset;
  for (const auto* p : {&src.csv, &src.train_csv, &src.val_csv, &src.test_csv}) {
    if (*p && !fs::exists(**p)) throw IoError("dataset file '" + (*p)->string() + "' does not exist");
  }
  Splits parts = [&] {
    if (src.synthetic) {
      Dataset data = generate_synthetic(*src.synthetic);
      return cfg.split ? split(data, *cfg.split) : split_preset(data);
    }
    if (src.csv) {
      Dataset data = load_csv(*src.csv, src.labels);
      SplitSpec spec;
      if (cfg.split) {
        spec = *cfg.split;
      } else {
        spec.train_size = data.size() * 6 / 10;
        spec.val_size = data.size() * 2 / 10;
        spec.test_size = data.size() - spec.train_size - spec.val_size;
        spec.seed = cfg.seed;
      }
      return split(data, spec);
    }
    Splits s{load_csv(*src.train_csv, src.labels), std::nullopt, std::nullopt, {}, {}, {}};
    if (src.val_csv) s.val = load_csv(*src.val_csv, src.labels);
    if (src.test_csv) s.test = load_csv(*src.test_csv, src.labels);
    return s;
  }();

  PreparedData out{parts.train, parts.train, parts.val, parts.test};
  if (cfg.standardize_features || cfg.standardize_labels) {
    Dataset fitted = standardize(parts.train, cfg.standardize_labels);
    Standardization stats = *fitted.standardization();
    if (!cfg.standardize_features) {
      // Identity statistics for features; only labels are rescaled.
      stats.kept_features = parts.train.feature_names();
      stats.dropped_features.clear();
      stats.features.assign(parts.train.feature_dim(), ColumnStats{});
      fitted = apply_standardization(parts.train, stats);
    }
    out.train = fitted;
    if (parts.val) out.val = apply_standardization(*parts.val, stats);
    if (parts.test) out.test = apply_standardization(*parts.test, stats);
  }
  return out;
}

KnnOptions resolve_options(const RunConfig& cfg, std::size_t train_size) {
  if (train_size < 2) throw InputError("kNN mixing needs at least two training examples");
  if (cfg.option_values) {
    KnnOptions options(*cfg.option_values);
    if (options.max() > train_size - 1) {
      throw InputError("knn option " + std::to_string(options.max()) + " exceeds S-1 = " +
                       std::to_string(train_size - 1));
    }
    return options;
  }
  return option_series(cfg.series, train_size - 1);
}

void write_policy_csv(const MixPolicy& policy, const std::vector<double>& probability,
                      const fs::path& path) {
  if (!probability.empty() && probability.size() != policy.size()) {
    throw InputError("write_policy_csv: probability length does not match the policy");
  }
  std::string text = "example_id,chosen_k,probability\n";
  for (std::size_t i = 0; i < policy.size(); ++i) {
    text += std::to_string(i) + "," + std::to_string(policy.k(i)) + "," +
            (probability.empty() ? std::string() : number(probability[i])) + "\n";
  }
  write_text(path, text);
}

MixPolicy read_policy_csv(const fs::path& path, const std::optional<KnnOptions>& options) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read policy file '" + path.string() + "'");
  std::string line;
  if (!std::getline(f, line) || line.rfind("example_id,chosen_k", 0) != 0) {
    throw ParseError(path.string() + ":1: expected header 'example_id,chosen_k,probability'");
  }
  std::vector<std::size_t> counts;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id;
    std::string k;
    std::getline(row, id, ',');
    std::getline(row, k, ',');
    try {
      std::size_t used = 0;
      const auto parsed_id = std::stoull(id, &used);
      if (used != id.size() || parsed_id != counts.size()) throw std::invalid_argument("id");
      const auto parsed_k = std::stoull(k, &used);
      if (used != k.size()) throw std::invalid_argument("k");
      counts.push_back(parsed_k);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected consecutive example ids and a non-negative chosen_k");
    }
  }
  if (counts.empty()) throw ParseError(path.string() + ": policy file has no rows");
  if (options) return MixPolicy::from_counts(counts, *options);
  std::set<std::size_t> values(counts.begin(), counts.end());
  values.insert(0);
  return MixPolicy::from_counts(counts, KnnOptions({values.begin(), values.end()}));
}

std::string render_results_table(const std::vector<MethodResult>& results) {
  std::size_t width = 6;
  for (const auto& r : results) width = std::max(width, r.method.size());
  auto pad = [](std::string s, std::size_t n) {
    s.resize(std::max(n, s.size()), ' ');
    return s;
  };
  std::string out = pad("Method", width) + "  " + pad("RMSE", 17) + "  " + pad("R2", 17) + "  Runtime (mins)\n";
  char buf[128];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%.4f+-%.4f", r.rmse_mean, r.rmse_std);
    std::string rmse_cell = buf;
    std::snprintf(buf, sizeof buf, "%.4f+-%.4f", r.r2_mean, r.r2_std);
    std::string r2_cell = buf;
    std::snprintf(buf, sizeof buf, "%.2f", r.runtime_minutes);
    out += pad(r.method, width) + "  " + pad(rmse_cell, 17) + "  " + pad(r2_cell, 17) + "  " + buf + "\n";
  }
  return out;
}

CommandOutcome cmd_search(const RunConfig& cfg, const fs::path& out) {
  CommandOutcome outcome;
  const PreparedData data = prepare_data(cfg);
  search_and_persist(cfg, data, out, outcome);
  return outcome;
}

CommandOutcome cmd_compare(const RunConfig& cfg, const fs::path& out) {
  CommandOutcome outcome;
  const PreparedData data = prepare_data(cfg);
  const Dataset test = require(data.test, "test", "compare");
  BaselineContext ctx{cfg.regression, cfg.repeats, cfg.seed, cfg.workers};

  std::optional<MixPolicy> policy;
  auto need_policy = [&]() -> const MixPolicy& {
    if (!policy) policy = cfg.policy ? load_policy_for(cfg, data) : search_and_persist(cfg, data, out, outcome);
    return *policy;
  };

  std::vector<MethodResult> results;
  json methods = json::array();
  fs::create_directories(out / "models");
  for (const auto& spec : cfg.methods) {
    const std::string name = to_string(spec.kind);
    spdlog::info("running method {}", name);
    try {
      json extra = json::object();
      MethodResult r;
      switch (spec.kind) {
        case MethodKind::kNone:
          r = run_no_augmentation(data.train, test, ctx);
          break;
        case MethodKind::kOriginalMixup:
          r = run_original_mixup(data.train, test, spec, ctx);
          break;
        case MethodKind::kManifoldMixup:
          r = run_manifold_mixup(data.train, test, spec, ctx);
          break;
        case MethodKind::kGlobalKnn: {
          auto g = run_global_knn(data.train, require(data.val, "validation", "global_knn"), test, spec, ctx);
          r = std::move(g.result);
          extra["best_k"] = g.best_k;
          extra["tried"] = json::array();
          for (auto [k, loss] : g.tried) extra["tried"].push_back({{"k", k}, {"val_loss", loss}});
          break;
        }
        case MethodKind::kMixr: {
          MixConfig mix = cfg.mix;
          r = run_mixr(data.train, test, need_policy(), ctx, mix);
          break;
        }
        case MethodKind::kMixrManifold:
          r = run_mixr_manifold(data.train, test, need_policy(), spec, ctx);
          break;
      }
      r.method = name;
      save_model(r.models.front(), out / "models" / (name + ".json"));
      json entry = result_to_json(r);
      entry["config"] = method_to_json(spec);
      entry.update(extra);
      methods.push_back(entry);
      outcome.artifacts["models/" + name] = "models/" + name + ".json";
      results.push_back(std::move(r));
    } catch (const std::exception& e) {
      spdlog::error("method {} failed: {}", name, e.what());
      outcome.complete = false;
      outcome.failures.push_back(name + ": " + e.what());
    }
  }
  json doc{{"methods", methods}, {"failures", outcome.failures}};
  write_text(out / "results.json", doc.dump(2) + "\n");
  write_text(out / "results.txt", render_results_table(results));
  outcome.artifacts["results"] = "results.json";
  outcome.artifacts["results_table"] = "results.txt";
  return outcome;
}

CommandOutcome cmd_augment(const RunConfig& cfg, const fs::path& out) {
  CommandOutcome outcome;
  if (!cfg.policy) throw ConfigError("policy: augment needs a policy file (--policy or config key policy)");
  const PreparedData data = prepare_data(cfg);
  const MixPolicy policy = load_policy_for(cfg, data);
  // Neighbors come from the working feature space; rows are mixed in the
  // original units, which is equivalent because standardization is affine.
  const KnnIndex index = build_index(data.train, cfg.workers);
  MixConfig mix = cfg.mix;
  mix.seed = derive_seed(cfg.seed, {7});
  const MixedSet mixed = mix_with_policy(data.raw_train, index, policy, mix);
  const Dataset augmented = augment(data.raw_train, mixed);

  Matrix provenance(augmented.size(), 3);
  for (std::size_t i = 0; i < data.raw_train.size(); ++i) {
    provenance(i, 0) = static_cast<double>(i);
    provenance(i, 1) = static_cast<double>(i);
    provenance(i, 2) = 1.0;
  }
  for (std::size_t m = 0; m < mixed.size(); ++m) {
    const std::size_t row = data.raw_train.size() + m;
    provenance(row, 0) = static_cast<double>(mixed.provenance[m].i);
    provenance(row, 1) = static_cast<double>(mixed.provenance[m].j);
    provenance(row, 2) = mixed.provenance[m].lambda;
  }
  write_csv(augmented, out / "augmented.csv", ExtraColumns{{"source_i", "source_j", "lambda"}, provenance});
  outcome.artifacts["augmented"] = "augmented.csv";
  return outcome;
}

CommandOutcome cmd_analyze(const RunConfig& cfg, const fs::path& out) {
  CommandOutcome outcome;
  const auto& a = cfg.analysis;
  if (a.label_error && !a.model) {
    throw ConfigError(
        "analysis.model: the label-error study needs a trained model; run `mixr compare` first and "
        "point analysis.model at one of its models/<method>.json files (or set analysis.label_error "
        "to false)");
  }
  const PreparedData data = prepare_data(cfg);
  fs::create_directories(out / "studies");
  if (a.histogram && cfg.policy) {
    write_histogram_csv(load_policy_for(cfg, data), out / "studies" / "policy_histogram.csv");
    outcome.artifacts["policy_histogram"] = "studies/policy_histogram.csv";
  }
  if (a.label_error) {
    const MlpModel model = load_model(*a.model);
    const KnnIndex index = build_index(data.train, cfg.workers);
    const DistanceStudy study = label_error_vs_distance(model, data.train, index, a.bands, cfg.seed, a.pair_cap);
    write_study_csv(study, out / "studies" / "label_error.csv");
    outcome.artifacts["label_error"] = "studies/label_error.csv";
  }
  if (a.band_study) {
    const Dataset test = require(data.test, "test", "analyze");
    const DistanceStudy study = distance_band_model_study(
        data.train, test, a.bands, BandStudyConfig{cfg.regression, cfg.repeats, cfg.seed, cfg.workers});
    write_study_csv(study, out / "studies" / "band_study.csv");
    outcome.artifacts["band_study"] = "studies/band_study.csv";
  }
  return outcome;
}

CommandOutcome cmd_gen_synthetic(const RunConfig& cfg, const fs::path& out) {
  CommandOutcome outcome;
  if (!cfg.dataset.synthetic) throw ConfigError("dataset.synthetic: gen-synthetic needs a synthetic spec");
  const Dataset data = generate_synthetic(*cfg.dataset.synthetic);
  const Splits parts = cfg.split ? split(data, *cfg.split) : split_preset(data);
  write_csv(parts.train, out / "train.csv");
  outcome.artifacts["train"] = "train.csv";
  if (parts.val) {
    write_csv(*parts.val, out / "val.csv");
    outcome.artifacts["val"] = "val.csv";
  }
  if (parts.test) {
    write_csv(*parts.test, out / "test.csv");
    outcome.artifacts["test"] = "test.csv";
  }
  return outcome;
}

CommandOutcome run_command(const std::string& command, const json& doc, const RunOverrides& overrides,
                           const fs::path& out) {
  using Handler = CommandOutcome (*)(const RunConfig&, const fs::path&);
  static const std::map<std::string, Handler> handlers{{"search", cmd_search},
                                                       {"compare", cmd_compare},
                                                       {"augment", cmd_augment},
                                                       {"analyze", cmd_analyze},
                                                       {"gen-synthetic", cmd_gen_synthetic}};
  auto it = handlers.find(command);
  if (it == handlers.end()) throw ConfigError("unknown command '" + command + "'");
  const RunConfig cfg = parse_run_config(doc, overrides);
  fs::create_directories(out);

  const auto start = std::chrono::steady_clock::now();
  CommandOutcome outcome = it->second(cfg, out);
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

  json manifest{{"tool", "mixr"},
                {"version", MIXR_VERSION},
                {"command", command},
                {"config", to_json(cfg)},
                {"seed", cfg.seed},
                {"workers", cfg.workers == 0 ? default_workers() : cfg.workers},
                {"artifacts", outcome.artifacts},
                {"complete", outcome.complete},
                {"failures", outcome.failures},
                {"wall_clock_minutes", minutes}};
  if (command == "compare") {
    json per_method = json::object();
    const json results = json::parse(std::ifstream(out / "results.json"));
    for (const auto& m : results.at("methods")) per_method[m.at("method").get<std::string>()] = m.at("runtime_minutes");
    manifest["method_wall_clock_minutes"] = per_method;
  }
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

}  // namespace mixr
