#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "error.hpp"
#include "experiment.hpp"
#include "support.hpp"

using namespace mixr;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return json::parse(R"({
    "dataset": {"synthetic": {"kind": "piecewise", "train": 16, "val": 8, "test": 8, "noise": 0.05, "seed": 2}},
    "model": {"hidden": [4], "lr": 0.01, "batch_size": 8, "epochs": 5},
    "knn_options": {"values": [0, 1, 2]},
    "search": {"samples_per_iteration": 2, "max_iterations": 2, "final_evaluations": 1,
               "controller_lr": 0.01, "controller": {"input_length": 2, "hidden": [4]}},
    "methods": [{"kind": "none"}, {"kind": "mixr"}],
    "repeats": 2,
    "seed": 5
  })");
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mixr_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string config_error(const json& doc) {
  try {
    parse_run_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::size_t count_lines(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

json read_json(const fs::path& path) { return json::parse(std::ifstream(path)); }

}  // namespace

TEST_CASE("config errors name the field path") {
  auto doc = small_config();
  doc["search"]["clip"] = 1.5;
  CHECK(config_error(doc).find("search.clip") != std::string::npos);

  doc = small_config();
  doc["model"]["epochs"] = -1;
  CHECK(config_error(doc).rfind("model.epochs:", 0) == 0);

  doc = small_config();
  doc["methods"][1]["kind"] = "cutmix";
  CHECK(config_error(doc).rfind("methods[1].kind:", 0) == 0);

  doc = small_config();
  doc["dataset"]["synthetic"]["noise"] = "loud";
  CHECK(config_error(doc).rfind("dataset.synthetic.noise:", 0) == 0);

  doc = small_config();
  doc.erase("dataset");
  CHECK(config_error(doc).rfind("dataset:", 0) == 0);

  doc = small_config();
  doc["methods"] = json::array({{{"kind", "manifold_mixup"}, {"eligible_layers", {0, 5}}}});
  CHECK(config_error(doc).rfind("methods[0]:", 0) == 0);
}

TEST_CASE("unknown keys are rejected") {
  auto doc = small_config();
  doc["search"]["cliip"] = 0.2;
  CHECK(config_error(doc) == "search.cliip: unknown key");
  doc = small_config();
  doc["colour"] = 1;
  CHECK(config_error(doc) == "colour: unknown key");
}

TEST_CASE("config round trips through to_json") {
  auto cfg = parse_run_config(small_config());
  CHECK(cfg.search.samples_per_iteration == 2);
  CHECK(cfg.regression.hidden == std::vector<std::size_t>{4});
  CHECK(cfg.methods.size() == 2);
  auto again = parse_run_config(to_json(cfg));
  CHECK(to_json(again) == to_json(cfg));
}

TEST_CASE("default eligible layers fit shallow models") {
  auto doc = small_config();
  doc["methods"] = json::array({{{"kind", "manifold_mixup"}}});
  auto cfg = parse_run_config(doc);
  CHECK(cfg.methods[0].eligible_layers == std::vector<std::size_t>{0, 1});
}

TEST_CASE("overrides replace config values") {
  RunOverrides o;
  o.seed = 9;
  o.workers = 3;
  o.methods = {"original_mixup"};
  auto cfg = parse_run_config(small_config(), o);
  CHECK(cfg.seed == 9);
  CHECK(cfg.workers == 3);
  REQUIRE(cfg.methods.size() == 1);
  CHECK(cfg.methods[0].kind == MethodKind::kOriginalMixup);
}

TEST_CASE("policy CSV round trip") {
  const auto path = fs::temp_directory_path() / "mixr_policy.csv";
  KnnOptions opts({0, 1, 4, 8});
  auto policy = MixPolicy::from_counts({0, 4, 8, 1, 4}, opts);
  write_policy_csv(policy, {0.5, 0.25, 1.0, 0.125, 0.75}, path);
  CHECK(read_policy_csv(path, opts) == policy);
  CHECK(read_policy_csv(path).counts() == policy.counts());
  std::ofstream(path) << "example_id,chosen_k,probability\n0,1,\n2,1,\n";
  CHECK_THROWS_AS(read_policy_csv(path), ParseError);
  std::ofstream(path) << "id,k\n";
  CHECK_THROWS_AS(read_policy_csv(path), ParseError);
  fs::remove(path);
}

TEST_CASE("results table") {
  MethodResult r;
  r.method = "none";
  r.rmse_mean = 0.12345;
  r.rmse_std = 0.01;
  r.r2_mean = 0.9;
  r.r2_std = 0.02;
  r.runtime_minutes = 1.5;
  auto table = render_results_table({r});
  std::istringstream in(table);
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  CHECK_FALSE(std::getline(in, extra));
  CHECK(header.rfind("Method", 0) == 0);
  CHECK(row.find("0.1235+-0.0100") != std::string::npos);
  CHECK(row.find("0.9000+-0.0200") != std::string::npos);
  CHECK(row.find("1.50") != std::string::npos);
}

TEST_CASE("compare writes consistent artifacts and replays from its manifest") {
  auto dir = fresh_dir("compare");
  RunOverrides one;
  one.workers = 1;
  auto outcome = run_command("compare", small_config(), one, dir);
  REQUIRE(outcome.complete);
  for (const auto& [name, file] : outcome.artifacts) CHECK(fs::exists(dir / file));
  CHECK(fs::exists(dir / "policy.csv"));
  auto results = read_json(dir / "results.json");
  REQUIRE(results["methods"].size() == 2);
  std::ifstream table_file(dir / "results.txt");
  std::string table((std::istreambuf_iterator<char>(table_file)), std::istreambuf_iterator<char>());
  for (const auto& m : results["methods"]) {
    char cell[64];
    std::snprintf(cell, sizeof cell, "%.4f+-%.4f", m["rmse_mean"].get<double>(), m["rmse_std"].get<double>());
    CHECK(table.find(cell) != std::string::npos);
    CHECK(m["seeds"].size() == 2);
  }

  // Replay the manifest with more workers.
  auto replay_dir = fresh_dir("replay");
  RunOverrides three;
  three.workers = 3;
  run_command("compare", load_config_document(dir / "manifest.json"), three, replay_dir);
  auto replayed = read_json(replay_dir / "results.json");
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(replayed["methods"][i]["per_seed"] == results["methods"][i]["per_seed"]);
  }
  auto manifest = read_json(dir / "manifest.json");
  auto manifest2 = read_json(replay_dir / "manifest.json");
  manifest["config"].erase("workers");
  manifest2["config"].erase("workers");
  CHECK(manifest["config"] == manifest2["config"]);
  CHECK(manifest["workers"] == 1);
  CHECK(manifest2["workers"] == 3);
  std::ifstream p1(dir / "policy.csv"), p2(replay_dir / "policy.csv");
  CHECK(std::string(std::istreambuf_iterator<char>(p1), {}) == std::string(std::istreambuf_iterator<char>(p2), {}));
  fs::remove_all(dir);
  fs::remove_all(replay_dir);
}

TEST_CASE("augment adds one row per chosen neighbor") {
  auto dir = fresh_dir("augment");
  fs::create_directories(dir);
  std::vector<std::size_t> counts(16, 0);
  counts[0] = 2;
  counts[5] = 1;
  counts[9] = 2;
  write_policy_csv(MixPolicy::from_counts(counts, KnnOptions({0, 1, 2})), {}, dir / "policy.csv");
  auto doc = small_config();
  doc["policy"] = (dir / "policy.csv").string();
  run_command("augment", doc, {}, dir / "out");
  CHECK(count_lines(dir / "out" / "augmented.csv") == 1 + 16 + 5);

  auto train = load_csv(dir / "out" / "augmented.csv", {"y0"});
  std::fill(counts.begin(), counts.end(), 0);
  write_policy_csv(MixPolicy::from_counts(counts, KnnOptions({0, 1})), {}, dir / "zero.csv");
  doc["policy"] = (dir / "zero.csv").string();
  run_command("augment", doc, {}, dir / "zero");
  auto zero = load_csv(dir / "zero" / "augmented.csv", {"y0"});
  CHECK(zero.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(zero.features()(i, 0) == doctest::Approx(train.features()(i, 0)));
    CHECK(zero.labels()(i, 0) == doctest::Approx(train.labels()(i, 0)));
    CHECK(zero.features()(i, 3) == 1.0);
  }
  doc.erase("policy");
  CHECK_THROWS_AS(run_command("augment", doc, {}, dir / "none"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("analyze writes a five-band study") {
  auto dir = fresh_dir("analyze");
  auto doc = small_config();
  doc["analysis"] = {{"bands", 5}, {"label_error", false}};
  run_command("analyze", doc, {}, dir);
  CHECK(count_lines(dir / "studies" / "band_study.csv") == 1 + 5 + 1);

  doc["analysis"] = {{"bands", 5}};
  try {
    run_command("analyze", doc, {}, dir / "missing");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("analysis.model") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("a missing dataset fails before any computation") {
  auto dir = fresh_dir("missing");
  auto doc = json::parse(R"({"dataset": {"csv": "/nonexistent/data.csv", "labels": ["y"]}})");
  CHECK_THROWS_AS(run_command("search", doc, {}, dir), IoError);
  CHECK_FALSE(fs::exists(dir / "manifest.json"));
  CHECK_FALSE(fs::exists(dir / "policy.csv"));
  CHECK_THROWS_AS(run_command("train", small_config(), {}, dir), ConfigError);
}

TEST_CASE("prepare_data standardizes with training statistics") {
  auto cfg = parse_run_config(small_config());
  auto data = prepare_data(cfg);
  CHECK(data.train.size() == 16);
  CHECK(data.val->size() == 8);
  double m = 0.0;
  for (std::size_t i = 0; i < 16; ++i) m += data.train.features()(i, 0);
  CHECK(std::abs(m) < 1e-12);
  CHECK(data.raw_train.features()(0, 0) != data.train.features()(0, 0));
  CHECK(resolve_options(cfg, 16).values() == std::vector<std::size_t>{0, 1, 2});
  cfg.option_values.reset();
  CHECK(resolve_options(cfg, 16).values() == std::vector<std::size_t>{0, 1, 2, 4, 8});
  cfg.option_values = std::vector<std::size_t>{0, 20};
  CHECK_THROWS_AS(resolve_options(cfg, 16), InputError);
}
