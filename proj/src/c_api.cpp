#include "mixr/mixr.h"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstring>
#include <set>
#include <sstream>
#include <string>

#include "dataset.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "mixing.hpp"
#include "neighbors.hpp"

struct mixr_dataset {
  mixr::Dataset value;
};

struct mixr_knn_index {
  mixr::KnnIndex value;
};

struct mixr_policy {
  mixr::MixPolicy value;
};

namespace {

thread_local std::string last_error;

mixr_status status_of(mixr::ErrorKind kind) {
  switch (kind) {
    case mixr::ErrorKind::kInput:
      return MIXR_ERR_INPUT;
    case mixr::ErrorKind::kParse:
      return MIXR_ERR_PARSE;
    case mixr::ErrorKind::kIo:
      return MIXR_ERR_IO;
    case mixr::ErrorKind::kConfig:
      return MIXR_ERR_CONFIG;
    case mixr::ErrorKind::kDiverged:
      return MIXR_ERR_DIVERGED;
  }
  return MIXR_ERR_INTERNAL;
}

void use_stderr_logger() {
  static const bool installed = [] {
    spdlog::set_default_logger(spdlog::stderr_color_mt("mixr"));
    return true;
  }();
  (void)installed;
}

template <typename Fn>
mixr_status guarded(Fn&& fn) {
  try {
    use_stderr_logger();
    last_error.clear();
    return fn();
  } catch (const mixr::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return MIXR_ERR_PARSE;
  } catch (const std::exception& e) {
    last_error = e.what();
    return MIXR_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return MIXR_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw mixr::InputError(what);
}

mixr::KnnOptions options_for(const std::vector<std::size_t>& counts) {
  std::set<std::size_t> values(counts.begin(), counts.end());
  values.insert(0);
  return mixr::KnnOptions({values.begin(), values.end()});
}

mixr_status run(const char* command, const mixr::json& doc, const mixr_run_options* options) {
  require(command != nullptr, "command is null");
  require(options != nullptr && options->out_dir != nullptr, "options.out_dir is required");
  mixr::RunOverrides overrides;
  if (options->has_seed) overrides.seed = options->seed;
  if (options->workers) overrides.workers = options->workers;
  if (options->policy_path) overrides.policy = options->policy_path;
  if (options->methods) {
    std::istringstream names(options->methods);
    std::string name;
    while (std::getline(names, name, ',')) {
      if (!name.empty()) overrides.methods.push_back(name);
    }
  }
  auto outcome = mixr::run_command(command, doc, overrides, options->out_dir);
  if (!outcome.complete) {
    std::string message = "some methods failed:";
    for (const auto& f : outcome.failures) message += "\n  " + f;
    last_error = message;
    return MIXR_PARTIAL;
  }
  return MIXR_OK;
}

}  // namespace

extern "C" {

const char* mixr_version(void) { return MIXR_VERSION; }

const char* mixr_last_error(void) { return last_error.c_str(); }

const char* mixr_status_name(mixr_status status) {
  switch (status) {
    case MIXR_OK:
      return "ok";
    case MIXR_ERR_INPUT:
      return "input error";
    case MIXR_ERR_PARSE:
      return "parse error";
    case MIXR_ERR_IO:
      return "I/O error";
    case MIXR_ERR_CONFIG:
      return "config error";
    case MIXR_ERR_DIVERGED:
      return "training diverged";
    case MIXR_PARTIAL:
      return "partially completed";
    case MIXR_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

mixr_status mixr_set_log_level(const char* level) {
  return guarded([&] {
    require(level != nullptr, "null argument");
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string(level) != "off") {
      throw mixr::ConfigError(std::string("unknown log level '") + level + "'");
    }
    spdlog::set_level(parsed);
    return MIXR_OK;
  });
}

mixr_status mixr_dataset_load_csv(const char* path, const char* const* label_columns,
                                  size_t label_count, mixr_dataset** out) {
  return guarded([&] {
    require(path && out && (label_columns || label_count == 0), "null argument");
    std::vector<std::string> labels(label_columns, label_columns + label_count);
    *out = new mixr_dataset{mixr::load_csv(path, labels)};
    return MIXR_OK;
  });
}

mixr_status mixr_dataset_create(const double* features, const double* labels, size_t rows,
                                size_t feature_dim, size_t label_dim, mixr_dataset** out) {
  return guarded([&] {
    require(features && labels && out, "null argument");
    mixr::Matrix x(rows, feature_dim, std::vector<double>(features, features + rows * feature_dim));
    mixr::Matrix y(rows, label_dim, std::vector<double>(labels, labels + rows * label_dim));
    *out = new mixr_dataset{mixr::Dataset(std::move(x), std::move(y))};
    return MIXR_OK;
  });
}

mixr_status mixr_dataset_generate(const char* spec_json, mixr_dataset** out) {
  return guarded([&] {
    require(spec_json && out, "null argument");
    mixr::json doc{{"dataset", {{"synthetic", mixr::json::parse(spec_json)}}}};
    const auto cfg = mixr::parse_run_config(doc);
    *out = new mixr_dataset{mixr::generate_synthetic(*cfg.dataset.synthetic)};
    return MIXR_OK;
  });
}

mixr_status mixr_dataset_write_csv(const mixr_dataset* data, const char* path) {
  return guarded([&] {
    require(data && path, "null argument");
    mixr::write_csv(data->value, path);
    return MIXR_OK;
  });
}

size_t mixr_dataset_rows(const mixr_dataset* data) { return data ? data->value.size() : 0; }
size_t mixr_dataset_feature_dim(const mixr_dataset* data) { return data ? data->value.feature_dim() : 0; }
size_t mixr_dataset_label_dim(const mixr_dataset* data) { return data ? data->value.label_dim() : 0; }

mixr_status mixr_dataset_features(const mixr_dataset* data, double* out, size_t capacity) {
  return guarded([&] {
    require(data && out, "null argument");
    auto v = data->value.features().values();
    require(capacity >= v.size(), "buffer too small for the feature matrix");
    std::copy(v.begin(), v.end(), out);
    return MIXR_OK;
  });
}

mixr_status mixr_dataset_labels(const mixr_dataset* data, double* out, size_t capacity) {
  return guarded([&] {
    require(data && out, "null argument");
    auto v = data->value.labels().values();
    require(capacity >= v.size(), "buffer too small for the label matrix");
    std::copy(v.begin(), v.end(), out);
    return MIXR_OK;
  });
}

void mixr_dataset_free(mixr_dataset* data) { delete data; }

mixr_status mixr_knn_build(const mixr_dataset* data, size_t workers, mixr_knn_index** out) {
  return guarded([&] {
    require(data && out, "null argument");
    *out = new mixr_knn_index{mixr::build_index(data->value, workers)};
    return MIXR_OK;
  });
}

mixr_status mixr_knn_query(const mixr_knn_index* index, size_t i, size_t k, size_t* out_ids) {
  return guarded([&] {
    require(index && (out_ids || k == 0), "null argument");
    require(i < index->value.size(), "example index out of range");
    auto ids = index->value.knn(i, k);
    std::copy(ids.begin(), ids.end(), out_ids);
    return MIXR_OK;
  });
}

void mixr_knn_free(mixr_knn_index* index) { delete index; }

mixr_status mixr_policy_create(const size_t* counts, size_t examples, mixr_policy** out) {
  return guarded([&] {
    require(counts && out && examples > 0, "null argument or empty policy");
    std::vector<std::size_t> k(counts, counts + examples);
    *out = new mixr_policy{mixr::MixPolicy::from_counts(k, options_for(k))};
    return MIXR_OK;
  });
}

mixr_status mixr_policy_load(const char* path, mixr_policy** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new mixr_policy{mixr::read_policy_csv(path)};
    return MIXR_OK;
  });
}

mixr_status mixr_policy_save(const mixr_policy* policy, const char* path) {
  return guarded([&] {
    require(policy && path, "null argument");
    mixr::write_policy_csv(policy->value, {}, path);
    return MIXR_OK;
  });
}

size_t mixr_policy_size(const mixr_policy* policy) { return policy ? policy->value.size() : 0; }

size_t mixr_policy_k(const mixr_policy* policy, size_t i) {
  return policy && i < policy->value.size() ? policy->value.k(i) : 0;
}

void mixr_policy_free(mixr_policy* policy) { delete policy; }

mixr_status mixr_augment(const mixr_dataset* data, const mixr_knn_index* index,
                         const mixr_policy* policy, double lambda, mixr_dataset** out) {
  return guarded([&] {
    require(data && index && policy && out, "null argument");
    mixr::MixConfig cfg;
    cfg.lambda = lambda;
    const auto mixed = mixr::mix_with_policy(data->value, index->value, policy->value, cfg);
    *out = new mixr_dataset{mixr::augment(data->value, mixed)};
    return MIXR_OK;
  });
}

void mixr_run_options_init(mixr_run_options* options) {
  if (options) std::memset(options, 0, sizeof *options);
}

mixr_status mixr_run(const char* command, const char* config_path, const mixr_run_options* options) {
  return guarded([&] {
    require(config_path != nullptr, "config path is null");
    return run(command, mixr::load_config_document(config_path), options);
  });
}

mixr_status mixr_run_json(const char* command, const char* config_json, const mixr_run_options* options) {
  return guarded([&] {
    require(config_json != nullptr, "config is null");
    auto doc = mixr::json::parse(config_json);
    if (doc.is_object() && doc.contains("tool") && doc.contains("config")) doc = doc.at("config");
    return run(command, doc, options);
  });
}

}  // extern "C"
