#include "dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "random.hpp"

namespace mixr {

namespace {

constexpr double kPlantedJitter = 0.2;

double planted_spacing(const SyntheticSpec& spec) {
  return spec.cluster_width / static_cast<double>(spec.planted_k);
}

std::vector<std::string> default_names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

std::vector<ColumnStats> column_stats(const Matrix& m) {
  std::vector<ColumnStats> stats(m.cols());
  const double n = static_cast<double>(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) sum += m(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) ss += (m(r, c) - mean) * (m(r, c) - mean);
    stats[c] = {mean, std::sqrt(ss / n)};
  }
  return stats;
}

Matrix scale_columns(const Matrix& m, const std::vector<ColumnStats>& stats, bool inverse) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out(r, c) = inverse ? m(r, c) * stats[c].std + stats[c].mean
                          : (m(r, c) - stats[c].mean) / stats[c].std;
    }
  }
  return out;
}

}  // namespace

Dataset::Dataset(Matrix features, Matrix labels, std::vector<std::string> feature_names,
                 std::vector<std::string> label_names)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      feature_names_(std::move(feature_names)),
      label_names_(std::move(label_names)) {
  if (features_.rows() == 0) throw InputError("dataset must contain at least one example");
  if (features_.rows() != labels_.rows()) {
    throw InputError("feature rows (" + std::to_string(features_.rows()) +
                     ") and label rows (" + std::to_string(labels_.rows()) + ") differ");
  }
  if (!all_finite(features_.values()) || !all_finite(labels_.values())) {
    throw InputError("dataset contains NaN or Inf entries");
  }
  if (feature_names_.empty()) feature_names_ = default_names("x", features_.cols());
  if (label_names_.empty()) label_names_ = default_names("y", labels_.cols());
  if (feature_names_.size() != features_.cols() || label_names_.size() != labels_.cols()) {
    throw InputError("column name count does not match matrix width");
  }
}

Dataset Dataset::with_standardization(Standardization stats) const {
  Dataset copy = *this;
  copy.stats_ = std::move(stats);
  return copy;
}

Dataset Dataset::with_preset_split(PresetSplit split) const {
  if (split.train + split.val + split.test != size()) {
    throw InputError("preset split sizes do not sum to the dataset size");
  }
  Dataset copy = *this;
  copy.preset_ = split;
  return copy;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out(select_rows(features_, rows), select_rows(labels_, rows), feature_names_,
              label_names_);
  out.stats_ = stats_;
  return out;
}

Dataset concat(const Dataset& base, const Matrix& extra_features, const Matrix& extra_labels) {
  if (extra_features.rows() == 0) return base;
  if (extra_features.cols() != base.feature_dim() || extra_labels.cols() != base.label_dim()) {
    throw InputError("concat: augmented rows have the wrong width");
  }
  Dataset out(vstack(base.features(), extra_features), vstack(base.labels(), extra_labels),
              base.feature_names(), base.label_names());
  if (base.standardization()) return out.with_standardization(*base.standardization());
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& label_columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  std::vector<std::string> header;
  for (auto f : split_fields(line)) header.emplace_back(f);

  std::vector<bool> is_label(header.size(), false);
  std::vector<std::size_t> label_pos;
  for (const auto& name : label_columns) {
    auto it = std::ranges::find(header, name);
    if (it == header.end()) {
      throw ParseError(path.string() + ": label column '" + name + "' not found in header");
    }
    auto pos = static_cast<std::size_t>(it - header.begin());
    is_label[pos] = true;
    label_pos.push_back(pos);
  }
  std::vector<std::string> feature_names;
  std::vector<std::size_t> feature_pos;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!is_label[c]) {
      feature_names.push_back(header[c]);
      feature_pos.push_back(c);
    }
  }

  Matrix features(0, feature_pos.size());
  Matrix labels(0, label_pos.size());
  std::vector<double> row(header.size());
  std::vector<double> frow(feature_pos.size());
  std::vector<double> lrow(label_pos.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      auto f = fields[c];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || ptr != f.data() + f.size() || f.empty() || !std::isfinite(v)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": column '" +
                         header[c] + "': non-numeric or non-finite value '" + std::string(f) +
                         "'");
      }
      row[c] = v;
    }
    for (std::size_t i = 0; i < feature_pos.size(); ++i) frow[i] = row[feature_pos[i]];
    for (std::size_t i = 0; i < label_pos.size(); ++i) lrow[i] = row[label_pos[i]];
    features.append_row(frow);
    labels.append_row(lrow);
  }
  if (features.rows() == 0) throw ParseError(path.string() + ": no data rows");
  return Dataset(std::move(features), std::move(labels), std::move(feature_names),
                 label_columns);
}

void write_csv(const Dataset& data, const std::filesystem::path& path, const ExtraColumns& extra) {
  if (!extra.names.empty() &&
      (extra.values.rows() != data.size() || extra.values.cols() != extra.names.size())) {
    throw InputError("write_csv: extra columns do not match the dataset shape");
  }
  std::string out;
  auto header = data.feature_names();
  header.insert(header.end(), data.label_names().begin(), data.label_names().end());
  header.insert(header.end(), extra.names.begin(), extra.names.end());
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ',';
    out += header[i];
  }
  out += '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    bool first = true;
    auto emit = [&](std::span<const double> values) {
      for (double v : values) {
        if (!first) out += ',';
        first = false;
        append_number(out, v);
      }
    };
    emit(data.features().row(r));
    emit(data.labels().row(r));
    if (!extra.names.empty()) emit(extra.values.row(r));
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write CSV file '" + path.string() + "'");
  f << out;
}

Dataset standardize(const Dataset& data, bool labels) {
  auto fstats = column_stats(data.features());
  Standardization st;
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < fstats.size(); ++c) {
    if (fstats[c].std > 0.0) {
      keep.push_back(c);
      st.kept_features.push_back(data.feature_names()[c]);
      st.features.push_back(fstats[c]);
    } else {
      spdlog::warn("dropping constant feature column '{}'", data.feature_names()[c]);
      st.dropped_features.push_back(data.feature_names()[c]);
    }
  }
  if (keep.empty()) throw InputError("standardize: every feature column is constant");
  if (labels) {
    auto lstats = column_stats(data.labels());
    for (auto& s : lstats) {
      if (s.std == 0.0) throw InputError("standardize: constant label column");
    }
    st.labels = std::move(lstats);
  }
  return apply_standardization(data, st);
}

Dataset apply_standardization(const Dataset& data, const Standardization& stats) {
  std::vector<std::size_t> cols;
  for (const auto& name : stats.kept_features) {
    auto it = std::ranges::find(data.feature_names(), name);
    if (it == data.feature_names().end()) {
      throw InputError("apply_standardization: feature '" + name + "' missing");
    }
    cols.push_back(static_cast<std::size_t>(it - data.feature_names().begin()));
  }
  Matrix kept(data.size(), cols.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t i = 0; i < cols.size(); ++i) kept(r, i) = data.features()(r, cols[i]);
  }
  Matrix features = scale_columns(kept, stats.features, false);
  Matrix labels = stats.labels ? scale_columns(data.labels(), *stats.labels, false) : data.labels();
  Dataset out(std::move(features), std::move(labels), stats.kept_features, data.label_names());
  out = out.with_standardization(stats);
  if (data.preset_split()) out = out.with_preset_split(*data.preset_split());
  return out;
}

Dataset inverse_standardize(const Dataset& data) {
  if (!data.standardization()) return data;
  const auto& st = *data.standardization();
  Matrix features = scale_columns(data.features(), st.features, true);
  Matrix labels = st.labels ? scale_columns(data.labels(), *st.labels, true) : data.labels();
  return Dataset(std::move(features), std::move(labels), data.feature_names(), data.label_names());
}

Splits split(const Dataset& data, const SplitSpec& spec) {
  const std::size_t total = spec.train_size + spec.val_size + spec.test_size;
  if (spec.train_size == 0) throw InputError("split: train size must be positive");
  if (total > data.size()) {
    throw InputError("split: sizes " + std::to_string(spec.train_size) + "/" +
                     std::to_string(spec.val_size) + "/" + std::to_string(spec.test_size) +
                     " exceed dataset size " + std::to_string(data.size()));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(spec.seed, {11}));
  std::shuffle(order.begin(), order.end(), rng);

  auto take = [&](std::size_t from, std::size_t n) {
    return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(from),
                                    order.begin() + static_cast<std::ptrdiff_t>(from + n));
  };
  auto train_ids = take(0, spec.train_size);
  auto val_ids = take(spec.train_size, spec.val_size);
  auto test_ids = take(spec.train_size + spec.val_size, spec.test_size);
  Splits s{data.subset(train_ids), std::nullopt, std::nullopt, train_ids, val_ids, test_ids};
  if (!val_ids.empty()) s.val = data.subset(val_ids);
  if (!test_ids.empty()) s.test = data.subset(test_ids);
  return s;
}

Splits split_preset(const Dataset& data) {
  if (!data.preset_split()) throw InputError("dataset has no preset split");
  const auto p = *data.preset_split();
  auto range = [](std::size_t from, std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), from);
    return ids;
  };
  if (p.train == 0) throw InputError("preset split has no training rows");
  auto train_ids = range(0, p.train);
  auto val_ids = range(p.train, p.val);
  auto test_ids = range(p.train + p.val, p.test);
  Splits s{data.subset(train_ids), std::nullopt, std::nullopt, train_ids, val_ids, test_ids};
  if (p.val) s.val = data.subset(val_ids);
  if (p.test) s.test = data.subset(test_ids);
  return s;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "toy1d") return SyntheticKind::kToy1d;
  if (name == "piecewise") return SyntheticKind::kPiecewise;
  if (name == "polynomial") return SyntheticKind::kPolynomial;
  if (name == "planted-neighborhood" || name == "planted") return SyntheticKind::kPlantedNeighborhood;
  throw InputError("unknown synthetic dataset kind '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kToy1d: return "toy1d";
    case SyntheticKind::kPiecewise: return "piecewise";
    case SyntheticKind::kPolynomial: return "polynomial";
    case SyntheticKind::kPlantedNeighborhood: return "planted-neighborhood";
  }
  return "unknown";
}

SyntheticTarget::SyntheticTarget(const SyntheticSpec& spec) : spec_(spec) {
  switch (spec.kind) {
    case SyntheticKind::kToy1d:
      break;
    case SyntheticKind::kPiecewise: {
      if (spec.segments == 0) throw InputError("piecewise: segments must be positive");
      Rng rng(derive_seed(spec.seed, {1}));
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t i = 0; i <= spec.segments; ++i) {
        knots_.push_back(static_cast<double>(i) / static_cast<double>(spec.segments));
        values_.push_back(normal(rng));
      }
      break;
    }
    case SyntheticKind::kPolynomial: {
      if (spec.dims == 0 || spec.label_dims == 0 || spec.degree == 0) {
        throw InputError("polynomial: dims, label_dims and degree must be positive");
      }
      Rng rng(derive_seed(spec.seed, {1}));
      std::normal_distribution<double> normal(0.0, 1.0);
      linear_ = Matrix(spec.label_dims, spec.dims * spec.degree);
      for (auto& v : linear_.values()) v = normal(rng);
      offset_.resize(spec.label_dims);
      for (auto& v : offset_) v = normal(rng);
      break;
    }
    case SyntheticKind::kPlantedNeighborhood: {
      if (spec.clusters < 2) throw InputError("planted-neighborhood: need at least 2 clusters");
      if (spec.cluster_width <= 0.0 || spec.cluster_width >= 0.5) {
        throw InputError("planted-neighborhood: cluster_width must lie in (0, 0.5)");
      }
      if (spec.planted_k == 0) throw InputError("planted-neighborhood: planted_k must be positive");
      // Knots midway between neighbouring clusters. The slope alternates
      // between 0 and +-slope_step with a random sign, so every knot changes
      // it by exactly slope_step.
      Rng rng(derive_seed(spec.seed, {1}));
      double value = 0.0;
      double slope = 0.0;
      for (std::size_t c = 0; c <= spec.clusters; ++c) {
        knots_.push_back(static_cast<double>(c));
        values_.push_back(value);
        const bool up = uniform01(rng) < 0.5;
        slope = slope != 0.0 ? 0.0 : (up ? spec.slope_step : -spec.slope_step);
        value += slope;
      }
      auto [lo, hi] = std::ranges::minmax(values_);
      const double shift = (lo + hi) / 2.0;
      for (auto& v : values_) v -= shift;
      break;
    }
  }
}

std::vector<double> SyntheticTarget::operator()(std::span<const double> x) const {
  switch (spec_.kind) {
    case SyntheticKind::kToy1d:
      return {std::sin(2.5 * x[0]) + 0.5 * x[0]};
    case SyntheticKind::kPiecewise:
    case SyntheticKind::kPlantedNeighborhood: {
      const double lo = knots_.front();
      const double hi = knots_.back();
      const double t = std::clamp(x[0], lo, hi);
      auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
      std::size_t seg = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
      seg = std::min(seg, knots_.size() - 2);
      const double w = (t - knots_[seg]) / (knots_[seg + 1] - knots_[seg]);
      double y = values_[seg] + w * (values_[seg + 1] - values_[seg]);
      // Linear continuation outside the knot range.
      if (x[0] < lo) y += (x[0] - lo) * (values_[1] - values_[0]) / (knots_[1] - knots_[0]);
      if (x[0] > hi) {
        const auto n = knots_.size();
        y += (x[0] - hi) * (values_[n - 1] - values_[n - 2]) / (knots_[n - 1] - knots_[n - 2]);
      }
      return {y};
    }
    case SyntheticKind::kPolynomial: {
      std::vector<double> y(offset_);
      for (std::size_t l = 0; l < spec_.label_dims; ++l) {
        for (std::size_t j = 0; j < spec_.dims; ++j) {
          double p = 1.0;
          for (std::size_t m = 0; m < spec_.degree; ++m) {
            p *= x[j];
            y[l] += linear_(l, j * spec_.degree + m) * p;
          }
        }
      }
      return y;
    }
  }
  return {};
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  SyntheticTarget target(spec);
  Rng rng(derive_seed(spec.seed, {2}));
  std::normal_distribution<double> noise(0.0, 1.0);
  if (spec.noise < 0.0) throw InputError("synthetic noise level must be non-negative");

  std::size_t dims = 1;
  std::size_t label_dims = 1;
  std::vector<std::vector<double>> train_x;
  std::size_t n_val = spec.val_count;
  std::size_t n_test = spec.test_count;
  std::function<std::vector<double>()> draw_eval;

  switch (spec.kind) {
    case SyntheticKind::kToy1d: {
      for (double x : {0.1, 0.7, 1.0, 2.3}) train_x.push_back({x});
      if (n_test == 0) n_test = 20;
      draw_eval = [&] { return std::vector<double>{2.5 * uniform01(rng)}; };
      break;
    }
    case SyntheticKind::kPiecewise: {
      const std::size_t n = spec.train_count ? spec.train_count : 100;
      for (std::size_t i = 0; i < n; ++i) train_x.push_back({uniform01(rng)});
      if (n_val == 0) n_val = 50;
      if (n_test == 0) n_test = 50;
      draw_eval = [&] { return std::vector<double>{uniform01(rng)}; };
      break;
    }
    case SyntheticKind::kPolynomial: {
      dims = spec.dims;
      label_dims = spec.label_dims;
      const std::size_t n = spec.train_count ? spec.train_count : 100;
      auto draw = [&] {
        std::vector<double> x(dims);
        for (auto& v : x) v = 2.0 * uniform01(rng) - 1.0;
        return x;
      };
      for (std::size_t i = 0; i < n; ++i) train_x.push_back(draw());
      if (n_val == 0) n_val = 50;
      if (n_test == 0) n_test = 50;
      draw_eval = draw;
      break;
    }
    case SyntheticKind::kPlantedNeighborhood: {
      const std::size_t m = spec.planted_k + 1;
      const double spacing = planted_spacing(spec);
      for (std::size_t c = 0; c < spec.clusters; ++c) {
        for (std::size_t j = 0; j < m; ++j) {
          const double base = static_cast<double>(c) + 0.5 - spec.cluster_width / 2.0 +
                              spacing * static_cast<double>(j);
          const double jitter = kPlantedJitter * spacing * (2.0 * uniform01(rng) - 1.0);
          train_x.push_back({base + jitter});
        }
      }
      if (n_val == 0) n_val = 10 * spec.clusters;
      if (n_test == 0) n_test = 10 * spec.clusters;
      const double span = static_cast<double>(spec.clusters);
      if (spec.eval_margin < 0.0) {
        draw_eval = [&rng, span] { return std::vector<double>{span * uniform01(rng)}; };
      } else {
        const double reach = spec.cluster_width / 2.0 + spec.eval_margin;
        const std::size_t clusters = spec.clusters;
        draw_eval = [&rng, reach, clusters] {
          const double c = static_cast<double>(uniform_index(rng, clusters));
          return std::vector<double>{c + 0.5 + reach * (2.0 * uniform01(rng) - 1.0)};
        };
      }
      break;
    }
  }

  const std::size_t n_train = train_x.size();
  Matrix features(0, dims);
  Matrix labels(0, label_dims);
  for (const auto& x : train_x) {
    auto y = target(x);
    for (auto& v : y) v += spec.noise * noise(rng);
    features.append_row(x);
    labels.append_row(y);
  }
  for (std::size_t i = 0; i < n_val + n_test; ++i) {
    auto x = draw_eval();
    features.append_row(x);
    labels.append_row(target(x));
  }
  Dataset data(std::move(features), std::move(labels));
  return data.with_preset_split({n_train, n_val, n_test});
}

}  // namespace mixr
