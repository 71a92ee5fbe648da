#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace mixr {

namespace {

void check_shapes(const Matrix& y, const Matrix& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) {
    throw InputError("prediction shape " + std::to_string(y_hat.rows()) + "x" +
                     std::to_string(y_hat.cols()) + " does not match labels " +
                     std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
  }
  if (y.rows() == 0 || y.cols() == 0) throw InputError("metrics need at least one label entry");
}

double column_r2(const Matrix& y, const Matrix& y_hat, std::size_t c) {
  double mu = 0.0;
  for (std::size_t r = 0; r < y.rows(); ++r) mu += y(r, c);
  mu /= static_cast<double>(y.rows());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    ss_res += (y(r, c) - y_hat(r, c)) * (y(r, c) - y_hat(r, c));
    ss_tot += (y(r, c) - mu) * (y(r, c) - mu);
  }
  if (ss_tot == 0.0) {
    throw InputError("R^2 is undefined for constant labels (dimension " + std::to_string(c) + ")");
  }
  return 1.0 - ss_res / ss_tot;
}

double column_rmse(const Matrix& y, const Matrix& y_hat, std::size_t c) {
  double s = 0.0;
  for (std::size_t r = 0; r < y.rows(); ++r) s += (y(r, c) - y_hat(r, c)) * (y(r, c) - y_hat(r, c));
  return std::sqrt(s / static_cast<double>(y.rows()));
}

bool band_contains(double d, const DistanceBand& band) {
  return in_band(d, band) || (band.hi == 1.0 && d == 1.0);
}

}  // namespace

double rmse(const Matrix& y, const Matrix& y_hat) {
  check_shapes(y, y_hat);
  double s = 0.0;
  for (std::size_t k = 0; k < y.values().size(); ++k) {
    const double e = y.values()[k] - y_hat.values()[k];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(y.values().size()));
}

double r_squared(const Matrix& y, const Matrix& y_hat) {
  check_shapes(y, y_hat);
  double total = 0.0;
  for (std::size_t c = 0; c < y.cols(); ++c) total += column_r2(y, y_hat, c);
  return total / static_cast<double>(y.cols());
}

Metrics compute_metrics(const Matrix& y, const Matrix& y_hat) {
  Metrics m;
  m.rmse = rmse(y, y_hat);
  m.r2 = r_squared(y, y_hat);
  for (std::size_t c = 0; c < y.cols(); ++c) {
    m.rmse_per_dim.push_back(column_rmse(y, y_hat, c));
    m.r2_per_dim.push_back(column_r2(y, y_hat, c));
  }
  m.n = y.rows();
  return m;
}

Metrics evaluate(const MlpModel& model, const Dataset& data) {
  return compute_metrics(data.labels(), forward(model, data.features()));
}

std::vector<DistanceBand> uniform_bands(std::size_t n) {
  if (n == 0) throw InputError("need at least one distance band");
  std::vector<DistanceBand> bands;
  for (std::size_t i = 0; i < n; ++i) {
    bands.push_back({static_cast<double>(i) / static_cast<double>(n),
                     i + 1 == n ? 1.0 : static_cast<double>(i + 1) / static_cast<double>(n)});
  }
  return bands;
}

DistanceStudy label_error_vs_distance(const MlpModel& model, const Dataset& data,
                                      const KnnIndex& index, const std::vector<DistanceBand>& bands,
                                      std::uint64_t seed, std::size_t pair_cap) {
  if (index.size() != data.size()) throw InputError("index does not match dataset");
  if (model.input_dim() != data.feature_dim() || model.output_dim() != data.label_dim()) {
    throw InputError("model shape does not match dataset");
  }
  if (pair_cap == 0) throw InputError("pair cap must be positive");
  DistanceStudy study;
  study.normalization = index.max_distance();
  const double scale = study.normalization > 0.0 ? study.normalization : 1.0;

  for (std::size_t b = 0; b < bands.size(); ++b) {
    // Reservoir sample over pairs (i < j) in enumeration order.
    Rng rng(derive_seed(seed, {b}));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto ids = index.neighbors(i);
      auto dists = index.distances(i);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < i || !band_contains(dists[r] / scale, bands[b])) continue;
        ++seen;
        if (pairs.size() < pair_cap) {
          pairs.emplace_back(i, ids[r]);
        } else {
          const std::size_t slot = uniform_index(rng, seen);
          if (slot < pair_cap) pairs[slot] = {i, ids[r]};
        }
      }
    }
    BandRow row{bands[b], pairs.size(), 0.0, 0.0, {}};
    if (!pairs.empty()) {
      Matrix x(pairs.size(), data.feature_dim());
      Matrix y(pairs.size(), data.label_dim());
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        auto [xm, ym] = mix_pair(data.features().row(pairs[p].first),
                                 data.labels().row(pairs[p].first),
                                 data.features().row(pairs[p].second),
                                 data.labels().row(pairs[p].second), 0.5);
        std::ranges::copy(xm, x.row(p).begin());
        std::ranges::copy(ym, y.row(p).begin());
      }
      const Matrix pred = forward(model, x);
      row.value = rmse(y, pred);
      std::vector<double> per_pair(pairs.size());
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) s += (y(p, c) - pred(p, c)) * (y(p, c) - pred(p, c));
        per_pair[p] = std::sqrt(s / static_cast<double>(y.cols()));
      }
      row.std = stddev(per_pair);
    }
    study.rows.push_back(std::move(row));
  }
  return study;
}

DistanceStudy distance_band_model_study(const Dataset& train, const Dataset& test,
                                        const std::vector<DistanceBand>& bands,
                                        const BandStudyConfig& cfg) {
  if (cfg.repeats == 0) throw InputError("band study needs at least one repeat");
  const KnnIndex index = build_index(train, cfg.workers);
  DistanceStudy study;
  study.normalization = index.max_distance();

  // Slot 0 is the unaugmented baseline; slot b + 1 is band b.
  std::vector<Dataset> sets{train};
  std::vector<std::size_t> counts{0};
  for (const auto& band : bands) {
    MixedSet mixed = mix_distance_band(train, index, band, 0.5);
    counts.push_back(mixed.size());
    sets.push_back(augment(train, mixed));
  }
  const std::size_t jobs = sets.size() * cfg.repeats;
  std::vector<double> results(jobs);
  parallel_for(jobs, cfg.workers, [&](std::size_t job) {
    const std::size_t slot = job / cfg.repeats;
    const std::size_t r = job % cfg.repeats;
    const MlpModel model = train_regression(sets[slot], cfg.regression, derive_seed(cfg.seed, {r}));
    results[job] = rmse(test.labels(), forward(model, test.features()));
  });

  auto seeds_of = [&](std::size_t slot) {
    return std::vector<double>(results.begin() + static_cast<std::ptrdiff_t>(slot * cfg.repeats),
                               results.begin() + static_cast<std::ptrdiff_t>((slot + 1) * cfg.repeats));
  };
  study.baseline_per_seed = seeds_of(0);
  study.baseline_mean = mean(study.baseline_per_seed);
  study.baseline_std = stddev(study.baseline_per_seed);
  for (std::size_t b = 0; b < bands.size(); ++b) {
    auto per_seed = seeds_of(b + 1);
    study.rows.push_back({bands[b], counts[b + 1], mean(per_seed), stddev(per_seed), per_seed});
  }
  return study;
}

std::vector<std::size_t> policy_histogram(const MixPolicy& policy) {
  std::vector<std::size_t> counts(policy.options().size(), 0);
  for (auto c : policy.choices()) ++counts[c];
  return counts;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("spearman needs two equal-length series");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw InputError("spearman is undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

void write_study_csv(const DistanceStudy& study, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "band,lo,hi,n,value,std\n";
  for (std::size_t b = 0; b < study.rows.size(); ++b) {
    const auto& row = study.rows[b];
    out << b << ',' << row.band.lo << ',' << row.band.hi << ',' << row.n << ',' << row.value << ','
        << row.std << '\n';
  }
  if (!study.baseline_per_seed.empty()) {
    out << "none,,,0," << study.baseline_mean << ',' << study.baseline_std << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_histogram_csv(const MixPolicy& policy, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "k,count\n";
  const auto counts = policy_histogram(policy);
  for (std::size_t c = 0; c < counts.size(); ++c) out << policy.options()[c] << ',' << counts[c] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mixr
