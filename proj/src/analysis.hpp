#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "mixing.hpp"
#include "neighbors.hpp"
#include "nn.hpp"
#include "search.hpp"

namespace mixr {

struct Metrics {
  double rmse = 0.0;
  double r2 = 0.0;
  std::vector<double> rmse_per_dim;
  std::vector<double> r2_per_dim;
  std::size_t n = 0;
};

// Pooled over every label entry.
double rmse(const Matrix& y, const Matrix& y_hat);
// 1 - SSres/SStot per label dimension, averaged. Not clipped to [0, 1].
double r_squared(const Matrix& y, const Matrix& y_hat);

Metrics compute_metrics(const Matrix& y, const Matrix& y_hat);
Metrics evaluate(const MlpModel& model, const Dataset& data);

// Bands [i/n, (i+1)/n) over normalized distance; the last one includes 1.
std::vector<DistanceBand> uniform_bands(std::size_t n);

struct BandRow {
  DistanceBand band;
  std::size_t n = 0;     // mixed pairs in the band
  double value = 0.0;    // label RMSE or mean test RMSE
  double std = 0.0;
  std::vector<double> per_seed;  // model study only
};

struct DistanceStudy {
  std::vector<BandRow> rows;
  double normalization = 0.0;  // largest pairwise distance
  // Model study only: test RMSE without augmentation, per seed and mean/std.
  std::vector<double> baseline_per_seed;
  double baseline_mean = 0.0;
  double baseline_std = 0.0;
};

inline constexpr std::size_t kBandPairCap = 10000;

// Midpoint-mixes pairs within each band and compares the interpolated label
// to the model's prediction at the mixed input. Bands with more than
// pair_cap pairs are subsampled.
DistanceStudy label_error_vs_distance(const MlpModel& model, const Dataset& data,
                                      const KnnIndex& index, const std::vector<DistanceBand>& bands,
                                      std::uint64_t seed = 0, std::size_t pair_cap = kBandPairCap);

struct BandStudyConfig {
  RegressionSetup regression;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

// Per band: train on D U band-mix(D), report test RMSE over seeded runs.
DistanceStudy distance_band_model_study(const Dataset& train, const Dataset& test,
                                        const std::vector<DistanceBand>& bands,
                                        const BandStudyConfig& cfg);

std::vector<std::size_t> policy_histogram(const MixPolicy& policy);

// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

double mean(const std::vector<double>& v);
// Population standard deviation.
double stddev(const std::vector<double>& v);

void write_study_csv(const DistanceStudy& study, const std::filesystem::path& path);
void write_histogram_csv(const MixPolicy& policy, const std::filesystem::path& path);

}  // namespace mixr
