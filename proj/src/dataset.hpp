#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "matrix.hpp"

namespace mixr {

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
};

// Per-column statistics recorded by standardize(). Features named in
// dropped_features were constant in the fitting set and are removed.
struct Standardization {
  std::vector<std::string> kept_features;
  std::vector<std::string> dropped_features;
  std::vector<ColumnStats> features;
  std::optional<std::vector<ColumnStats>> labels;
};

// Row counts of a generator-defined partition, stored in row order
// (train rows first, then validation, then test).
struct PresetSplit {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// Feature matrix (S x d) and label matrix (S x e). Immutable after
// construction; S >= 1 and all entries finite.
class Dataset {
 public:
  Dataset(Matrix features, Matrix labels, std::vector<std::string> feature_names = {},
          std::vector<std::string> label_names = {});

  const Matrix& features() const noexcept { return features_; }
  const Matrix& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t feature_dim() const noexcept { return features_.cols(); }
  std::size_t label_dim() const noexcept { return labels_.cols(); }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
  const std::vector<std::string>& label_names() const noexcept { return label_names_; }

  const std::optional<Standardization>& standardization() const noexcept { return stats_; }
  const std::optional<PresetSplit>& preset_split() const noexcept { return preset_; }

  Dataset with_standardization(Standardization stats) const;
  Dataset with_preset_split(PresetSplit split) const;

  Dataset subset(std::span<const std::size_t> rows) const;

 private:
  Matrix features_;
  Matrix labels_;
  std::vector<std::string> feature_names_;
  std::vector<std::string> label_names_;
  std::optional<Standardization> stats_;
  std::optional<PresetSplit> preset_;
};

// Rows appended to a dataset. Unlike Dataset this may be empty.
Dataset concat(const Dataset& base, const Matrix& extra_features, const Matrix& extra_labels);

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& label_columns);

// Extra trailing columns (e.g. provenance) written after features and labels.
struct ExtraColumns {
  std::vector<std::string> names;
  Matrix values;
};

void write_csv(const Dataset& data, const std::filesystem::path& path,
               const ExtraColumns& extra = {});

// Standardizes features (and labels when requested) with statistics fitted
// on `data`. Constant feature columns are dropped with a warning.
Dataset standardize(const Dataset& data, bool labels = false);

// Applies previously fitted statistics, e.g. train-set stats to val/test.
Dataset apply_standardization(const Dataset& data, const Standardization& stats);

// Undoes standardization. Dropped feature columns cannot be restored.
Dataset inverse_standardize(const Dataset& data);

struct SplitSpec {
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset train;
  std::optional<Dataset> val;
  std::optional<Dataset> test;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  std::vector<std::size_t> test_ids;
};

// Seeded shuffle; train takes the first train_size rows, validation and test
// are consecutive slices of the remainder.
Splits split(const Dataset& data, const SplitSpec& spec);

// Splits along the dataset's preset partition.
Splits split_preset(const Dataset& data);

enum class SyntheticKind { kToy1d, kPiecewise, kPolynomial, kPlantedNeighborhood };

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kToy1d;
  std::size_t train_count = 0;  // 0 selects the kind's default
  std::size_t val_count = 0;
  std::size_t test_count = 0;
  double noise = 0.0;  // label noise std on training rows
  std::uint64_t seed = 0;

  // polynomial
  std::size_t dims = 1;
  std::size_t label_dims = 1;
  std::size_t degree = 1;

  // piecewise
  std::size_t segments = 4;

  // planted-neighborhood
  std::size_t clusters = 8;
  std::size_t planted_k = 4;
  double cluster_width = 0.3;
  double slope_step = 1.0;
  // Validation/test points lie within this distance of a cluster's extent;
  // negative spreads them uniformly over the whole range.
  double eval_margin = -1.0;
};

// Synthetic dataset with a preset train/val/test partition. Validation and
// test labels are noise free.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Noise-free target function of the generator (toy1d, piecewise and
// planted-neighborhood; polynomial uses its coefficients from the seed).
class SyntheticTarget {
 public:
  explicit SyntheticTarget(const SyntheticSpec& spec);
  std::vector<double> operator()(std::span<const double> x) const;

 private:
  SyntheticSpec spec_;
  std::vector<double> knots_;   // piecewise: breakpoints
  std::vector<double> values_;  // piecewise: values at breakpoints
  Matrix linear_;               // polynomial: label_dims x (dims * degree)
  std::vector<double> offset_;
};

}  // namespace mixr
