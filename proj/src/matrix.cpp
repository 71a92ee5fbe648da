#include "matrix.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace mixr {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw InputError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InputError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw InputError("append_row: expected " + std::to_string(cols_) + " columns, got " +
                     std::to_string(values.size()));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw InputError("select_rows: row index out of range");
    std::ranges::copy(m.row(rows[i]), out.row(i).begin());
  }
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  if (top.cols() != bottom.cols()) throw InputError("vstack: column count mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::ranges::copy(top.values(), out.values().begin());
  std::ranges::copy(bottom.values(), out.values().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::ranges::all_of(values, [](double v) { return std::isfinite(v); });
}

}  // namespace mixr
