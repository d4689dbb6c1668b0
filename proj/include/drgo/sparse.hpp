#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "drgo/matrix.hpp"

namespace drgo {

/// Compressed sparse row matrix of doubles. Column indices within a row are sorted.
class CsrMatrix {
 public:
  struct Entry {
    std::size_t row;
    std::size_t col;
    double value;
  };

  CsrMatrix() = default;

  /// Duplicate (row, col) entries are summed.
  static CsrMatrix from_entries(std::size_t rows, std::size_t cols, std::vector<Entry> entries) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    CsrMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.row_ptr_.assign(rows + 1, 0);
    for (const auto& e : entries) {
      if (e.row >= rows || e.col >= cols) throw std::out_of_range("CsrMatrix: entry out of range");
      if (!m.col_idx_.empty() && m.last_row_ == e.row && m.col_idx_.back() == e.col) {
        m.values_.back() += e.value;
        continue;
      }
      m.col_idx_.push_back(e.col);
      m.values_.push_back(e.value);
      m.last_row_ = e.row;
      ++m.row_ptr_[e.row + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  static CsrMatrix identity(std::size_t n) {
    std::vector<Entry> e;
    e.reserve(n);
    for (std::size_t i = 0; i < n; ++i) e.push_back({i, i, 1.0});
    return from_entries(n, n, std::move(e));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::span<const std::size_t> row_cols(std::size_t r) const {
    return {col_idx_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::size_t row_nnz(std::size_t r) const { return row_ptr_[r + 1] - row_ptr_[r]; }

  /// Value at (r, c), zero when absent. Binary search within the row.
  double at(std::size_t r, std::size_t c) const {
    const auto cols = row_cols(r);
    const auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return values_[row_ptr_[r] + static_cast<std::size_t>(it - cols.begin())];
  }

  Matrix to_dense() const {
    Matrix d(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
      const auto cs = row_cols(r);
      const auto vs = row_values(r);
      for (std::size_t k = 0; k < cs.size(); ++k) d(r, cs[k]) = vs[k];
    }
    return d;
  }

  CsrMatrix transposed() const {
    std::vector<Entry> e;
    e.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r) {
      const auto cs = row_cols(r);
      const auto vs = row_values(r);
      for (std::size_t k = 0; k < cs.size(); ++k) e.push_back({cs[k], r, vs[k]});
    }
    return from_entries(cols_, rows_, std::move(e));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t last_row_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

/// Y = S * X for sparse S and dense X.
inline Matrix spmm(const CsrMatrix& s, const Matrix& x) {
  if (s.cols() != x.rows()) throw std::invalid_argument("spmm: dimension mismatch");
  Matrix y(s.rows(), x.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto cs = s.row_cols(r);
    const auto vs = s.row_values(r);
    double* yr = y.row(r).data();
    for (std::size_t k = 0; k < cs.size(); ++k) {
      const double* xr = x.row(cs[k]).data();
      const double v = vs[k];
      for (std::size_t j = 0; j < x.cols(); ++j) yr[j] += v * xr[j];
    }
  }
  return y;
}

}  // namespace drgo
