#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <tuple>
#include <vector>

#include "fl/common.hpp"

namespace fl {

// Compressed sparse row matrix with 64-bit real values. Immutable after
// construction; every constructor validates the structural invariants.
class SparseMatrixCsr {
 public:
  SparseMatrixCsr() : row_ptr_{0} {}
  SparseMatrixCsr(std::size_t n_rows, std::size_t n_cols,
                  std::vector<std::uint64_t> row_ptr,
                  std::vector<std::uint64_t> col_idx,
                  std::vector<double> values);

  // Builds from (row, col, value) triplets in any order. Duplicate
  // (row, col) pairs are rejected.
  static SparseMatrixCsr from_triplets(
      std::size_t n_rows, std::size_t n_cols,
      std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> triplets);

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return n_cols_; }
  std::size_t nnz() const { return values_.size(); }

  std::span<const std::uint64_t> row_ptr() const { return row_ptr_; }
  std::span<const std::uint64_t> col_idx() const { return col_idx_; }
  std::span<const double> values() const { return values_; }

  std::span<const std::uint64_t> row_cols(std::size_t r) const;
  std::span<const double> row_vals(std::size_t r) const;

  std::vector<double> matvec(std::span<const double> v) const;
  std::vector<double> transpose_matvec(std::span<const double> v) const;
  // New matrix holding the given rows, in the given order.
  SparseMatrixCsr slice_rows(std::span<const std::uint32_t> rows) const;

  void validate() const;

  bool operator==(const SparseMatrixCsr&) const = default;

  // "MDYS" binary container, little-endian.
  std::vector<std::uint8_t> to_mdys() const;
  static SparseMatrixCsr from_mdys(std::span<const std::uint8_t> bytes);
  void save_mdys(const std::filesystem::path& path) const;
  static SparseMatrixCsr load_mdys(const std::filesystem::path& path);

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::uint64_t> row_ptr_;
  std::vector<std::uint64_t> col_idx_;
  std::vector<double> values_;
};

}  // namespace fl
