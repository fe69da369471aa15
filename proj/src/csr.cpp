#include "fl/csr.hpp"

#include <algorithm>

namespace fl {

SparseMatrixCsr::SparseMatrixCsr(std::size_t n_rows, std::size_t n_cols,
                                 std::vector<std::uint64_t> row_ptr,
                                 std::vector<std::uint64_t> col_idx,
                                 std::vector<double> values)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  validate();
}

SparseMatrixCsr SparseMatrixCsr::from_triplets(
    std::size_t n_rows, std::size_t n_cols,
    std::vector<std::tuple<std::uint64_t, std::uint64_t, double>> triplets) {
  std::sort(triplets.begin(), triplets.end(),
            [](const auto& a, const auto& b) {
              return std::tie(std::get<0>(a), std::get<1>(a)) <
                     std::tie(std::get<0>(b), std::get<1>(b));
            });
  std::vector<std::uint64_t> row_ptr(n_rows + 1, 0);
  std::vector<std::uint64_t> col_idx;
  std::vector<double> values;
  col_idx.reserve(triplets.size());
  values.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& [r, c, v] = triplets[i];
    if (r >= n_rows || c >= n_cols)
      throw DimensionError("triplet index out of range");
    if (i > 0 && r == std::get<0>(triplets[i - 1]) && c == std::get<1>(triplets[i - 1]))
      throw DimensionError("duplicate (row, col) in triplets");
    row_ptr[r + 1]++;
    col_idx.push_back(c);
    values.push_back(v);
  }
  for (std::size_t r = 0; r < n_rows; ++r) row_ptr[r + 1] += row_ptr[r];
  return SparseMatrixCsr(n_rows, n_cols, std::move(row_ptr), std::move(col_idx),
                         std::move(values));
}

std::span<const std::uint64_t> SparseMatrixCsr::row_cols(std::size_t r) const {
  const auto begin = row_ptr_[r];
  const auto end = row_ptr_[r + 1];
  return {col_idx_.data() + begin, end - begin};
}

std::span<const double> SparseMatrixCsr::row_vals(std::size_t r) const {
  const auto begin = row_ptr_[r];
  const auto end = row_ptr_[r + 1];
  return {values_.data() + begin, end - begin};
}

std::vector<double> SparseMatrixCsr::matvec(std::span<const double> v) const {
  if (v.size() != n_cols_)
    throw DimensionError("matvec: vector length != n_cols");
  std::vector<double> out(n_rows_, 0.0);
  for (std::size_t r = 0; r < n_rows_; ++r) {
    double acc = 0.0;
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      acc += values_[k] * v[col_idx_[k]];
    out[r] = acc;
  }
  return out;
}

std::vector<double> SparseMatrixCsr::transpose_matvec(std::span<const double> v) const {
  if (v.size() != n_rows_)
    throw DimensionError("transpose_matvec: vector length != n_rows");
  std::vector<double> out(n_cols_, 0.0);
  for (std::size_t r = 0; r < n_rows_; ++r) {
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      out[col_idx_[k]] += values_[k] * v[r];
  }
  return out;
}

SparseMatrixCsr SparseMatrixCsr::slice_rows(std::span<const std::uint32_t> rows) const {
  std::vector<std::uint64_t> row_ptr(rows.size() + 1, 0);
  std::vector<std::uint64_t> col_idx;
  std::vector<double> values;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows_) throw DimensionError("slice_rows: row out of range");
    row_ptr[i + 1] = row_ptr[i] + (row_ptr_[rows[i] + 1] - row_ptr_[rows[i]]);
  }
  col_idx.reserve(row_ptr.back());
  values.reserve(row_ptr.back());
  for (const std::uint32_t r : rows) {
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      col_idx.push_back(col_idx_[k]);
      values.push_back(values_[k]);
    }
  }
  return SparseMatrixCsr(rows.size(), n_cols_, std::move(row_ptr),
                         std::move(col_idx), std::move(values));
}

void SparseMatrixCsr::validate() const {
  if (row_ptr_.size() != n_rows_ + 1)
    throw DimensionError("row_ptr length != n_rows + 1");
  if (row_ptr_[0] != 0) throw DimensionError("row_ptr[0] != 0");
  if (row_ptr_[n_rows_] != values_.size())
    throw DimensionError("row_ptr[n_rows] != nnz");
  if (col_idx_.size() != values_.size())
    throw DimensionError("col_idx and values length mismatch");
  for (std::size_t r = 0; r < n_rows_; ++r) {
    if (row_ptr_[r] > row_ptr_[r + 1])
      throw DimensionError("row_ptr not non-decreasing");
    for (std::uint64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      if (col_idx_[k] >= n_cols_) throw DimensionError("col_idx out of range");
      if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1])
        throw DimensionError("col_idx not strictly increasing within row");
    }
  }
}

namespace {
constexpr std::uint16_t kMdysVersion = 1;
}

std::vector<std::uint8_t> SparseMatrixCsr::to_mdys() const {
  ByteWriter w;
  w.put_magic("MDYS");
  w.put_u16(kMdysVersion);
  w.put_u64(n_rows_);
  w.put_u64(n_cols_);
  w.put_u64(nnz());
  for (const auto v : row_ptr_) w.put_u64(v);
  for (const auto v : col_idx_) w.put_u64(v);
  for (const auto v : values_) w.put_f64(v);
  return w.take();
}

SparseMatrixCsr SparseMatrixCsr::from_mdys(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MDYS");
  const auto version = r.get_u16();
  if (version != kMdysVersion) throw IoError("unsupported MDYS version");
  const auto n_rows = r.get_u64();
  const auto n_cols = r.get_u64();
  const auto nnz = r.get_u64();
  std::vector<std::uint64_t> row_ptr(n_rows + 1);
  for (auto& v : row_ptr) v = r.get_u64();
  std::vector<std::uint64_t> col_idx(nnz);
  for (auto& v : col_idx) v = r.get_u64();
  std::vector<double> values(nnz);
  for (auto& v : values) v = r.get_f64();
  if (!r.done()) throw IoError("trailing bytes in MDYS container");
  return SparseMatrixCsr(n_rows, n_cols, std::move(row_ptr), std::move(col_idx),
                         std::move(values));
}

void SparseMatrixCsr::save_mdys(const std::filesystem::path& path) const {
  const auto bytes = to_mdys();
  write_file(path, bytes);
}

SparseMatrixCsr SparseMatrixCsr::load_mdys(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return from_mdys(bytes);
}

}  // namespace fl
