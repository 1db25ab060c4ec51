#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "lrope_lab/numerics.h"

namespace lrope_lab {

// Binary tensor layout, all fields little-endian:
//   u32 rows, u32 cols, rows*cols float64 values in row-major order.
// Audio embeddings use (rows, cols) = (l, d_a); reference-to-video attention
// maps use (fhw, hw).
void write_tensor(std::ostream& out, const Matrix& m);
Matrix read_tensor(std::istream& in);
void write_tensor_file(const std::filesystem::path& path, const Matrix& m);
Matrix read_tensor_file(const std::filesystem::path& path);

// Parameter bundle: u32 count, then per matrix u32 rows, u32 cols, data.
void write_matrix_list(std::ostream& out, const std::vector<Matrix>& mats);
std::vector<Matrix> read_matrix_list(std::istream& in);
void write_matrix_list_file(const std::filesystem::path& path, const std::vector<Matrix>& mats);
std::vector<Matrix> read_matrix_list_file(const std::filesystem::path& path);

}  // namespace lrope_lab
