#include "lrope_lab/tensor_io.h"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "lrope_lab/errors.h"

namespace lrope_lab {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b.data(), b.size());
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw ParseError("tensor file: truncated header");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw ParseError("tensor file: truncated data");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::uint32_t checked_u32(std::size_t n) {
  if (n > 0xffffffffULL) throw ShapeError("tensor file: dimension exceeds u32");
  return static_cast<std::uint32_t>(n);
}

void write_body(std::ostream& out, const Matrix& m) {
  put_u32(out, checked_u32(m.rows()));
  put_u32(out, checked_u32(m.cols()));
  for (double v : m.data()) put_f64(out, v);
}

Matrix read_body(std::istream& in) {
  const std::size_t rows = get_u32(in);
  const std::size_t cols = get_u32(in);
  std::vector<double> data(rows * cols);
  for (double& v : data) v = get_f64(in);
  try {
    return Matrix(rows, cols, std::move(data));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("tensor file: ") + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

void expect_eof(std::istream& in) {
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("tensor file: trailing bytes");
}

}  // namespace

void write_tensor(std::ostream& out, const Matrix& m) { write_body(out, m); }

Matrix read_tensor(std::istream& in) { return read_body(in); }

void write_tensor_file(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path);
  write_tensor(out, m);
}

Matrix read_tensor_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  Matrix m = read_tensor(in);
  expect_eof(in);
  return m;
}

void write_matrix_list(std::ostream& out, const std::vector<Matrix>& mats) {
  put_u32(out, checked_u32(mats.size()));
  for (const auto& m : mats) write_body(out, m);
}

std::vector<Matrix> read_matrix_list(std::istream& in) {
  const std::size_t count = get_u32(in);
  std::vector<Matrix> mats;
  mats.reserve(count);
  for (std::size_t i = 0; i < count; ++i) mats.push_back(read_body(in));
  return mats;
}

void write_matrix_list_file(const std::filesystem::path& path, const std::vector<Matrix>& mats) {
  auto out = open_out(path);
  write_matrix_list(out, mats);
}

std::vector<Matrix> read_matrix_list_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  auto mats = read_matrix_list(in);
  expect_eof(in);
  return mats;
}

}  // namespace lrope_lab
