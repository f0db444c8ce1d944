#pragma once

// Little-endian binary reader/writer used by the checkpoint formats. The
// reader tracks its byte offset so corrupt files can be reported precisely.

#include "groklab/common.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace groklab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, std::uint64_t offset, const std::string& what)
      : std::runtime_error(source + ": offset " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* data, std::size_t n) {
    os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os_) throw std::runtime_error("write failed");
  }
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes(&value, sizeof(T));
  }
  template <class Derived>
  void matrix(const Eigen::DenseBase<Derived>& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(m(r, c));
    }
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_, offset_, what); }

  void bytes(void* data, std::size_t n) {
    is_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("unexpected end of file");
    offset_ += n;
  }
  template <class T>
  T get() {
    T value{};
    bytes(&value, sizeof(T));
    return value;
  }
  /// Reads a matrix and checks its declared shape.
  Mat matrix(Eigen::Index rows, Eigen::Index cols, const char* name) {
    const auto at = offset_;
    const auto r = get<std::uint64_t>();
    const auto c = get<std::uint64_t>();
    if (r != static_cast<std::uint64_t>(rows) || c != static_cast<std::uint64_t>(cols)) {
      throw FormatError(source_, at,
                        std::string("tensor ") + name + " has shape " + std::to_string(r) + "x" +
                            std::to_string(c) + ", expected " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get<double>();
    }
    return m;
  }
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) fail("trailing bytes after last tensor");
  }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::istream& is_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

}  // namespace groklab
