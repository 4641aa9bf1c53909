// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte buffers for the checkpoint and dataset formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ctcadapt/error.hpp"

namespace ctcadapt {

static_assert(std::endian::native == std::endian::little, "binary I/O assumes a little-endian host");

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void put_doubles(std::span<const double> xs) {
    put_bytes(reinterpret_cast<const char*>(xs.data()), xs.size() * sizeof(double));
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> buf, std::string source) : buf_(std::move(buf)), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError(source_ + ": truncated file");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

}  // namespace detail

}  // namespace ctcadapt
