#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gplight {

// Binary checkpoint/dataset container: explicit little-endian encoding,
// strings length-prefixed, arrays of float64 named so loaders can validate
// shapes before touching the payload.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for write: " + path);
  }

  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
  }

  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void array(const std::string& name, const std::vector<double>& a) {
    str(name);
    u64(a.size());
    for (double v : a) f64(v);
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed on close");
  }

 private:
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open for read: " + path);
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str() {
    std::uint32_t n = u32();
    if (n > (1u << 20)) throw std::runtime_error("corrupt string length in binary file");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  std::vector<double> array(const std::string& expect_name) {
    std::string name = str();
    if (name != expect_name)
      throw std::runtime_error("expected array '" + expect_name + "', found '" + name + "'");
    std::uint64_t n = u64();
    if (n > (1ull << 28)) throw std::runtime_error("corrupt array length in binary file");
    std::vector<double> a(n);
    for (auto& v : a) v = f64();
    return a;
  }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("unexpected end of binary file");
  }
  std::ifstream in_;
};

// CSV cells: %.10g keeps doubles stable across identical runs without
// printing 17-digit noise for integral counts.
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace gplight
