#pragma once

// Little-endian binary helpers shared by the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fuselab/errors.hpp"

namespace fuselab::binio {

static_assert(std::endian::native == std::endian::little, "fuselab formats assume a little-endian host");

class Writer {
public:
  template <class T> void put(T v) {
    auto old = buf_.size();
    buf_.resize(old + sizeof(T));
    std::memcpy(buf_.data() + old, &v, sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void put_string(const std::string &s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_floats(std::span<const float> f) {
    auto old = buf_.size();
    buf_.resize(old + f.size_bytes());
    if (!f.empty())
      std::memcpy(buf_.data() + old, f.data(), f.size_bytes());
  }
  const std::vector<std::uint8_t> &bytes() const { return buf_; }

private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}
  template <class T> T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char *>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> get_floats(std::size_t n) {
    need(n * sizeof(float));
    std::vector<float> v(n);
    if (n)
      std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw IoError("truncated binary data");
  }
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, const std::string &text);

// Raw f32 payload files (rgb_<i>.bin, cloud_<i>.bin).
std::vector<float> read_f32_file(const std::filesystem::path &path);
void write_f32_file(const std::filesystem::path &path, std::span<const float> data);

} // namespace fuselab::binio
