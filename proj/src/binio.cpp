#include "fuselab/binio.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace fuselab::binio {

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << text;
  if (!out)
    throw IoError("write failed for " + path.string());
}

std::vector<float> read_f32_file(const std::filesystem::path &path) {
  auto bytes = read_file(path);
  if (bytes.size() % sizeof(float) != 0)
    throw IoError(path.string() + ": size is not a multiple of 4");
  Reader r(bytes);
  return r.get_floats(bytes.size() / sizeof(float));
}

void write_f32_file(const std::filesystem::path &path, std::span<const float> data) {
  Writer w;
  w.put_floats(data);
  write_file(path, w.bytes());
}

} // namespace fuselab::binio
