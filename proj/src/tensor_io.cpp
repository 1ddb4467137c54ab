#include "aetsep/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "aetsep/error.hpp"

namespace aetsep::io {

namespace {

constexpr char kNamedMagic[8] = {'A', 'E', 'T', 'S', 'N', 'T', '0', '1'};
constexpr char kGridMagic[8] = {'A', 'E', 'T', 'G', 'R', 'I', 'D', '1'};

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated container: " + path);
  }
  return v;
}

std::string get_string(std::istream& is, std::size_t len, const std::string& path) {
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len))) {
    throw IoError("truncated container: " + path);
  }
  return s;
}

void put_shape(std::ostream& os, const Tensor::Shape& shape) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(os, d);
}

Tensor::Shape get_shape(std::istream& is, const std::string& path) {
  const auto rank = get<std::uint32_t>(is, path);
  if (rank > 8) throw IoError("implausible tensor rank in " + path);
  Tensor::Shape shape(rank);
  for (auto& d : shape) d = get<std::uint64_t>(is, path);
  return shape;
}

void put_payload(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor get_payload(std::istream& is, Tensor::Shape shape, const std::string& path) {
  Tensor t(std::move(shape));
  if (t.size() && !is.read(reinterpret_cast<char*>(t.data()),
                           static_cast<std::streamsize>(t.size() * sizeof(double)))) {
    throw IoError("truncated tensor payload in " + path);
  }
  return t;
}

std::ifstream open_in(const std::string& path, const char (&magic)[8]) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char m[8];
  if (!is.read(m, 8) || std::memcmp(m, magic, 8) != 0) {
    throw IoError("bad magic in " + path);
  }
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  return os;
}

}  // namespace

const Tensor& NamedTensorFile::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("tensor '" + name + "' not found in container");
}

void write_named_tensors(const std::string& path, const NamedTensorFile& file) {
  auto os = open_out(path);
  os.write(kNamedMagic, 8);
  put<std::uint64_t>(os, file.header.size());
  os.write(file.header.data(), static_cast<std::streamsize>(file.header.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_shape(os, t.shape());
  }
  for (const auto& nt : file.tensors) put_payload(os, nt.second);
  if (!os) throw IoError("write failed: " + path);
}

NamedTensorFile read_named_tensors(const std::string& path) {
  auto is = open_in(path, kNamedMagic);
  NamedTensorFile file;
  const auto header_len = get<std::uint64_t>(is, path);
  if (header_len > (1u << 24)) throw IoError("implausible header in " + path);
  file.header = get_string(is, header_len, path);
  const auto count = get<std::uint32_t>(is, path);
  std::vector<std::pair<std::string, Tensor::Shape>> dir;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, path);
    if (len > 4096) throw IoError("implausible tensor name in " + path);
    auto name = get_string(is, len, path);
    dir.emplace_back(std::move(name), get_shape(is, path));
  }
  for (auto& [name, shape] : dir) {
    file.tensors.emplace_back(name, get_payload(is, shape, path));
  }
  return file;
}

void write_grid_raw(const std::string& path, const Tensor& grid) {
  auto os = open_out(path);
  os.write(kGridMagic, 8);
  put_shape(os, grid.shape());
  put_payload(os, grid);
  if (!os) throw IoError("write failed: " + path);
}

Tensor read_grid_raw(const std::string& path) {
  auto is = open_in(path, kGridMagic);
  auto shape = get_shape(is, path);
  return get_payload(is, std::move(shape), path);
}

void write_grid_csv(const std::string& path, const Tensor& grid) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write " + path);
  const std::size_t rows = grid.rows(), cols = grid.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::fprintf(f, c ? ",%.17g" : "%.17g", grid.at(r, c));
    }
    std::fputc('\n', f);
  }
  std::fclose(f);
}

}  // namespace aetsep::io
