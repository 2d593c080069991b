#include "dpersona/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace dpersona::io {
namespace {

static_assert(std::endian::native == std::endian::little, "npy IO assumes a little-endian host");

constexpr char kMagic[] = "\x93NUMPY";

template <typename T>
const char* descr();
template <>
const char* descr<float>() { return "<f4"; }
template <>
const char* descr<std::uint8_t>() { return "|u1"; }

std::size_t product(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::runtime_error("negative npy dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

template <typename T>
void write_npy(const std::filesystem::path& path, const std::vector<std::int64_t>& shape, const std::vector<T>& data) {
  if (product(shape) != data.size()) throw std::invalid_argument("npy data size does not match shape");
  std::ostringstream dict;
  dict << "{'descr': '" << descr<T>() << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict << (i ? ", " : "") << shape[i];
  if (shape.size() == 1) dict << ",";
  dict << "), }";
  std::string header = dict.str();
  const std::size_t prefix = 6 + 2 + 2;
  const std::size_t total = ((prefix + header.size() + 1 + 63) / 64) * 64;
  header.append(total - prefix - header.size() - 1, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const std::uint16_t len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

template <typename T>
NpyArray<T> read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) throw std::runtime_error(path.string() + " is not an npy file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::uint32_t len = 0;
  if (version[0] == 1) {
    std::uint16_t l16 = 0;
    in.read(reinterpret_cast<char*>(&l16), 2);
    len = l16;
  } else if (version[0] == 2 || version[0] == 3) {
    in.read(reinterpret_cast<char*>(&len), 4);
  } else {
    throw std::runtime_error("unsupported npy version in " + path.string());
  }
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (!in) throw std::runtime_error("truncated npy header in " + path.string());

  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr'\\s*:\\s*'([^']*)'")) || m[1] != descr<T>()) {
    throw std::runtime_error(path.string() + ": expected dtype " + descr<T>());
  }
  if (std::regex_search(header, m, std::regex("'fortran_order'\\s*:\\s*True"))) {
    throw std::runtime_error(path.string() + ": fortran order is not supported");
  }
  if (!std::regex_search(header, m, std::regex("'shape'\\s*:\\s*\\(([^)]*)\\)"))) {
    throw std::runtime_error(path.string() + ": missing shape");
  }
  NpyArray<T> arr;
  const std::string dims = m[1];
  const std::regex num("\\d+");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
    arr.shape.push_back(std::stoll(it->str()));
  }
  arr.data.resize(product(arr.shape));
  in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(arr.data.size() * sizeof(T)));
  if (!in) throw std::runtime_error("truncated npy payload in " + path.string());
  return arr;
}

template void write_npy<float>(const std::filesystem::path&, const std::vector<std::int64_t>&, const std::vector<float>&);
template void write_npy<std::uint8_t>(const std::filesystem::path&, const std::vector<std::int64_t>&,
                                      const std::vector<std::uint8_t>&);
template NpyArray<float> read_npy<float>(const std::filesystem::path&);
template NpyArray<std::uint8_t> read_npy<std::uint8_t>(const std::filesystem::path&);

}  // namespace dpersona::io
