#include "darkforge/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "darkforge/errors.hpp"

namespace darkforge {

namespace {

template <class T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
  os.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw LoadError("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_tensors(std::ostream& os, const NamedTensors& tensors) {
  os.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
    for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("checkpoint write failed");
}

NamedTensors read_tensors(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw LoadError("not a DFCK checkpoint");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw LoadError("checkpoint truncated in tensor name");
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensors(os, tensors);
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  return read_tensors(is);
}

}  // namespace darkforge
