#include "darkforge/raw_io.hpp"

#include <fstream>
#include <iterator>
#include <json.hpp>

#include "darkforge/errors.hpp"

namespace darkforge {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path sidecar_path(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_raw(const fs::path& path, const BayerRaw& frame) {
  frame.validate();
  const json meta = {{"width", frame.width},
                     {"height", frame.height},
                     {"bit_depth", frame.bit_depth},
                     {"cfa_phase", to_string(frame.cfa_phase)},
                     {"black_level", frame.black_level},
                     {"white_level", frame.white_level},
                     {"exposure_time", frame.exposure_time}};
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    std::vector<char> bytes;
    bytes.reserve(frame.data.size() * (frame.bit_depth / 8));
    for (std::uint16_t v : frame.data) {
      bytes.push_back(static_cast<char>(v & 0xFF));
      if (frame.bit_depth == 16) bytes.push_back(static_cast<char>(v >> 8));
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("short write on " + path.string());
  }
  std::ofstream ms(sidecar_path(path));
  if (!ms) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  ms << meta.dump(2) << '\n';
}

BayerRaw read_raw(const fs::path& path) {
  const fs::path meta_path = sidecar_path(path);
  std::ifstream ms(meta_path);
  if (!ms) throw LoadError("missing sidecar " + meta_path.string());
  BayerRaw frame;
  try {
    const json meta = json::parse(ms);
    frame.width = meta.at("width").get<std::size_t>();
    frame.height = meta.at("height").get<std::size_t>();
    frame.bit_depth = meta.at("bit_depth").get<unsigned>();
    frame.cfa_phase = parse_cfa_phase(meta.at("cfa_phase").get<std::string>());
    frame.exposure_time = meta.at("exposure_time").get<double>();
    if (frame.bit_depth != 8 && frame.bit_depth != 16) throw ArgumentError("bit_depth must be 8 or 16");
    frame.black_level = meta.value("black_level", 0u);
    frame.white_level = meta.value("white_level", (1u << frame.bit_depth) - 1u);
  } catch (const std::exception& e) {
    throw LoadError(meta_path.string() + ": " + e.what());
  }

  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::size_t bps = frame.bit_depth / 8;
  const std::size_t expected = frame.width * frame.height * bps;
  if (bytes.size() != expected) {
    throw LoadError(path.string() + ": file holds " + std::to_string(bytes.size()) + " bytes, sidecar implies " +
                    std::to_string(expected));
  }
  frame.data.resize(frame.width * frame.height);
  for (std::size_t i = 0; i < frame.data.size(); ++i) {
    frame.data[i] = bps == 1 ? bytes[i]
                             : static_cast<std::uint16_t>(bytes[2 * i] | (static_cast<unsigned>(bytes[2 * i + 1]) << 8));
  }
  try {
    frame.validate();
  } catch (const std::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  return frame;
}

}  // namespace darkforge
