#include "unimov/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace unimov {

namespace {

static_assert(sizeof(float) == 4, "float32 payload requires 4-byte float");

void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap32(bits);
  os.write(reinterpret_cast<const char*>(&bits), 4);
}

float read_f32_le(std::istream& is) {
  std::uint32_t bits = 0;
  is.read(reinterpret_cast<char*>(&bits), 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap32(bits);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const ad::ParamStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os << "UNIMOV-CKPT v1 " << store.size() << "\n";
  store.for_each([&](const ad::Parameter& p) {
    os << p.name << " " << p.value.rows() << " " << p.value.cols() << "\n";
  });
  store.for_each([&](const ad::Parameter& p) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        write_f32_le(os, static_cast<float>(p.value(r, c)));
  });
  if (!os) throw std::runtime_error("write failed: " + path);
}

void load_checkpoint(ad::ParamStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty checkpoint: " + path);
  std::istringstream head(line);
  std::string magic, version;
  std::size_t count = 0;
  head >> magic >> version >> count;
  if (magic != "UNIMOV-CKPT" || version != "v1")
    throw std::runtime_error("bad checkpoint header: " + path);

  struct Entry {
    std::string name;
    Eigen::Index rows, cols;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("truncated checkpoint header");
    std::istringstream ls(line);
    Entry e;
    if (!(ls >> e.name >> e.rows >> e.cols))
      throw std::runtime_error("bad checkpoint entry: " + line);
    entries.push_back(e);
  }
  for (const auto& e : entries) {
    ad::Parameter& p = store.at(e.name);
    if (p.value.rows() != e.rows || p.value.cols() != e.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + e.name);
    for (Eigen::Index r = 0; r < e.rows; ++r)
      for (Eigen::Index c = 0; c < e.cols; ++c)
        p.value(r, c) = static_cast<double>(read_f32_le(is));
  }
  if (!is) throw std::runtime_error("truncated checkpoint payload: " + path);
}

}  // namespace unimov
