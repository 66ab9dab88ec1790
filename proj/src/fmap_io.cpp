#include "grounder/fmap_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "grounder/binary_io.hpp"
#include "grounder/errors.hpp"

namespace grounder {

namespace {
constexpr char kMagic[4] = {'F', 'M', 'A', 'P'};
constexpr std::uint32_t kMaxExtent = 1u << 16;
}  // namespace

void write_fmap(std::ostream& out, const FeatureMap& map) {
  out.write(kMagic, 4);
  binary::write_pod<std::uint32_t>(out, kFmapVersion);
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(map.height()));
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(map.width()));
  binary::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(map.channels()));
  auto data = map.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw Error("failed writing FMAP stream");
}

FeatureMap read_fmap(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic)) {
    throw FormatError("FMAP: bad magic bytes");
  }
  const auto version = binary::read_pod<std::uint32_t>(in);
  if (version != kFmapVersion) {
    throw FormatError("FMAP: unsupported version " + std::to_string(version));
  }
  const auto h = binary::read_pod<std::uint32_t>(in);
  const auto w = binary::read_pod<std::uint32_t>(in);
  const auto c = binary::read_pod<std::uint32_t>(in);
  if (h > kMaxExtent || w > kMaxExtent || c > kMaxExtent) {
    throw FormatError("FMAP: dimensions out of range");
  }
  std::vector<float> data(static_cast<std::size_t>(h) * w * c);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw FormatError("FMAP: truncated payload");
  try {
    return FeatureMap(static_cast<int>(h), static_cast<int>(w),
                      static_cast<int>(c), std::move(data));
  } catch (const DataError& e) {
    throw FormatError(std::string("FMAP: ") + e.what());
  }
}

void write_fmap(const std::filesystem::path& path, const FeatureMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_fmap(out, map);
}

FeatureMap read_fmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open FMAP file " + path.string());
  return read_fmap(in);
}

void write_pgm(const std::filesystem::path& path, const FeatureMap& map,
               int channel) {
  if (channel < 0 || channel >= map.channels()) {
    throw DimensionError("PGM export: channel out of range");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << map.width() << " " << map.height() << "\n255\n";
  for (int h = 0; h < map.height(); ++h) {
    for (int w = 0; w < map.width(); ++w) {
      const float v = std::clamp(map.at(h, w, channel), 0.0f, 1.0f);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
}

}  // namespace grounder
