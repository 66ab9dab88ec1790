#ifndef GROUNDER_FMAP_IO_HPP_
#define GROUNDER_FMAP_IO_HPP_

#include <filesystem>
#include <iosfwd>

#include "grounder/numerics.hpp"

namespace grounder {

// FMAP layout: the bytes "FMAP", then little-endian u32 version (=1), H, W, C,
// then H*W*C little-endian float32 values in (h, w, c) row-major order.
inline constexpr std::uint32_t kFmapVersion = 1;

void write_fmap(std::ostream& out, const FeatureMap& map);
FeatureMap read_fmap(std::istream& in);

void write_fmap(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_fmap(const std::filesystem::path& path);

// 8-bit binary PGM of channel `channel`, values clamped to [0, 1] and scaled
// to 0..255. For eyeballing heatmaps only.
void write_pgm(const std::filesystem::path& path, const FeatureMap& map,
               int channel = 0);

}  // namespace grounder

#endif  // GROUNDER_FMAP_IO_HPP_
