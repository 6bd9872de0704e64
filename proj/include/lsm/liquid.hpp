#pragma once

// Encoding + liquid simulation for whole datasets, with an optional on-disk
// cache. The liquid is frozen, so its response to a dataset only depends on
// (reservoir, patches, encoding, exposure, noise seed).

#include <cstdlib>
#include <optional>

#include "lsm/reservoir.hpp"

namespace lsm {

/// Spike raster of one patch: encode with `enc` at exposure `e`, then run the
/// liquid from the zero state.
inline SpikeRaster liquid_response(const Reservoir& r, const Patch& p, Encoding enc, int e,
                                   std::uint64_t noise_seed = 0) {
  switch (enc) {
    case Encoding::Latency: return run(r, encode_latency(p, e), std::nullopt, noise_seed);
    case Encoding::Rate: return run(r, encode_rate(p, e), std::nullopt, noise_seed);
    case Encoding::Direct: return run(r, encode_direct(p, e), std::nullopt, noise_seed);
  }
  throw ConfigError("unknown encoding");
}

/// LSM_CACHE_DIR if set, otherwise <tmp>/lsm-cache.
inline std::filesystem::path default_cache_dir() {
  if (const char* env = std::getenv("LSM_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return std::filesystem::temp_directory_path() / "lsm-cache";
}

inline std::uint64_t patches_hash(std::span<const Patch> patches) {
  Fnv1a h;
  for (const auto& p : patches) {
    h.update_value(p.origin.source_id);
    h.update_value(p.origin.time_offset);
    h.update_value(p.origin.freq_offset);
    h.update(std::span<const float>(p.data.data));
    h.update(std::span<const std::uint8_t>(p.mask.data));
  }
  return h.digest();
}

namespace detail {

inline constexpr std::string_view kLiquidMagic{"LSMLIQ1\0", 8};

inline std::string serialize_rasters(std::span<const SpikeRaster> rs) {
  ByteWriter w;
  w.put_bytes(kLiquidMagic);
  w.put<std::uint32_t>(std::uint32_t(rs.size()));
  for (const auto& r : rs) {
    w.put<std::uint32_t>(std::uint32_t(r.steps));
    w.put<std::uint32_t>(std::uint32_t(r.n));
    w.put_array(std::span<const std::uint64_t>(r.bits));
  }
  return w.take();
}

inline std::optional<std::vector<SpikeRaster>> parse_rasters(std::string_view bytes, std::size_t expected) {
  try {
    if (bytes.substr(0, kLiquidMagic.size()) != kLiquidMagic) return std::nullopt;
    ByteReader rd(bytes);
    rd.get_bytes(kLiquidMagic.size(), "magic");
    if (rd.get<std::uint32_t>("count") != expected) return std::nullopt;
    std::vector<SpikeRaster> out;
    out.reserve(expected);
    for (std::size_t i = 0; i < expected; ++i) {
      const int steps = int(rd.get<std::uint32_t>("steps"));
      const int n = int(rd.get<std::uint32_t>("n"));
      SpikeRaster r(steps, n);
      rd.get_array(std::span<std::uint64_t>(r.bits), "bits");
      out.push_back(std::move(r));
    }
    if (rd.remaining() != 0) return std::nullopt;
    return out;
  } catch (const FormatError&) {
    return std::nullopt;
  }
}

}  // namespace detail

struct LiquidRunOptions {
  int threads = 1;
  std::uint64_t noise_seed = 0;  // patch i uses seed_hash(noise_seed, i)
  std::optional<std::filesystem::path> cache_dir;
};

/// Rasters for every patch, in order. Reads from / writes to the cache
/// directory when one is given; a corrupt or mismatched cache entry is
/// recomputed.
inline std::vector<SpikeRaster> liquid_responses(const Reservoir& r, std::span<const Patch> patches, Encoding enc,
                                                 int e, const LiquidRunOptions& opt = {}) {
  std::optional<std::filesystem::path> file;
  if (opt.cache_dir) {
    Fnv1a key;
    key.update_value(reservoir_hash(r));
    key.update_value(patches_hash(patches));
    key.update_value(int(enc));
    key.update_value(e);
    key.update_value(r.params.noise_sigma > 0 ? opt.noise_seed : std::uint64_t{0});
    file = *opt.cache_dir / ("liquid-" + hex64(key.digest()) + ".bin");
    std::error_code ec;
    if (std::filesystem::exists(*file, ec)) {
      if (auto cached = detail::parse_rasters(read_file(*file), patches.size())) return std::move(*cached);
    }
  }
  std::vector<SpikeRaster> out(patches.size());
  parallel_for(patches.size(), opt.threads, [&](std::size_t i) {
    out[i] = liquid_response(r, patches[i], enc, e, seed_hash(opt.noise_seed, i));
  });
  if (file) {
    std::error_code ec;
    std::filesystem::create_directories(file->parent_path(), ec);
    if (!ec) write_file_atomic(*file, detail::serialize_rasters(out));
  }
  return out;
}

}  // namespace lsm
