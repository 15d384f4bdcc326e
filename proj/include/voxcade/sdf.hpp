#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "voxcade/edt.hpp"
#include "voxcade/error.hpp"
#include "voxcade/io.hpp"
#include "voxcade/voxelize.hpp"

namespace voxcade {

// Per-voxel signed distance on the index lattice, normalized per grid:
// positive values in (0,1] outside the solid, negative in [-1,0) inside.
// Storage is x-fastest like OccupancyGrid. The same struct doubles as a
// plain scalar-field carrier (sign_convention = 0) for stacked-gray grids.
struct SdfGrid {
  int resolution = 0;
  std::vector<float> values;
  uint8_t sign_convention = 1;  // 1 = negative-inside SDF, 0 = plain scalar field
  bool degenerate = false;

  int64_t index(int x, int y, int z) const {
    return int64_t(x) + int64_t(resolution) * (int64_t(y) + int64_t(resolution) * z);
  }
  float at(int x, int y, int z) const { return values[static_cast<size_t>(index(x, y, z))]; }
};

struct ColoredSdf {
  int resolution = 0;
  std::vector<float> red, green, blue;
};

// Squared index-lattice distance from every voxel to the nearest voxel of
// the feature set (occupied or empty side of the grid).
enum class FeatureSet { occupied, empty };

inline std::vector<int64_t> squared_edt(const OccupancyGrid& grid, FeatureSet features) {
  std::vector<uint8_t> mask(grid.occupied.size());
  for (size_t i = 0; i < mask.size(); ++i)
    mask[i] = (features == FeatureSet::occupied) ? grid.occupied[i] : !grid.occupied[i];
  int R = grid.resolution;
  return squared_edt_grid(mask, {R, R, R});
}

namespace detail {

// Shared by the 3-D grid and 2-D image paths: signed distances from a
// binary mask, each side normalized by its own maximum.
inline std::vector<float> signed_normalized_from_mask(const std::vector<uint8_t>& mask,
                                                      const std::vector<int>& dims) {
  bool any_on = false, any_off = false;
  for (uint8_t m : mask) (m ? any_on : any_off) = true;
  if (!any_on || !any_off)
    fail(errc::degenerate_grid, any_on ? "grid entirely occupied" : "grid entirely empty");

  std::vector<uint8_t> inv(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) inv[i] = !mask[i];
  std::vector<int64_t> d_out = squared_edt_grid(mask, dims);  // distance to occupied, lives on empty
  std::vector<int64_t> d_in = squared_edt_grid(inv, dims);    // distance to empty, lives on occupied

  double max_out = 0, max_in = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) max_in = std::max(max_in, static_cast<double>(d_in[i]));
    else max_out = std::max(max_out, static_cast<double>(d_out[i]));
  }
  double inv_out = 1.0 / std::sqrt(max_out);
  double inv_in = 1.0 / std::sqrt(max_in);

  std::vector<float> values(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    values[i] = mask[i] ? static_cast<float>(-std::sqrt(static_cast<double>(d_in[i])) * inv_in)
                        : static_cast<float>(std::sqrt(static_cast<double>(d_out[i])) * inv_out);
  }
  return values;
}

}  // namespace detail

inline SdfGrid signed_normalized_sdf(const OccupancyGrid& grid) {
  SdfGrid out;
  out.resolution = grid.resolution;
  int R = grid.resolution;
  out.values = detail::signed_normalized_from_mask(grid.occupied, {R, R, R});
  return out;
}

inline SdfGrid downsample_equal_intervals(const SdfGrid& grid, int target_resolution) {
  SdfGrid out;
  out.resolution = target_resolution;
  out.sign_convention = grid.sign_convention;
  out.degenerate = grid.degenerate;
  out.values = detail::downsample_values(grid.values, grid.resolution, target_resolution);
  return out;
}

// Pseudo-color encoding: red marks the interior, blue the exterior beyond
// the edge band, green carries |sdf| zeroed on the band (the minimal
// nonzero magnitude of the grid).
inline ColoredSdf colored_sdf(const SdfGrid& sdf) {
  ColoredSdf out;
  out.resolution = sdf.resolution;
  size_t n = sdf.values.size();
  out.red.assign(n, 0.f);
  out.green.assign(n, 0.f);
  out.blue.assign(n, 0.f);

  float edge_band = 0.f;
  bool found = false;
  for (float v : sdf.values) {
    float a = std::abs(v);
    if (a > 0.f && (!found || a < edge_band)) {
      edge_band = a;
      found = true;
    }
  }
  for (size_t i = 0; i < n; ++i) {
    float v = sdf.values[i];
    if (v < 0.f) out.red[i] = 1.f;
    if (found && v > edge_band) out.blue[i] = 1.f;
    float a = std::abs(v);
    out.green[i] = (found && a <= edge_band) ? 0.f : a;
  }
  return out;
}

// --- SDFV binary block ------------------------------------------------------
// magic "SDFV", version u16, resolution u16, channel count u8,
// sign-convention u8, then channels * R^3 little-endian f32, x-fastest.

inline void write_sdfv_block(ByteWriter& w, int resolution, uint8_t channels, uint8_t sign_convention,
                             const float* data) {
  w.put_string("SDFV");
  w.put<uint16_t>(1);
  w.put<uint16_t>(static_cast<uint16_t>(resolution));
  w.put<uint8_t>(channels);
  w.put<uint8_t>(sign_convention);
  size_t n = size_t(channels) * resolution * resolution * resolution;
  w.put_bytes(data, n * sizeof(float));
}

struct SdfvBlock {
  int resolution = 0;
  uint8_t channels = 1;
  uint8_t sign_convention = 1;
  std::vector<float> values;  // channels * R^3
};

inline SdfvBlock read_sdfv_block(ByteReader& r) {
  std::string magic = r.get_string(4);
  if (magic != "SDFV") fail(errc::bad_magic, "expected SDFV block, got '" + magic + "'");
  uint16_t version = r.get<uint16_t>();
  if (version != 1) fail(errc::bad_magic, "unsupported SDFV version " + std::to_string(version));
  SdfvBlock b;
  b.resolution = r.get<uint16_t>();
  b.channels = r.get<uint8_t>();
  b.sign_convention = r.get<uint8_t>();
  size_t n = size_t(b.channels) * b.resolution * b.resolution * b.resolution;
  b.values.resize(n);
  r.get_bytes(b.values.data(), n * sizeof(float));
  return b;
}

}  // namespace voxcade
