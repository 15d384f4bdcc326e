#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "voxcade/error.hpp"
#include "voxcade/mesh.hpp"
#include "voxcade/parallel.hpp"

namespace voxcade {

// Cubic binary voxelization over [-1,1]^3, x-fastest storage
// (index = x + R*(y + R*z)). voxel_pitch = 2/R.
struct OccupancyGrid {
  int resolution = 0;
  std::vector<uint8_t> occupied;
  double voxel_pitch = 0;
  // false when parity found an odd crossing count somewhere (non-watertight
  // input); the grid is still filled best-effort.
  bool watertight_ok = true;

  int64_t index(int x, int y, int z) const {
    return int64_t(x) + int64_t(resolution) * (int64_t(y) + int64_t(resolution) * z);
  }
  bool at(int x, int y, int z) const { return occupied[static_cast<size_t>(index(x, y, z))] != 0; }
  int64_t count_occupied() const {
    int64_t n = 0;
    for (uint8_t v : occupied) n += v;
    return n;
  }
};

namespace detail {

struct RowCastResult {
  std::vector<double> crossings;
  bool degenerate = false;  // ray grazed an edge/vertex; caller must jitter
};

// Casts the +x ray through (yc, zc): a triangle is crossed iff (yc, zc) lies
// strictly inside its yz-projection. Barycentric weights double as the
// grazing test (any weight near zero means the ray passes within ~1e-9 of an
// edge or vertex, where parity is not well defined).
inline RowCastResult cast_row(const TriangleMesh& mesh, double yc, double zc) {
  RowCastResult r;
  for (const auto& f : mesh.faces) {
    const Vec3& p0 = mesh.vertices[f[0]];
    const Vec3& p1 = mesh.vertices[f[1]];
    const Vec3& p2 = mesh.vertices[f[2]];
    double w0 = (p1.y - yc) * (p2.z - zc) - (p1.z - zc) * (p2.y - yc);
    double w1 = (p2.y - yc) * (p0.z - zc) - (p2.z - zc) * (p0.y - yc);
    double w2 = (p0.y - yc) * (p1.z - zc) - (p0.z - zc) * (p1.y - yc);
    bool pos = w0 > 0 && w1 > 0 && w2 > 0;
    bool neg = w0 < 0 && w1 < 0 && w2 < 0;
    double wmin = std::min({std::abs(w0), std::abs(w1), std::abs(w2)});
    if (pos || neg) {
      if (wmin < 1e-9) {
        r.degenerate = true;
        return r;
      }
      double wsum = w0 + w1 + w2;
      r.crossings.push_back((w0 * p0.x + w1 * p1.x + w2 * p2.x) / wsum);
    } else if (wmin < 1e-9) {
      // grazing from outside the strict-inside test is equally unreliable
      double lo = std::min({w0, w1, w2}), hi = std::max({w0, w1, w2});
      if (lo > -1e-9 && hi < 1e-9) continue;  // projected triangle is degenerate (edge-on)
      if ((hi > 0 && lo > -1e-9) || (lo < 0 && hi < 1e-9)) {
        r.degenerate = true;
        return r;
      }
    }
  }
  return r;
}

}  // namespace detail

// Solid voxelization by ray-crossing parity along +x. A voxel is occupied
// iff the crossing count beyond its center is odd. Rays that graze a
// triangle edge/vertex are re-cast from a deterministically jittered origin
// (shift of k*1e-7*pitch in y and z), so results are reproducible.
inline OccupancyGrid solid_voxelize(const TriangleMesh& mesh, int resolution) {
  require(!mesh.faces.empty(), errc::empty_mesh, "mesh has no faces");
  require(resolution >= 4 && resolution <= 512, errc::resolution_out_of_range,
          "resolution " + std::to_string(resolution) + " outside [4, 512]");

  const int R = resolution;
  const double pitch = 2.0 / R;
  OccupancyGrid grid;
  grid.resolution = R;
  grid.voxel_pitch = pitch;
  grid.occupied.assign(size_t(R) * R * R, 0);

  std::vector<uint8_t> odd_rows(size_t(R) * R, 0);

  parallel_for(int64_t(R) * R, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      int iy = static_cast<int>(row % R);
      int iz = static_cast<int>(row / R);
      double yc = -1.0 + (iy + 0.5) * pitch;
      double zc = -1.0 + (iz + 0.5) * pitch;
      detail::RowCastResult cast;
      for (int attempt = 0; attempt < 64; ++attempt) {
        // unequal y/z shifts so rays on a mesh diagonal actually leave it
        double d = attempt * 1e-7 * pitch;
        cast = detail::cast_row(mesh, yc + d, zc + d * 1.6180339887);
        if (!cast.degenerate) break;
      }
      if (cast.degenerate) cast.crossings.clear();  // give up on this row; leave empty
      std::sort(cast.crossings.begin(), cast.crossings.end());
      if (cast.crossings.size() % 2 != 0) odd_rows[static_cast<size_t>(row)] = 1;
      // walk voxel centers and crossings together; parity flips at each crossing
      size_t k = 0;
      bool inside = false;
      for (int ix = 0; ix < R; ++ix) {
        double xc = -1.0 + (ix + 0.5) * pitch;
        while (k < cast.crossings.size() && cast.crossings[k] <= xc) {
          inside = !inside;
          ++k;
        }
        if (inside) grid.occupied[static_cast<size_t>(grid.index(ix, iy, iz))] = 1;
      }
    }
  });

  for (uint8_t o : odd_rows)
    if (o) grid.watertight_ok = false;
  return grid;
}

namespace detail {

template <class T>
std::vector<T> downsample_values(const std::vector<T>& src, int src_res, int dst_res) {
  require(dst_res > 0 && src_res % dst_res == 0, errc::not_divisible,
          std::to_string(src_res) + " not divisible by " + std::to_string(dst_res));
  int s = src_res / dst_res;
  int off = s / 2;
  std::vector<T> out(size_t(dst_res) * dst_res * dst_res);
  size_t o = 0;
  for (int z = 0; z < dst_res; ++z)
    for (int y = 0; y < dst_res; ++y)
      for (int x = 0; x < dst_res; ++x) {
        int sx = x * s + off, sy = y * s + off, sz = z * s + off;
        out[o++] = src[size_t(sx) + size_t(src_res) * (size_t(sy) + size_t(src_res) * sz)];
      }
  return out;
}

}  // namespace detail

// Centered strided sampling (source index i*s + floor(s/2)); no averaging.
inline OccupancyGrid downsample_equal_intervals(const OccupancyGrid& grid, int target_resolution) {
  OccupancyGrid out;
  out.resolution = target_resolution;
  out.voxel_pitch = 2.0 / target_resolution;
  out.watertight_ok = grid.watertight_ok;
  out.occupied = detail::downsample_values(grid.occupied, grid.resolution, target_resolution);
  return out;
}

}  // namespace voxcade
