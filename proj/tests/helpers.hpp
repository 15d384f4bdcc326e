#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "voxcade/mesh.hpp"

namespace testutil {

// O(n^2) all-pairs squared EDT; the independent oracle for the separable
// implementation. Exact integer arithmetic.
inline std::vector<int64_t> brute_force_edt(const std::vector<uint8_t>& mask,
                                            const std::vector<int>& dims) {
  int64_t total = 1;
  for (int d : dims) total *= d;
  std::vector<std::vector<int>> coords;
  {
    std::vector<int> c(dims.size(), 0);
    for (int64_t i = 0; i < total; ++i) {
      coords.push_back(c);
      for (size_t a = 0; a < dims.size(); ++a) {
        if (++c[a] < dims[a]) break;
        c[a] = 0;
      }
    }
  }
  std::vector<int64_t> features;
  for (int64_t i = 0; i < total; ++i)
    if (mask[static_cast<size_t>(i)]) features.push_back(i);

  std::vector<int64_t> out(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) {
    int64_t best = int64_t(1) << 50;
    for (int64_t f : features) {
      int64_t d2 = 0;
      for (size_t a = 0; a < dims.size(); ++a) {
        int64_t d = coords[static_cast<size_t>(i)][a] - coords[static_cast<size_t>(f)][a];
        d2 += d * d;
      }
      best = std::min(best, d2);
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

// Axis-aligned box mesh (12 triangles).
inline voxcade::TriangleMesh make_box_mesh(voxcade::Vec3 lo, voxcade::Vec3 hi) {
  voxcade::TriangleMesh m;
  m.vertices = {
      {lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {lo.x, hi.y, lo.z},
      {lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z}};
  auto quad = [&](uint32_t a, uint32_t b, uint32_t c, uint32_t d) {
    m.faces.push_back({a, b, c});
    m.faces.push_back({a, c, d});
  };
  quad(0, 1, 2, 3);  // z = lo
  quad(4, 7, 6, 5);  // z = hi
  quad(0, 4, 5, 1);  // y = lo
  quad(3, 2, 6, 7);  // y = hi
  quad(0, 3, 7, 4);  // x = lo
  quad(1, 5, 6, 2);  // x = hi
  return m;
}

// Icosphere: icosahedron subdivided `level` times, 20 * 4^level faces.
inline voxcade::TriangleMesh make_icosphere(double radius, int level) {
  using voxcade::Vec3;
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<uint32_t, 3>> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
      {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

  auto project = [&](Vec3 v) {
    double n = v.norm();
    return Vec3{v.x / n * radius, v.y / n * radius, v.z / n * radius};
  };
  for (auto& v : verts) v = project(v);

  for (int l = 0; l < level; ++l) {
    std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint;
    auto mid = [&](uint32_t a, uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = project({(verts[a].x + verts[b].x) / 2, (verts[a].y + verts[b].y) / 2,
                        (verts[a].z + verts[b].z) / 2});
      verts.push_back(m);
      uint32_t idx = static_cast<uint32_t>(verts.size() - 1);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<uint32_t, 3>> next;
    next.reserve(faces.size() * 4);
    for (auto& f : faces) {
      uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  voxcade::TriangleMesh m;
  m.vertices = verts;
  m.faces = faces;
  return m;
}

inline std::vector<uint8_t> random_mask(std::mt19937& rng, int64_t n, double p_on) {
  std::bernoulli_distribution dist(p_on);
  std::vector<uint8_t> mask(static_cast<size_t>(n));
  for (auto& m : mask) m = dist(rng) ? 1 : 0;
  return mask;
}

}  // namespace testutil
