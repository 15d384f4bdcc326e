#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "voxcade/error.hpp"
#include "voxcade/parallel.hpp"

namespace voxcade {

// Exact squared Euclidean distance transform on the integer index lattice,
// via the separable lower-envelope-of-parabolas scan (Felzenszwalb &
// Huttenlocher). Inputs are arbitrary-rank grids stored x-fastest.

constexpr int64_t kEdtInf = int64_t(1) << 50;

namespace detail {

// 1-D squared distance transform. f/out may alias distinct buffers only.
inline void edt_pass_1d(const int64_t* f, int n, int64_t* out, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    if (f[q] >= kEdtInf) continue;  // empty parabola never wins
    double fq = static_cast<double>(f[q]);
    while (true) {
      int p = v[k];
      if (f[p] >= kEdtInf) {
        // only happens for the initial site when the prefix is all-empty
        v[k] = q;
        z[k] = -std::numeric_limits<double>::infinity();
        z[k + 1] = std::numeric_limits<double>::infinity();
        break;
      }
      double s = (fq + double(q) * q - (double(f[p]) + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k]) {
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = std::numeric_limits<double>::infinity();
      break;
    }
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    int p = v[k];
    if (f[p] >= kEdtInf) {
      out[q] = kEdtInf;
    } else {
      int64_t d = int64_t(q) - p;
      out[q] = d * d + f[p];
    }
  }
}

// Applies the 1-D pass along one axis of an N-d grid.
inline void edt_axis(std::vector<int64_t>& dist, const std::vector<int>& dims, int axis) {
  int rank = static_cast<int>(dims.size());
  int n = dims[static_cast<size_t>(axis)];
  int64_t stride = 1;
  for (int a = 0; a < axis; ++a) stride *= dims[static_cast<size_t>(a)];
  int64_t lines = 1;
  for (int a = 0; a < rank; ++a)
    if (a != axis) lines *= dims[static_cast<size_t>(a)];

  parallel_for(lines, [&](int64_t lo, int64_t hi) {
    std::vector<int64_t> f(static_cast<size_t>(n)), out(static_cast<size_t>(n));
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n) + 1);
    for (int64_t line = lo; line < hi; ++line) {
      // decompose the line id into coordinates of the non-axis dims to find
      // the offset of this line's first element
      int64_t base = 0, rem = line, str = 1;
      for (int a = 0; a < rank; ++a) {
        int64_t d = dims[static_cast<size_t>(a)];
        if (a == axis) {
          str *= d;
          continue;
        }
        int64_t c = rem % d;
        rem /= d;
        base += c * str;
        str *= d;
      }
      for (int i = 0; i < n; ++i) f[static_cast<size_t>(i)] = dist[static_cast<size_t>(base + i * stride)];
      edt_pass_1d(f.data(), n, out.data(), v.data(), z.data());
      for (int i = 0; i < n; ++i) dist[static_cast<size_t>(base + i * stride)] = out[static_cast<size_t>(i)];
    }
  }, /*min_chunk=*/16);
}

}  // namespace detail

// Squared distance from every cell to the nearest feature cell (in index
// units squared, exact integers). Cells are feature cells when
// mask[i] != 0. Axis order is irrelevant to the result; `axis_order` exists
// so tests can assert that.
inline std::vector<int64_t> squared_edt_grid(const std::vector<uint8_t>& mask,
                                             const std::vector<int>& dims,
                                             const std::vector<int>* axis_order = nullptr) {
  int64_t total = 1;
  for (int d : dims) {
    require(d > 0, errc::shape_mismatch, "non-positive grid dimension");
    total *= d;
  }
  require(static_cast<int64_t>(mask.size()) == total, errc::shape_mismatch, "mask size != grid size");

  std::vector<int64_t> dist(mask.size());
  bool any = false;
  for (size_t i = 0; i < mask.size(); ++i) {
    dist[i] = mask[i] ? 0 : kEdtInf;
    any = any || mask[i];
  }
  if (!any) fail(errc::empty_feature_set, "no feature cells in grid");

  if (axis_order) {
    for (int a : *axis_order) detail::edt_axis(dist, dims, a);
  } else {
    for (int a = 0; a < static_cast<int>(dims.size()); ++a) detail::edt_axis(dist, dims, a);
  }
  return dist;
}

}  // namespace voxcade
