#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "voxcade/error.hpp"

namespace voxcade {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<uint32_t, 3>> faces;
};

namespace detail {

// Pulls the next whitespace-separated token, skipping '#' comments.
class OffTokenizer {
 public:
  explicit OffTokenizer(const std::string& text) : s_(text) {}

  bool next(std::string& tok) {
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= s_.size()) return false;
    size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != '#') ++pos_;
    tok.assign(s_, start, pos_ - start);
    return true;
  }

 private:
  const std::string& s_;
  size_t pos_ = 0;
};

inline double parse_coord(const std::string& tok) {
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') fail(errc::non_finite_coordinate, "bad coordinate '" + tok + "'");
  if (!std::isfinite(v)) fail(errc::non_finite_coordinate, "non-finite coordinate '" + tok + "'");
  return v;
}

inline uint64_t parse_count(const std::string& tok, const char* what) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0') fail(errc::count_mismatch, std::string("bad ") + what + " '" + tok + "'");
  return v;
}

}  // namespace detail

// Parses ASCII OFF. Polygon faces are fan-triangulated; ModelNet's broken
// "OFF490 518 0" headers (counts glued to the magic) are accepted.
inline TriangleMesh load_off(const std::string& text) {
  detail::OffTokenizer tok(text);
  std::string t;
  if (!tok.next(t)) fail(errc::malformed_header, "empty OFF input");
  uint64_t nv = 0, nf = 0;
  if (t == "OFF") {
    std::string a, b, c;
    if (!tok.next(a) || !tok.next(b) || !tok.next(c)) fail(errc::malformed_header, "missing counts line");
    nv = detail::parse_count(a, "vertex count");
    nf = detail::parse_count(b, "face count");
    detail::parse_count(c, "edge count");
  } else if (t.rfind("OFF", 0) == 0) {
    std::string b, c;
    if (!tok.next(b) || !tok.next(c)) fail(errc::malformed_header, "missing counts line");
    nv = detail::parse_count(t.substr(3), "vertex count");
    nf = detail::parse_count(b, "face count");
    detail::parse_count(c, "edge count");
  } else {
    fail(errc::malformed_header, "input does not start with OFF");
  }

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (uint64_t i = 0; i < nv; ++i) {
    std::string xs, ys, zs;
    if (!tok.next(xs) || !tok.next(ys) || !tok.next(zs))
      fail(errc::count_mismatch, "declared " + std::to_string(nv) + " vertices, file ends at " + std::to_string(i));
    mesh.vertices.push_back({detail::parse_coord(xs), detail::parse_coord(ys), detail::parse_coord(zs)});
  }
  for (uint64_t i = 0; i < nf; ++i) {
    std::string ns;
    if (!tok.next(ns))
      fail(errc::count_mismatch, "declared " + std::to_string(nf) + " faces, file ends at " + std::to_string(i));
    uint64_t n = detail::parse_count(ns, "face valence");
    if (n < 3) fail(errc::count_mismatch, "face with fewer than 3 vertices");
    std::vector<uint32_t> poly(n);
    for (uint64_t k = 0; k < n; ++k) {
      if (!tok.next(t)) fail(errc::count_mismatch, "face index list truncated");
      uint64_t idx = detail::parse_count(t, "face index");
      if (idx >= nv) fail(errc::count_mismatch, "face index " + std::to_string(idx) + " out of range");
      poly[k] = static_cast<uint32_t>(idx);
    }
    for (uint64_t k = 1; k + 1 < n; ++k) {
      mesh.faces.push_back({poly[0], poly[static_cast<size_t>(k)], poly[static_cast<size_t>(k + 1)]});
    }
  }
  return mesh;
}

inline TriangleMesh load_off(const std::vector<uint8_t>& bytes) {
  return load_off(std::string(bytes.begin(), bytes.end()));
}

// Translates the vertex centroid to the origin and scales so the farthest
// vertex sits exactly on the unit sphere.
inline TriangleMesh normalize_to_unit_ball(const TriangleMesh& mesh) {
  require(!mesh.vertices.empty(), errc::degenerate_mesh, "mesh has no vertices");
  Vec3 c{};
  for (const Vec3& v : mesh.vertices) c = c + v;
  double inv_n = 1.0 / static_cast<double>(mesh.vertices.size());
  c = c * inv_n;
  double max_norm = 0;
  for (const Vec3& v : mesh.vertices) max_norm = std::max(max_norm, (v - c).norm());
  if (max_norm < 1e-12) fail(errc::degenerate_mesh, "all vertices coincide");
  TriangleMesh out;
  out.faces = mesh.faces;
  out.vertices.reserve(mesh.vertices.size());
  double inv_s = 1.0 / max_norm;
  for (const Vec3& v : mesh.vertices) out.vertices.push_back((v - c) * inv_s);
  return out;
}

}  // namespace voxcade
