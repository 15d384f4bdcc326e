#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"
#include "voxcade/mesh.hpp"
#include "voxcade/sdf.hpp"
#include "voxcade/voxelize.hpp"

using namespace voxcade;

TEST_CASE("load_off parses a minimal triangle") {
  auto mesh = load_off(std::string("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"));
  REQUIRE(mesh.vertices.size() == 3);
  REQUIRE(mesh.faces.size() == 1);
  CHECK(mesh.faces[0] == std::array<uint32_t, 3>{0, 1, 2});
}

TEST_CASE("load_off accepts counts glued to the magic") {
  // ModelNet ships files like "OFF490 518 0" with no newline after the magic
  auto mesh = load_off(std::string("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"));
  REQUIRE(mesh.vertices.size() == 3);
  REQUIRE(mesh.faces.size() == 1);
}

TEST_CASE("load_off fan-triangulates quads") {
  auto mesh = load_off(std::string("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"));
  REQUIRE(mesh.faces.size() == 2);
  CHECK(mesh.faces[0] == std::array<uint32_t, 3>{0, 1, 2});
  CHECK(mesh.faces[1] == std::array<uint32_t, 3>{0, 2, 3});
}

TEST_CASE("load_off error paths") {
  SECTION("missing magic") {
    CHECK_THROWS_MATCHES(load_off(std::string("3 1 0\n")), error,
                         Catch::Matchers::Predicate<error>([](const error& e) { return e.code() == errc::malformed_header; }));
  }
  SECTION("declared four vertices, body has three") {
    try {
      load_off(std::string("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"));
      FAIL("expected CountMismatch");
    } catch (const error& e) {
      CHECK(e.code() == errc::count_mismatch);
    }
  }
  SECTION("face index out of range") {
    try {
      load_off(std::string("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n"));
      FAIL("expected CountMismatch");
    } catch (const error& e) {
      CHECK(e.code() == errc::count_mismatch);
    }
  }
  SECTION("non-finite coordinate") {
    try {
      load_off(std::string("OFF\n3 1 0\nnan 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"));
      FAIL("expected NonFiniteCoordinate");
    } catch (const error& e) {
      CHECK(e.code() == errc::non_finite_coordinate);
    }
  }
}

TEST_CASE("normalize_to_unit_ball centers and scales") {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}};
  m.faces = {{0, 1, 2}};
  auto n = normalize_to_unit_ball(m);

  Vec3 c{};
  for (auto& v : n.vertices) c = c + v;
  c = c * (1.0 / 3.0);
  CHECK(std::abs(c.x) < 1e-9);
  CHECK(std::abs(c.y) < 1e-9);
  CHECK(std::abs(c.z) < 1e-9);

  double max_norm = 0;
  for (auto& v : n.vertices) max_norm = std::max(max_norm, v.norm());
  CHECK(max_norm == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("normalize_to_unit_ball is idempotent") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-5, 5);
  TriangleMesh m;
  for (int i = 0; i < 20; ++i) m.vertices.push_back({u(rng), u(rng), u(rng)});
  m.faces = {{0, 1, 2}};
  auto once = normalize_to_unit_ball(m);
  auto twice = normalize_to_unit_ball(once);
  for (size_t i = 0; i < once.vertices.size(); ++i) {
    CHECK(std::abs(once.vertices[i].x - twice.vertices[i].x) < 1e-9);
    CHECK(std::abs(once.vertices[i].y - twice.vertices[i].y) < 1e-9);
    CHECK(std::abs(once.vertices[i].z - twice.vertices[i].z) < 1e-9);
  }
}

TEST_CASE("normalize_to_unit_ball rejects coincident vertices") {
  TriangleMesh m;
  m.vertices = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  m.faces = {{0, 1, 2}};
  try {
    normalize_to_unit_ball(m);
    FAIL("expected DegenerateMesh");
  } catch (const error& e) {
    CHECK(e.code() == errc::degenerate_mesh);
  }
}

TEST_CASE("solid_voxelize matches the point-in-box oracle exactly") {
  auto box = testutil::make_box_mesh({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
  int R = 16;
  auto grid = solid_voxelize(box, R);
  CHECK(grid.watertight_ok);
  double pitch = 2.0 / R;
  for (int z = 0; z < R; ++z)
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x) {
        double xc = -1 + (x + 0.5) * pitch, yc = -1 + (y + 0.5) * pitch, zc = -1 + (z + 0.5) * pitch;
        bool inside = std::abs(xc) < 0.5 && std::abs(yc) < 0.5 && std::abs(zc) < 0.5;
        REQUIRE(grid.at(x, y, z) == inside);
      }
}

TEST_CASE("solid_voxelize sphere volume within 3% of analytic") {
  auto sphere = testutil::make_icosphere(0.8, 3);
  REQUIRE(sphere.faces.size() == 1280);
  int R = 32;
  auto grid = solid_voxelize(sphere, R);
  CHECK(grid.watertight_ok);
  double pitch = 2.0 / R;
  double analytic = (4.0 / 3.0) * 3.14159265358979 * 0.8 * 0.8 * 0.8 / (pitch * pitch * pitch);
  double count = static_cast<double>(grid.count_occupied());
  CHECK(std::abs(count - analytic) / analytic < 0.03);
}

TEST_CASE("solid_voxelize errors") {
  TriangleMesh empty;
  empty.vertices = {{0, 0, 0}};
  try {
    solid_voxelize(empty, 16);
    FAIL("expected EmptyMesh");
  } catch (const error& e) {
    CHECK(e.code() == errc::empty_mesh);
  }
  auto box = testutil::make_box_mesh({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
  try {
    solid_voxelize(box, 2);
    FAIL("expected ResolutionOutOfRange");
  } catch (const error& e) {
    CHECK(e.code() == errc::resolution_out_of_range);
  }
}

TEST_CASE("solid_voxelize flags non-watertight input") {
  // a lone triangle facing the ray direction gives odd crossing counts
  TriangleMesh tri;
  tri.vertices = {{0.01, -0.8, -0.8}, {0.01, 0.8, -0.8}, {0.01, 0, 0.8}};
  tri.faces = {{0, 1, 2}};
  auto grid = solid_voxelize(tri, 16);
  CHECK_FALSE(grid.watertight_ok);
}

TEST_CASE("voxelization commutes with axis permutation") {
  // parity along +x must not privilege any axis for watertight meshes
  auto check = [](const TriangleMesh& mesh, int R) {
    TriangleMesh swapped = mesh;
    for (auto& v : swapped.vertices) std::swap(v.x, v.y);
    auto g = solid_voxelize(mesh, R);
    auto gs = solid_voxelize(swapped, R);
    for (int z = 0; z < R; ++z)
      for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) REQUIRE(gs.at(x, y, z) == g.at(y, x, z));
  };
  check(testutil::make_box_mesh({-0.7, -0.4, -0.3}, {0.5, 0.6, 0.2}), 16);
  check(testutil::make_icosphere(0.75, 2), 16);
}

TEST_CASE("downsample_equal_intervals picks centered strided samples") {
  SECTION("constant grid stays constant") {
    OccupancyGrid g;
    g.resolution = 64;
    g.voxel_pitch = 2.0 / 64;
    g.occupied.assign(64 * 64 * 64, 1);
    auto d = downsample_equal_intervals(g, 8);
    REQUIRE(d.resolution == 8);
    for (auto v : d.occupied) REQUIRE(v == 1);
  }
  SECTION("64^3 -> 8^3 reads source indices {4,12,...,60}") {
    SdfGrid g;
    g.resolution = 64;
    g.values.resize(64 * 64 * 64);
    for (size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<float>(i);
    auto d = downsample_equal_intervals(g, 8);
    for (int z = 0; z < 8; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          int sx = x * 8 + 4, sy = y * 8 + 4, sz = z * 8 + 4;
          REQUIRE(d.at(x, y, z) == g.at(sx, sy, sz));
        }
  }
  SECTION("identity when target equals source") {
    SdfGrid g;
    g.resolution = 4;
    g.values.resize(64);
    for (size_t i = 0; i < 64; ++i) g.values[i] = static_cast<float>(i) * 0.25f;
    auto d = downsample_equal_intervals(g, 4);
    CHECK(d.values == g.values);
  }
  SECTION("indivisible resolutions are rejected") {
    OccupancyGrid g;
    g.resolution = 10;
    g.occupied.assign(1000, 0);
    try {
      downsample_equal_intervals(g, 4);
      FAIL("expected NotDivisible");
    } catch (const error& e) {
      CHECK(e.code() == errc::not_divisible);
    }
  }
}

TEST_CASE("downsample preserves value-set membership") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(-1, 1);
  SdfGrid g;
  g.resolution = 16;
  g.values.resize(16 * 16 * 16);
  for (auto& v : g.values) v = u(rng);
  auto d = downsample_equal_intervals(g, 4);
  for (float v : d.values) {
    CHECK(std::find(g.values.begin(), g.values.end(), v) != g.values.end());
  }
}
