#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "helpers.hpp"
#include "voxcade/sdf.hpp"

using namespace voxcade;

namespace {

OccupancyGrid grid_from_mask(std::vector<uint8_t> mask, int R) {
  OccupancyGrid g;
  g.resolution = R;
  g.voxel_pitch = 2.0 / R;
  g.occupied = std::move(mask);
  return g;
}

}  // namespace

TEST_CASE("squared_edt: single feature voxel, hand-checked corner") {
  std::vector<uint8_t> mask(5 * 5 * 5, 0);
  mask[2 + 5 * (2 + 5 * 2)] = 1;  // center (2,2,2)
  auto g = grid_from_mask(mask, 5);
  auto d = squared_edt(g, FeatureSet::occupied);
  CHECK(d[0] == 12);            // (0,0,0): 4+4+4
  CHECK(d[2 + 5 * (2 + 5 * 2)] == 0);
  CHECK(d[4 + 5 * (4 + 5 * 4)] == 12);
}

TEST_CASE("squared_edt: all occupied gives all zeros") {
  auto g = grid_from_mask(std::vector<uint8_t>(4 * 4 * 4, 1), 4);
  auto d = squared_edt(g, FeatureSet::occupied);
  for (auto v : d) CHECK(v == 0);
}

TEST_CASE("squared_edt matches brute force exactly on random grids") {
  std::mt19937 rng(101);
  for (int trial = 0; trial < 12; ++trial) {
    auto mask = testutil::random_mask(rng, 9 * 9 * 9, 0.15);
    if (std::find(mask.begin(), mask.end(), 1) == mask.end()) mask[100] = 1;
    auto fast = squared_edt_grid(mask, {9, 9, 9});
    auto slow = testutil::brute_force_edt(mask, {9, 9, 9});
    REQUIRE(fast == slow);
  }
  // 2-D lines of the same machinery
  for (int trial = 0; trial < 12; ++trial) {
    auto mask = testutil::random_mask(rng, 9 * 9, 0.2);
    if (std::find(mask.begin(), mask.end(), 1) == mask.end()) mask[40] = 1;
    auto fast = squared_edt_grid(mask, {9, 9});
    auto slow = testutil::brute_force_edt(mask, {9, 9});
    REQUIRE(fast == slow);
  }
}

TEST_CASE("squared_edt is independent of axis order") {
  std::mt19937 rng(555);
  for (int trial = 0; trial < 8; ++trial) {
    auto mask = testutil::random_mask(rng, 7 * 7 * 7, 0.1);
    if (std::find(mask.begin(), mask.end(), 1) == mask.end()) mask[170] = 1;
    std::vector<int> orders[] = {{0, 1, 2}, {2, 1, 0}, {1, 0, 2}, {2, 0, 1}};
    auto ref = squared_edt_grid(mask, {7, 7, 7}, &orders[0]);
    for (int i = 1; i < 4; ++i) {
      REQUIRE(squared_edt_grid(mask, {7, 7, 7}, &orders[i]) == ref);
    }
  }
}

TEST_CASE("squared_edt signals an empty feature set") {
  auto g = grid_from_mask(std::vector<uint8_t>(4 * 4 * 4, 0), 4);
  try {
    squared_edt(g, FeatureSet::occupied);
    FAIL("expected EmptyFeatureSet");
  } catch (const error& e) {
    CHECK(e.code() == errc::empty_feature_set);
  }
}

TEST_CASE("signed_normalized_sdf: single occupied voxel in 5^3") {
  std::vector<uint8_t> mask(5 * 5 * 5, 0);
  size_t center = 2 + 5 * (2 + 5 * 2);
  mask[center] = 1;
  auto sdf = signed_normalized_sdf(grid_from_mask(mask, 5));
  CHECK(sdf.values[center] == -1.0f);   // only interior voxel normalizes by itself
  CHECK(sdf.values[0] == 1.0f);         // farthest corner
}

TEST_CASE("signed_normalized_sdf: solid 3^3 cube centered in 9^3") {
  std::vector<uint8_t> mask(9 * 9 * 9, 0);
  for (int z = 3; z <= 5; ++z)
    for (int y = 3; y <= 5; ++y)
      for (int x = 3; x <= 5; ++x) mask[static_cast<size_t>(x + 9 * (y + 9 * z))] = 1;
  auto sdf = signed_normalized_sdf(grid_from_mask(mask, 9));

  // oracle: brute-force EDT on both sides plus the per-grid normalization
  std::vector<uint8_t> inv(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) inv[i] = !mask[i];
  auto d_out = testutil::brute_force_edt(mask, {9, 9, 9});
  auto d_in = testutil::brute_force_edt(inv, {9, 9, 9});
  double max_out = 0, max_in = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) max_in = std::max(max_in, double(d_in[i]));
    else max_out = std::max(max_out, double(d_out[i]));
  }
  for (size_t i = 0; i < mask.size(); ++i) {
    double expect = mask[i] ? -std::sqrt(double(d_in[i])) / std::sqrt(max_in)
                            : std::sqrt(double(d_out[i])) / std::sqrt(max_out);
    REQUIRE(sdf.values[i] == Catch::Approx(expect).margin(1e-6));
  }
  CHECK(sdf.values[4 + 9 * (4 + 9 * 4)] == -1.0f);
  CHECK(sdf.values[0] == 1.0f);
}

TEST_CASE("signed_normalized_sdf complement symmetry") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 6; ++trial) {
    auto mask = testutil::random_mask(rng, 6 * 6 * 6, 0.4);
    bool on = false, off = false;
    for (auto m : mask) (m ? on : off) = true;
    if (!on) mask[0] = 1;
    if (!off) mask[1] = 0;
    std::vector<uint8_t> comp(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) comp[i] = !mask[i];
    auto a = signed_normalized_sdf(grid_from_mask(mask, 6));
    auto b = signed_normalized_sdf(grid_from_mask(comp, 6));
    for (size_t i = 0; i < a.values.size(); ++i) REQUIRE(a.values[i] == -b.values[i]);
  }
}

TEST_CASE("signed_normalized_sdf sign partition and exact range") {
  std::mt19937 rng(904);
  for (int trial = 0; trial < 6; ++trial) {
    auto mask = testutil::random_mask(rng, 8 * 8 * 8, 0.3);
    bool on = false, off = false;
    for (auto m : mask) (m ? on : off) = true;
    if (!on) mask[0] = 1;
    if (!off) mask[1] = 0;
    auto sdf = signed_normalized_sdf(grid_from_mask(mask, 8));
    float max_pos = -2, min_neg = 2;
    for (size_t i = 0; i < sdf.values.size(); ++i) {
      REQUIRE((sdf.values[i] < 0) == (mask[i] != 0));
      REQUIRE(sdf.values[i] >= -1.0f);
      REQUIRE(sdf.values[i] <= 1.0f);
      max_pos = std::max(max_pos, sdf.values[i]);
      min_neg = std::min(min_neg, sdf.values[i]);
    }
    CHECK(max_pos == 1.0f);
    CHECK(min_neg == -1.0f);
  }
}

TEST_CASE("signed_normalized_sdf rejects degenerate grids") {
  try {
    signed_normalized_sdf(grid_from_mask(std::vector<uint8_t>(27, 1), 3));
    FAIL("expected DegenerateGrid");
  } catch (const error& e) {
    CHECK(e.code() == errc::degenerate_grid);
  }
  try {
    signed_normalized_sdf(grid_from_mask(std::vector<uint8_t>(27, 0), 3));
    FAIL("expected DegenerateGrid");
  } catch (const error& e) {
    CHECK(e.code() == errc::degenerate_grid);
  }
}

TEST_CASE("positive SDF is non-decreasing leaving a convex solid") {
  std::vector<uint8_t> mask(9 * 9 * 9, 0);
  for (int z = 3; z <= 5; ++z)
    for (int y = 3; y <= 5; ++y)
      for (int x = 3; x <= 5; ++x) mask[static_cast<size_t>(x + 9 * (y + 9 * z))] = 1;
  auto sdf = signed_normalized_sdf(grid_from_mask(mask, 9));
  for (int y = 3; y <= 5; ++y)
    for (int z = 3; z <= 5; ++z) {
      float prev = 0;
      for (int x = 6; x < 9; ++x) {
        float v = sdf.at(x, y, z);
        REQUIRE(v >= prev);
        prev = v;
      }
    }
}

TEST_CASE("colored_sdf channel rules") {
  SECTION("interior voxel with sdf = -1") {
    std::vector<uint8_t> mask(5 * 5 * 5, 0);
    size_t center = 2 + 5 * (2 + 5 * 2);
    mask[center] = 1;
    auto sdf = signed_normalized_sdf(grid_from_mask(mask, 5));
    auto col = colored_sdf(sdf);
    CHECK(col.red[center] == 1.0f);
    CHECK(col.blue[center] == 0.0f);
    CHECK(col.green[center] == 1.0f);
    // red only on the interior, blue only outside the edge band
    for (size_t i = 0; i < mask.size(); ++i) {
      if (col.red[i] > 0) CHECK(sdf.values[i] < 0);
      if (col.blue[i] > 0) CHECK(sdf.values[i] > 0);
    }
  }
  SECTION("surface-adjacent voxels get green = 0") {
    std::vector<uint8_t> mask(9 * 9 * 9, 0);
    for (int z = 3; z <= 5; ++z)
      for (int y = 3; y <= 5; ++y)
        for (int x = 3; x <= 5; ++x) mask[static_cast<size_t>(x + 9 * (y + 9 * z))] = 1;
    auto sdf = signed_normalized_sdf(grid_from_mask(mask, 9));
    auto col = colored_sdf(sdf);
    float band = 2;
    for (float v : sdf.values)
      if (std::abs(v) > 0) band = std::min(band, std::abs(v));
    for (size_t i = 0; i < sdf.values.size(); ++i) {
      if (std::abs(sdf.values[i]) <= band) CHECK(col.green[i] == 0.0f);
      else CHECK(col.green[i] == std::abs(sdf.values[i]));
    }
  }
  SECTION("all-exterior degenerate sdf has red all zero") {
    SdfGrid sdf;
    sdf.resolution = 3;
    sdf.values.assign(27, 0.5f);
    sdf.degenerate = true;
    auto col = colored_sdf(sdf);
    for (float r : col.red) CHECK(r == 0.0f);
  }
}

TEST_CASE("SDFV block round-trips bit-exactly") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> values(3 * 4 * 4 * 4);
  for (auto& v : values) v = u(rng);
  ByteWriter w;
  write_sdfv_block(w, 4, 3, 0, values.data());
  ByteReader r(w.bytes());
  auto block = read_sdfv_block(r);
  CHECK(block.resolution == 4);
  CHECK(block.channels == 3);
  CHECK(block.sign_convention == 0);
  REQUIRE(block.values.size() == values.size());
  for (size_t i = 0; i < values.size(); ++i) REQUIRE(block.values[i] == values[i]);
}
