#include <cmath>

#include "doctest.h"
#include "twinflow/geometry.hpp"
#include "twinflow/rng.hpp"

using namespace twinflow;

namespace {

Mat3 random_rotation(Rng& rng) {
  // compose rotations about z and a tilted axis via two Gram-Schmidt passes
  double ax = rng.uniform(-1, 1), ay = rng.uniform(-1, 1), az = rng.uniform(-1, 1);
  double bx = rng.uniform(-1, 1), by = rng.uniform(-1, 1), bz = rng.uniform(-1, 1);
  std::array<float, 6> r6 = {static_cast<float>(ax), static_cast<float>(ay), static_cast<float>(az),
                             static_cast<float>(bx), static_cast<float>(by), static_cast<float>(bz)};
  double cross = std::abs(ax * by - ay * bx) + std::abs(ay * bz - az * by) + std::abs(ax * bz - az * bx);
  if (std::sqrt(ax * ax + ay * ay + az * az) < 1e-3 || cross < 1e-3) return Mat3::rot_z(0.7);
  return r6_to_rotmat(r6);
}

}  // namespace

TEST_CASE("rotmat_to_6d: identity and 90-degree z rotation read off columns") {
  auto id6 = rotmat_to_6d(Mat3::identity());
  std::array<float, 6> want_id = {1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(id6[i] == doctest::Approx(want_id[i]));

  Mat3 rz;
  rz.m[0][0] = 0;
  rz.m[0][1] = -1;
  rz.m[1][0] = 1;
  rz.m[1][1] = 0;
  rz.m[2][2] = 1;
  auto v = rotmat_to_6d(rz);
  std::array<float, 6> want = {0, 1, 0, -1, 0, 0};
  for (int i = 0; i < 6; ++i) CHECK(v[i] == doctest::Approx(want[i]));
}

TEST_CASE("rotmat_to_6d: matches independent column extraction on random rotations") {
  Rng rng(42);
  for (int k = 0; k < 100; ++k) {
    Mat3 r = random_rotation(rng);
    auto v = rotmat_to_6d(r);
    for (int i = 0; i < 3; ++i) {
      CHECK(v[i] == doctest::Approx(r.m[i][0]).epsilon(1e-7));
      CHECK(v[3 + i] == doctest::Approx(r.m[i][1]).epsilon(1e-7));
    }
  }
}

TEST_CASE("rotmat_to_6d: rejects non-rotations") {
  Mat3 bad;
  bad.m[0][0] = 2.0;
  CHECK_THROWS_AS(rotmat_to_6d(bad), TwinflowError);
  Mat3 reflect;  // det -1
  reflect.m[0][0] = -1;
  CHECK_THROWS_AS(rotmat_to_6d(reflect), TwinflowError);
}

TEST_CASE("r6_to_rotmat: identity, scale invariance, hand Gram-Schmidt") {
  Mat3 r = r6_to_rotmat({1, 0, 0, 0, 1, 0});
  CHECK(r.orthonormality_error() < 1e-12);
  for (int i = 0; i < 3; ++i) CHECK(r.m[i][i] == doctest::Approx(1.0));

  Mat3 rs = r6_to_rotmat({2, 0, 0, 0, 3, 0});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(rs.m[i][j] == doctest::Approx(i == j ? 1.0 : 0.0));

  Mat3 g = r6_to_rotmat({1, 0, 0, 1, 1, 0});
  CHECK(g.m[0][0] == doctest::Approx(1.0));
  CHECK(g.m[1][1] == doctest::Approx(1.0));
  CHECK(g.m[2][2] == doctest::Approx(1.0));
  CHECK(std::abs(g.m[0][1]) < 1e-12);
}

TEST_CASE("r6_to_rotmat: degenerate inputs are errors") {
  CHECK_THROWS_AS(r6_to_rotmat({0, 0, 0, 0, 1, 0}), TwinflowError);
  CHECK_THROWS_AS(r6_to_rotmat({1, 0, 0, 2, 0, 0}), TwinflowError);
}

TEST_CASE("r6_to_rotmat: orthonormal det+1 output for arbitrary non-degenerate input") {
  Rng rng(7);
  for (int k = 0; k < 2000; ++k) {
    std::array<float, 6> r6;
    for (auto& v : r6) v = static_cast<float>(rng.uniform(-2, 2));
    double a = std::sqrt(double(r6[0]) * r6[0] + double(r6[1]) * r6[1] + double(r6[2]) * r6[2]);
    if (a < 1e-3) continue;
    Mat3 r;
    try {
      r = r6_to_rotmat(r6);
    } catch (const TwinflowError&) {
      continue;  // parallel draw
    }
    CHECK(r.orthonormality_error() < 1e-6);
    CHECK(r.det() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("6d round-trip is the identity on rotations") {
  Rng rng(12);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    Mat3 r = random_rotation(rng);
    Mat3 rt = r6_to_rotmat(rotmat_to_6d(r));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(rt.m[i][j] - r.m[i][j]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("pack/unpack round-trip and gripper clamp") {
  Pose10 p0 = pack_pose({0, 0, 0}, Mat3::identity(), 0.f);
  std::array<float, 10> want = {0, 0, 0, 1, 0, 0, 0, 1, 0, 0};
  auto flat = p0.flat();
  for (int i = 0; i < 10; ++i) CHECK(flat[i] == doctest::Approx(want[i]));

  Rng rng(3);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    std::array<float, 3> pos = {static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1))};
    Mat3 r = random_rotation(rng);
    float g = static_cast<float>(rng.uniform(0, 1));
    Pose10 p = pack_pose(pos, r, g);
    std::array<float, 3> pos2;
    Mat3 r2;
    float g2;
    unpack_pose(p, pos2, r2, g2);
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(double(pos2[i]) - pos[i]));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(r2.m[i][j] - r.m[i][j]));
    worst = std::max(worst, std::abs(double(g2) - g));
  }
  CHECK(worst < 1e-6);

  bool clamped = false;
  Pose10 pc = pack_pose({0, 0, 0}, Mat3::identity(), 1.5f, &clamped);
  CHECK(clamped);
  CHECK(pc.gripper == 1.0f);
}

TEST_CASE("resample_chunk: linear ramp 10 Hz -> 20 Hz") {
  ActionChunk c(3, 10, 10.f);
  for (int t = 0; t < 3; ++t) {
    for (int d = 0; d < 3; ++d) c.at(t, d) = static_cast<float>(t);  // positions ramp 0,1,2
    c.at(t, 3) = 1;
    c.at(t, 7) = 1;
  }
  ActionChunk r = resample_chunk(c, 20.f);
  REQUIRE(r.T == 5);
  CHECK(r.frequency == 20.f);
  float want[5] = {0, 0.5f, 1, 1.5f, 2};
  for (int t = 0; t < 5; ++t) CHECK(r.at(t, 0) == doctest::Approx(want[t]));
}

TEST_CASE("resample_chunk: identity at own frequency (bitwise)") {
  Rng rng(9);
  ActionChunk c(7, 20, 13.f);
  for (int t = 0; t < 7; ++t) {
    for (int b = 0; b < 20; b += 10) {
      Mat3 r = random_rotation(rng);
      auto r6 = rotmat_to_6d(r);
      c.at(t, b + 0) = static_cast<float>(rng.uniform(-1, 1));
      c.at(t, b + 1) = static_cast<float>(rng.uniform(-1, 1));
      c.at(t, b + 2) = static_cast<float>(rng.uniform(-1, 1));
      for (int i = 0; i < 6; ++i) c.at(t, b + 3 + i) = r6[i];
      c.at(t, b + 9) = static_cast<float>(rng.uniform(0, 1));
    }
  }
  ActionChunk r = resample_chunk(c, 13.f);
  REQUIRE(r.T == c.T);
  for (std::size_t i = 0; i < c.data.size(); ++i) CHECK(r.data[i] == c.data[i]);
}

TEST_CASE("resample_chunk: sine trace 5 -> 20 Hz matches dense interpolation oracle") {
  const int T = 11;
  ActionChunk c(T, 10, 5.f);
  for (int t = 0; t < T; ++t) {
    double ts = t / 5.0;
    c.at(t, 0) = static_cast<float>(std::sin(ts));
    c.at(t, 3) = 1;  // keep rot6 valid: identity
    c.at(t, 7) = 1;
    c.at(t, 9) = static_cast<float>(0.5 + 0.5 * std::sin(2 * ts));
  }
  ActionChunk r = resample_chunk(c, 20.f);
  REQUIRE(r.T == (T - 1) * 4 + 1);
  for (int j = 0; j < r.T; ++j) {
    double ts = j / 20.0;
    int i0 = static_cast<int>(std::floor(ts * 5.0 + 1e-9));
    if (i0 > T - 2) i0 = T - 2;
    double frac = ts * 5.0 - i0;
    double oracle = (1 - frac) * std::sin(i0 / 5.0) + frac * std::sin((i0 + 1) / 5.0);
    CHECK(std::abs(r.at(j, 0) - oracle) < 1e-6);
  }
  // shared timestamps reproduce the original samples exactly
  for (int t = 0; t < T; ++t) CHECK(r.at(4 * t, 0) == c.at(t, 0));
}

TEST_CASE("resample_chunk: exact on affine signals for arbitrary frequency pairs") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    float src = static_cast<float>(rng.uniform(2, 40));
    float dst = static_cast<float>(rng.uniform(2, 40));
    int T = 2 + rng.uniform_int(0, 8);
    ActionChunk c(T, 10, src);
    double a0 = rng.uniform(-1, 1), slope = rng.uniform(-1, 1);
    for (int t = 0; t < T; ++t) {
      double ts = t / double(src);
      c.at(t, 1) = static_cast<float>(a0 + slope * ts);
      c.at(t, 3) = 1;
      c.at(t, 7) = 1;
    }
    ActionChunk r = resample_chunk(c, dst);
    for (int j = 0; j < r.T; ++j) {
      double ts = j / double(dst);
      CHECK(std::abs(r.at(j, 1) - (a0 + slope * ts)) < 1e-6);
    }
  }
}

TEST_CASE("resample_chunk: idempotent at the target frequency") {
  Rng rng(33);
  ActionChunk c(9, 10, 10.f);
  for (int t = 0; t < 9; ++t) {
    c.at(t, 0) = static_cast<float>(rng.uniform(-1, 1));
    c.at(t, 3) = 1;
    c.at(t, 7) = 1;
    c.at(t, 9) = static_cast<float>(rng.uniform(0, 1));
  }
  ActionChunk once = resample_chunk(c, 20.f);
  ActionChunk twice = resample_chunk(once, 20.f);
  REQUIRE(once.T == twice.T);
  for (std::size_t i = 0; i < once.data.size(); ++i) CHECK(once.data[i] == twice.data[i]);
}

TEST_CASE("resample_chunk and chunk validation errors") {
  ActionChunk c(1, 10, 10.f);
  c.at(0, 3) = 1;
  c.at(0, 7) = 1;
  CHECK_THROWS_AS(resample_chunk(c, 20.f), TwinflowError);
  ActionChunk bad(2, 7, 10.f);
  CHECK_THROWS_AS(bad.validate(), TwinflowError);
}
