#include "twinflow/geometry.hpp"

#include <cmath>
#include <cstdio>

namespace twinflow {

Mat3 Mat3::rot_z(double angle) {
  Mat3 r;
  double c = std::cos(angle), s = std::sin(angle);
  r.m[0][0] = c;
  r.m[0][1] = -s;
  r.m[1][0] = s;
  r.m[1][1] = c;
  r.m[2][2] = 1;
  return r;
}

double Mat3::det() const {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

double Mat3::orthonormality_error() const {
  double worst = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += m[k][i] * m[k][j];
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

std::array<float, 10> Pose10::flat() const {
  std::array<float, 10> v;
  v[0] = position[0];
  v[1] = position[1];
  v[2] = position[2];
  for (int i = 0; i < 6; ++i) v[3 + i] = rot6[i];
  v[9] = gripper;
  return v;
}

Pose10 Pose10::from_flat(const float* v) {
  Pose10 p;
  p.position = {v[0], v[1], v[2]};
  for (int i = 0; i < 6; ++i) p.rot6[i] = v[3 + i];
  p.gripper = v[9];
  return p;
}

std::array<float, 6> rotmat_to_6d(const Mat3& r) {
  require(r.orthonormality_error() <= 1e-4, "non-rotation input");
  require(std::abs(r.det() - 1.0) <= 1e-3, "non-rotation input");
  // first two columns, column-major pair
  return {static_cast<float>(r.m[0][0]), static_cast<float>(r.m[1][0]), static_cast<float>(r.m[2][0]),
          static_cast<float>(r.m[0][1]), static_cast<float>(r.m[1][1]), static_cast<float>(r.m[2][1])};
}

Mat3 r6_to_rotmat(const std::array<float, 6>& r6) {
  double a[3] = {r6[0], r6[1], r6[2]};
  double b[3] = {r6[3], r6[4], r6[5]};
  double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  require(na > 1e-6, "degenerate 6D rotation: first column near zero");
  double e0[3] = {a[0] / na, a[1] / na, a[2] / na};
  double dot = e0[0] * b[0] + e0[1] * b[1] + e0[2] * b[2];
  double w[3] = {b[0] - dot * e0[0], b[1] - dot * e0[1], b[2] - dot * e0[2]};
  double nw = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
  require(nw > 1e-6, "degenerate 6D rotation: columns parallel");
  double e1[3] = {w[0] / nw, w[1] / nw, w[2] / nw};
  double e2[3] = {e0[1] * e1[2] - e0[2] * e1[1], e0[2] * e1[0] - e0[0] * e1[2],
                  e0[0] * e1[1] - e0[1] * e1[0]};
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    r.m[i][0] = e0[i];
    r.m[i][1] = e1[i];
    r.m[i][2] = e2[i];
  }
  return r;
}

Pose10 pack_pose(const std::array<float, 3>& p, const Mat3& r, float gripper, bool* clamped) {
  Pose10 out;
  out.position = p;
  out.rot6 = rotmat_to_6d(r);
  bool c = gripper < 0.f || gripper > 1.f;
  if (c) {
    std::fprintf(stderr, "[twinflow] warning: gripper %.3f outside [0,1], clamped\n",
                 static_cast<double>(gripper));
  }
  if (clamped) *clamped = c;
  out.gripper = gripper < 0.f ? 0.f : (gripper > 1.f ? 1.f : gripper);
  return out;
}

void unpack_pose(const Pose10& pose, std::array<float, 3>& p, Mat3& r, float& gripper) {
  p = pose.position;
  r = r6_to_rotmat(pose.rot6);
  gripper = pose.gripper;
}

void ActionChunk::validate() const {
  require(T >= 1, "action chunk needs T >= 1");
  require(D == 10 || D == 20, "action chunk D must be 10 or 20");
  require(frequency > 0, "action chunk frequency must be positive");
  require(data.size() == static_cast<std::size_t>(T) * D, "action chunk storage mismatch");
}

namespace {

// interpolate one arm block (10 columns starting at `base`) into dst
void lerp_block(const ActionChunk& src, int i0, double frac, int base, float* dst) {
  const float* r0 = src.row(i0);
  const float* r1 = src.row(i0 + 1 < src.T ? i0 + 1 : i0);
  if (frac == 0.0) {
    for (int d = 0; d < 10; ++d) dst[base + d] = r0[base + d];
    return;
  }
  auto lerp = [&](int d) {
    return static_cast<float>((1.0 - frac) * r0[base + d] + frac * r1[base + d]);
  };
  dst[base + 0] = lerp(0);
  dst[base + 1] = lerp(1);
  dst[base + 2] = lerp(2);
  std::array<float, 6> r6;
  for (int d = 0; d < 6; ++d) r6[d] = lerp(3 + d);
  r6 = rotmat_to_6d(r6_to_rotmat(r6));
  for (int d = 0; d < 6; ++d) dst[base + 3 + d] = r6[d];
  dst[base + 9] = lerp(9);
}

}  // namespace

ActionChunk resample_chunk(const ActionChunk& chunk, float target_hz) {
  chunk.validate();
  require(chunk.T >= 2, "resample needs T >= 2");
  require(target_hz > 0, "target frequency must be positive");

  double src_hz = chunk.frequency;
  double span = (chunk.T - 1) / src_hz;
  int out_T = static_cast<int>(std::floor(span * target_hz + 1e-9)) + 1;
  ActionChunk out(out_T, chunk.D, target_hz);
  for (int j = 0; j < out_T; ++j) {
    double pos = static_cast<double>(j) * src_hz / target_hz;
    int i0 = static_cast<int>(std::floor(pos + 1e-9));
    if (i0 > chunk.T - 1) i0 = chunk.T - 1;
    double frac = pos - i0;
    if (frac < 1e-9) frac = 0.0;
    for (int b = 0; b < chunk.D; b += 10) lerp_block(chunk, i0, frac, b, out.row(j));
  }
  return out;
}

}  // namespace twinflow
