#pragma once

#include <array>
#include <vector>

#include "twinflow/common.hpp"

namespace twinflow {

// 3x3 rotation matrix, row-major; double internally so orthonormalization
// noise stays well under the float32 action storage.
struct Mat3 {
  double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  static Mat3 identity() { return Mat3{}; }
  static Mat3 rot_z(double angle);
  double det() const;
  double orthonormality_error() const;  // max |R^T R - I|
};

// Absolute EEF pose: position (m), rotation as the first two rotation-matrix
// columns (column-major pair), gripper in [0,1].
struct Pose10 {
  std::array<float, 3> position{0, 0, 0};
  std::array<float, 6> rot6{1, 0, 0, 0, 1, 0};
  float gripper = 0;

  std::array<float, 10> flat() const;
  static Pose10 from_flat(const float* v);
};

inline constexpr int kPoseDim = 10;

std::array<float, 6> rotmat_to_6d(const Mat3& r);
Mat3 r6_to_rotmat(const std::array<float, 6>& r6);

Pose10 pack_pose(const std::array<float, 3>& p, const Mat3& r, float gripper,
                 bool* clamped = nullptr);
void unpack_pose(const Pose10& pose, std::array<float, 3>& p, Mat3& r, float& gripper);

// T x D action matrix at a control frequency. D is 10 per arm; the twin
// layout is the right-arm block first, then the left-arm block.
struct ActionChunk {
  int T = 0;
  int D = 0;
  float frequency = 0;
  std::vector<float> data;  // row-major T x D

  ActionChunk() = default;
  ActionChunk(int t, int d, float hz) : T(t), D(d), frequency(hz), data(static_cast<std::size_t>(t) * d, 0.f) {}

  float& at(int t, int d) { return data[static_cast<std::size_t>(t) * D + d]; }
  float at(int t, int d) const { return data[static_cast<std::size_t>(t) * D + d]; }
  float* row(int t) { return data.data() + static_cast<std::size_t>(t) * D; }
  const float* row(int t) const { return data.data() + static_cast<std::size_t>(t) * D; }

  void validate() const;
};

// Linear resampling over the same wall-clock span. Rotation components are
// interpolated in 6D then re-orthonormalized; samples landing exactly on
// source timestamps pass through bit-identically, which makes resampling to
// the source frequency the identity.
ActionChunk resample_chunk(const ActionChunk& chunk, float target_hz);

inline constexpr float kCanonicalHz = 20.0f;

}  // namespace twinflow
