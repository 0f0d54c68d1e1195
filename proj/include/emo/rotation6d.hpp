#pragma once

// Continuous 6D rotation representation and the Gram-Schmidt map onto SO(3),
// plus the 9-dim pose frame (6D rotation + translation) used by the head
// rotation generator.

#include <array>
#include <span>
#include <vector>

#include "emo/error.hpp"

namespace emo::rot6d {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major; columns are the basis vectors

struct Rotation6D {
  Vec3 a1{};
  Vec3 a2{};
};

struct RigidTransform {
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{};
};

// T x 9 sequence; per frame: 6D rotation then 3 translation components.
struct PoseSequence {
  std::vector<std::array<double, 9>> frames;
  size_t length() const { return frames.size(); }
};

/// Gram-Schmidt map f_GS: b1 = N(a1), b2 = N(a2 - (b1.a2) b1), b3 = b1 x b2.
/// Returns the matrix with columns [b1 b2 b3]. Throws DomainError when a1 is
/// degenerate or a2 is parallel to a1 (pre-normalization norm <= 1e-9).
Mat3 to_rotation(const Rotation6D& r);

/// Canonical section of f_GS: the first two columns of R. Requires R in SO(3)
/// within 1e-8 (orthonormal, det +1).
Rotation6D from_rotation(const Mat3& m);

RigidTransform decode_pose(std::span<const double, 9> frame);
std::array<double, 9> encode_pose(const RigidTransform& t);

/// arccos((trace(Ra^T Rb) - 1)/2) with the argument clamped to [-1, 1].
double geodesic_distance(const Mat3& a, const Mat3& b);

// small dense helpers shared across modules
Vec3 matvec(const Mat3& m, const Vec3& v);
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
double det(const Mat3& m);
Mat3 rotation_xyz(double rx, double ry, double rz);  // R = Rz * Ry * Rx

}  // namespace emo::rot6d
