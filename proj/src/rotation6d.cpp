#include "emo/rotation6d.hpp"

#include <cmath>

namespace emo::rot6d {

namespace {

constexpr double kDegenerate = 1e-9;

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

Mat3 to_rotation(const Rotation6D& r) {
  double n1 = norm3(r.a1);
  if (n1 <= kDegenerate) throw DomainError("degenerate 6D input: |a1| too small");
  Vec3 b1{r.a1[0] / n1, r.a1[1] / n1, r.a1[2] / n1};
  double proj = dot3(b1, r.a2);
  Vec3 u2{r.a2[0] - proj * b1[0], r.a2[1] - proj * b1[1], r.a2[2] - proj * b1[2]};
  double n2 = norm3(u2);
  if (n2 <= kDegenerate) throw DomainError("degenerate 6D input: a2 parallel to a1");
  Vec3 b2{u2[0] / n2, u2[1] / n2, u2[2] / n2};
  Vec3 b3 = cross(b1, b2);
  return {b1[0], b2[0], b3[0],
          b1[1], b2[1], b3[1],
          b1[2], b2[2], b3[2]};
}

Rotation6D from_rotation(const Mat3& m) {
  // orthonormality check: M^T M = I within 1e-8
  Mat3 mtm = matmul(transpose(m), m);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double expect = i == j ? 1.0 : 0.0;
      if (std::abs(mtm[3 * i + j] - expect) > 1e-8)
        throw DomainError("from_rotation: input not orthonormal");
    }
  if (det(m) < 0.0) throw DomainError("from_rotation: input has negative determinant");
  return Rotation6D{{m[0], m[3], m[6]}, {m[1], m[4], m[7]}};
}

RigidTransform decode_pose(std::span<const double, 9> frame) {
  Rotation6D r{{frame[0], frame[1], frame[2]}, {frame[3], frame[4], frame[5]}};
  return RigidTransform{to_rotation(r), {frame[6], frame[7], frame[8]}};
}

std::array<double, 9> encode_pose(const RigidTransform& t) {
  Rotation6D r = from_rotation(t.rotation);
  return {r.a1[0], r.a1[1], r.a1[2], r.a2[0], r.a2[1], r.a2[2],
          t.translation[0], t.translation[1], t.translation[2]};
}

double geodesic_distance(const Mat3& a, const Mat3& b) {
  Mat3 rel = matmul(transpose(a), b);
  double tr = rel[0] + rel[4] + rel[8];
  double c = (tr - 1.0) * 0.5;
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c);
}

Vec3 matvec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[3 * i + k] * b[3 * k + j];
      out[3 * i + j] = acc;
    }
  return out;
}

Mat3 transpose(const Mat3& m) {
  return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

double det(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 rotation_xyz(double rx, double ry, double rz) {
  double cx = std::cos(rx), sx = std::sin(rx);
  double cy = std::cos(ry), sy = std::sin(ry);
  double cz = std::cos(rz), sz = std::sin(rz);
  Mat3 mx{1, 0, 0, 0, cx, -sx, 0, sx, cx};
  Mat3 my{cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  Mat3 mz{cz, -sz, 0, sz, cz, 0, 0, 0, 1};
  return matmul(mz, matmul(my, mx));
}

}  // namespace emo::rot6d
