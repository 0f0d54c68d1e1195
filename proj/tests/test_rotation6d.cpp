#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emo/rng.hpp"
#include "emo/rotation6d.hpp"

using namespace emo;
using rot6d::Mat3;
using rot6d::Rotation6D;
using rot6d::Vec3;

namespace {

Mat3 random_rotation(Rng& rng) {
  // normalized quaternion -> rotation matrix
  double q[4];
  double n = 0.0;
  for (double& v : q) {
    v = rng.normal();
    n += v * v;
  }
  n = std::sqrt(n);
  for (double& v : q) v /= n;
  double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
          2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
          2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)};
}

double max_orthonormality_error(const Mat3& m) {
  Mat3 mtm = rot6d::matmul(rot6d::transpose(m), m);
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      err = std::max(err, std::abs(mtm[3 * i + j] - (i == j ? 1.0 : 0.0)));
  return err;
}

}  // namespace

TEST_CASE("axis-aligned inputs give the identity") {
  CHECK(rot6d::to_rotation({{1, 0, 0}, {0, 1, 0}}) == Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1});
  // Gram-Schmidt by hand: scaling a1 and shearing a2 change nothing
  Mat3 m = rot6d::to_rotation({{2, 0, 0}, {1, 1, 0}});
  for (int i = 0; i < 9; ++i) CHECK(m[i] == doctest::Approx(Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}[i]).epsilon(1e-12));
}

TEST_CASE("random 6D inputs land on SO(3)") {
  Rng rng(3);
  for (int k = 0; k < 2000; ++k) {
    Rotation6D r;
    for (double& v : r.a1) v = rng.normal();
    for (double& v : r.a2) v = rng.normal();
    Mat3 m = rot6d::to_rotation(r);
    CHECK(max_orthonormality_error(m) < 1e-10);
    CHECK(rot6d::det(m) == doctest::Approx(1.0).epsilon(1e-10));
    // b3 equals the cross product of the first two columns
    Vec3 b1{m[0], m[3], m[6]}, b2{m[1], m[4], m[7]};
    Vec3 c{b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2],
           b1[0] * b2[1] - b1[1] * b2[0]};
    CHECK(m[2] == doctest::Approx(c[0]).epsilon(1e-12));
    CHECK(m[5] == doctest::Approx(c[1]).epsilon(1e-12));
    CHECK(m[8] == doctest::Approx(c[2]).epsilon(1e-12));
  }
}

TEST_CASE("scale invariance in a1") {
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    Rotation6D r;
    for (double& v : r.a1) v = rng.normal();
    for (double& v : r.a2) v = rng.normal();
    Mat3 a = rot6d::to_rotation(r);
    Rotation6D scaled = r;
    for (double& v : scaled.a1) v *= 3.7;
    Mat3 b = rot6d::to_rotation(scaled);
    for (int i = 0; i < 9; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("round trip from_rotation . to_rotation") {
  CHECK(rot6d::from_rotation({1, 0, 0, 0, 1, 0, 0, 0, 1}).a1 == Vec3{1, 0, 0});
  Rng rng(7);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Mat3 r = random_rotation(rng);
    Mat3 rt = rot6d::to_rotation(rot6d::from_rotation(r));
    for (int i = 0; i < 9; ++i) worst = std::max(worst, std::abs(r[i] - rt[i]));
  }
  CHECK(worst <= 1e-9);

  Mat3 reflection{1, 0, 0, 0, 1, 0, 0, 0, -1};
  CHECK_THROWS_AS(rot6d::from_rotation(reflection), DomainError);
}

TEST_CASE("canonical-section round trip is identity") {
  Rng rng(9);
  for (int k = 0; k < 100; ++k) {
    Mat3 r = random_rotation(rng);
    Rotation6D six = rot6d::from_rotation(r);
    Rotation6D again = rot6d::from_rotation(rot6d::to_rotation(six));
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(six.a1[i] - again.a1[i]) < 1e-12);
      CHECK(std::abs(six.a2[i] - again.a2[i]) < 1e-12);
    }
  }
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(rot6d::to_rotation({{0, 0, 0}, {0, 1, 0}}), DomainError);
  CHECK_THROWS_AS(rot6d::to_rotation({{1, 0, 0}, {2, 0, 0}}), DomainError);
  // nearly parallel but above threshold still succeeds and is orthonormal
  Mat3 m = rot6d::to_rotation({{1, 0, 0}, {1, 1e-7, 0}});
  CHECK(max_orthonormality_error(m) < 1e-10);
}

TEST_CASE("decode_pose") {
  std::array<double, 9> frame{1, 0, 0, 0, 1, 0, 0, 0, 0};
  auto t = rot6d::decode_pose(frame);
  CHECK(t.rotation == Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(t.translation == Vec3{0, 0, 0});

  std::array<double, 9> frame2{1, 0, 0, 0, 1, 0, 1, 2, 3};
  auto t2 = rot6d::decode_pose(frame2);
  CHECK(t2.rotation == Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(t2.translation == Vec3{1, 2, 3});

  std::array<double, 9> zero{};
  CHECK_THROWS_AS(rot6d::decode_pose(zero), DomainError);
}

TEST_CASE("geodesic distance") {
  Mat3 eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(rot6d::geodesic_distance(eye, eye) == doctest::Approx(0.0));
  Mat3 z90 = rot6d::rotation_xyz(0, 0, M_PI / 2);
  CHECK(rot6d::geodesic_distance(eye, z90) == doctest::Approx(M_PI / 2).epsilon(1e-12));

  Rng rng(11);
  for (int k = 0; k < 500; ++k) {
    Mat3 a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng);
    double ab = rot6d::geodesic_distance(a, b);
    double bc = rot6d::geodesic_distance(b, c);
    double ac = rot6d::geodesic_distance(a, c);
    CHECK(ac <= ab + bc + 1e-9);
  }
}
