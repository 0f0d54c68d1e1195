#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "emo/latent_analysis.hpp"
#include "emo/rng.hpp"

using namespace emo;
using latent::LatentSet;

namespace {

LatentSet make_set(int n, int d, const std::vector<double>& data) {
  LatentSet z;
  z.n = n;
  z.d = d;
  z.data = data;
  return z;
}

LatentSet random_set(int n, int d, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  LatentSet z;
  z.n = n;
  z.d = d;
  z.data.resize(static_cast<size_t>(n) * d);
  for (double& v : z.data) v = scale * rng.normal();
  return z;
}

// independent oracle: explicitly formed correlation matrix + Eigen's solver
std::vector<double> oracle_correlation_eigenvalues(const LatentSet& z) {
  Eigen::MatrixXd m(z.n, z.d);
  for (int i = 0; i < z.n; ++i)
    for (int j = 0; j < z.d; ++j) m(i, j) = z.at(i, j);
  Eigen::RowVectorXd mean = m.colwise().mean();
  Eigen::MatrixXd centered = m.rowwise() - mean;
  Eigen::RowVectorXd std =
      (centered.array().square().colwise().sum() / (z.n - 1)).sqrt();
  for (int j = 0; j < z.d; ++j)
    if (std(j) > 1e-12) centered.col(j) /= std(j); else centered.col(j).setZero();
  Eigen::MatrixXd corr = centered.transpose() * centered / (z.n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
  std::vector<double> lam(es.eigenvalues().data(), es.eigenvalues().data() + z.d);
  std::sort(lam.begin(), lam.end(), std::greater<double>());
  return lam;
}

}  // namespace

TEST_CASE("standardize golden cases") {
  auto st = latent::standardize(make_set(2, 1, {1.0, 3.0}));
  CHECK(st.z_std.at(0, 0) == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(st.z_std.at(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(st.stddev[0] == doctest::Approx(std::sqrt(2.0)));

  // idempotence on an already standardized column
  auto twice = latent::standardize(st.z_std);
  for (int i = 0; i < 2; ++i)
    CHECK(std::abs(twice.z_std.at(i, 0) - st.z_std.at(i, 0)) < 1e-10);

  auto constant = latent::standardize(make_set(3, 1, {5.0, 5.0, 5.0}));
  CHECK(constant.constant_dims == std::vector<int>{0});
  for (int i = 0; i < 3; ++i) CHECK(constant.z_std.at(i, 0) == 0.0);

  CHECK_THROWS_AS(latent::standardize(make_set(1, 2, {1.0, 2.0})), DomainError);

  // columns of a standardized set have mean 0, sample std 1
  auto st2 = latent::standardize(random_set(40, 6, 2));
  for (int j = 0; j < 6; ++j) {
    double m = 0.0, ss = 0.0;
    for (int i = 0; i < 40; ++i) m += st2.z_std.at(i, j);
    m /= 40;
    for (int i = 0; i < 40; ++i) ss += (st2.z_std.at(i, j) - m) * (st2.z_std.at(i, j) - m);
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(std::sqrt(ss / 39) - 1.0) < 1e-10);
  }
}

TEST_CASE("pca_spectrum: rank-1 data concentrates all variance") {
  Rng rng(3);
  LatentSet z;
  z.n = 30;
  z.d = 5;
  std::vector<double> dir{0.2, -0.5, 1.0, 0.3, -0.1};
  for (int i = 0; i < z.n; ++i) {
    double t = rng.normal();
    for (double v : dir) z.data.push_back(t * v);
  }
  auto [model, summary] = latent::pca_spectrum(z);
  CHECK(summary.ev[0] == doctest::Approx(1.0).epsilon(1e-9));
  for (int j = 1; j < 5; ++j) CHECK(std::abs(summary.ev[static_cast<size_t>(j)]) < 1e-9);
}

TEST_CASE("pca_spectrum: isotropic 200x8 sample spreads variance") {
  auto [model, summary] = latent::pca_spectrum(random_set(200, 8, 4));
  for (double ev : summary.ev) {
    CHECK(ev > 0.05);
    CHECK(ev < 0.25);
  }
}

TEST_CASE("pca matches the brute-force correlation-matrix oracle") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    LatentSet z = random_set(50, 5, 100 + seed);
    auto [model, summary] = latent::pca_spectrum(z);
    auto lam = oracle_correlation_eigenvalues(z);
    for (int j = 0; j < 5; ++j)
      CHECK(std::abs(model.eigenvalues[static_cast<size_t>(j)] - lam[static_cast<size_t>(j)]) < 1e-8);

    // eigen-residual and reconstruction against the explicit matrix
    Eigen::MatrixXd corr(z.d, z.d);
    {
      auto st = latent::standardize(z);
      Eigen::MatrixXd m(z.n, z.d);
      for (int i = 0; i < z.n; ++i)
        for (int j = 0; j < z.d; ++j) m(i, j) = st.z_std.at(i, j);
      corr = m.transpose() * m / (z.n - 1);
    }
    Eigen::MatrixXd v(z.d, z.d);
    for (int i = 0; i < z.d; ++i)
      for (int j = 0; j < z.d; ++j) v(i, j) = model.components[static_cast<size_t>(i) * z.d + j];
    Eigen::VectorXd lamv(z.d);
    for (int j = 0; j < z.d; ++j) lamv(j) = model.eigenvalues[static_cast<size_t>(j)];
    double residual = (corr * v - v * lamv.asDiagonal()).cwiseAbs().maxCoeff();
    CHECK(residual < 1e-8);
    double recon = (v * lamv.asDiagonal() * v.transpose() - corr).cwiseAbs().maxCoeff();
    CHECK(recon < 1e-8);
    double ortho = (v.transpose() * v - Eigen::MatrixXd::Identity(z.d, z.d)).cwiseAbs().maxCoeff();
    CHECK(ortho < 1e-8);
  }
}

TEST_CASE("trace identity: sum of eigenvalues equals d minus constant dims") {
  LatentSet z = random_set(60, 7, 8);
  for (int i = 0; i < z.n; ++i) z.at(i, 2) = 4.2;  // one constant column
  auto [model, summary] = latent::pca_spectrum(z);
  double total = 0.0;
  for (double l : model.eigenvalues) total += l;
  CHECK(total == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(model.constant_dims == std::vector<int>{2});
}

TEST_CASE("auc_z closed forms") {
  auto from_lambda = [](std::vector<double> lam) {
    latent::SpectrumSummary s;
    double total = 0.0;
    for (double l : lam) total += l;
    double acc = 0.0;
    for (double l : lam) {
      s.ev.push_back(l / total);
      acc += l / total;
      s.cumulative.push_back(acc);
    }
    s.auc_z = latent::auc_z(s);
    return s;
  };
  CHECK(latent::auc_z(from_lambda({1, 1, 1, 1})) == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(latent::auc_z(from_lambda({1, 0, 0, 0})) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(latent::auc_z(from_lambda({3, 1})) == doctest::Approx(0.875).epsilon(1e-12));

  SUBCASE("threshold counts") {
    auto s31 = from_lambda({3, 1});
    CHECK(latent::components_to_threshold(s31, 0.75) == 1);
    CHECK(latent::components_to_threshold(s31, 0.9) == 2);
    auto iso = from_lambda({1, 1, 1, 1});
    CHECK(latent::components_to_threshold(iso, 1.0) == 4);
    CHECK_THROWS_AS(latent::components_to_threshold(iso, 0.0), DomainError);
    CHECK_THROWS_AS(latent::components_to_threshold(iso, 1.5), DomainError);
  }

  SUBCASE("bounds: (d+1)/2d <= auc <= 1, lower bound iff isotropic") {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
      int d = 2 + static_cast<int>(rng.next_below(10));
      std::vector<double> lam(static_cast<size_t>(d));
      for (double& l : lam) l = rng.uniform(0.0, 1.0);
      std::sort(lam.begin(), lam.end(), std::greater<double>());
      auto s = from_lambda(lam);
      double lower = (d + 1.0) / (2.0 * d);
      CHECK(s.auc_z >= lower - 1e-12);
      CHECK(s.auc_z <= 1.0 + 1e-12);
      bool isotropic = std::abs(lam.front() - lam.back()) < 1e-15;
      if (!isotropic) CHECK(s.auc_z > lower + 1e-15);
    }
    auto iso = from_lambda({0.7, 0.7, 0.7});
    CHECK(iso.auc_z == doctest::Approx((3 + 1.0) / 6.0).epsilon(1e-9));
  }

  SUBCASE("concentration monotonicity on constructed pairs") {
    auto s1 = from_lambda({4, 3, 2, 1});
    auto s2 = from_lambda({4.5, 3, 1.5, 1});  // mass moved from lambda_3 to lambda_1
    CHECK(latent::auc_z(s2) >= latent::auc_z(s1));
    auto s3 = from_lambda({5, 3, 2, 0});
    CHECK(latent::auc_z(s3) >= latent::auc_z(s1));
  }
}

TEST_CASE("covariance spectrum is invariant to right-rotation of standardized data") {
  LatentSet z = random_set(80, 4, 17);
  auto st = latent::standardize(z);
  // orthogonal Q from QR of a random matrix
  Eigen::MatrixXd rnd(4, 4);
  Rng rng(18);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) rnd(i, j) = rng.normal();
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(rnd).householderQ();

  LatentSet rotated = st.z_std;
  for (int i = 0; i < z.n; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += st.z_std.at(i, k) * q(k, j);
      rotated.at(i, j) = acc;
    }
  auto [ma, sa] = latent::covariance_spectrum(st.z_std);
  auto [mb, sb] = latent::covariance_spectrum(rotated);
  for (int j = 0; j < 4; ++j)
    CHECK(std::abs(ma.eigenvalues[static_cast<size_t>(j)] - mb.eigenvalues[static_cast<size_t>(j)]) < 1e-8);
}

TEST_CASE("distill_mouth_basis") {
  SUBCASE("single direction of variation is recovered") {
    Rng rng(21);
    std::vector<double> u{0.6, -0.2, 0.1, 0.77, -0.05};
    double nu = 0.0;
    for (double v : u) nu += v * v;
    nu = std::sqrt(nu);
    LatentSet z;
    z.n = 40;
    z.d = 5;
    for (int i = 0; i < z.n; ++i) {
      double t = rng.uniform(-2.0, 2.0);
      for (double v : u) z.data.push_back(3.0 + t * v);
    }
    auto basis = latent::distill_mouth_basis(z, 2);
    double cosv = 0.0;
    for (int i = 0; i < 5; ++i) cosv += basis.components[static_cast<size_t>(i) * 2] * u[static_cast<size_t>(i)] / nu;
    CHECK(std::abs(std::abs(cosv) - 1.0) < 1e-8);
  }

  SUBCASE("errors") {
    LatentSet z = random_set(3, 4, 22);
    CHECK_THROWS_AS(latent::distill_mouth_basis(z, 0), DomainError);
    CHECK_THROWS_AS(latent::distill_mouth_basis(z, 4), DomainError);   // n < k
    CHECK_THROWS_AS(latent::distill_mouth_basis(z, 5), DimensionError);  // k > d
  }

  SUBCASE("column orthonormality") {
    LatentSet z = random_set(50, 6, 23);
    auto basis = latent::distill_mouth_basis(z, 4);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        double acc = 0.0;
        for (int i = 0; i < 6; ++i)
          acc += basis.components[static_cast<size_t>(i) * 4 + a] *
                 basis.components[static_cast<size_t>(i) * 4 + b];
        CHECK(std::abs(acc - (a == b ? 1.0 : 0.0)) < 1e-8);
      }
  }
}

TEST_CASE("project and traverse") {
  LatentSet z = random_set(60, 6, 31);
  auto basis = latent::distill_mouth_basis(z, 4);

  auto at_mean = latent::project(basis.mean, basis, 4);
  for (double c : at_mean) CHECK(std::abs(c) < 1e-12);

  std::vector<double> z2 = basis.mean;
  for (int i = 0; i < 6; ++i) z2[static_cast<size_t>(i)] += 2.0 * basis.components[static_cast<size_t>(i) * 4];
  auto coeffs = latent::project(z2, basis, 4);
  CHECK(coeffs[0] == doctest::Approx(2.0).epsilon(1e-12));
  for (int j = 1; j < 4; ++j) CHECK(std::abs(coeffs[static_cast<size_t>(j)]) < 1e-10);

  // random z matches the explicit dot-product oracle
  Rng rng(32);
  std::vector<double> zr(6);
  for (double& v : zr) v = rng.normal();
  auto got = latent::project(zr, basis, 3);
  for (int j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (int i = 0; i < 6; ++i)
      acc += (zr[static_cast<size_t>(i)] - basis.mean[static_cast<size_t>(i)]) *
             basis.components[static_cast<size_t>(i) * 4 + j];
    CHECK(std::abs(got[static_cast<size_t>(j)] - acc) < 1e-12);
  }

  // traverse: zero magnitude identity, project-linearity, inverse
  auto same = latent::traverse_component(zr, basis, 1, 0.0);
  CHECK(same == zr);
  double alpha = 1.7;
  auto moved = latent::traverse_component(zr, basis, 0, alpha);
  auto pm = latent::project(moved, basis, 4);
  auto p0 = latent::project(zr, basis, 4);
  CHECK(pm[0] - p0[0] == doctest::Approx(alpha).epsilon(1e-10));
  for (int j = 1; j < 4; ++j) CHECK(std::abs(pm[static_cast<size_t>(j)] - p0[static_cast<size_t>(j)]) < 1e-10);
  auto back = latent::traverse_component(moved, basis, 0, -alpha);
  for (int i = 0; i < 6; ++i) CHECK(std::abs(back[static_cast<size_t>(i)] - zr[static_cast<size_t>(i)]) < 1e-12);
}
