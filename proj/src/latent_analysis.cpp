#include "emo/latent_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace emo::latent {

namespace {

constexpr double kConstantStd = 1e-12;
constexpr double kEigenFloor = -1e-10;

SpectrumSummary summary_from_eigenvalues(const std::vector<double>& lam) {
  double total = std::accumulate(lam.begin(), lam.end(), 0.0);
  if (!(total > 0.0)) throw DomainError("degenerate spectrum: total variance is zero");
  SpectrumSummary s;
  s.ev.resize(lam.size());
  s.cumulative.resize(lam.size());
  double acc = 0.0;
  for (size_t i = 0; i < lam.size(); ++i) {
    s.ev[i] = lam[i] / total;
    acc += s.ev[i];
    s.cumulative[i] = acc;
  }
  s.cumulative.back() = 1.0;  // pin the tail against rounding
  s.auc_z = std::accumulate(s.cumulative.begin(), s.cumulative.end(), 0.0) /
            static_cast<double>(s.cumulative.size());
  return s;
}

// eigendecomposition of the (already centered/scaled) scatter matrix c
std::pair<PcaModel, SpectrumSummary> spectrum_of_matrix(std::vector<double> c, int d,
                                                        std::vector<double> mean,
                                                        std::vector<double> stddev,
                                                        std::vector<int> constant_dims) {
  PcaModel model;
  model.d = d;
  model.mean = std::move(mean);
  model.stddev = std::move(stddev);
  model.constant_dims = std::move(constant_dims);
  jacobi_eigh(d, std::move(c), model.eigenvalues, model.components);
  for (double& v : model.eigenvalues) {
    if (v < kEigenFloor) throw DomainError("eigenvalue below numerical floor");
    if (v < 0.0) v = 0.0;
  }
  SpectrumSummary s = summary_from_eigenvalues(model.eigenvalues);
  return {std::move(model), std::move(s)};
}

}  // namespace

void LatentSet::validate() const {
  if (n < 1 || d < 1 || data.size() != static_cast<size_t>(n) * d)
    throw DimensionError("LatentSet: inconsistent dimensions");
  for (double v : data)
    if (!std::isfinite(v)) throw DomainError("LatentSet: non-finite entry");
}

void jacobi_eigh(int d, std::vector<double> a, std::vector<double>& eigenvalues,
                 std::vector<double>& eigenvectors) {
  std::vector<double> v(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) s += a[static_cast<size_t>(i) * d + j] * a[static_cast<size_t>(i) * d + j];
    return std::sqrt(2.0 * s);
  };
  double scale = 0.0;
  for (int i = 0; i < d; ++i) scale = std::max(scale, std::abs(a[static_cast<size_t>(i) * d + i]));
  scale = std::max(scale, off_norm());
  double tol = std::max(1e-300, 1e-13 * std::max(1.0, scale));

  for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
    for (int p = 0; p < d - 1; ++p)
      for (int q = p + 1; q < d; ++q) {
        double apq = a[static_cast<size_t>(p) * d + q];
        if (std::abs(apq) <= 1e-300) continue;
        double app = a[static_cast<size_t>(p) * d + p];
        double aqq = a[static_cast<size_t>(q) * d + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < d; ++k) {
          double akp = a[static_cast<size_t>(k) * d + p];
          double akq = a[static_cast<size_t>(k) * d + q];
          a[static_cast<size_t>(k) * d + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          double apk = a[static_cast<size_t>(p) * d + k];
          double aqk = a[static_cast<size_t>(q) * d + k];
          a[static_cast<size_t>(p) * d + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * d + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          double vkp = v[static_cast<size_t>(k) * d + p];
          double vkq = v[static_cast<size_t>(k) * d + q];
          v[static_cast<size_t>(k) * d + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * d + q] = s * vkp + c * vkq;
        }
      }
  }

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    return a[static_cast<size_t>(i) * d + i] > a[static_cast<size_t>(j) * d + j];
  });

  eigenvalues.resize(d);
  eigenvectors.assign(static_cast<size_t>(d) * d, 0.0);
  for (int j = 0; j < d; ++j) {
    int src = order[j];
    eigenvalues[j] = a[static_cast<size_t>(src) * d + src];
    // sign convention: largest-magnitude entry positive
    int arg = 0;
    double best = -1.0;
    for (int i = 0; i < d; ++i) {
      double mag = std::abs(v[static_cast<size_t>(i) * d + src]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    double flip = v[static_cast<size_t>(arg) * d + src] < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < d; ++i)
      eigenvectors[static_cast<size_t>(i) * d + j] = flip * v[static_cast<size_t>(i) * d + src];
  }
}

StandardizeResult standardize(const LatentSet& z) {
  z.validate();
  if (z.n < 2) throw DomainError("insufficient samples: standardize needs n >= 2");
  StandardizeResult out;
  out.mean.assign(z.d, 0.0);
  out.stddev.assign(z.d, 1.0);
  out.z_std.n = z.n;
  out.z_std.d = z.d;
  out.z_std.data.assign(z.data.size(), 0.0);

  for (int j = 0; j < z.d; ++j) {
    double m = 0.0;
    for (int i = 0; i < z.n; ++i) m += z.at(i, j);
    m /= z.n;
    double ss = 0.0;
    for (int i = 0; i < z.n; ++i) {
      double dv = z.at(i, j) - m;
      ss += dv * dv;
    }
    double sd = std::sqrt(ss / (z.n - 1));
    out.mean[j] = m;
    if (sd < kConstantStd) {
      out.constant_dims.push_back(j);
      out.stddev[j] = 1.0;  // column is zeroed, divisor is moot
      for (int i = 0; i < z.n; ++i) out.z_std.at(i, j) = 0.0;
    } else {
      out.stddev[j] = sd;
      for (int i = 0; i < z.n; ++i) out.z_std.at(i, j) = (z.at(i, j) - m) / sd;
    }
  }
  return out;
}

std::pair<PcaModel, SpectrumSummary> pca_spectrum(const LatentSet& z) {
  StandardizeResult st = standardize(z);
  int d = z.d;
  std::vector<double> c(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < z.n; ++i)
    for (int a = 0; a < d; ++a) {
      double va = st.z_std.at(i, a);
      if (va == 0.0) continue;
      for (int b = a; b < d; ++b) c[static_cast<size_t>(a) * d + b] += va * st.z_std.at(i, b);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      double val = c[static_cast<size_t>(a) * d + b] / (z.n - 1);
      c[static_cast<size_t>(a) * d + b] = val;
      c[static_cast<size_t>(b) * d + a] = val;
    }
  return spectrum_of_matrix(std::move(c), d, std::move(st.mean), std::move(st.stddev),
                            std::move(st.constant_dims));
}

std::pair<PcaModel, SpectrumSummary> covariance_spectrum(const LatentSet& z) {
  z.validate();
  if (z.n < 2) throw DomainError("insufficient samples: covariance needs n >= 2");
  int d = z.d;
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < z.n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += z.at(i, j);
  for (double& m : mean) m /= z.n;
  std::vector<double> c(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < z.n; ++i)
    for (int a = 0; a < d; ++a) {
      double va = z.at(i, a) - mean[a];
      for (int b = a; b < d; ++b) c[static_cast<size_t>(a) * d + b] += va * (z.at(i, b) - mean[b]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      double val = c[static_cast<size_t>(a) * d + b] / (z.n - 1);
      c[static_cast<size_t>(a) * d + b] = val;
      c[static_cast<size_t>(b) * d + a] = val;
    }
  return spectrum_of_matrix(std::move(c), d, std::move(mean), std::vector<double>(d, 1.0), {});
}

double auc_z(const SpectrumSummary& summary) {
  if (summary.cumulative.empty()) throw DomainError("auc_z: empty spectrum");
  return std::accumulate(summary.cumulative.begin(), summary.cumulative.end(), 0.0) /
         static_cast<double>(summary.cumulative.size());
}

int components_to_threshold(const SpectrumSummary& summary, double tau) {
  if (!(tau > 0.0) || tau > 1.0) throw DomainError("components_to_threshold: tau out of (0, 1]");
  for (size_t i = 0; i < summary.cumulative.size(); ++i)
    if (summary.cumulative[i] >= tau - 1e-12) return static_cast<int>(i) + 1;
  return static_cast<int>(summary.cumulative.size());
}

MouthBasis distill_mouth_basis(const LatentSet& z_m, int k) {
  z_m.validate();
  if (k < 1) throw DomainError("distill_mouth_basis: k must be >= 1");
  if (k > z_m.d) throw DimensionError("distill_mouth_basis: k exceeds latent dimension");
  if (z_m.n < k) throw DomainError("distill_mouth_basis: need at least k samples");
  auto [model, spectrum] = covariance_spectrum(z_m);
  MouthBasis basis;
  basis.d = z_m.d;
  basis.k = k;
  basis.mean = model.mean;
  basis.components.resize(static_cast<size_t>(basis.d) * k);
  for (int i = 0; i < basis.d; ++i)
    for (int j = 0; j < k; ++j)
      basis.components[static_cast<size_t>(i) * k + j] =
          model.components[static_cast<size_t>(i) * basis.d + j];
  basis.source_spectrum = std::move(spectrum);
  return basis;
}

std::vector<double> project(std::span<const double> z, const MouthBasis& basis, int k) {
  if (static_cast<int>(z.size()) != basis.d) throw DimensionError("project: dimension mismatch");
  if (k < 0 || k > basis.k) throw DimensionError("project: k exceeds basis width");
  std::vector<double> out(k, 0.0);
  for (int j = 0; j < k; ++j) {
    double acc = 0.0;
    for (int i = 0; i < basis.d; ++i)
      acc += (z[i] - basis.mean[i]) * basis.components[static_cast<size_t>(i) * basis.k + j];
    out[j] = acc;
  }
  return out;
}

std::vector<double> traverse_component(std::span<const double> z0, const MouthBasis& basis,
                                       int idx, double magnitude) {
  if (static_cast<int>(z0.size()) != basis.d)
    throw DimensionError("traverse_component: dimension mismatch");
  if (idx < 0 || idx >= basis.k) throw DimensionError("traverse_component: index exceeds basis width");
  std::vector<double> out(z0.begin(), z0.end());
  for (int i = 0; i < basis.d; ++i)
    out[i] += magnitude * basis.components[static_cast<size_t>(i) * basis.k + idx];
  return out;
}

}  // namespace emo::latent
