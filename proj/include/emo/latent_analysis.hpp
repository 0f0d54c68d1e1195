#pragma once

// Latent-expression-space diagnostics: standardization, eigen-spectrum of the
// correlation matrix, explained variance, cumulative-variance area, threshold
// counts, and the mouth-component basis distilled from frozen-upper-face
// sequences.

#include <span>
#include <utility>
#include <vector>

#include "emo/error.hpp"

namespace emo::latent {

// n x d row-major matrix of expression vectors, one sample per row.
struct LatentSet {
  int n = 0;
  int d = 0;
  std::vector<double> data;

  double at(int row, int col) const { return data[static_cast<size_t>(row) * d + col]; }
  double& at(int row, int col) { return data[static_cast<size_t>(row) * d + col]; }
  std::span<const double> row(int r) const { return {data.data() + static_cast<size_t>(r) * d, static_cast<size_t>(d)}; }
  void validate() const;
};

struct StandardizeResult {
  LatentSet z_std;
  std::vector<double> mean;
  std::vector<double> stddev;       // sample std, ddof = 1
  std::vector<int> constant_dims;   // columns with raw std below 1e-12, zeroed
};

struct PcaModel {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> eigenvalues;  // sorted descending, clamped at 0
  std::vector<double> components;   // d x d, column j = j-th component
  std::vector<int> constant_dims;
  int d = 0;
};

struct SpectrumSummary {
  std::vector<double> ev;          // EV_i = lambda_i / sum(lambda)
  std::vector<double> cumulative;  // prefix sums of ev, ends at 1
  double auc_z = 0.0;              // mean of the cumulative curve
};

struct MouthBasis {
  std::vector<double> mean;        // mu_m, length d
  std::vector<double> components;  // d x k, column-orthonormal
  int d = 0;
  int k = 0;
  SpectrumSummary source_spectrum;
};

/// Cyclic Jacobi eigendecomposition of a symmetric d x d matrix. Eigenvalues
/// are returned sorted descending (stable ties by original index); each
/// eigenvector column is sign-flipped so its largest-magnitude entry is
/// positive. Residual after convergence is below 1e-10 * scale.
void jacobi_eigh(int d, std::vector<double> a, std::vector<double>& eigenvalues,
                 std::vector<double>& eigenvectors);

StandardizeResult standardize(const LatentSet& z);

std::pair<PcaModel, SpectrumSummary> pca_spectrum(const LatentSet& z);

/// Covariance-matrix spectrum of a set (centered, ddof = 1, no per-column
/// rescaling). Used by the mouth-basis distillation.
std::pair<PcaModel, SpectrumSummary> covariance_spectrum(const LatentSet& z);

double auc_z(const SpectrumSummary& summary);

/// Smallest i (1-based) with cumulative_i >= tau; tau in (0, 1].
int components_to_threshold(const SpectrumSummary& summary, double tau);

MouthBasis distill_mouth_basis(const LatentSet& z_m, int k);

/// Coefficients <z - mu_m, v_j> for j = 1..k.
std::vector<double> project(std::span<const double> z, const MouthBasis& basis, int k);

/// z0 + magnitude * v_idx (idx is 0-based).
std::vector<double> traverse_component(std::span<const double> z0, const MouthBasis& basis,
                                       int idx, double magnitude);

}  // namespace emo::latent
