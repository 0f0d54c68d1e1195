#pragma once

// Differentiable-computation contract shared by all training code, plus the
// central-difference oracle used to validate every analytic gradient in the
// repository.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "emo/error.hpp"

namespace emo::numgrad {

struct Segment {
  std::string name;
  size_t offset = 0;
  size_t length = 0;
};

// Flat parameter storage with named, disjoint segments covering the vector.
class ParamVector {
 public:
  ParamVector() = default;

  size_t add_segment(const std::string& name, size_t length);
  size_t size() const { return values_.size(); }

  std::span<double> segment(const std::string& name);
  std::span<const double> segment(const std::string& name) const;
  const Segment& segment_info(const std::string& name) const;
  bool has_segment(const std::string& name) const;
  const std::vector<Segment>& segments() const { return segments_; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double& operator[](size_t i) { return values_[i]; }
  double operator[](size_t i) const { return values_[i]; }

  ParamVector same_layout_zeros() const;
  // name of the segment containing flat index i
  const std::string& segment_of(size_t i) const;
  // throws NumericalDivergence naming the first offending segment
  void check_finite(const std::string& what) const;

 private:
  std::vector<double> values_;
  std::vector<Segment> segments_;
};

// forward must be deterministic given (params, captured inputs); gradient has
// the layout of the parameter vector.
struct DifferentiableProgram {
  std::function<double(const ParamVector&)> value;
  std::function<std::pair<double, ParamVector>(const ParamVector&)> value_and_grad;
};

std::pair<double, ParamVector> eval_with_grad(const DifferentiableProgram& prog,
                                              const ParamVector& params);

ParamVector finite_diff_grad(const DifferentiableProgram& prog, const ParamVector& params,
                             double h);

struct GradCheckOptions {
  double rel_tol = 1e-4;
  double h = 1e-5;
  // < 0 checks every coordinate; otherwise a deterministic sample per segment
  int max_coords_per_segment = -1;
  uint64_t seed = 0;
  // a coordinate whose one-sided slopes disagree by more than this (relative)
  // straddles a kink; it is excluded from pass/fail and counted
  double kink_ratio = 0.05;
};

struct SegmentReport {
  std::string name;
  double max_rel_err = 0.0;
  int coords_checked = 0;
  int kinks_excluded = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<SegmentReport> segments;
  double overall_max_rel_err = 0.0;
  bool pass = true;
  double h = 0.0;
  double rel_tol = 0.0;

  std::string to_json() const;
};

GradCheckReport check_grad(const DifferentiableProgram& prog, const ParamVector& params,
                           const GradCheckOptions& opt = {});

}  // namespace emo::numgrad
