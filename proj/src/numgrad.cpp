#include "emo/numgrad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "emo/rng.hpp"

namespace emo::numgrad {

size_t ParamVector::add_segment(const std::string& name, size_t length) {
  for (const Segment& s : segments_)
    if (s.name == name) throw DimensionError("duplicate segment name: " + name);
  Segment s{name, values_.size(), length};
  segments_.push_back(s);
  values_.resize(values_.size() + length, 0.0);
  return s.offset;
}

std::span<double> ParamVector::segment(const std::string& name) {
  const Segment& s = segment_info(name);
  return {values_.data() + s.offset, s.length};
}

std::span<const double> ParamVector::segment(const std::string& name) const {
  const Segment& s = segment_info(name);
  return {values_.data() + s.offset, s.length};
}

const Segment& ParamVector::segment_info(const std::string& name) const {
  for (const Segment& s : segments_)
    if (s.name == name) return s;
  throw DimensionError("unknown segment: " + name);
}

bool ParamVector::has_segment(const std::string& name) const {
  for (const Segment& s : segments_)
    if (s.name == name) return true;
  return false;
}

ParamVector ParamVector::same_layout_zeros() const {
  ParamVector out;
  out.segments_ = segments_;
  out.values_.assign(values_.size(), 0.0);
  return out;
}

const std::string& ParamVector::segment_of(size_t i) const {
  for (const Segment& s : segments_)
    if (i >= s.offset && i < s.offset + s.length) return s.name;
  throw DimensionError("index outside all segments");
}

void ParamVector::check_finite(const std::string& what) const {
  for (const Segment& s : segments_)
    for (size_t i = s.offset; i < s.offset + s.length; ++i)
      if (!std::isfinite(values_[i]))
        throw NumericalDivergence("numerical divergence in " + what, s.name);
}

std::pair<double, ParamVector> eval_with_grad(const DifferentiableProgram& prog,
                                              const ParamVector& params) {
  auto [loss, grad] = prog.value_and_grad(params);
  if (!std::isfinite(loss)) throw NumericalDivergence("numerical divergence in loss", "loss");
  grad.check_finite("gradient");
  if (grad.size() != params.size())
    throw DimensionError("gradient length differs from parameter length");
  return {loss, std::move(grad)};
}

ParamVector finite_diff_grad(const DifferentiableProgram& prog, const ParamVector& params,
                             double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad: h must be positive");
  ParamVector g = params.same_layout_zeros();
  ParamVector p = params;
  for (size_t i = 0; i < p.size(); ++i) {
    double orig = p[i];
    p[i] = orig + h;
    double fp = prog.value(p);
    p[i] = orig - h;
    double fm = prog.value(p);
    p[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalDivergence("non-finite probe evaluation", params.segment_of(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

GradCheckReport check_grad(const DifferentiableProgram& prog, const ParamVector& params,
                           const GradCheckOptions& opt) {
  if (!(opt.rel_tol > 0.0)) throw DomainError("check_grad: rel_tol must be positive");
  if (!(opt.h > 0.0)) throw DomainError("check_grad: h must be positive");

  auto [loss0, grad] = eval_with_grad(prog, params);
  (void)loss0;

  GradCheckReport report;
  report.h = opt.h;
  report.rel_tol = opt.rel_tol;

  ParamVector p = params;
  Rng rng(opt.seed, 0x6772616463686Bull);
  double f0 = prog.value(p);

  for (const Segment& seg : params.segments()) {
    SegmentReport sr;
    sr.name = seg.name;

    std::vector<size_t> coords;
    if (opt.max_coords_per_segment < 0 ||
        seg.length <= static_cast<size_t>(opt.max_coords_per_segment)) {
      for (size_t i = 0; i < seg.length; ++i) coords.push_back(seg.offset + i);
    } else {
      for (int k = 0; k < opt.max_coords_per_segment; ++k)
        coords.push_back(seg.offset + rng.next_below(seg.length));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    for (size_t i : coords) {
      double orig = p[i];
      p[i] = orig + opt.h;
      double fp = prog.value(p);
      p[i] = orig - opt.h;
      double fm = prog.value(p);
      p[i] = orig + 0.5 * opt.h;
      double fph = prog.value(p);
      p[i] = orig - 0.5 * opt.h;
      double fmh = prog.value(p);
      p[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(fph) ||
          !std::isfinite(fmh))
        throw NumericalDivergence("non-finite probe evaluation", seg.name);

      // A coordinate whose probe interval straddles a non-smooth point is
      // excluded. Three symptoms, checked at two probe scales:
      //  - one-sided slopes disagree outright (kink at the point itself),
      //  - the central estimates at h and h/2 fail to agree (kink inside the
      //    outer half of the interval; smooth error shrinks 4x, kink bias
      //    does not),
      //  - the slope disagreement refuses to halve with the step (smooth
      //    curvature gives d(h/2) = d(h)/2; a kink near the center keeps
      //    d(h/2) = d(h)).
      double fwd = (fp - f0) / opt.h;
      double bwd = (f0 - fm) / opt.h;
      double central = (fp - fm) / (2.0 * opt.h);
      double central_half = (fph - fmh) / opt.h;
      double d1 = fwd - bwd;
      double d2 = (fph - f0) / (0.5 * opt.h) - (f0 - fmh) / (0.5 * opt.h);
      double slope_scale = std::max({1.0, std::abs(fwd), std::abs(bwd)});
      bool kink =
          std::abs(d1) > opt.kink_ratio * slope_scale ||
          std::abs(central - central_half) >
              0.5 * opt.rel_tol *
                  std::max({1.0, std::abs(central), std::abs(central_half)}) ||
          (std::abs(d1) > 0.5 * opt.rel_tol * slope_scale &&
           std::abs(d2) > 0.6 * std::abs(d1) + 0.25 * opt.rel_tol * slope_scale);
      if (kink) {
        ++sr.kinks_excluded;
        continue;
      }
      double ga = grad[i];
      double rel = std::abs(ga - central) / std::max({1.0, std::abs(ga), std::abs(central)});
      sr.max_rel_err = std::max(sr.max_rel_err, rel);
      ++sr.coords_checked;
    }
    sr.pass = sr.max_rel_err <= opt.rel_tol;
    report.overall_max_rel_err = std::max(report.overall_max_rel_err, sr.max_rel_err);
    report.pass = report.pass && sr.pass;
    report.segments.push_back(std::move(sr));
  }
  return report;
}

std::string GradCheckReport::to_json() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"pass\":" << (pass ? "true" : "false") << ",\"h\":" << h
     << ",\"rel_tol\":" << rel_tol << ",\"max_rel_err\":" << overall_max_rel_err
     << ",\"segments\":[";
  for (size_t i = 0; i < segments.size(); ++i) {
    const SegmentReport& s = segments[i];
    if (i) os << ",";
    os << "{\"segment\":\"" << s.name << "\",\"max_rel_err\":" << s.max_rel_err
       << ",\"pass\":" << (s.pass ? "true" : "false") << ",\"h\":" << h
       << ",\"coords_checked\":" << s.coords_checked
       << ",\"kinks_excluded\":" << s.kinks_excluded << "}";
  }
  os << "]}";
  return os.str();
}

}  // namespace emo::numgrad
