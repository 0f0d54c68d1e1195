#include "emo/synthworld.hpp"

#include <algorithm>
#include <cmath>

#include "emo/error.hpp"

namespace emo::world {

namespace {

constexpr int kPhiDim = kFactorDim;  // 10

// groups: 0 head, 1 ears, 2 eyes+brows, 3 mouth, 4 jaw
struct Blob {
  double base[3];
  double sigma, rho, amp0;
  int group;
  int landmark;
  double jx[kPhiDim] = {};
  double jy[kPhiDim] = {};
  double jamp[kPhiDim] = {};
};

// phi layout: a0..a3, em0..em2, eu0..eu2
enum { A0 = 0, A1, A2, A3, EM0, EM1, EM2, EU0, EU1, EU2 };

std::vector<Blob> build_blobs() {
  auto blob = [](double x, double y, double z, double sigma, double rho, double amp,
                 int group, int landmark) {
    Blob b{{x, y, z}, sigma, rho, amp, group, landmark, {}, {}, {}};
    b.jx[A0] = 0.12 * x;  // face width
    b.jy[A1] = 0.10 * y;  // face height
    return b;
  };
  std::vector<Blob> bs;
  bs.push_back(blob(0.00, 0.03, 0.00, 0.42, 0.92, 0.50, 0, -1));    // head
  bs.push_back(blob(-0.50, 0.02, -0.05, 0.065, 0.18, 0.55, 1, -1)); // ears
  bs.push_back(blob(0.50, 0.02, -0.05, 0.065, 0.18, 0.55, 1, -1));
  bs.push_back(blob(-0.18, -0.14, 0.05, 0.060, 0.18, 0.95, 2, kEyeLeft));
  bs.push_back(blob(0.18, -0.14, 0.05, 0.060, 0.18, 0.95, 2, kEyeRight));
  bs.push_back(blob(-0.20, -0.28, 0.05, 0.050, 0.15, 0.65, 2, kBrowLeft));
  bs.push_back(blob(0.20, -0.28, 0.05, 0.050, 0.15, 0.65, 2, kBrowRight));
  bs.push_back(blob(-0.15, 0.28, 0.04, 0.055, 0.17, 0.85, 3, kMouthLeft));
  bs.push_back(blob(0.15, 0.28, 0.04, 0.055, 0.17, 0.85, 3, kMouthRight));
  bs.push_back(blob(-0.06, 0.235, 0.04, 0.050, 0.15, 0.80, 3, kMouthTopLeft));
  bs.push_back(blob(0.06, 0.235, 0.04, 0.050, 0.15, 0.80, 3, kMouthTopRight));
  bs.push_back(blob(-0.06, 0.325, 0.04, 0.050, 0.15, 0.80, 3, kMouthBottomLeft));
  bs.push_back(blob(0.06, 0.325, 0.04, 0.050, 0.15, 0.80, 3, kMouthBottomRight));
  bs.push_back(blob(-0.40, 0.30, -0.02, 0.050, 0.15, 0.50, 4, kJaw0));
  bs.push_back(blob(-0.17, 0.47, -0.02, 0.050, 0.15, 0.50, 4, kJaw1));
  bs.push_back(blob(0.17, 0.47, -0.02, 0.050, 0.15, 0.50, 4, kJaw2));
  bs.push_back(blob(0.40, 0.30, -0.02, 0.050, 0.15, 0.50, 4, kJaw3));

  auto side_of = [](const Blob& b) { return b.base[0] < 0.0 ? -1.0 : 1.0; };
  for (Blob& b : bs) {
    double side = side_of(b);
    if (b.group == 2 && (b.landmark == kEyeLeft || b.landmark == kEyeRight)) {
      b.jx[A2] += 0.03 * side;
      b.jx[EU1] += 0.05;  // gaze, both eyes together
      b.jy[EU0] += 0.03;
      b.jamp[EU0] = -0.45 * b.amp0;  // lid closing dims the eye
    }
    if (b.landmark == kBrowLeft || b.landmark == kBrowRight) {
      b.jx[A2] += 0.03 * side;
      b.jy[EU2] -= 0.08;
    }
    if (b.group == 3 || b.group == 4) b.jy[A3] += 0.04;
    if (b.group == 3) b.jamp[A2] += 0.25 * b.amp0;  // lip brightness is an identity trait
    if (b.landmark == kMouthLeft || b.landmark == kMouthRight) {
      b.jy[EM0] += 0.015;
      b.jy[EM1] -= 0.08;
      b.jy[EM2] += 0.08 * side;  // asymmetric corner displacement
      b.jx[EM1] += 0.02 * side;
      b.jamp[EM1] = 0.20 * b.amp0;
    }
    if (b.landmark == kMouthTopLeft || b.landmark == kMouthTopRight) {
      b.jy[EM0] -= 0.045;
      b.jamp[EM0] = -0.30 * b.amp0;  // opening dims the upper lip
    }
    if (b.landmark == kMouthBottomLeft || b.landmark == kMouthBottomRight) {
      b.jy[EM0] += 0.075;
      b.jamp[EM0] = 0.30 * b.amp0;  // and brightens the lower lip
    }
  }
  return bs;
}

const std::vector<Blob>& blobs() {
  static const std::vector<Blob> table = build_blobs();
  return table;
}

// rest_b = base + J phi, world = R rest + t; out rows: world x, world y, amp
void geometry_forward(const double* phi, const double* r, const double* t, double* out) {
  const auto& bs = blobs();
  int nb = static_cast<int>(bs.size());
  for (int i = 0; i < nb; ++i) {
    const Blob& b = bs[i];
    double rest[3] = {b.base[0], b.base[1], b.base[2]};
    double amp = b.amp0;
    for (int k = 0; k < kPhiDim; ++k) {
      rest[0] += b.jx[k] * phi[k];
      rest[1] += b.jy[k] * phi[k];
      amp += b.jamp[k] * phi[k];
    }
    out[i] = r[0] * rest[0] + r[1] * rest[1] + r[2] * rest[2] + t[0];
    out[nb + i] = r[3] * rest[0] + r[4] * rest[1] + r[5] * rest[2] + t[1];
    out[2 * nb + i] = amp;
  }
}

// field(px) = sum_b amp_b k_b(px); k is a gaussian multiplied by a smooth bump
// with compact support of radius rho (zero outside, all derivatives zero at
// the boundary), so factor locality is exact.
void splat_forward(const double* geom, int h, int w, double* field) {
  const auto& bs = blobs();
  int nb = static_cast<int>(bs.size());
  std::fill(field, field + static_cast<size_t>(h) * w, 0.0);
  double sx = (w - 1) * 0.5, sy = (h - 1) * 0.5;
  for (int i = 0; i < nb; ++i) {
    const Blob& b = bs[i];
    double cx = geom[i], cy = geom[nb + i], amp = geom[2 * nb + i];
    double rho2 = b.rho * b.rho;
    double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
    int x0 = std::max(0, static_cast<int>(std::ceil((cx - b.rho + 1.0) * sx)));
    int x1 = std::min(w - 1, static_cast<int>(std::floor((cx + b.rho + 1.0) * sx)));
    int y0 = std::max(0, static_cast<int>(std::ceil((cy - b.rho + 1.0) * sy)));
    int y1 = std::min(h - 1, static_cast<int>(std::floor((cy + b.rho + 1.0) * sy)));
    for (int py = y0; py <= y1; ++py) {
      double wy = -1.0 + py / sy;
      double dy = wy - cy;
      for (int px = x0; px <= x1; ++px) {
        double wx = -1.0 + px / sx;
        double dx = wx - cx;
        double r2 = dx * dx + dy * dy;
        if (r2 >= rho2) continue;
        double g = -r2 * inv2s2 + 1.0 - rho2 / (rho2 - r2);
        field[static_cast<size_t>(py) * w + px] += amp * std::exp(g);
      }
    }
  }
}

void splat_backward(const double* geom, int h, int w, const double* gout, double* ggeom) {
  const auto& bs = blobs();
  int nb = static_cast<int>(bs.size());
  double sx = (w - 1) * 0.5, sy = (h - 1) * 0.5;
  for (int i = 0; i < nb; ++i) {
    const Blob& b = bs[i];
    double cx = geom[i], cy = geom[nb + i], amp = geom[2 * nb + i];
    double rho2 = b.rho * b.rho;
    double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
    int x0 = std::max(0, static_cast<int>(std::ceil((cx - b.rho + 1.0) * sx)));
    int x1 = std::min(w - 1, static_cast<int>(std::floor((cx + b.rho + 1.0) * sx)));
    int y0 = std::max(0, static_cast<int>(std::ceil((cy - b.rho + 1.0) * sy)));
    int y1 = std::min(h - 1, static_cast<int>(std::floor((cy + b.rho + 1.0) * sy)));
    double gcx = 0.0, gcy = 0.0, gamp = 0.0;
    for (int py = y0; py <= y1; ++py) {
      double wy = -1.0 + py / sy;
      double dy = wy - cy;
      for (int px = x0; px <= x1; ++px) {
        double g = gout[static_cast<size_t>(py) * w + px];
        if (g == 0.0) continue;
        double wx = -1.0 + px / sx;
        double dx = wx - cx;
        double r2 = dx * dx + dy * dy;
        if (r2 >= rho2) continue;
        double pole = rho2 - r2;
        double kern = std::exp(-r2 * inv2s2 + 1.0 - rho2 / pole);
        double dgdr2 = -inv2s2 - rho2 / (pole * pole);
        double common = g * amp * kern * dgdr2;
        gamp += g * kern;
        gcx += common * (-2.0 * dx);
        gcy += common * (-2.0 * dy);
      }
    }
    ggeom[i] += gcx;
    ggeom[nb + i] += gcy;
    ggeom[2 * nb + i] += gamp;
  }
}

void validate_factors(const FactorVector& f) {
  auto in_unit = [](double v) { return std::abs(v) <= 1.0 + 1e-9; };
  for (double v : f.identity)
    if (!in_unit(v)) throw DomainError("render: identity factor out of bounds");
  for (double v : f.mouth)
    if (!in_unit(v)) throw DomainError("render: mouth factor out of bounds");
  for (double v : f.upper)
    if (!in_unit(v)) throw DomainError("render: upper factor out of bounds");
  for (double v : f.pose.translation)
    if (std::abs(v) > 0.2 + 1e-9) throw DomainError("render: translation out of bounds");
  rot6d::Mat3 mtm = rot6d::matmul(rot6d::transpose(f.pose.rotation), f.pose.rotation);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(mtm[3 * i + j] - (i == j ? 1.0 : 0.0)) > 1e-8)
        throw DomainError("render: rotation not orthonormal");
  if (rot6d::det(f.pose.rotation) < 0.0) throw DomainError("render: rotation is a reflection");
}

}  // namespace

int blob_count() { return static_cast<int>(blobs().size()); }
int blob_landmark(int blob) { return blobs()[static_cast<size_t>(blob)].landmark; }

std::array<double, kFactorDim> FactorVector::phi() const {
  std::array<double, kFactorDim> out{};
  int i = 0;
  for (double v : identity) out[i++] = v;
  for (double v : mouth) out[i++] = v;
  for (double v : upper) out[i++] = v;
  return out;
}

ToyFace render(const FactorVector& f, int image_size) {
  validate_factors(f);
  const auto& bs = blobs();
  int nb = static_cast<int>(bs.size());
  int h = image_size, w = image_size;

  std::array<double, kFactorDim> phi = f.phi();
  std::vector<double> geom(static_cast<size_t>(3) * nb);
  geometry_forward(phi.data(), f.pose.rotation.data(), f.pose.translation.data(), geom.data());

  ToyFace face;
  face.h = h;
  face.w = w;
  face.image.resize(static_cast<size_t>(h) * w);
  std::vector<double> field(face.image.size());
  splat_forward(geom.data(), h, w, field.data());
  for (size_t i = 0; i < field.size(); ++i) face.image[i] = 1.0 - std::exp(-field[i]);

  double sx = (w - 1) * 0.5, sy = (h - 1) * 0.5;
  for (int i = 0; i < nb; ++i) {
    int lm = bs[i].landmark;
    if (lm < 0) continue;
    double px = (geom[i] + 1.0) * sx;
    double py = (geom[nb + i] + 1.0) * sy;
    if (px < 0.0 || px > w - 1 || py < 0.0 || py > h - 1)
      throw DomainError("render: landmark left the image bounds");
    face.landmarks[lm] = {px, py};
  }

  auto make_mask = [&](auto include_group) {
    std::vector<uint8_t> mask(face.image.size(), 0);
    for (int i = 0; i < nb; ++i) {
      if (!include_group(bs[i].group)) continue;
      double cx = geom[i], cy = geom[nb + i], rho2 = bs[i].rho * bs[i].rho;
      for (int py = 0; py < h; ++py) {
        double dy = (-1.0 + py / sy) - cy;
        for (int px = 0; px < w; ++px) {
          double dx = (-1.0 + px / sx) - cx;
          if (dx * dx + dy * dy < rho2) mask[static_cast<size_t>(py) * w + px] = 1;
        }
      }
    }
    return mask;
  };
  face.mask_eyes = make_mask([](int g) { return g == 2; });
  face.mask_mouth = make_mask([](int g) { return g == 3; });
  face.mask_ears = make_mask([](int g) { return g == 1; });
  face.mask_face = make_mask([](int) { return true; });
  return face;
}

RenderGraph render_ad(ad::Tape& tape, ad::Tensor identity, ad::Tensor mouth, ad::Tensor upper,
                      ad::Tensor rotation, ad::Tensor translation, int image_size) {
  using ad::Tensor;
  if (identity.numel() != kIdentityDim || mouth.numel() != kMouthDim ||
      upper.numel() != kUpperDim || rotation.numel() != 9 || translation.numel() != 3)
    throw DimensionError("render_ad: bad factor tensor shapes");
  int nb = blob_count();
  Tensor phi = ad::concat({identity, mouth, upper});

  bool ng = tape.node(phi.id).needs_grad || tape.node(rotation.id).needs_grad ||
            tape.node(translation.id).needs_grad;
  Tensor geom = tape.emit(ad::Shape{3, nb}, ng);
  geometry_forward(phi.val().data(), rotation.val().data(), translation.val().data(),
                   tape.node(geom.id).val.data());
  if (ng) {
    ad::Tape* tp = &tape;
    int gid = geom.id, pid = phi.id, rid = rotation.id, tid = translation.id;
    tape.node(geom.id).back = [tp, gid, pid, rid, tid, nb] {
      const auto& bs = blobs();
      const auto& g = tp->node(gid).grad;
      ad::Node& P = tp->node(pid);
      ad::Node& R = tp->node(rid);
      ad::Node& T = tp->node(tid);
      for (int i = 0; i < nb; ++i) {
        const Blob& b = bs[static_cast<size_t>(i)];
        double rest[3] = {b.base[0], b.base[1], b.base[2]};
        for (int k = 0; k < kPhiDim; ++k) {
          rest[0] += b.jx[k] * P.val[k];
          rest[1] += b.jy[k] * P.val[k];
        }
        double gx = g[i], gy = g[nb + i], ga = g[2 * nb + i];
        if (P.needs_grad)
          for (int k = 0; k < kPhiDim; ++k) {
            double dwx = R.val[0] * b.jx[k] + R.val[1] * b.jy[k];
            double dwy = R.val[3] * b.jx[k] + R.val[4] * b.jy[k];
            P.grad[k] += gx * dwx + gy * dwy + ga * b.jamp[k];
          }
        if (R.needs_grad)
          for (int j = 0; j < 3; ++j) {
            R.grad[j] += gx * rest[j];
            R.grad[3 + j] += gy * rest[j];
          }
        if (T.needs_grad) {
          T.grad[0] += gx;
          T.grad[1] += gy;
        }
      }
    };
  }

  Tensor field = tape.emit(ad::Shape{image_size, image_size}, ng);
  splat_forward(tape.node(geom.id).val.data(), image_size, image_size,
                tape.node(field.id).val.data());
  if (ng) {
    ad::Tape* tp = &tape;
    int fid = field.id, gid = geom.id;
    tape.node(field.id).back = [tp, fid, gid, image_size] {
      splat_backward(tp->node(gid).val.data(), image_size, image_size,
                     tp->node(fid).grad.data(), tp->node(gid).grad.data());
    };
  }

  Tensor image = ad::affine(ad::exp_(ad::affine(field, -1.0, 0.0)), -1.0, 1.0);
  return RenderGraph{image, geom};
}

World::World(const WorldConfig& cfg) : cfg_(cfg) {
  if (cfg_.common_identities < 2 || cfg_.extreme_identities < 2)
    throw ConfigError("world: each pool needs at least two identities");
  if (cfg_.extreme_fraction < 0.0 || cfg_.extreme_fraction > 1.0)
    throw ConfigError("world: extreme_fraction must lie in [0, 1]");
  Rng rc(cfg_.seed, 101);
  for (int i = 0; i < cfg_.common_identities; ++i) {
    std::array<double, kIdentityDim> id{};
    for (double& v : id) v = rc.uniform(-0.9, 0.9);
    common_ids_.push_back(id);
  }
  Rng re(cfg_.seed, 102);
  for (int i = 0; i < cfg_.extreme_identities; ++i) {
    std::array<double, kIdentityDim> id{};
    for (double& v : id) v = re.uniform(-0.9, 0.9);
    extreme_ids_.push_back(id);
  }
  Rng ra(cfg_.seed, 103);
  audio_map_w_.resize(static_cast<size_t>(cfg_.audio_dim) * kMouthDim);
  audio_map_b_.resize(cfg_.audio_dim);
  for (double& v : audio_map_w_) v = 0.8 * ra.normal();
  for (double& v : audio_map_b_) v = 0.2 * ra.normal();
}

Pool World::sample_pool(Rng& rng) const {
  return rng.uniform() < cfg_.extreme_fraction ? Pool::extreme : Pool::common;
}

FactorVector World::sample_factors(Pool pool, int identity_index, Rng& rng) const {
  const auto& ids = identities(pool);
  if (identity_index < 0 || identity_index >= static_cast<int>(ids.size()))
    throw DomainError("sample_factors: identity index out of range");
  double amp = pool == Pool::extreme ? cfg_.extreme_amplitude : cfg_.common_amplitude;
  FactorVector f;
  f.identity = ids[static_cast<size_t>(identity_index)];
  for (double& v : f.mouth) v = rng.uniform(-amp, amp);
  if (pool == Pool::common) f.mouth[2] = 0.0;  // asymmetric terms only in the extreme pool
  for (double& v : f.upper) v = rng.uniform(-amp, amp);
  double max_rad = cfg_.max_rotation_deg * 3.14159265358979323846 / 180.0;
  double rx = rng.uniform(-max_rad, max_rad);
  double ry = rng.uniform(-max_rad, max_rad);
  double rz = rng.uniform(-max_rad, max_rad);
  f.pose.rotation = rot6d::rotation_xyz(rx, ry, rz);
  for (double& v : f.pose.translation) v = rng.uniform(-cfg_.max_translation, cfg_.max_translation);
  return f;
}

PairQuintuplet World::sample_training_batch(Rng& rng) const {
  PairQuintuplet q;
  q.pool = sample_pool(rng);
  const auto& ids = identities(q.pool);
  int id_a = static_cast<int>(rng.next_below(ids.size()));
  int id_b = static_cast<int>(rng.next_below(ids.size() - 1));
  if (id_b >= id_a) ++id_b;
  double amp = q.pool == Pool::extreme ? cfg_.extreme_amplitude : cfg_.common_amplitude;

  auto make = [&](int id_index) {
    Sample s;
    s.identity_index = id_index;
    s.pool = q.pool;
    s.factors = sample_factors(q.pool, id_index, rng);
    s.face = render(s.factors, cfg_.image_size);
    return s;
  };
  // frames of one video carry correlated expressions and nearby poses
  auto same_video = [&](const Sample& ref) {
    Sample s;
    s.identity_index = ref.identity_index;
    s.pool = q.pool;
    s.factors = sample_factors(q.pool, ref.identity_index, rng);
    auto drift = [&](double base) {
      return std::clamp(base + rng.uniform(-0.3 * amp, 0.3 * amp), -amp, amp);
    };
    for (int i = 0; i < kMouthDim; ++i)
      s.factors.mouth[static_cast<size_t>(i)] = drift(ref.factors.mouth[static_cast<size_t>(i)]);
    for (int i = 0; i < kUpperDim; ++i)
      s.factors.upper[static_cast<size_t>(i)] = drift(ref.factors.upper[static_cast<size_t>(i)]);
    if (q.pool == Pool::common) s.factors.mouth[2] = 0.0;
    double jitter = 8.0 * 3.14159265358979323846 / 180.0;
    s.factors.pose.rotation = rot6d::matmul(
        ref.factors.pose.rotation,
        rot6d::rotation_xyz(rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter),
                            rng.uniform(-jitter, jitter)));
    for (int i = 0; i < 3; ++i)
      s.factors.pose.translation[static_cast<size_t>(i)] =
          std::clamp(ref.factors.pose.translation[static_cast<size_t>(i)] + rng.uniform(-0.04, 0.04),
                     -cfg_.max_translation, cfg_.max_translation);
    s.face = render(s.factors, cfg_.image_size);
    return s;
  };
  q.s = make(id_a);
  q.d = same_video(q.s);
  q.s_star = make(id_b);
  q.d_star = same_video(q.s_star);
  q.s_m = same_video(q.s_star);
  {
    // x_s^m carries an independently sampled pose
    FactorVector fresh = sample_factors(q.pool, q.s_m.identity_index, rng);
    q.s_m.factors.pose = fresh.pose;
    q.s_m.face = render(q.s_m.factors, cfg_.image_size);
  }
  return q;
}

std::vector<Sample> World::mouth_only_sequence(Pool pool, int identity_index, int frames,
                                               Rng& rng) const {
  if (frames < 2) throw DomainError("mouth_only_sequence: need at least two frames");
  double amp = pool == Pool::extreme ? cfg_.extreme_amplitude : cfg_.common_amplitude;
  std::array<double, kUpperDim> upper{};
  for (double& v : upper) v = rng.uniform(-0.5 * amp, 0.5 * amp);
  double phase0 = rng.uniform(0.0, 6.283185307179586);
  double phase1 = rng.uniform(0.0, 6.283185307179586);
  int cycles = 1 + static_cast<int>(rng.next_below(2));

  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    double u = 6.283185307179586 * t / frames;
    FactorVector f;
    f.identity = identities(pool)[static_cast<size_t>(identity_index)];
    f.mouth[0] = amp * std::sin(cycles * u + phase0);
    f.mouth[1] = 0.35 * amp * std::sin(u + phase1);
    f.mouth[2] = 0.0;
    f.upper = upper;        // frozen at frame-0 values
    f.pose = {};            // frontal, identity pose
    Sample s;
    s.identity_index = identity_index;
    s.pool = pool;
    s.factors = f;
    s.face = render(f, cfg_.image_size);
    out.push_back(std::move(s));
  }
  return out;
}

AudioEmbeddingSequence World::synth_audio(
    const std::vector<std::array<double, kMouthDim>>& mouth_traj, Rng& rng,
    double noise_sigma) const {
  if (noise_sigma < 0.0) throw DomainError("synth_audio: noise sigma must be >= 0");
  AudioEmbeddingSequence out;
  out.reserve(mouth_traj.size());
  for (const auto& em : mouth_traj) {
    std::vector<double> e(static_cast<size_t>(cfg_.audio_dim));
    for (int i = 0; i < cfg_.audio_dim; ++i) {
      double acc = audio_map_b_[static_cast<size_t>(i)];
      for (int j = 0; j < kMouthDim; ++j)
        acc += audio_map_w_[static_cast<size_t>(i) * kMouthDim + j] * em[static_cast<size_t>(j)];
      e[static_cast<size_t>(i)] = std::tanh(acc);
      if (noise_sigma > 0.0) e[static_cast<size_t>(i)] += noise_sigma * rng.normal();
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace emo::world
