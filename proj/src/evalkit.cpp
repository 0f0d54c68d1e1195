#include "emo/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "emo/formats.hpp"

namespace emo::evalkit {

using train::ModelConfig;
using numgrad::ParamVector;

LandmarkFrame normalize_landmarks(const LandmarkFrame& frame) {
  const auto& left = frame[world::kMouthLeft];
  const auto& right = frame[world::kMouthRight];
  double hx = (right[0] - left[0]) * 0.5;
  double hy = (right[1] - left[1]) * 0.5;
  double scale = std::sqrt(hx * hx + hy * hy);
  if (scale <= 1e-12) throw DomainError("normalize_landmarks: coincident mouth edges");
  double cx = (left[0] + right[0]) * 0.5;
  double cy = (left[1] + right[1]) * 0.5;
  // rotate by -angle(h) and scale so the half-span becomes unit
  double ux = hx / scale, uy = hy / scale;
  LandmarkFrame out;
  for (size_t i = 0; i < frame.size(); ++i) {
    double dx = frame[i][0] - cx;
    double dy = frame[i][1] - cy;
    out[i][0] = (ux * dx + uy * dy) / scale;
    out[i][1] = (-uy * dx + ux * dy) / scale;
  }
  return out;
}

LandmarkMetrics landmark_metrics(const LandmarkSequence& pred, const LandmarkSequence& gt) {
  if (pred.frames.size() != gt.frames.size() || pred.frames.empty())
    throw DimensionError("landmark_metrics: length mismatch");
  size_t frames = pred.frames.size();
  std::vector<LandmarkFrame> pn(frames), gn(frames);
  for (size_t t = 0; t < frames; ++t) {
    pn[t] = normalize_landmarks(pred.frames[t]);
    gn[t] = normalize_landmarks(gt.frames[t]);
  }
  auto dist = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    double dx = a[0] - b[0], dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
  };

  LandmarkMetrics m;
  double mp = 0, fp = 0;
  for (size_t t = 0; t < frames; ++t) {
    for (int l = 0; l < world::kNumLandmarks; ++l) {
      double e = dist(pn[t][static_cast<size_t>(l)], gn[t][static_cast<size_t>(l)]);
      fp += e;
      if (l < world::kNumMouthLandmarks) mp += e;
    }
  }
  m.m_p = mp / (static_cast<double>(frames) * world::kNumMouthLandmarks);
  m.f_p = fp / (static_cast<double>(frames) * world::kNumLandmarks);

  if (frames >= 2) {
    double mv = 0, fv = 0;
    for (size_t t = 1; t < frames; ++t) {
      for (int l = 0; l < world::kNumLandmarks; ++l) {
        size_t li = static_cast<size_t>(l);
        std::array<double, 2> vp{pn[t][li][0] - pn[t - 1][li][0], pn[t][li][1] - pn[t - 1][li][1]};
        std::array<double, 2> vg{gn[t][li][0] - gn[t - 1][li][0], gn[t][li][1] - gn[t - 1][li][1]};
        double e = dist(vp, vg);
        fv += e;
        if (l < world::kNumMouthLandmarks) mv += e;
      }
    }
    m.m_v = mv / (static_cast<double>(frames - 1) * world::kNumMouthLandmarks);
    m.f_v = fv / (static_cast<double>(frames - 1) * world::kNumLandmarks);
  }
  return m;
}

LandmarkFrame extract_landmarks(const std::vector<double>& image, int h, int w,
                                const world::ToyFace& reference, int radius) {
  if (static_cast<int>(image.size()) != h * w)
    throw DimensionError("extract_landmarks: image size mismatch");
  LandmarkFrame out;
  for (int l = 0; l < world::kNumLandmarks; ++l) {
    double cx = reference.landmarks[static_cast<size_t>(l)][0];
    double cy = reference.landmarks[static_cast<size_t>(l)][1];
    int x0 = std::max(0, static_cast<int>(std::lround(cx)) - radius);
    int x1 = std::min(w - 1, static_cast<int>(std::lround(cx)) + radius);
    int y0 = std::max(0, static_cast<int>(std::lround(cy)) - radius);
    int y1 = std::min(h - 1, static_cast<int>(std::lround(cy)) + radius);
    double sw = 0.0, sx = 0.0, sy = 0.0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double v = image[static_cast<size_t>(y) * w + x] - 0.35;
        if (v <= 0.0) continue;
        // spatial prior keeps neighboring blobs from hijacking the centroid
        double dx = x - cx, dy = y - cy;
        double wgt = v * v * std::exp(-(dx * dx + dy * dy) / 2.0);
        sw += wgt;
        sx += wgt * x;
        sy += wgt * y;
      }
    if (sw > 1e-9) {
      out[static_cast<size_t>(l)] = {sx / sw, sy / sw};
    } else {
      out[static_cast<size_t>(l)] = {cx, cy};  // dark window: fall back to the prior
    }
  }
  return out;
}

Encoder model_encoder(const ModelConfig& cfg, const ParamVector& base_params) {
  return [&cfg, &base_params](const world::ToyFace& face, const world::FactorVector&) {
    return train::teacher_latent(cfg, base_params, face);
  };
}

double cv_neutrality(const ModelConfig& cfg, const ParamVector& params, const world::World& w,
                     int identities, int expressions, uint64_t seed) {
  if (expressions < 2) throw DomainError("cv_neutrality: need at least two expressions");
  Rng rng(seed, 71);
  double acc = 0.0;
  int pairs = 0;
  // intense expressions expose retained content most clearly
  int pool_size = static_cast<int>(w.identities(world::Pool::extreme).size());
  for (int i = 0; i < identities; ++i) {
    int id = static_cast<int>(rng.next_below(static_cast<uint64_t>(pool_size)));
    std::vector<std::vector<double>> volumes;
    for (int e = 0; e < expressions; ++e) {
      world::FactorVector f = w.sample_factors(world::Pool::extreme, id, rng);
      f.pose = {};  // frontal; expression is the only thing varying
      world::ToyFace face = world::render(f, w.config().image_size);

      ad::Tape tape;
      train::ParamBinding pb(tape, params, false);
      train::BaseNets nets{cfg, pb};
      ad::Tensor img = tape.leaf(ad::Shape{face.h, face.w}, face.image, false);
      train::MotionOut m = train::encode_motion(nets, img, train::Mode::eval, nullptr);
      auto [v_s, e_s] = train::encode_appearance(nets, img);
      volumes.push_back(train::canonical_volume(nets, v_s, m, e_s).val());
    }
    for (size_t a = 0; a < volumes.size(); ++a) {
      double den = 0.0;
      for (double v : volumes[a]) den += std::abs(v);
      den /= static_cast<double>(volumes[a].size());
      if (den <= 1e-12) throw DomainError("cv_neutrality: degenerate all-zero volume");
      for (size_t b = 0; b < volumes.size(); ++b) {
        if (a == b) continue;
        double num = 0.0;
        for (size_t k = 0; k < volumes[a].size(); ++k)
          num += std::abs(volumes[a][k] - volumes[b][k]);
        num /= static_cast<double>(volumes[a].size());
        acc += num / den;
        ++pairs;
      }
    }
  }
  return 100.0 * acc / static_cast<double>(pairs);
}

namespace {

double vec_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

double leakage_ratio(const Encoder& encoder, const world::World& w, int probes, uint64_t seed,
                     bool vary_identity) {
  Rng rng(seed, vary_identity ? 73 : 72);
  int pool_size = static_cast<int>(w.identities(world::Pool::common).size());
  double num = 0.0, den = 0.0;
  for (int i = 0; i < probes; ++i) {
    int id = static_cast<int>(rng.next_below(static_cast<uint64_t>(pool_size)));
    world::FactorVector f = w.sample_factors(world::Pool::common, id, rng);

    world::FactorVector f_num = f;
    if (vary_identity) {
      int id2 = static_cast<int>(rng.next_below(static_cast<uint64_t>(pool_size - 1)));
      if (id2 >= id) ++id2;
      f_num.identity = w.identities(world::Pool::common)[static_cast<size_t>(id2)];
    } else {
      world::FactorVector fresh = w.sample_factors(world::Pool::common, id, rng);
      f_num.pose = fresh.pose;
    }

    world::FactorVector f_den = f;
    {
      world::FactorVector fresh = w.sample_factors(world::Pool::common, id, rng);
      f_den.mouth = fresh.mouth;
      f_den.upper = fresh.upper;
    }

    int size = w.config().image_size;
    auto z = encoder(world::render(f, size), f);
    auto z_num = encoder(world::render(f_num, size), f_num);
    auto z_den = encoder(world::render(f_den, size), f_den);
    num += vec_dist(z, z_num);
    den += vec_dist(z, z_den);
  }
  return num / std::max(den, 1e-12);
}

latent::LatentSet probe_latents(const Encoder& encoder, const world::World& w, int probes,
                                uint64_t seed) {
  Rng rng(seed, 74);
  latent::LatentSet out;
  for (int i = 0; i < probes; ++i) {
    world::Pool pool = w.sample_pool(rng);
    int id = static_cast<int>(rng.next_below(w.identities(pool).size()));
    world::FactorVector f = w.sample_factors(pool, id, rng);
    auto z = encoder(world::render(f, w.config().image_size), f);
    if (out.d == 0) out.d = static_cast<int>(z.size());
    out.data.insert(out.data.end(), z.begin(), z.end());
    ++out.n;
  }
  return out;
}

}  // namespace

double pose_leakage(const Encoder& encoder, const world::World& w, int probes, uint64_t seed) {
  return leakage_ratio(encoder, w, probes, seed, false);
}

double identity_leakage(const Encoder& encoder, const world::World& w, int probes,
                        uint64_t seed) {
  return leakage_ratio(encoder, w, probes, seed, true);
}

double encoder_auc_z(const Encoder& encoder, const world::World& w, int probes, uint64_t seed) {
  return latent::pca_spectrum(probe_latents(encoder, w, probes, seed)).second.auc_z;
}

double bottlenecked_auc_z(const Encoder& encoder, const world::World& w, int probes,
                          uint64_t seed, int k) {
  latent::LatentSet z = probe_latents(encoder, w, probes, seed);
  auto [model, spectrum] = latent::covariance_spectrum(z);
  (void)spectrum;
  // project rows onto the top-k covariance components
  latent::LatentSet proj = z;
  for (int i = 0; i < z.n; ++i) {
    std::vector<double> coeff(static_cast<size_t>(k), 0.0);
    for (int j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int a = 0; a < z.d; ++a)
        acc += (z.at(i, a) - model.mean[static_cast<size_t>(a)]) *
               model.components[static_cast<size_t>(a) * z.d + j];
      coeff[static_cast<size_t>(j)] = acc;
    }
    for (int a = 0; a < z.d; ++a) {
      double v = model.mean[static_cast<size_t>(a)];
      for (int j = 0; j < k; ++j)
        v += coeff[static_cast<size_t>(j)] * model.components[static_cast<size_t>(a) * z.d + j];
      proj.at(i, a) = v;
    }
  }
  return latent::pca_spectrum(proj).second.auc_z;
}

LandmarkMetrics audio_mode_metrics(const ModelConfig& cfg, const ParamVector& base_params,
                                   const ParamVector* audio_params, const world::World& w,
                                   int clips, int frames, uint64_t seed, double noise_sigma) {
  LandmarkMetrics acc;
  for (int c = 0; c < clips; ++c) {
    Rng rng(seed, 7500 + static_cast<uint64_t>(c));
    int id = static_cast<int>(rng.next_below(w.identities(world::Pool::common).size()));
    auto clip = w.mouth_only_sequence(world::Pool::common, id, frames, rng);

    std::vector<std::array<double, world::kMouthDim>> traj;
    for (const auto& s : clip) traj.push_back(s.factors.mouth);
    auto emb = w.synth_audio(traj, rng, noise_sigma);
    auto z0 = train::teacher_latent(cfg, base_params, clip[0].face);

    std::vector<std::vector<double>> z_hat(clip.size());
    if (audio_params != nullptr) {
      ad::Tape tape;
      train::ParamBinding pb(tape, *audio_params, false);
      auto zs = train::forward_audio(cfg, pb, emb, z0);
      for (size_t t = 0; t < zs.size(); ++t) z_hat[t] = zs[t].val();
    } else {
      for (auto& z : z_hat) z = z0;  // frozen-z0 baseline
    }

    LandmarkSequence pred_seq, gt_seq;
    for (size_t t = 0; t < clip.size(); ++t) {
      rot6d::RigidTransform pose = train::teacher_pose(cfg, base_params, clip[t].face);
      auto pred = train::decode_with_latent(cfg, base_params, clip[0].face, pose, z_hat[t]);
      pred_seq.frames.push_back(
          extract_landmarks(pred, clip[t].face.h, clip[t].face.w, clip[0].face));
      gt_seq.frames.push_back(
          extract_landmarks(clip[t].face.image, clip[t].face.h, clip[t].face.w, clip[0].face));
    }
    LandmarkMetrics m = landmark_metrics(pred_seq, gt_seq);
    acc.m_p += m.m_p;
    acc.m_v += m.m_v;
    acc.f_p += m.f_p;
    acc.f_v += m.f_v;
  }
  acc.m_p /= clips;
  acc.m_v /= clips;
  acc.f_p /= clips;
  acc.f_v /= clips;
  return acc;
}

std::string EvalReport::to_json() const {
  for (double v : {m_p, m_v, f_p, f_v, cv_neutrality, pose_leakage, identity_leakage, auc_z})
    if (!std::isfinite(v) || v < 0.0) throw DomainError("EvalReport: non-finite or negative metric");
  std::ostringstream os;
  os << "{\"m_p\":" << io::format_double(m_p) << ",\"m_v\":" << io::format_double(m_v)
     << ",\"f_p\":" << io::format_double(f_p) << ",\"f_v\":" << io::format_double(f_v)
     << ",\"cv_neutrality\":" << io::format_double(cv_neutrality)
     << ",\"pose_leakage\":" << io::format_double(pose_leakage)
     << ",\"identity_leakage\":" << io::format_double(identity_leakage)
     << ",\"auc_z\":" << io::format_double(auc_z)
     << ",\"has_landmark_metrics\":" << (has_landmark_metrics ? "true" : "false") << "}";
  return os.str();
}

EvalReport evaluate_base(const ModelConfig& cfg, const ParamVector& params,
                         const world::World& w, int probes, uint64_t seed) {
  EvalReport r;
  Encoder enc = model_encoder(cfg, params);
  r.cv_neutrality = cv_neutrality(cfg, params, w, 6, 6, seed);
  r.pose_leakage = pose_leakage(enc, w, probes, seed);
  r.identity_leakage = identity_leakage(enc, w, probes, seed);
  r.auc_z = encoder_auc_z(enc, w, probes, seed);
  return r;
}

AblationTable ablation_report(const std::vector<ArmSpec>& arms, const world::World& w,
                              int probes) {
  AblationTable table;
  if (arms.empty()) return table;
  uint64_t seed = arms[0].config.seed;
  for (const auto& arm : arms)
    if (arm.config.seed != seed)
      throw ConfigError("ablation_report: arms trained with different seeds are not comparable");
  for (const auto& arm : arms) {
    table.names.push_back(arm.name);
    table.reports.push_back(evaluate_base(arm.config.model, arm.base_params, w, probes, seed));
  }
  return table;
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(24) << "arm" << std::right << std::setw(12) << "cv_neutral%"
     << std::setw(12) << "pose_leak" << std::setw(12) << "id_leak" << std::setw(10) << "auc_z"
     << "\n";
  for (size_t i = 0; i < names.size(); ++i) {
    const EvalReport& r = reports[i];
    os << std::left << std::setw(24) << names[i] << std::right << std::fixed
       << std::setprecision(4) << std::setw(12) << r.cv_neutrality << std::setw(12)
       << r.pose_leakage << std::setw(12) << r.identity_leakage << std::setw(10) << r.auc_z
       << "\n";
  }
  return os.str();
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "arm,cv_neutrality,pose_leakage,identity_leakage,auc_z,m_p,m_v,f_p,f_v\n";
  for (size_t i = 0; i < names.size(); ++i) {
    const EvalReport& r = reports[i];
    os << names[i] << "," << io::format_double(r.cv_neutrality) << ","
       << io::format_double(r.pose_leakage) << "," << io::format_double(r.identity_leakage)
       << "," << io::format_double(r.auc_z) << "," << io::format_double(r.m_p) << ","
       << io::format_double(r.m_v) << "," << io::format_double(r.f_p) << ","
       << io::format_double(r.f_v) << "\n";
  }
  return os.str();
}

std::string AblationTable::to_json() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) os << ",";
    os << "{\"arm\":\"" << names[i] << "\",\"report\":" << reports[i].to_json() << "}";
  }
  os << "]";
  return os.str();
}

}  // namespace emo::evalkit
