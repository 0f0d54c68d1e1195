#pragma once

// Quantitative evaluation: mouth-anchored landmark normalization and the
// M_P/M_V/F_P/F_V metrics, canonical-volume neutrality, ground-truth-factor
// leakage scores, and seed-matched ablation tables.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "emo/synthworld.hpp"
#include "emo/toytrain.hpp"

namespace emo::evalkit {

using LandmarkFrame = std::array<std::array<double, 2>, world::kNumLandmarks>;

struct LandmarkSequence {
  std::vector<LandmarkFrame> frames;
};

/// The unique similarity transform placing mouth-left at (-1, 0) and
/// mouth-right at (1, 0), applied to all landmarks of the frame.
LandmarkFrame normalize_landmarks(const LandmarkFrame& frame);

struct LandmarkMetrics {
  double m_p = 0, m_v = 0, f_p = 0, f_v = 0;
};

/// Metrics over per-frame normalized landmarks; positions use the Euclidean
/// error per landmark, velocities its first differences.
LandmarkMetrics landmark_metrics(const LandmarkSequence& pred, const LandmarkSequence& gt);

/// Windowed intensity-centroid landmark reader applied identically to
/// generated and ground-truth frames; windows sit at the reference face's
/// landmarks.
LandmarkFrame extract_landmarks(const std::vector<double>& image, int h, int w,
                                const world::ToyFace& reference, int radius = 3);

using Encoder =
    std::function<std::vector<double>(const world::ToyFace&, const world::FactorVector&)>;
Encoder model_encoder(const train::ModelConfig& cfg, const numgrad::ParamVector& base_params);

/// Pairwise relative canonical-volume difference (percent) across same
/// identity, varied expression, frontal pose.
double cv_neutrality(const train::ModelConfig& cfg, const numgrad::ParamVector& params,
                     const world::World& w, int identities, int expressions, uint64_t seed);

/// mean ||z(x)-z(x')|| over pose-varied pairs, normalized by the same mean
/// over expression-varied pairs. Lower is better.
double pose_leakage(const Encoder& encoder, const world::World& w, int probes, uint64_t seed);
double identity_leakage(const Encoder& encoder, const world::World& w, int probes, uint64_t seed);

/// AUC_z of encoder latents over a mixed probe set.
double encoder_auc_z(const Encoder& encoder, const world::World& w, int probes, uint64_t seed);
/// AUC_z after projecting the same latents onto their top-k covariance
/// components (the deliberately bottlenecked control).
double bottlenecked_auc_z(const Encoder& encoder, const world::World& w, int probes,
                          uint64_t seed, int k);

/// M_P/M_V/F_P/F_V of the speech-driven mode on held-out mouth clips;
/// audio_params == nullptr evaluates the frozen-z0 baseline.
LandmarkMetrics audio_mode_metrics(const train::ModelConfig& cfg,
                                   const numgrad::ParamVector& base_params,
                                   const numgrad::ParamVector* audio_params,
                                   const world::World& w, int clips, int frames, uint64_t seed,
                                   double noise_sigma);

struct EvalReport {
  double m_p = 0, m_v = 0, f_p = 0, f_v = 0;
  double cv_neutrality = 0;
  double pose_leakage = 0;
  double identity_leakage = 0;
  double auc_z = 0;
  bool has_landmark_metrics = false;
  std::string to_json() const;
};

struct ArmSpec {
  std::string name;
  numgrad::ParamVector base_params;
  train::TrainConfig config;
};

struct AblationTable {
  std::vector<std::string> names;
  std::vector<EvalReport> reports;
  std::string to_text() const;
  std::string to_csv() const;
  std::string to_json() const;
};

/// One row per arm; all arms must carry the same seed so their probe streams
/// are comparable.
AblationTable ablation_report(const std::vector<ArmSpec>& arms, const world::World& w,
                              int probes = 256);

EvalReport evaluate_base(const train::ModelConfig& cfg, const numgrad::ParamVector& params,
                         const world::World& w, int probes, uint64_t seed);

}  // namespace emo::evalkit
