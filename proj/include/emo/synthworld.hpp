#pragma once

// Synthetic face world with known generative factors: a deterministic
// differentiable blob renderer (image + labeled landmarks + region masks),
// identity pools with common/extreme sampling, frozen-upper-face mouth
// sequences, and a synthetic stand-in for per-frame speech embeddings.

#include <array>
#include <cstdint>
#include <vector>

#include "emo/rng.hpp"
#include "emo/rotation6d.hpp"
#include "emo/tensor.hpp"

namespace emo::world {

inline constexpr int kIdentityDim = 4;
inline constexpr int kMouthDim = 3;
inline constexpr int kUpperDim = 3;
inline constexpr int kFactorDim = kIdentityDim + kMouthDim + kUpperDim;
inline constexpr int kNumLandmarks = 14;
inline constexpr int kNumMouthLandmarks = 6;  // landmark indices 0..5

enum Landmark : int {
  kMouthLeft = 0,
  kMouthRight = 1,
  kMouthTopLeft = 2,
  kMouthTopRight = 3,
  kMouthBottomLeft = 4,
  kMouthBottomRight = 5,
  kEyeLeft = 6,
  kEyeRight = 7,
  kBrowLeft = 8,
  kBrowRight = 9,
  kJaw0 = 10,
  kJaw1 = 11,
  kJaw2 = 12,
  kJaw3 = 13,
};

struct FactorVector {
  std::array<double, kIdentityDim> identity{};
  std::array<double, kMouthDim> mouth{};
  std::array<double, kUpperDim> upper{};
  rot6d::RigidTransform pose{};

  // flattened (identity, mouth, upper) factor coordinates
  std::array<double, kFactorDim> phi() const;
};

struct ToyFace {
  int h = 32;
  int w = 32;
  std::vector<double> image;  // h*w grayscale in [0,1]
  std::array<std::array<double, 2>, kNumLandmarks> landmarks{};  // pixel (x, y)
  std::vector<uint8_t> mask_eyes, mask_mouth, mask_ears, mask_face;
};

enum class Pool { common, extreme };

struct WorldConfig {
  int image_size = 32;
  int common_identities = 64;
  int extreme_identities = 5;
  double extreme_fraction = 0.25;  // sampling mixture; pools stay fixed
  double common_amplitude = 0.55;
  double extreme_amplitude = 1.0;
  // sampled pose range; the hard factor bounds stay at 45 deg / 0.2 units
  double max_rotation_deg = 18.0;
  double max_translation = 0.08;
  int audio_dim = 8;
  uint64_t seed = 1;
};

struct Sample {
  FactorVector factors;
  ToyFace face;
  int identity_index = -1;
  Pool pool = Pool::common;
};

// x_s / x_d share an identity, x_s* / x_d* share a different one, and x_s^m
// shares the x_s* identity with an independently sampled pose.
struct PairQuintuplet {
  Sample s, d, s_star, d_star, s_m;
  Pool pool = Pool::common;
};

using AudioEmbeddingSequence = std::vector<std::vector<double>>;  // T x k_a

class World {
 public:
  explicit World(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }
  const std::vector<std::array<double, kIdentityDim>>& identities(Pool p) const {
    return p == Pool::common ? common_ids_ : extreme_ids_;
  }

  FactorVector sample_factors(Pool pool, int identity_index, Rng& rng) const;
  Pool sample_pool(Rng& rng) const;

  PairQuintuplet sample_training_batch(Rng& rng) const;

  // e_u and pose frozen at frame-0 values, e_m sweeping its range; T >= 2
  std::vector<Sample> mouth_only_sequence(Pool pool, int identity_index, int frames,
                                          Rng& rng) const;

  // seeded affine map of e_m + tanh + white noise; independent of e_u
  AudioEmbeddingSequence synth_audio(const std::vector<std::array<double, kMouthDim>>& mouth_traj,
                                     Rng& rng, double noise_sigma) const;

 private:
  WorldConfig cfg_;
  std::vector<std::array<double, kIdentityDim>> common_ids_;
  std::vector<std::array<double, kIdentityDim>> extreme_ids_;
  std::vector<double> audio_map_w_;  // audio_dim x kMouthDim
  std::vector<double> audio_map_b_;  // audio_dim
};

/// Deterministic differentiable render of a factor vector. Throws DomainError
/// on out-of-bounds factors.
ToyFace render(const FactorVector& f, int image_size = 32);

struct RenderGraph {
  ad::Tensor image;    // {H, W}
  ad::Tensor geometry; // {3, B}: world x, world y, amplitude per blob
};

/// Tape-based twin of render(); identical values, analytic gradients with
/// respect to (identity, mouth, upper, rotation entries, translation).
RenderGraph render_ad(ad::Tape& tape, ad::Tensor identity, ad::Tensor mouth, ad::Tensor upper,
                      ad::Tensor rotation, ad::Tensor translation, int image_size = 32);

int blob_count();
int blob_landmark(int blob);  // -1 when the blob is not a landmark

}  // namespace emo::world
