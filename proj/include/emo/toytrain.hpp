#pragma once

// Toy-scale trainable pipeline: appearance/motion encoders feeding volumetric
// warps through a canonical volume, a 2D renderer head, the audio-encoder
// recurrence distilled from the motion encoder, and the audio-to-rotation
// WGAN-GP generator with its 5:1 critic schedule.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "emo/latent_analysis.hpp"
#include "emo/losses.hpp"
#include "emo/numgrad.hpp"
#include "emo/rng.hpp"
#include "emo/rotation6d.hpp"
#include "emo/synthworld.hpp"
#include "emo/tensor.hpp"

namespace emo::train {

struct ModelConfig {
  int image_size = 32;
  int z_dim = 16;
  int es_dim = 8;
  int vol_c = 4, vol_d = 8, vol_h = 8, vol_w = 8;
  int app_channels = 16;
  int motion_hidden1 = 48;
  int motion_hidden2 = 32;
  int z_hidden = 24;
  int warp_hidden = 24;
  int warp_coarse = 4;     // coarse lattice of the learned displacement field
  int g2d_hidden = 20;
  int g2d_mid = 10;
  int g2d_head = 14;
  double dropout_rate = 0.1;
  // audio encoder
  int audio_dim = 8;
  int audio_hidden = 24;
  int audio_feat = 8;
  // rotation model
  int rot_hidden = 16;
  int rot_kernel = 5;
  int critic_window = 8;   // PatchGAN window N
  int critic_stride = 4;
  int critic_hidden = 24;
};

struct Ablation {
  bool disable_cv = false;
  bool disable_sdm = false;
  bool disable_extended_sampling = false;
  bool disable_pca_loss = false;
  bool plain_latent_mae = false;
};

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 4;
  uint64_t seed = 0;
  double lr_start = 2e-3;  // desk-scale default; the full-scale schedule is 2e-4 -> 1e-6
  double lr_end = 1e-5;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  losses::LossWeights weights;
  Ablation ablation;
  ModelConfig model;
  // audio stage
  int clip_min_frames = 50;
  int clip_max_frames = 200;
  int photo_frames_per_iter = 2;
  double audio_noise_sigma = 0.05;
  // rotation stage
  int critic_steps_per_gen = 5;
  int rot_seq_frames = 48;

  void validate() const;
};

/// lr(0) = lr_start and lr(total-1) = lr_end exactly.
double cosine_lr(int iteration, int total_iterations, double lr_start, double lr_end);

class AdamW {
 public:
  AdamW(size_t n, double beta1, double beta2, double eps, double weight_decay);
  void step(std::vector<double>& params, const std::vector<double>& grads, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

// ---- parameters ----
numgrad::ParamVector init_base_params(const ModelConfig& cfg, uint64_t seed);
numgrad::ParamVector init_audio_params(const ModelConfig& cfg, uint64_t seed);
struct RotGanParams {
  numgrad::ParamVector generator;
  numgrad::ParamVector critics;
};
RotGanParams init_rotgan_params(const ModelConfig& cfg, uint64_t seed);

// one leaf per named segment; grads collected back into the flat layout
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const numgrad::ParamVector& params, bool needs_grad);
  ad::Tensor operator()(const std::string& name, ad::Shape shape) const;
  void collect_grads(numgrad::ParamVector& out) const;

 private:
  ad::Tape* tape_;
  const numgrad::ParamVector* params_;
  bool needs_grad_;
  mutable std::map<std::string, ad::Tensor> leaves_;
};

// ---- base model forward pieces ----
enum class Mode { train, eval };

struct MotionOut {
  ad::Tensor rot6;          // {6}
  ad::Tensor b1, b2, b3;    // rotation columns
  ad::Tensor t;             // {3}
  ad::Tensor z;             // {z_dim}
};

struct BaseNets {
  const ModelConfig& cfg;
  const ParamBinding& pb;
};

MotionOut encode_motion(const BaseNets& nets, ad::Tensor image, Mode mode, Rng* dropout_rng);
std::pair<ad::Tensor, ad::Tensor> encode_appearance(const BaseNets& nets, ad::Tensor image);
ad::Tensor canonical_volume(const BaseNets& nets, ad::Tensor v_s, const MotionOut& motion,
                            ad::Tensor e_s);
ad::Tensor decode_image(const BaseNets& nets, ad::Tensor v_canon, const MotionOut& pose_from,
                        ad::Tensor z_driver, ad::Tensor e_s);

struct BaseForward {
  ad::Tensor prediction;
  ad::Tensor v_s;
  ad::Tensor v_canon;
  MotionOut source;
  MotionOut driver;
  ad::Tensor e_s;
};
BaseForward forward_base(const BaseNets& nets, const world::ToyFace& x_s,
                         const world::ToyFace& x_d, Mode mode, Rng* dropout_rng);

struct History {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  double column_mean(const std::string& name, size_t first_row, size_t last_row) const;
  size_t column_index(const std::string& name) const;
};

std::pair<numgrad::ParamVector, History> train_base(const world::World& w,
                                                    const TrainConfig& cfg);

// full training loss of one quintuplet in eval mode, as a checkable program
numgrad::DifferentiableProgram base_loss_program(const world::World& w, const TrainConfig& cfg,
                                                 const world::PairQuintuplet& batch);

// ---- audio encoder ----
std::vector<ad::Tensor> forward_audio(const ModelConfig& cfg, const ParamBinding& pb,
                                      const world::AudioEmbeddingSequence& emb,
                                      std::span<const double> z0);

std::pair<numgrad::ParamVector, History> train_audio(const world::World& w,
                                                     const numgrad::ParamVector& base_params,
                                                     const latent::MouthBasis& basis,
                                                     const TrainConfig& cfg);

// teacher latents of a rendered face, eval mode (helper shared with evalkit)
std::vector<double> teacher_latent(const ModelConfig& cfg, const numgrad::ParamVector& base_params,
                                   const world::ToyFace& face);
rot6d::RigidTransform teacher_pose(const ModelConfig& cfg,
                                   const numgrad::ParamVector& base_params,
                                   const world::ToyFace& face);
// predicted image for a driver latent, through the frozen base model
std::vector<double> decode_with_latent(const ModelConfig& cfg,
                                       const numgrad::ParamVector& base_params,
                                       const world::ToyFace& source,
                                       const rot6d::RigidTransform& driver_pose,
                                       std::span<const double> z);

// mouth mask read off an image: bright pixels inside the reference mouth
// region dilated by two pixels (the toy stand-in for a parsing network)
std::vector<uint8_t> mouth_mask_from_image(const std::vector<double>& image,
                                           const world::ToyFace& reference);

// ---- rotation model ----
struct PoseTrack {
  rot6d::PoseSequence poses;
  world::AudioEmbeddingSequence embeddings;
};
// smooth seeded head-pose trajectory with correlated embeddings
PoseTrack sample_pose_track(const ModelConfig& cfg, int frames, double max_rotation_rad,
                            double max_translation, const std::vector<double>& map_w,
                            const std::vector<double>& map_b, Rng& rng, double noise_sigma);

ad::Tensor rotation_generator(const ModelConfig& cfg, const ParamBinding& pb,
                              const world::AudioEmbeddingSequence& emb);  // {9,T}

std::pair<RotGanParams, History> train_rotation_gan(const world::World& w,
                                                    const TrainConfig& cfg);

// checkpoint helpers (single EMCK file; rotation checkpoints join both groups
// under gen./critic. prefixes)
numgrad::ParamVector merge_rotgan(const RotGanParams& p);
RotGanParams split_rotgan(const numgrad::ParamVector& merged);

}  // namespace emo::train
