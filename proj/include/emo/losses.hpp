#pragma once

// All training losses as pure differentiable scalar maps: the source-driver
// mismatch hinge, CosFace over the extended pair sets, canonical-volume MAE,
// the mouth-PCA loss, photometric/adversarial compositions, the WGAN-GP
// objective and the rotation-model losses.

#include <span>
#include <utility>
#include <vector>

#include "emo/latent_analysis.hpp"
#include "emo/rng.hpp"
#include "emo/rotation6d.hpp"
#include "emo/synthworld.hpp"
#include "emo/tensor.hpp"

namespace emo::losses {

enum class DatasetTag { common, extreme };

struct LossWeights {
  // photometric
  double w_in = 20.0;
  double w_face = 10.0;
  double w_gaze = 10.0;
  double w_eyes = 10.0;
  double w_mouth = 25.0;
  double w_ears = 5.0;
  // adversarial
  double w_adv = 1.0;
  double w_fm = 40.0;
  // latent space
  double w_cos = 2.0;
  double sdm_weight_common = 1.0;
  double sdm_weight_extreme = 10.0;
  double sdm_margin_common = 0.5;
  double sdm_margin_extreme = 0.25;
  double cosface_s = 5.0;
  double cosface_m = 0.2;
  double w_cv = 1.0;
  // speech mode
  double w_l1 = 10.0;
  double w_face_sp = 100.0;
  double w_pca = 200.0;
  double w_vtr = 5.0;
  double w_bce = 5e3;
  double w_lips = 5e5;
  double bce_eps = 1e-7;
  // rotation model
  double lambda_rot = 1.0;
  double lambda_trans = 1.0;
  double lambda_recons = 1.0;
  double lambda_adv = 0.1;
  double lambda_smooth = 0.1;
  double lambda_gp = 10.0;

  double sdm_weight(DatasetTag t) const {
    return t == DatasetTag::extreme ? sdm_weight_extreme : sdm_weight_common;
  }
  double sdm_margin(DatasetTag t) const {
    return t == DatasetTag::extreme ? sdm_margin_extreme : sdm_margin_common;
  }
};

using PairList = std::vector<std::pair<ad::Tensor, ad::Tensor>>;

// Expression-vector fields of one training iteration. Default-constructed
// (invalid) tensors mark missing fields.
struct PairBatch {
  ad::Tensor z_s, z_d;
  ad::Tensor z_sd;     // z_{s->d}
  ad::Tensor z_ssd;    // z_{s*->d}
  ad::Tensor z_ssmd;   // z_{s*m->d}
  ad::Tensor z_dstar;  // z_{d*}
  DatasetTag tag = DatasetTag::common;
};

ad::Tensor cosine_sim(ad::Tensor zi, ad::Tensor zj);

/// w * max(0, cos(z_s, z_d) - margin) with (w, margin) chosen by dataset tag.
ad::Tensor sdm_loss(ad::Tensor zs, ad::Tensor zd, DatasetTag tag, const LossWeights& w);

ad::Tensor cosface_distance(ad::Tensor zi, ad::Tensor zj, double s, double m);

/// The full negative sum is shared by every positive term.
ad::Tensor cosface_loss(const PairList& positives, const PairList& negatives, double s, double m);

/// P anchors each of z_{s->d}, z_{s*->d}, z_{s*m->d} to z_d; N pairs the same
/// three with z_{d*}.
std::pair<PairList, PairList> build_pair_sets(const PairBatch& batch);

ad::Tensor canonical_volume_loss(ad::Tensor va, ad::Tensor vb);

/// (1/n) sum_k |<z_i - z_j, v_k>| over the first n basis components.
ad::Tensor pca_mouth_loss(ad::Tensor zi, ad::Tensor zj, const latent::MouthBasis& basis, int n);

struct PhotometricTerms {
  ad::Tensor total, l_in, l_face, l_gaze, l_eyes, l_mouth, l_ears;
};
PhotometricTerms photometric_suite(ad::Tensor pred_image, const world::ToyFace& gt,
                                   const LossWeights& w);

struct HingeGanTerms {
  ad::Tensor critic_loss, generator_loss, l_adv, l_fm;
};
HingeGanTerms hinge_gan_losses(ad::Tensor d_real, ad::Tensor d_fake,
                               const PairList& feature_pairs, const LossWeights& w);

/// Critic view used by the gradient penalty: the input-gradient of the score
/// is expressed on the tape so the penalty stays differentiable in the
/// critic's parameters.
struct Critic {
  virtual ~Critic() = default;
  virtual ad::Tensor score(ad::Tensor x) = 0;
  virtual std::pair<ad::Tensor, ad::Tensor> score_with_input_grad(ad::Tensor x) = 0;
};

struct WganGpTerms {
  ad::Tensor critic_loss, generator_loss, gradient_penalty;
};
/// L_D = E[D(fake)] - E[D(real)] + lambda E[(|grad D(x_hat)|_2 - 1)^2] with
/// x_hat sampled uniformly along real-fake lines; L_G = -E[D(fake)].
WganGpTerms wgan_gp_losses(Critic& critic, std::span<const ad::Tensor> x_real,
                           std::span<const ad::Tensor> x_fake, double lambda, Rng& rng);

/// pred {9,T} against ground truth frames; L1 summed over frames, rotation and
/// translation parts weighted separately.
ad::Tensor rotation_recon_loss(ad::Tensor pred, const rot6d::PoseSequence& gt, double lambda_rot,
                               double lambda_trans);

/// sum_{t>=2} |X_t - X_{t-1}| over all dims; zero for a single frame. x is {C,T}.
ad::Tensor smoothness_loss(ad::Tensor x);

struct SpeechTerms {
  ad::Tensor total, l_idt, l_latent, l_mouth;
  ad::Tensor l_l1, l_face, l_pca, l_vtr, l_bce, l_lips;
};
SpeechTerms speech_loss_suite(ad::Tensor pred_image, const std::vector<uint8_t>& pred_mouth_mask,
                              const world::ToyFace& gt, ad::Tensor z_hat,
                              std::span<const double> z_teacher, const latent::MouthBasis& basis,
                              const LossWeights& w);

struct MainLossComponents {
  ad::Tensor l_pho, l_cos, l_sdm, l_cv, l_gan;  // l_sdm already carries its tag weight
};
/// L_main = L_pho + (w_cos L_cos + L_sdm) + w_CV L_CV + L_GAN
ad::Tensor total_loss_main(const MainLossComponents& c, const LossWeights& w);

// masked mean-L1 helper shared with evaluation code; empty mask contributes 0
ad::Tensor masked_l1(ad::Tensor pred, const std::vector<double>& gt_image,
                     const std::vector<uint8_t>& mask);

}  // namespace emo::losses
