#include "emo/losses.hpp"

#include <algorithm>
#include <cmath>

namespace emo::losses {

using ad::Tensor;

Tensor cosine_sim(Tensor zi, Tensor zj) {
  if (zi.numel() != zj.numel()) throw DimensionError("cosine_sim: dimension mismatch");
  double ni = 0.0, nj = 0.0;
  for (double v : zi.val()) ni += v * v;
  for (double v : zj.val()) nj += v * v;
  if (std::sqrt(ni) <= 1e-12 || std::sqrt(nj) <= 1e-12)
    throw DomainError("degenerate vector in cosine similarity");
  return ad::div(ad::dot(zi, zj), ad::mul(ad::norm2(zi), ad::norm2(zj)));
}

Tensor sdm_loss(Tensor zs, Tensor zd, DatasetTag tag, const LossWeights& w) {
  Tensor c = cosine_sim(zs, zd);
  return ad::mul_scalar(ad::relu(ad::add_scalar(c, -w.sdm_margin(tag))), w.sdm_weight(tag));
}

Tensor cosface_distance(Tensor zi, Tensor zj, double s, double m) {
  return ad::mul_scalar(ad::add_scalar(cosine_sim(zi, zj), -m), s);
}

Tensor cosface_loss(const PairList& positives, const PairList& negatives, double s, double m) {
  if (positives.empty()) throw DomainError("cosface_loss: empty positive set");
  ad::Tape* tape = positives[0].first.tape;

  std::vector<Tensor> neg_scores;
  neg_scores.reserve(negatives.size());
  for (const auto& [zi, zj] : negatives) neg_scores.push_back(cosface_distance(zi, zj, s, m));

  Tensor loss = tape->constant(0.0);
  for (const auto& [zk, zl] : positives) {
    Tensor dp = cosface_distance(zk, zl, s, m);
    // term = log(1 + sum_N exp(d_n - d_p)), evaluated with a max shift
    double shift = 0.0;
    for (const Tensor& dn : neg_scores) shift = std::max(shift, dn.val()[0] - dp.val()[0]);
    Tensor acc = tape->constant(std::exp(-shift));
    for (const Tensor& dn : neg_scores)
      acc = ad::add(acc, ad::exp_(ad::add_scalar(ad::sub(dn, dp), -shift)));
    loss = ad::add(loss, ad::add_scalar(ad::log_(acc), shift));
  }
  return loss;
}

std::pair<PairList, PairList> build_pair_sets(const PairBatch& batch) {
  auto need = [](const Tensor& t, const char* name) {
    if (!t.valid()) throw DimensionError(std::string("build_pair_sets: missing field ") + name);
  };
  need(batch.z_d, "z_d");
  need(batch.z_sd, "z_{s->d}");
  need(batch.z_ssd, "z_{s*->d}");
  need(batch.z_ssmd, "z_{s*m->d}");
  need(batch.z_dstar, "z_{d*}");
  PairList p{{batch.z_sd, batch.z_d}, {batch.z_ssd, batch.z_d}, {batch.z_ssmd, batch.z_d}};
  PairList n{{batch.z_sd, batch.z_dstar},
             {batch.z_ssd, batch.z_dstar},
             {batch.z_ssmd, batch.z_dstar}};
  return {std::move(p), std::move(n)};
}

Tensor canonical_volume_loss(Tensor va, Tensor vb) {
  if (!(va.shape() == vb.shape())) throw DimensionError("canonical_volume_loss: shape mismatch");
  return ad::l1_mean(va, vb);
}

Tensor pca_mouth_loss(Tensor zi, Tensor zj, const latent::MouthBasis& basis, int n) {
  if (n < 1 || n > basis.k) throw DimensionError("pca_mouth_loss: n exceeds basis width");
  if (zi.numel() != basis.d || zj.numel() != basis.d)
    throw DimensionError("pca_mouth_loss: dimension mismatch");
  ad::Tape* tape = zi.tape;
  // |PC_i(k) - PC_j(k)| = |<z_i - z_j, v_k>|; the mean mu_m cancels
  std::vector<double> vt(static_cast<size_t>(n) * basis.d);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < basis.d; ++i)
      vt[static_cast<size_t>(k) * basis.d + i] =
          basis.components[static_cast<size_t>(i) * basis.k + k];
  Tensor w = tape->leaf(ad::Shape{n, basis.d}, vt, false);
  Tensor zero = tape->zeros(ad::Shape{n}, false);
  Tensor proj = ad::linear(w, ad::sub(zi, zj), zero);
  return ad::mean(ad::abs_(proj));
}

Tensor masked_l1(Tensor pred, const std::vector<double>& gt_image,
                 const std::vector<uint8_t>& mask) {
  if (gt_image.size() != mask.size() ||
      static_cast<size_t>(pred.numel()) != mask.size())
    throw DimensionError("masked_l1: mask/image shape mismatch");
  ad::Tape* tape = pred.tape;
  std::vector<int> idx;
  std::vector<double> gt;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      idx.push_back(static_cast<int>(i));
      gt.push_back(gt_image[i]);
    }
  if (idx.empty()) return tape->constant(0.0);
  Tensor sel = ad::gather(pred, idx);
  Tensor ref = tape->leaf(ad::Shape{static_cast<int>(gt.size())}, gt, false);
  return ad::l1_mean(sel, ref);
}

namespace {

// intensity centroid of one eye window; window centered at the ground-truth
// eye landmark so pred and gt are measured through the same operator
struct Centroid {
  Tensor x, y;
};

Centroid soft_centroid(Tensor image, const world::ToyFace& ref, int lm, int radius) {
  ad::Tape* tape = image.tape;
  int h = ref.h, w = ref.w;
  int cx = static_cast<int>(std::lround(ref.landmarks[static_cast<size_t>(lm)][0]));
  int cy = static_cast<int>(std::lround(ref.landmarks[static_cast<size_t>(lm)][1]));
  std::vector<int> idx;
  std::vector<double> xs, ys;
  for (int y = std::max(0, cy - radius); y <= std::min(h - 1, cy + radius); ++y)
    for (int x = std::max(0, cx - radius); x <= std::min(w - 1, cx + radius); ++x) {
      idx.push_back(y * w + x);
      xs.push_back(x);
      ys.push_back(y);
    }
  Tensor pix = ad::gather(image, idx);
  Tensor weight = ad::relu(ad::add_scalar(pix, -0.35));
  weight = ad::mul(weight, weight);
  Tensor denom = ad::add_scalar(ad::sum(weight), 1e-6);
  Tensor tx = tape->leaf(ad::Shape{static_cast<int>(xs.size())}, xs, false);
  Tensor ty = tape->leaf(ad::Shape{static_cast<int>(ys.size())}, ys, false);
  return {ad::div(ad::dot(weight, tx), denom), ad::div(ad::dot(weight, ty), denom)};
}

}  // namespace

PhotometricTerms photometric_suite(Tensor pred_image, const world::ToyFace& gt,
                                   const LossWeights& w) {
  if (pred_image.numel() != static_cast<int>(gt.image.size()))
    throw DimensionError("photometric_suite: image shape mismatch");
  ad::Tape* tape = pred_image.tape;
  PhotometricTerms t;
  Tensor gt_img = tape->leaf(ad::Shape{gt.h, gt.w}, gt.image, false);
  t.l_in = ad::l1_mean(pred_image, gt_img);
  t.l_face = masked_l1(pred_image, gt.image, gt.mask_face);
  t.l_eyes = masked_l1(pred_image, gt.image, gt.mask_eyes);
  t.l_mouth = masked_l1(pred_image, gt.image, gt.mask_mouth);
  t.l_ears = masked_l1(pred_image, gt.image, gt.mask_ears);

  Tensor gaze = tape->constant(0.0);
  Tensor gt_flat = tape->leaf(ad::Shape{gt.h, gt.w}, gt.image, false);
  for (int lm : {world::kEyeLeft, world::kEyeRight}) {
    Centroid cp = soft_centroid(pred_image, gt, lm, 3);
    Centroid cg = soft_centroid(gt_flat, gt, lm, 3);
    gaze = ad::add(gaze, ad::abs_(ad::sub(cp.x, cg.x)));
    gaze = ad::add(gaze, ad::abs_(ad::sub(cp.y, cg.y)));
  }
  t.l_gaze = ad::mul_scalar(gaze, 0.25);

  t.total = ad::add(
      ad::add(ad::add(ad::mul_scalar(t.l_in, w.w_in), ad::mul_scalar(t.l_face, w.w_face)),
              ad::add(ad::mul_scalar(t.l_gaze, w.w_gaze), ad::mul_scalar(t.l_eyes, w.w_eyes))),
      ad::add(ad::mul_scalar(t.l_mouth, w.w_mouth), ad::mul_scalar(t.l_ears, w.w_ears)));
  return t;
}

HingeGanTerms hinge_gan_losses(Tensor d_real, Tensor d_fake, const PairList& feature_pairs,
                               const LossWeights& w) {
  if (d_real.numel() == 0 || d_fake.numel() == 0)
    throw DimensionError("hinge_gan_losses: empty score lists");
  HingeGanTerms t;
  t.critic_loss = ad::add(ad::mean(ad::relu(ad::affine(d_real, -1.0, 1.0))),
                          ad::mean(ad::relu(ad::add_scalar(d_fake, 1.0))));
  t.l_adv = ad::neg(ad::mean(d_fake));
  ad::Tape* tape = d_real.tape;
  Tensor fm = tape->constant(0.0);
  for (const auto& [fr, ff] : feature_pairs) fm = ad::add(fm, ad::l1_mean(fr, ff));
  t.l_fm = fm;
  t.generator_loss =
      ad::add(ad::mul_scalar(t.l_adv, w.w_adv), ad::mul_scalar(t.l_fm, w.w_fm));
  return t;
}

WganGpTerms wgan_gp_losses(Critic& critic, std::span<const Tensor> x_real,
                           std::span<const Tensor> x_fake, double lambda, Rng& rng) {
  if (x_real.empty() || x_real.size() != x_fake.size())
    throw DimensionError("wgan_gp_losses: need matching non-empty real/fake batches");
  if (lambda < 0.0) throw DomainError("wgan_gp_losses: lambda must be >= 0");
  ad::Tape* tape = x_real[0].tape;

  Tensor real_sum = tape->constant(0.0);
  Tensor fake_sum = tape->constant(0.0);
  Tensor gp_sum = tape->constant(0.0);
  for (size_t i = 0; i < x_real.size(); ++i) {
    if (!(x_real[i].shape() == x_fake[i].shape()))
      throw DimensionError("wgan_gp_losses: real/fake shape mismatch");
    real_sum = ad::add(real_sum, critic.score(x_real[i]));
    fake_sum = ad::add(fake_sum, critic.score(x_fake[i]));
    double eps = rng.uniform();
    Tensor x_hat =
        ad::add(ad::mul_scalar(x_real[i], eps), ad::mul_scalar(x_fake[i], 1.0 - eps));
    auto [score, grad] = critic.score_with_input_grad(x_hat);
    (void)score;
    Tensor gnorm = ad::norm2(grad, 1e-24);
    if (!std::isfinite(gnorm.val()[0]))
      throw NumericalDivergence("non-finite critic input-gradient norm", "gradient_penalty");
    Tensor dev = ad::add_scalar(gnorm, -1.0);
    gp_sum = ad::add(gp_sum, ad::mul(dev, dev));
  }
  double inv = 1.0 / static_cast<double>(x_real.size());
  WganGpTerms t;
  t.gradient_penalty = ad::mul_scalar(gp_sum, inv);
  t.critic_loss = ad::add(ad::sub(ad::mul_scalar(fake_sum, inv), ad::mul_scalar(real_sum, inv)),
                          ad::mul_scalar(t.gradient_penalty, lambda));
  t.generator_loss = ad::neg(ad::mul_scalar(fake_sum, inv));
  return t;
}

Tensor rotation_recon_loss(Tensor pred, const rot6d::PoseSequence& gt, double lambda_rot,
                           double lambda_trans) {
  const ad::Shape& s = pred.shape();
  if (s.nd != 2 || s.d[0] != 9) throw DimensionError("rotation_recon_loss: pred must be {9,T}");
  int tlen = s.d[1];
  if (static_cast<size_t>(tlen) != gt.length())
    throw DimensionError("rotation_recon_loss: length mismatch");
  ad::Tape* tape = pred.tape;
  std::vector<double> ref(static_cast<size_t>(9) * tlen);
  for (int t = 0; t < tlen; ++t)
    for (int c = 0; c < 9; ++c)
      ref[static_cast<size_t>(c) * tlen + t] = gt.frames[static_cast<size_t>(t)][static_cast<size_t>(c)];
  Tensor diff = ad::abs_(ad::sub(pred, tape->leaf(s, ref, false)));
  Tensor rot_part = ad::sum(ad::slice(diff, 0, 6 * tlen));
  Tensor trans_part = ad::sum(ad::slice(diff, 6 * tlen, 3 * tlen));
  return ad::add(ad::mul_scalar(rot_part, lambda_rot), ad::mul_scalar(trans_part, lambda_trans));
}

Tensor smoothness_loss(Tensor x) {
  const ad::Shape& s = x.shape();
  if (s.nd != 2) throw DimensionError("smoothness_loss: need {C,T}");
  int c = s.d[0], tlen = s.d[1];
  ad::Tape* tape = x.tape;
  if (tlen <= 1) return tape->constant(0.0);
  std::vector<int> cur, prev;
  for (int ci = 0; ci < c; ++ci)
    for (int t = 1; t < tlen; ++t) {
      cur.push_back(ci * tlen + t);
      prev.push_back(ci * tlen + t - 1);
    }
  return ad::sum(ad::abs_(ad::sub(ad::gather(x, cur), ad::gather(x, prev))));
}

SpeechTerms speech_loss_suite(Tensor pred_image, const std::vector<uint8_t>& pred_mouth_mask,
                              const world::ToyFace& gt, Tensor z_hat,
                              std::span<const double> z_teacher, const latent::MouthBasis& basis,
                              const LossWeights& w) {
  if (basis.k < 8) throw DimensionError("speech_loss_suite: basis width must be >= 8");
  if (pred_mouth_mask.size() != gt.mask_mouth.size())
    throw DimensionError("speech_loss_suite: mask shape mismatch");
  ad::Tape* tape = pred_image.tape;
  SpeechTerms t;

  Tensor gt_img = tape->leaf(ad::Shape{gt.h, gt.w}, gt.image, false);
  t.l_l1 = ad::l1_mean(pred_image, gt_img);
  t.l_face = masked_l1(pred_image, gt.image, gt.mask_face);
  t.l_idt = ad::add(ad::mul_scalar(t.l_l1, w.w_l1), ad::mul_scalar(t.l_face, w.w_face_sp));

  std::vector<double> teacher(z_teacher.begin(), z_teacher.end());
  Tensor z_ref = tape->leaf(ad::Shape{static_cast<int>(teacher.size())}, teacher, false);
  t.l_pca = pca_mouth_loss(z_hat, z_ref, basis, 8);
  t.l_vtr = ad::l1_sum(z_hat, z_ref);
  t.l_latent = ad::add(ad::mul_scalar(t.l_pca, w.w_pca), ad::mul_scalar(t.l_vtr, w.w_vtr));

  std::vector<double> pm(pred_mouth_mask.begin(), pred_mouth_mask.end());
  std::vector<double> gm(gt.mask_mouth.begin(), gt.mask_mouth.end());
  Tensor pred_mask = tape->leaf(ad::Shape{gt.h, gt.w}, pm, false);
  Tensor gt_mask = tape->leaf(ad::Shape{gt.h, gt.w}, gm, false);
  t.l_bce = ad::bce_mean(pred_mask, gt_mask, w.bce_eps);
  t.l_lips = masked_l1(pred_image, gt.image, gt.mask_mouth);
  t.l_mouth = ad::add(ad::mul_scalar(t.l_bce, w.w_bce), ad::mul_scalar(t.l_lips, w.w_lips));

  t.total = ad::add(ad::add(t.l_idt, t.l_latent), t.l_mouth);
  return t;
}

Tensor total_loss_main(const MainLossComponents& c, const LossWeights& w) {
  Tensor lat = ad::add(ad::mul_scalar(c.l_cos, w.w_cos), c.l_sdm);
  return ad::add(ad::add(c.l_pho, lat), ad::add(ad::mul_scalar(c.l_cv, w.w_cv), c.l_gan));
}

}  // namespace emo::losses
