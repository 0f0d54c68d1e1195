#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "emo/losses.hpp"
#include "emo/numgrad.hpp"
#include "emo/rng.hpp"

using namespace emo;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using losses::DatasetTag;
using losses::LossWeights;

namespace {

Tensor vec(Tape& t, std::vector<double> v, bool grad = false) {
  return t.leaf(Shape{static_cast<int>(v.size())}, v, grad);
}

// unit vectors with a prescribed cosine
std::pair<std::vector<double>, std::vector<double>> with_cosine(double c) {
  return {{1.0, 0.0}, {c, std::sqrt(std::max(0.0, 1.0 - c * c))}};
}

// wraps a loss over named leaf blocks as a checkable program
struct LossProgram {
  std::vector<std::pair<std::string, std::vector<double>>> blocks;
  std::function<Tensor(Tape&, const std::map<std::string, Tensor>&)> build;

  numgrad::ParamVector params() const {
    numgrad::ParamVector p;
    for (const auto& [name, vals] : blocks) {
      p.add_segment(name, vals.size());
      auto seg = p.segment(name);
      std::copy(vals.begin(), vals.end(), seg.begin());
    }
    return p;
  }
  numgrad::DifferentiableProgram program() const {
    auto blocks_copy = blocks;
    auto build_copy = build;
    auto run = [blocks_copy, build_copy](const numgrad::ParamVector& p, bool with_grad)
        -> std::pair<double, numgrad::ParamVector> {
      Tape tape;
      std::map<std::string, Tensor> leaves;
      for (const auto& [name, vals] : blocks_copy) {
        auto seg = p.segment(name);
        leaves[name] = tape.leaf(Shape{static_cast<int>(seg.size())}, seg.data(), with_grad);
      }
      Tensor loss = build_copy(tape, leaves);
      numgrad::ParamVector g = p.same_layout_zeros();
      if (with_grad) {
        tape.backward(loss);
        for (const auto& [name, vals] : blocks_copy) {
          auto dst = g.segment(name);
          auto src = leaves[name].grad();
          std::copy(src.begin(), src.end(), dst.begin());
        }
      }
      return {loss.scalar(), std::move(g)};
    };
    numgrad::DifferentiableProgram prog;
    prog.value = [run](const numgrad::ParamVector& p) { return run(p, false).first; };
    prog.value_and_grad = [run](const numgrad::ParamVector& p) { return run(p, true); };
    return prog;
  }
};

void expect_grad_pass(const LossProgram& lp) {
  numgrad::GradCheckOptions opt;
  auto report = numgrad::check_grad(lp.program(), lp.params(), opt);
  CAPTURE(report.to_json());
  CHECK(report.pass);
}

std::vector<double> randvec(int n, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = scale * rng.normal();
  return v;
}

latent::MouthBasis identity_basis(int d, int k) {
  latent::MouthBasis b;
  b.d = d;
  b.k = k;
  b.mean.assign(static_cast<size_t>(d), 0.0);
  b.components.assign(static_cast<size_t>(d) * k, 0.0);
  for (int j = 0; j < k; ++j) b.components[static_cast<size_t>(j) * k + j] = 1.0;
  return b;
}

}  // namespace

TEST_CASE("cosine_sim basics") {
  Tape t;
  CHECK(losses::cosine_sim(vec(t, {1, 0}), vec(t, {0, 1})).scalar() == doctest::Approx(0.0));
  auto z = vec(t, {0.3, -0.7, 0.2});
  CHECK(losses::cosine_sim(z, z).scalar() == doctest::Approx(1.0));
  CHECK(losses::cosine_sim(z, ad::mul_scalar(z, -1.0)).scalar() == doctest::Approx(-1.0));
  CHECK_THROWS_AS(losses::cosine_sim(vec(t, {0, 0}), vec(t, {1, 0})), DomainError);
}

TEST_CASE("sdm_loss golden values") {
  LossWeights w;
  Tape t;
  auto [a1, b1] = with_cosine(0.7);
  CHECK(losses::sdm_loss(vec(t, a1), vec(t, b1), DatasetTag::common, w).scalar() ==
        doctest::Approx(0.2).epsilon(1e-9));
  auto [a2, b2] = with_cosine(0.4);
  CHECK(losses::sdm_loss(vec(t, a2), vec(t, b2), DatasetTag::common, w).scalar() ==
        doctest::Approx(0.0));
  auto [a3, b3] = with_cosine(0.5);
  CHECK(losses::sdm_loss(vec(t, a3), vec(t, b3), DatasetTag::extreme, w).scalar() ==
        doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("sdm_loss gradient is exactly zero below the margin") {
  LossProgram lp;
  auto [a, b] = with_cosine(0.2);
  lp.blocks = {{"zs", a}, {"zd", b}};
  lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
    LossWeights w;
    return losses::sdm_loss(v.at("zs"), v.at("zd"), DatasetTag::common, w);
  };
  auto [loss, grad] = numgrad::eval_with_grad(lp.program(), lp.params());
  CHECK(loss == 0.0);
  for (size_t i = 0; i < grad.size(); ++i) CHECK(grad[i] == 0.0);
}

TEST_CASE("cosface_distance golden values") {
  Tape t;
  auto same = vec(t, {0.6, 0.8});
  CHECK(losses::cosface_distance(same, same, 5.0, 0.2).scalar() == doctest::Approx(4.0));
  CHECK(losses::cosface_distance(vec(t, {1, 0}), vec(t, {0, 1}), 5.0, 0.2).scalar() ==
        doctest::Approx(-1.0));
  auto [a, b] = with_cosine(0.2);
  CHECK(losses::cosface_distance(vec(t, a), vec(t, b), 5.0, 0.2).scalar() ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cosface_loss golden values and oracle") {
  SUBCASE("single aligned positive vs orthogonal negative") {
    Tape t;
    auto p = vec(t, {1.0, 0.0});
    losses::PairList P{{p, p}};
    losses::PairList N{{vec(t, {1, 0}), vec(t, {0, 1})}};
    double loss = losses::cosface_loss(P, N, 5.0, 0.2).scalar();
    CHECK(loss == doctest::Approx(std::log(1.0 + std::exp(-5.0))).epsilon(1e-9));
    CHECK(loss == doctest::Approx(0.006715).epsilon(1e-3));
  }
  SUBCASE("equal scores give log 2") {
    for (double c : {-0.4, 0.1, 0.8}) {
      Tape t;
      auto [a, b] = with_cosine(c);
      losses::PairList P{{vec(t, a), vec(t, b)}};
      losses::PairList N{{vec(t, a), vec(t, b)}};
      CHECK(losses::cosface_loss(P, N, 5.0, 0.2).scalar() ==
            doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
  }
  SUBCASE("3x3 random pairs match the direct summation oracle") {
    Rng rng(5);
    Tape t;
    losses::PairList P, N;
    std::vector<double> dp, dn;
    for (int k = 0; k < 3; ++k) {
      double cp = rng.uniform(-0.9, 0.9);
      double cn = rng.uniform(-0.9, 0.9);
      auto [a, b] = with_cosine(cp);
      auto [c, d] = with_cosine(cn);
      P.push_back({vec(t, a), vec(t, b)});
      N.push_back({vec(t, c), vec(t, d)});
      dp.push_back(5.0 * (cp - 0.2));
      dn.push_back(5.0 * (cn - 0.2));
    }
    double oracle = 0.0;
    for (double p : dp) {
      double denom = std::exp(p);
      for (double n : dn) denom += std::exp(n);
      oracle -= std::log(std::exp(p) / denom);
    }
    CHECK(losses::cosface_loss(P, N, 5.0, 0.2).scalar() ==
          doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("empty positive set is an error") {
    Tape t;
    losses::PairList N{{vec(t, {1, 0}), vec(t, {0, 1})}};
    CHECK_THROWS_AS(losses::cosface_loss({}, N, 5.0, 0.2), DomainError);
  }
  SUBCASE("invariant to positive rescaling of inputs") {
    Tape t;
    auto z1 = randvec(6, 7);
    auto z2 = randvec(6, 8);
    auto z3 = randvec(6, 9);
    losses::PairList P{{vec(t, z1), vec(t, z2)}};
    losses::PairList N{{vec(t, z1), vec(t, z3)}};
    double base = losses::cosface_loss(P, N, 5.0, 0.2).scalar();
    std::vector<double> scaled = z1;
    for (double& v : scaled) v *= 37.5;
    losses::PairList P2{{vec(t, scaled), vec(t, z2)}};
    losses::PairList N2{{vec(t, scaled), vec(t, z3)}};
    CHECK(losses::cosface_loss(P2, N2, 5.0, 0.2).scalar() ==
          doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("build_pair_sets") {
  Tape t;
  losses::PairBatch batch;
  batch.z_s = vec(t, randvec(4, 11));
  batch.z_d = vec(t, randvec(4, 12));
  batch.z_sd = vec(t, randvec(4, 13));
  batch.z_ssd = vec(t, randvec(4, 14));
  batch.z_ssmd = vec(t, randvec(4, 15));
  batch.z_dstar = vec(t, randvec(4, 16));
  auto [P, N] = losses::build_pair_sets(batch);
  CHECK(P.size() == 3);
  CHECK(N.size() == 3);
  bool found = false;
  for (auto& [a, b] : P)
    if (a.id == batch.z_ssmd.id && b.id == batch.z_d.id) found = true;
  CHECK(found);  // P contains (z_{s*m->d}, z_d)
  for (auto& [a, b] : N) CHECK(b.id == batch.z_dstar.id);

  Tape t2;
  losses::PairBatch easy;
  easy.z_d = vec(t2, {1, 0, 0, 0});
  easy.z_sd = vec(t2, {1, 0, 0, 0});
  easy.z_ssd = vec(t2, {1, 0, 0, 0});
  easy.z_ssmd = vec(t2, {1, 0, 0, 0});
  easy.z_dstar = vec(t2, {0, 1, 0, 0});
  easy.z_s = vec(t2, {1, 0, 0, 0});
  auto [P2, N2] = losses::build_pair_sets(easy);
  // oracle: three positives at cos 1 (d = 4) against three negatives at cos 0
  // (d = -1); each term is log(1 + 3 e^{-5}) and Eq. (5) sums over positives
  double oracle = 3.0 * std::log(1.0 + 3.0 * std::exp(-5.0));
  CHECK(losses::cosface_loss(P2, N2, 5.0, 0.2).scalar() ==
        doctest::Approx(oracle).epsilon(1e-12));
  CHECK(losses::cosface_loss(P2, N2, 5.0, 0.2).scalar() < 0.07);

  losses::PairBatch missing = easy;
  missing.z_ssmd = Tensor{};
  CHECK_THROWS_AS(losses::build_pair_sets(missing), DimensionError);
}

TEST_CASE("canonical_volume_loss") {
  Tape t;
  auto v = randvec(4 * 2 * 2 * 2, 21);
  Tensor a = t.leaf(Shape{4, 2, 2, 2}, v, false);
  CHECK(losses::canonical_volume_loss(a, a).scalar() == doctest::Approx(0.0));
  std::vector<double> shifted = v;
  for (double& x : shifted) x += 0.5;
  Tensor b = t.leaf(Shape{4, 2, 2, 2}, shifted, false);
  CHECK(losses::canonical_volume_loss(a, b).scalar() == doctest::Approx(0.5).epsilon(1e-12));

  auto u = randvec(4 * 2 * 2 * 2, 22);
  Tensor c = t.leaf(Shape{4, 2, 2, 2}, u, false);
  double oracle = 0.0;
  for (size_t i = 0; i < v.size(); ++i) oracle += std::abs(v[i] - u[i]);
  oracle /= static_cast<double>(v.size());
  CHECK(losses::canonical_volume_loss(a, c).scalar() == doctest::Approx(oracle).epsilon(1e-12));

  Tensor wrong = t.leaf(Shape{4, 2, 2}, randvec(16, 23), false);
  CHECK_THROWS_AS(losses::canonical_volume_loss(a, wrong), DimensionError);
}

TEST_CASE("pca_mouth_loss golden values") {
  auto basis = identity_basis(16, 8);
  Tape t;
  auto z = randvec(16, 31);
  Tensor zi = vec(t, z);
  CHECK(losses::pca_mouth_loss(zi, zi, basis, 8).scalar() == doctest::Approx(0.0));

  std::vector<double> z2 = z;
  z2[0] += 2.0;  // plus 2 v_1
  CHECK(losses::pca_mouth_loss(zi, vec(t, z2), basis, 1).scalar() ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK(losses::pca_mouth_loss(zi, vec(t, z2), basis, 4).scalar() ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(losses::pca_mouth_loss(zi, vec(t, z2), basis, 9), DimensionError);
}

TEST_CASE("photometric_suite") {
  world::FactorVector f;
  world::ToyFace gt = world::render(f);
  LossWeights w;

  SUBCASE("pred = gt gives zero everywhere") {
    Tape t;
    Tensor pred = t.leaf(Shape{gt.h, gt.w}, gt.image, false);
    auto terms = losses::photometric_suite(pred, gt, w);
    CHECK(terms.total.scalar() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(terms.l_in.scalar() == 0.0);
    CHECK(terms.l_face.scalar() == 0.0);
    CHECK(terms.l_gaze.scalar() == 0.0);
    CHECK(terms.l_eyes.scalar() == 0.0);
    CHECK(terms.l_mouth.scalar() == 0.0);
    CHECK(terms.l_ears.scalar() == 0.0);
  }

  SUBCASE("constant offset with full-image masks hits every pixel L1 term") {
    world::ToyFace full = gt;
    std::fill(full.mask_face.begin(), full.mask_face.end(), 1);
    std::fill(full.mask_eyes.begin(), full.mask_eyes.end(), 1);
    std::fill(full.mask_mouth.begin(), full.mask_mouth.end(), 1);
    std::fill(full.mask_ears.begin(), full.mask_ears.end(), 1);
    std::vector<double> shifted = full.image;
    for (double& v : shifted) v += 0.1;
    Tape t;
    Tensor pred = t.leaf(Shape{gt.h, gt.w}, shifted, false);
    auto terms = losses::photometric_suite(pred, full, w);
    CHECK(terms.l_in.scalar() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(terms.l_face.scalar() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(terms.l_eyes.scalar() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(terms.l_mouth.scalar() == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(terms.l_ears.scalar() == doctest::Approx(0.1).epsilon(1e-12));
  }

  SUBCASE("random pair matches the per-term loop oracle") {
    Rng rng(41);
    std::vector<double> noisy = gt.image;
    for (double& v : noisy) v = std::min(1.0, std::max(0.0, v + 0.1 * rng.normal()));
    Tape t;
    Tensor pred = t.leaf(Shape{gt.h, gt.w}, noisy, false);
    auto terms = losses::photometric_suite(pred, gt, w);

    auto masked_oracle = [&](const std::vector<uint8_t>& mask) {
      double acc = 0.0;
      int count = 0;
      for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
          acc += std::abs(noisy[i] - gt.image[i]);
          ++count;
        }
      return count ? acc / count : 0.0;
    };
    double full = 0.0;
    for (size_t i = 0; i < gt.image.size(); ++i) full += std::abs(noisy[i] - gt.image[i]);
    full /= static_cast<double>(gt.image.size());
    CHECK(terms.l_in.scalar() == doctest::Approx(full).epsilon(1e-12));
    CHECK(terms.l_face.scalar() == doctest::Approx(masked_oracle(gt.mask_face)).epsilon(1e-12));
    CHECK(terms.l_eyes.scalar() == doctest::Approx(masked_oracle(gt.mask_eyes)).epsilon(1e-12));
    CHECK(terms.l_mouth.scalar() ==
          doctest::Approx(masked_oracle(gt.mask_mouth)).epsilon(1e-12));
    CHECK(terms.l_ears.scalar() == doctest::Approx(masked_oracle(gt.mask_ears)).epsilon(1e-12));

    auto centroid = [&](const std::vector<double>& img, int lm) {
      int cx = static_cast<int>(std::lround(gt.landmarks[static_cast<size_t>(lm)][0]));
      int cy = static_cast<int>(std::lround(gt.landmarks[static_cast<size_t>(lm)][1]));
      double sw = 1e-6, sx = 0.0, sy = 0.0;
      for (int y = std::max(0, cy - 3); y <= std::min(gt.h - 1, cy + 3); ++y)
        for (int x = std::max(0, cx - 3); x <= std::min(gt.w - 1, cx + 3); ++x) {
          double v = img[static_cast<size_t>(y) * gt.w + x] - 0.35;
          if (v <= 0.0) continue;
          sw += v * v;
          sx += v * v * x;
          sy += v * v * y;
        }
      return std::array<double, 2>{sx / sw, sy / sw};
    };
    double gaze = 0.0;
    for (int lm : {world::kEyeLeft, world::kEyeRight}) {
      auto cp = centroid(noisy, lm);
      auto cg = centroid(gt.image, lm);
      gaze += std::abs(cp[0] - cg[0]) + std::abs(cp[1] - cg[1]);
    }
    gaze *= 0.25;
    CHECK(terms.l_gaze.scalar() == doctest::Approx(gaze).epsilon(1e-9));

    double total = w.w_in * terms.l_in.scalar() + w.w_face * terms.l_face.scalar() +
                   w.w_gaze * terms.l_gaze.scalar() + w.w_eyes * terms.l_eyes.scalar() +
                   w.w_mouth * terms.l_mouth.scalar() + w.w_ears * terms.l_ears.scalar();
    CHECK(terms.total.scalar() == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("hinge_gan_losses golden values") {
  LossWeights w;
  Tape t;
  auto terms1 = losses::hinge_gan_losses(vec(t, {2.0}), vec(t, {-2.0}), {}, w);
  CHECK(terms1.critic_loss.scalar() == doctest::Approx(0.0));
  auto terms2 = losses::hinge_gan_losses(vec(t, {0.0}), vec(t, {0.0}), {}, w);
  CHECK(terms2.critic_loss.scalar() == doctest::Approx(2.0));
  LossWeights no_fm = w;
  no_fm.w_fm = 0.0;
  auto terms3 = losses::hinge_gan_losses(vec(t, {1.0}), vec(t, {3.0}), {}, no_fm);
  CHECK(terms3.generator_loss.scalar() == doctest::Approx(-3.0));

  losses::PairList feats{{vec(t, {1.0, 2.0}), vec(t, {1.5, 2.5})}};
  auto terms4 = losses::hinge_gan_losses(vec(t, {1.0}), vec(t, {0.0}), feats, w);
  CHECK(terms4.l_fm.scalar() == doctest::Approx(0.5));
  CHECK(terms4.generator_loss.scalar() == doctest::Approx(w.w_adv * 0.0 + w.w_fm * 0.5));
}

namespace {

// linear critic D(x) = w . x; input-gradient is the weight vector itself
struct LinearCritic : losses::Critic {
  Tensor w;
  explicit LinearCritic(Tensor weights) : w(weights) {}
  Tensor score(Tensor x) override { return ad::dot(w, x); }
  std::pair<Tensor, Tensor> score_with_input_grad(Tensor x) override {
    return {ad::dot(w, x), w};
  }
};

// quadratic critic D(x) = x . (A x); input-gradient (A + A^T) x
struct QuadraticCritic : losses::Critic {
  Tensor a;
  explicit QuadraticCritic(Tensor m) : a(m) {}
  Tensor score(Tensor x) override {
    int n = x.numel();
    Tensor ax = ad::reshape(ad::matmul(a, ad::reshape(x, Shape{n, 1})), Shape{n});
    return ad::dot(x, ax);
  }
  std::pair<Tensor, Tensor> score_with_input_grad(Tensor x) override {
    int n = x.numel();
    Tensor ax = ad::reshape(ad::matmul(a, ad::reshape(x, Shape{n, 1})), Shape{n});
    Tensor atx = ad::reshape(ad::matmul(ad::reshape(x, Shape{1, n}), a), Shape{n});
    return {ad::dot(x, ax), ad::add(ax, atx)};
  }
};

}  // namespace

TEST_CASE("wgan_gp_losses") {
  SUBCASE("unit-norm linear critic has zero penalty, exactly") {
    Tape t;
    Rng rng(51);
    LinearCritic critic(vec(t, {0.6, 0.8}));
    std::vector<Tensor> xr{vec(t, {1.0, 2.0})}, xf{vec(t, {0.3, -0.4})};
    auto terms = losses::wgan_gp_losses(critic, xr, xf, 10.0, rng);
    CHECK(terms.gradient_penalty.scalar() == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("norm-3 linear critic with lambda 10 pays exactly 40") {
    Tape t;
    Rng rng(52);
    LinearCritic critic(vec(t, {3.0, 0.0}));
    std::vector<Tensor> xr{vec(t, {1.0, 2.0})}, xf{vec(t, {0.3, -0.4})};
    auto terms = losses::wgan_gp_losses(critic, xr, xf, 10.0, rng);
    CHECK(ad::mul_scalar(terms.gradient_penalty, 10.0).scalar() ==
          doctest::Approx(40.0).epsilon(1e-9));
    double expect = (0.3 * 3.0) - (1.0 * 3.0) + 40.0;
    CHECK(terms.critic_loss.scalar() == doctest::Approx(expect).epsilon(1e-9));
    CHECK(terms.generator_loss.scalar() == doctest::Approx(-0.9).epsilon(1e-12));
  }
  SUBCASE("quadratic critic input-gradient matches finite differences") {
    Tape t;
    auto a = randvec(9, 53, 0.5);
    QuadraticCritic critic(t.leaf(Shape{3, 3}, a, false));
    auto x = randvec(3, 54);
    Tensor xt = vec(t, x);
    auto [score, grad] = critic.score_with_input_grad(xt);
    (void)score;
    double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      auto probe = [&](double delta) {
        Tape t2;
        QuadraticCritic c2(t2.leaf(Shape{3, 3}, a, false));
        std::vector<double> xp = x;
        xp[static_cast<size_t>(i)] += delta;
        return c2.score(vec(t2, xp)).scalar();
      };
      double fd = (probe(h) - probe(-h)) / (2 * h);
      CHECK(std::abs(grad.val()[static_cast<size_t>(i)] - fd) <
            1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("rotation_recon_loss") {
  rot6d::PoseSequence gt;
  Rng rng(61);
  for (int t = 0; t < 5; ++t) {
    std::array<double, 9> f{};
    for (double& v : f) v = rng.normal();
    gt.frames.push_back(f);
  }
  auto flat = [&](const rot6d::PoseSequence& s) {
    std::vector<double> out(static_cast<size_t>(9) * s.length());
    for (size_t t = 0; t < s.length(); ++t)
      for (int c = 0; c < 9; ++c)
        out[static_cast<size_t>(c) * s.length() + t] = s.frames[t][static_cast<size_t>(c)];
    return out;
  };
  Tape tape;
  Tensor pred_same = tape.leaf(Shape{9, 5}, flat(gt), false);
  CHECK(losses::rotation_recon_loss(pred_same, gt, 1.0, 1.0).scalar() == doctest::Approx(0.0));

  rot6d::PoseSequence shifted = gt;
  shifted.frames[2][7] += 1.0;
  Tensor pred_shift = tape.leaf(Shape{9, 5}, flat(shifted), false);
  CHECK(losses::rotation_recon_loss(pred_shift, gt, 1.0, 2.0).scalar() ==
        doctest::Approx(2.0).epsilon(1e-12));

  rot6d::PoseSequence other;
  for (int t = 0; t < 5; ++t) {
    std::array<double, 9> f{};
    for (double& v : f) v = rng.normal();
    other.frames.push_back(f);
  }
  double lam_r = 0.7, lam_t = 1.3, oracle = 0.0;
  for (size_t t = 0; t < 5; ++t)
    for (int c = 0; c < 9; ++c) {
      double diff =
          std::abs(other.frames[t][static_cast<size_t>(c)] - gt.frames[t][static_cast<size_t>(c)]);
      oracle += (c < 6 ? lam_r : lam_t) * diff;
    }
  Tensor pred_other = tape.leaf(Shape{9, 5}, flat(other), false);
  CHECK(losses::rotation_recon_loss(pred_other, gt, lam_r, lam_t).scalar() ==
        doctest::Approx(oracle).epsilon(1e-12));

  rot6d::PoseSequence wrong = gt;
  wrong.frames.pop_back();
  CHECK_THROWS_AS(losses::rotation_recon_loss(pred_same, wrong, 1, 1), DimensionError);
}

TEST_CASE("smoothness_loss") {
  Tape t;
  Tensor constant = t.leaf(Shape{2, 4}, std::vector<double>{3, 3, 3, 3, -1, -1, -1, -1}, false);
  CHECK(losses::smoothness_loss(constant).scalar() == doctest::Approx(0.0));

  Tensor track = t.leaf(Shape{1, 3}, std::vector<double>{0, 1, 3}, false);
  CHECK(losses::smoothness_loss(track).scalar() == doctest::Approx(3.0));

  Tensor reversed = t.leaf(Shape{1, 3}, std::vector<double>{3, 1, 0}, false);
  CHECK(losses::smoothness_loss(reversed).scalar() == doctest::Approx(3.0));

  Tensor single = t.leaf(Shape{1, 1}, std::vector<double>{5.0}, false);
  CHECK(losses::smoothness_loss(single).scalar() == doctest::Approx(0.0));
}

TEST_CASE("speech_loss_suite") {
  world::FactorVector f;
  world::ToyFace gt = world::render(f);
  auto basis = identity_basis(16, 8);
  LossWeights w;
  auto teacher = randvec(16, 71);

  SUBCASE("identity case: only the clamped BCE floor remains") {
    Tape t;
    Tensor pred = t.leaf(Shape{gt.h, gt.w}, gt.image, false);
    Tensor z_hat = vec(t, teacher);
    auto terms = losses::speech_loss_suite(pred, gt.mask_mouth, gt, z_hat, teacher, basis, w);
    CHECK(terms.l_idt.scalar() == doctest::Approx(0.0));
    CHECK(terms.l_latent.scalar() == doctest::Approx(0.0));
    CHECK(terms.l_lips.scalar() == doctest::Approx(0.0));
    CHECK(terms.l_bce.scalar() < 1e-6);  // per-pixel clamp floor
    CHECK(terms.l_bce.scalar() > 0.0);
  }

  SUBCASE("latent displacement along v1") {
    Tape t;
    Tensor pred = t.leaf(Shape{gt.h, gt.w}, gt.image, false);
    std::vector<double> moved = teacher;
    moved[0] += 1.0;
    Tensor z_hat = vec(t, moved);
    auto terms = losses::speech_loss_suite(pred, gt.mask_mouth, gt, z_hat, teacher, basis, w);
    double expect = w.w_pca * (1.0 / 8.0) + w.w_vtr * 1.0;
    CHECK(terms.l_latent.scalar() == doctest::Approx(expect).epsilon(1e-9));
  }

  SUBCASE("random inputs match a per-term oracle") {
    Rng rng(72);
    std::vector<double> noisy = gt.image;
    for (double& v : noisy) v = std::min(1.0, std::max(0.0, v + 0.05 * rng.normal()));
    auto z_pred = randvec(16, 73);
    Tape t;
    Tensor pred = t.leaf(Shape{gt.h, gt.w}, noisy, false);
    auto terms =
        losses::speech_loss_suite(pred, gt.mask_mouth, gt, vec(t, z_pred), teacher, basis, w);

    double l1 = 0.0;
    for (size_t i = 0; i < noisy.size(); ++i) l1 += std::abs(noisy[i] - gt.image[i]);
    l1 /= static_cast<double>(noisy.size());
    CHECK(terms.l_l1.scalar() == doctest::Approx(l1).epsilon(1e-9));

    double vtr = 0.0, pca = 0.0;
    for (int i = 0; i < 16; ++i)
      vtr += std::abs(z_pred[static_cast<size_t>(i)] - teacher[static_cast<size_t>(i)]);
    for (int k = 0; k < 8; ++k)
      pca += std::abs(z_pred[static_cast<size_t>(k)] - teacher[static_cast<size_t>(k)]);
    pca /= 8.0;
    CHECK(terms.l_vtr.scalar() == doctest::Approx(vtr).epsilon(1e-9));
    CHECK(terms.l_pca.scalar() == doctest::Approx(pca).epsilon(1e-9));
    CHECK(terms.total.scalar() ==
          doctest::Approx(terms.l_idt.scalar() + terms.l_latent.scalar() +
                          terms.l_mouth.scalar())
              .epsilon(1e-9));
  }
}

TEST_CASE("total_loss_main") {
  LossWeights w;
  Tape t;
  auto c = [&](double v) { return t.constant(v); };
  CHECK(losses::total_loss_main({c(0), c(0), c(0), c(0), c(0)}, w).scalar() == 0.0);
  CHECK(losses::total_loss_main({c(0), c(0), c(0), c(1), c(0)}, w).scalar() ==
        doctest::Approx(1.0));
  Rng rng(81);
  double pho = rng.uniform(), cos = rng.uniform(), sdm = rng.uniform(), cv = rng.uniform(),
         gan = rng.uniform();
  double oracle = pho + w.w_cos * cos + sdm + w.w_cv * cv + gan;
  CHECK(losses::total_loss_main({c(pho), c(cos), c(sdm), c(cv), c(gan)}, w).scalar() ==
        doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("gradient checks for every loss") {
  SUBCASE("sdm above margin") {
    LossProgram lp;
    auto [a, b] = with_cosine(0.8);
    lp.blocks = {{"zs", a}, {"zd", b}};
    lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
      LossWeights w2;
      return losses::sdm_loss(v.at("zs"), v.at("zd"), DatasetTag::common, w2);
    };
    expect_grad_pass(lp);
  }

  SUBCASE("cosface") {
    LossProgram lp;
    lp.blocks = {{"z1", randvec(5, 91)},
                 {"z2", randvec(5, 92)},
                 {"z3", randvec(5, 93)},
                 {"z4", randvec(5, 94)}};
    lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
      losses::PairList P{{v.at("z1"), v.at("z2")}, {v.at("z3"), v.at("z2")}};
      losses::PairList N{{v.at("z1"), v.at("z4")}, {v.at("z3"), v.at("z4")}};
      return losses::cosface_loss(P, N, 5.0, 0.2);
    };
    expect_grad_pass(lp);
  }

  SUBCASE("canonical volume loss") {
    LossProgram lp;
    lp.blocks = {{"a", randvec(8, 95)}, {"b", randvec(8, 96)}};
    lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
      Tensor a = ad::reshape(v.at("a"), Shape{1, 2, 2, 2});
      Tensor b = ad::reshape(v.at("b"), Shape{1, 2, 2, 2});
      return losses::canonical_volume_loss(a, b);
    };
    expect_grad_pass(lp);
  }

  SUBCASE("pca mouth loss") {
    LossProgram lp;
    lp.blocks = {{"zi", randvec(16, 97)}, {"zj", randvec(16, 98)}};
    lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
      auto basis = identity_basis(16, 8);
      return losses::pca_mouth_loss(v.at("zi"), v.at("zj"), basis, 8);
    };
    expect_grad_pass(lp);
  }

  SUBCASE("photometric") {
    world::FactorVector f;
    world::ToyFace gt = world::render(f);
    Rng rng(99);
    std::vector<double> noisy = gt.image;
    for (double& v : noisy) v = std::min(0.98, std::max(0.02, v + 0.04 * rng.normal()));
    LossProgram lp;
    lp.blocks = {{"pred", noisy}};
    lp.build = [gt](Tape&, const std::map<std::string, Tensor>& v) {
      LossWeights w2;
      Tensor img = ad::reshape(v.at("pred"), Shape{gt.h, gt.w});
      return losses::photometric_suite(img, gt, w2).total;
    };
    numgrad::GradCheckOptions opt;
    opt.max_coords_per_segment = 64;
    auto report = numgrad::check_grad(lp.program(), lp.params(), opt);
    CAPTURE(report.to_json());
    CHECK(report.pass);
  }

  SUBCASE("hinge gan") {
    LossProgram lp;
    lp.blocks = {{"real", {0.4, -0.3}}, {"fake", {0.2, 0.6}}};
    lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
      LossWeights w2;
      auto terms = losses::hinge_gan_losses(v.at("real"), v.at("fake"), {}, w2);
      return ad::add(terms.critic_loss, terms.generator_loss);
    };
    expect_grad_pass(lp);
  }

  SUBCASE("wgan-gp through the critic weights") {
    LossProgram lp;
    lp.blocks = {{"w", {1.3, -0.4, 0.8}}, {"xr", randvec(3, 101)}, {"xf", randvec(3, 102)}};
    lp.build = [](Tape&, const std::map<std::string, Tensor>& v) {
      LinearCritic critic(v.at("w"));
      Rng rng(7);
      std::vector<Tensor> xr{v.at("xr")}, xf{v.at("xf")};
      auto terms = losses::wgan_gp_losses(critic, xr, xf, 10.0, rng);
      return terms.critic_loss;
    };
    expect_grad_pass(lp);
  }

  SUBCASE("rotation recon and smoothness") {
    rot6d::PoseSequence gt;
    Rng rng(103);
    for (int t = 0; t < 4; ++t) {
      std::array<double, 9> f{};
      for (double& v : f) v = rng.normal();
      gt.frames.push_back(f);
    }
    LossProgram lp;
    lp.blocks = {{"pred", randvec(36, 104)}};
    lp.build = [gt](Tape&, const std::map<std::string, Tensor>& v) {
      Tensor p = ad::reshape(v.at("pred"), Shape{9, 4});
      return ad::add(losses::rotation_recon_loss(p, gt, 0.7, 1.3), losses::smoothness_loss(p));
    };
    expect_grad_pass(lp);
  }

  SUBCASE("speech suite") {
    world::FactorVector f;
    world::ToyFace gt = world::render(f);
    Rng rng(105);
    std::vector<double> noisy = gt.image;
    for (double& v : noisy) v = std::min(0.98, std::max(0.02, v + 0.04 * rng.normal()));
    auto teacher = randvec(16, 106);
    LossProgram lp;
    lp.blocks = {{"pred", noisy}, {"zhat", randvec(16, 107)}};
    lp.build = [gt, teacher](Tape&, const std::map<std::string, Tensor>& v) {
      LossWeights w2;
      auto basis = identity_basis(16, 8);
      Tensor img = ad::reshape(v.at("pred"), Shape{gt.h, gt.w});
      return losses::speech_loss_suite(img, gt.mask_mouth, gt, v.at("zhat"), teacher, basis, w2)
          .total;
    };
    numgrad::GradCheckOptions opt;
    opt.max_coords_per_segment = 48;
    auto report = numgrad::check_grad(lp.program(), lp.params(), opt);
    CAPTURE(report.to_json());
    CHECK(report.pass);
  }
}

TEST_CASE("nonnegative losses vanish on their identity case") {
  LossWeights w;
  Tape t;
  auto z = vec(t, randvec(8, 111));
  CHECK(losses::sdm_loss(z, ad::mul_scalar(z, -1.0), DatasetTag::common, w).scalar() == 0.0);
  Tensor vol = ad::reshape(vec(t, randvec(8, 112)), Shape{2, 2, 2, 1});
  CHECK(losses::canonical_volume_loss(vol, vol).scalar() == 0.0);
  Tensor seq = t.leaf(Shape{2, 3}, std::vector<double>{1, 1, 1, 2, 2, 2}, false);
  CHECK(losses::smoothness_loss(seq).scalar() == 0.0);
}
