#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emo/numgrad.hpp"
#include "emo/rng.hpp"
#include "emo/synthworld.hpp"

using namespace emo;
using world::FactorVector;
using world::Pool;
using world::ToyFace;
using world::World;
using world::WorldConfig;

namespace {

FactorVector random_factors(Rng& rng, double amp = 0.6) {
  FactorVector f;
  for (double& v : f.identity) v = rng.uniform(-0.8, 0.8);
  for (double& v : f.mouth) v = rng.uniform(-amp, amp);
  for (double& v : f.upper) v = rng.uniform(-amp, amp);
  f.pose.rotation = rot6d::rotation_xyz(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                                        rng.uniform(-0.6, 0.6));
  for (double& v : f.pose.translation) v = rng.uniform(-0.15, 0.15);
  return f;
}

}  // namespace

TEST_CASE("render is deterministic and in range") {
  Rng rng(1);
  FactorVector f = random_factors(rng);
  ToyFace a = world::render(f);
  ToyFace b = world::render(f);
  CHECK(a.image == b.image);
  CHECK(a.landmarks == b.landmarks);
  for (double v : a.image) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("factor locality: mouth factors stay inside the mouth mask") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    FactorVector f1 = random_factors(rng);
    FactorVector f2 = f1;
    f2.mouth[0] = rng.uniform(-0.9, 0.9);
    f2.mouth[1] = rng.uniform(-0.9, 0.9);
    ToyFace a = world::render(f1);
    ToyFace b = world::render(f2);
    for (size_t i = 0; i < a.image.size(); ++i) {
      bool inside_union = a.mask_mouth[i] || b.mask_mouth[i];
      if (!inside_union) CHECK(std::abs(a.image[i] - b.image[i]) <= 1e-9);
    }
  }
}

TEST_CASE("factor locality: upper-face factors stay inside the eyes mask") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    FactorVector f1 = random_factors(rng);
    FactorVector f2 = f1;
    f2.upper[0] = rng.uniform(-0.9, 0.9);
    f2.upper[2] = rng.uniform(-0.9, 0.9);
    ToyFace a = world::render(f1);
    ToyFace b = world::render(f2);
    for (size_t i = 0; i < a.image.size(); ++i) {
      bool inside_union = a.mask_eyes[i] || b.mask_eyes[i];
      if (!inside_union) CHECK(std::abs(a.image[i] - b.image[i]) <= 1e-9);
    }
  }
}

TEST_CASE("translation shifts all landmarks by a constant offset") {
  Rng rng(4);
  FactorVector f = random_factors(rng);
  f.pose = {};
  ToyFace a = world::render(f);
  FactorVector g = f;
  g.pose.translation = {0.1, 0.0, 0.0};
  ToyFace b = world::render(g);
  double expected_px = 0.1 * 0.5 * (a.w - 1);
  for (int l = 0; l < world::kNumLandmarks; ++l) {
    CHECK(b.landmarks[static_cast<size_t>(l)][0] - a.landmarks[static_cast<size_t>(l)][0] ==
          doctest::Approx(expected_px).epsilon(1e-9));
    CHECK(b.landmarks[static_cast<size_t>(l)][1] ==
          doctest::Approx(a.landmarks[static_cast<size_t>(l)][1]).epsilon(1e-9));
  }
}

TEST_CASE("in-plane rigid equivariance of landmarks") {
  Rng rng(5);
  FactorVector f = random_factors(rng);
  f.pose = {};
  ToyFace base = world::render(f);
  double angle = 0.35;
  FactorVector g = f;
  g.pose.rotation = rot6d::rotation_xyz(0.0, 0.0, angle);
  g.pose.translation = {0.05, -0.08, 0.0};
  ToyFace moved = world::render(g);

  double sx = (base.w - 1) * 0.5, sy = (base.h - 1) * 0.5;
  for (int l = 0; l < world::kNumLandmarks; ++l) {
    // world coordinates of the base landmark
    double wx = base.landmarks[static_cast<size_t>(l)][0] / sx - 1.0;
    double wy = base.landmarks[static_cast<size_t>(l)][1] / sy - 1.0;
    double rx = std::cos(angle) * wx - std::sin(angle) * wy + 0.05;
    double ry = std::sin(angle) * wx + std::cos(angle) * wy - 0.08;
    CHECK(moved.landmarks[static_cast<size_t>(l)][0] ==
          doctest::Approx((rx + 1.0) * sx).epsilon(1e-9));
    CHECK(moved.landmarks[static_cast<size_t>(l)][1] ==
          doctest::Approx((ry + 1.0) * sy).epsilon(1e-9));
  }
}

TEST_CASE("landmark consistency and mask containment") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    FactorVector f = random_factors(rng);
    ToyFace face = world::render(f);
    // mouth corners lie inside the mouth mask
    for (int lm : {world::kMouthLeft, world::kMouthRight}) {
      int px = static_cast<int>(std::lround(face.landmarks[static_cast<size_t>(lm)][0]));
      int py = static_cast<int>(std::lround(face.landmarks[static_cast<size_t>(lm)][1]));
      CHECK(face.mask_mouth[static_cast<size_t>(py) * face.w + px] == 1);
    }
    // each region mask is a subset of the face mask
    for (size_t i = 0; i < face.image.size(); ++i) {
      if (face.mask_eyes[i]) CHECK(face.mask_face[i] == 1);
      if (face.mask_mouth[i]) CHECK(face.mask_face[i] == 1);
      if (face.mask_ears[i]) CHECK(face.mask_face[i] == 1);
    }
  }
}

TEST_CASE("out-of-bounds factors are rejected") {
  FactorVector f;
  f.identity[0] = 1.5;
  CHECK_THROWS_AS(world::render(f), DomainError);
  FactorVector g;
  g.pose.translation = {0.5, 0, 0};
  CHECK_THROWS_AS(world::render(g), DomainError);
  FactorVector h;
  h.pose.rotation = {2, 0, 0, 0, 1, 0, 0, 0, 1};  // not orthonormal
  CHECK_THROWS_AS(world::render(h), DomainError);
}

TEST_CASE("render_ad matches render and passes gradient checks") {
  Rng rng(7);
  FactorVector f = random_factors(rng);

  SUBCASE("values agree bitwise") {
    ToyFace plain = world::render(f);
    ad::Tape tape;
    std::vector<double> id(f.identity.begin(), f.identity.end());
    std::vector<double> em(f.mouth.begin(), f.mouth.end());
    std::vector<double> eu(f.upper.begin(), f.upper.end());
    std::vector<double> rot(f.pose.rotation.begin(), f.pose.rotation.end());
    std::vector<double> tr(f.pose.translation.begin(), f.pose.translation.end());
    auto g = world::render_ad(tape, tape.leaf(ad::Shape{4}, id, false),
                              tape.leaf(ad::Shape{3}, em, false),
                              tape.leaf(ad::Shape{3}, eu, false),
                              tape.leaf(ad::Shape{9}, rot, false),
                              tape.leaf(ad::Shape{3}, tr, false));
    CHECK(g.image.val() == plain.image);
  }

  SUBCASE("factor gradients pass the central-difference check") {
    // probe loss: weighted sum of the image with fixed random weights
    std::vector<double> probe(32 * 32);
    Rng wr(8);
    for (double& v : probe) v = wr.normal();

    numgrad::ParamVector params;
    params.add_segment("identity", 4);
    params.add_segment("mouth", 3);
    params.add_segment("upper", 3);
    params.add_segment("rotation", 9);
    params.add_segment("translation", 3);
    auto fill = [&](const char* name, const double* src, size_t n) {
      auto seg = params.segment(name);
      std::copy(src, src + n, seg.begin());
    };
    fill("identity", f.identity.data(), 4);
    fill("mouth", f.mouth.data(), 3);
    fill("upper", f.upper.data(), 3);
    fill("rotation", f.pose.rotation.data(), 9);
    fill("translation", f.pose.translation.data(), 3);

    auto run = [probe](const numgrad::ParamVector& p, bool with_grad)
        -> std::pair<double, numgrad::ParamVector> {
      ad::Tape tape;
      auto leaf = [&](const char* name, int n) {
        auto seg = p.segment(name);
        return tape.leaf(ad::Shape{n}, seg.data(), with_grad);
      };
      ad::Tensor id = leaf("identity", 4);
      ad::Tensor em = leaf("mouth", 3);
      ad::Tensor eu = leaf("upper", 3);
      ad::Tensor rot = leaf("rotation", 9);
      ad::Tensor tr = leaf("translation", 3);
      auto g = world::render_ad(tape, id, em, eu, rot, tr);
      ad::Tensor w = tape.leaf(ad::Shape{32, 32}, probe, false);
      ad::Tensor loss = ad::dot(ad::reshape(g.image, ad::Shape{32 * 32}),
                                ad::reshape(w, ad::Shape{32 * 32}));
      numgrad::ParamVector grad = p.same_layout_zeros();
      if (with_grad) {
        tape.backward(loss);
        for (const auto& seg : p.segments()) {
          ad::Tensor lf = [&] {
            if (seg.name == "identity") return id;
            if (seg.name == "mouth") return em;
            if (seg.name == "upper") return eu;
            if (seg.name == "rotation") return rot;
            return tr;
          }();
          auto dst = grad.segment(seg.name);
          auto src = lf.grad();
          std::copy(src.begin(), src.end(), dst.begin());
        }
      }
      return {loss.scalar(), std::move(grad)};
    };
    numgrad::DifferentiableProgram prog;
    prog.value = [run](const numgrad::ParamVector& p) { return run(p, false).first; };
    prog.value_and_grad = [run](const numgrad::ParamVector& p) { return run(p, true); };

    auto report = numgrad::check_grad(prog, params);
    CAPTURE(report.to_json());
    CHECK(report.pass);
  }
}

TEST_CASE("sample_training_batch honors the pairing contract") {
  WorldConfig cfg;
  World w(cfg);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    auto q = w.sample_training_batch(rng);
    CHECK(q.s.identity_index == q.d.identity_index);
    CHECK(q.s_star.identity_index != q.s.identity_index);
    CHECK(q.d_star.identity_index == q.s_star.identity_index);
    CHECK(q.s_m.identity_index == q.s_star.identity_index);
    CHECK(q.s.factors.identity == q.d.factors.identity);
    // x_s^m has an independently sampled pose
    CHECK(q.s_m.factors.pose.translation != q.s_star.factors.pose.translation);
    if (q.pool == Pool::common) {
      CHECK(q.s.factors.mouth[2] == 0.0);  // asymmetric term only in the extreme pool
    }
  }
}

TEST_CASE("extreme pool fraction matches the configured mixture") {
  WorldConfig cfg;
  World w(cfg);
  Rng rng(10);
  int extreme = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (w.sample_pool(rng) == Pool::extreme) ++extreme;
  double fraction = static_cast<double>(extreme) / n;
  CHECK(fraction > 0.23);
  CHECK(fraction < 0.27);
}

TEST_CASE("fixed seed gives a bit-identical batch stream") {
  WorldConfig cfg;
  World w(cfg);
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) {
    auto qa = w.sample_training_batch(a);
    auto qb = w.sample_training_batch(b);
    CHECK(qa.s.face.image == qb.s.face.image);
    CHECK(qa.s_m.face.image == qb.s_m.face.image);
  }
}

TEST_CASE("mouth_only_sequence freezes the upper face") {
  WorldConfig cfg;
  World w(cfg);
  Rng rng(11);
  auto seq = w.mouth_only_sequence(Pool::common, 3, 60, rng);
  REQUIRE(seq.size() == 60);
  for (const auto& s : seq) {
    CHECK(s.factors.upper == seq[0].factors.upper);
    for (int lm : {world::kEyeLeft, world::kEyeRight, world::kBrowLeft, world::kBrowRight}) {
      CHECK(std::abs(s.face.landmarks[static_cast<size_t>(lm)][0] -
                     seq[0].face.landmarks[static_cast<size_t>(lm)][0]) <= 1e-12);
      CHECK(std::abs(s.face.landmarks[static_cast<size_t>(lm)][1] -
                     seq[0].face.landmarks[static_cast<size_t>(lm)][1]) <= 1e-12);
    }
  }

  // mouth travel over the sweep covers at least half the renderer's range
  double lo = 1e9, hi = -1e9;
  for (const auto& s : seq) {
    double y = s.face.landmarks[world::kMouthBottomLeft][1];
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  // full renderer travel of the bottom landmark: em0 range [-1,1] x 0.055
  double full_travel_px = 2.0 * 0.075 * 0.5 * (cfg.image_size - 1);
  CHECK(hi - lo >= 0.5 * full_travel_px);

  CHECK_THROWS_AS(w.mouth_only_sequence(Pool::common, 0, 1, rng), DomainError);
}

TEST_CASE("synth_audio properties") {
  WorldConfig cfg;
  World w(cfg);

  SUBCASE("zero noise and constant trajectory give a constant sequence") {
    std::vector<std::array<double, 3>> traj(10, {0.2, -0.1, 0.0});
    Rng rng(12);
    auto emb = w.synth_audio(traj, rng, 0.0);
    for (size_t t = 1; t < emb.size(); ++t) CHECK(emb[t] == emb[0]);
  }

  SUBCASE("embeddings depend only on the mouth trajectory") {
    std::vector<std::array<double, 3>> traj;
    Rng rng(13);
    for (int t = 0; t < 8; ++t)
      traj.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0});
    Rng r1(14), r2(14);
    auto a = w.synth_audio(traj, r1, 0.0);
    auto b = w.synth_audio(traj, r2, 0.0);
    CHECK(a == b);
  }

  SUBCASE("noise-free map is injective on a mouth grid") {
    std::vector<std::array<double, 3>> grid;
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j) grid.push_back({0.3 * i, 0.3 * j, 0.0});
    Rng rng(15);
    auto emb = w.synth_audio(grid, rng, 0.0);
    for (size_t a = 0; a < emb.size(); ++a)
      for (size_t b = a + 1; b < emb.size(); ++b) {
        double dist = 0.0;
        for (size_t k = 0; k < emb[a].size(); ++k)
          dist += (emb[a][k] - emb[b][k]) * (emb[a][k] - emb[b][k]);
        CHECK(dist > 1e-12);
      }
  }

  SUBCASE("negative noise rejected") {
    Rng rng(16);
    CHECK_THROWS_AS(w.synth_audio({{0.0, 0.0, 0.0}}, rng, -0.1), DomainError);
  }
}
