#include "emo/toytrain.hpp"

#include <algorithm>
#include <cmath>

#include "emo/error.hpp"

namespace emo::train {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using numgrad::ParamVector;

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_start >= lr_end) || !(lr_end > 0.0))
    throw ConfigError("learning rates must satisfy lr_start >= lr_end > 0");
  if (clip_min_frames < 2 || clip_max_frames < clip_min_frames)
    throw ConfigError("bad clip frame range");
  if (critic_steps_per_gen < 1) throw ConfigError("critic_steps_per_gen must be >= 1");
  if (model.dropout_rate < 0.0 || model.dropout_rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0, 1)");
}

double cosine_lr(int iteration, int total_iterations, double lr_start, double lr_end) {
  if (total_iterations <= 1) return lr_start;
  double u = static_cast<double>(iteration) / (total_iterations - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(3.14159265358979323846 * u));
}

AdamW::AdamW(size_t n, double beta1, double beta2, double eps, double weight_decay)
    : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {}

void AdamW::step(std::vector<double>& params, const std::vector<double>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw DimensionError("AdamW: size mismatch");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    double mh = m_[i] / bc1;
    double vh = v_[i] / bc2;
    params[i] -= lr * (mh / (std::sqrt(vh) + eps_) + weight_decay_ * params[i]);
  }
}

// ---------------- parameters ----------------

namespace {

struct SegSpec {
  std::string name;
  int count;   // number of values
  int fan_in;  // 0 marks a bias (zero init)
  double scale = 1.0;
};

ParamVector init_from_specs(const std::vector<SegSpec>& specs, uint64_t seed) {
  ParamVector p;
  int k = 0;
  for (const auto& s : specs) {
    p.add_segment(s.name, static_cast<size_t>(s.count));
    Rng rng(seed, 7000 + static_cast<uint64_t>(k++));
    auto seg = p.segment(s.name);
    if (s.fan_in == 0) {
      for (double& v : seg) v = 0.0;
    } else {
      double sd = s.scale / std::sqrt(static_cast<double>(s.fan_in));
      for (double& v : seg) v = sd * rng.normal();
    }
  }
  return p;
}

}  // namespace

ParamVector init_base_params(const ModelConfig& c, uint64_t seed) {
  int half = c.image_size / 2;
  int pooled = half * half;
  int vol_channels = c.vol_c * c.vol_d;
  int warp_in = 12 + c.z_dim + c.es_dim;
  int warp_out = 3 * c.warp_coarse * c.warp_coarse * c.warp_coarse;
  int g2d_in = vol_channels;
  std::vector<SegSpec> specs = {
      {"eapp.conv_w", c.app_channels * 9, 9},
      {"eapp.conv_b", c.app_channels, 0},
      {"eapp.vol_w", vol_channels * c.app_channels, c.app_channels},
      {"eapp.vol_b", vol_channels, 0},
      {"eapp.es_w", c.es_dim * c.app_channels, c.app_channels},
      {"eapp.es_b", c.es_dim, 0},
      {"emot.fc1_w", c.motion_hidden1 * pooled, pooled},
      {"emot.fc1_b", c.motion_hidden1, 0},
      {"emot.fc2_w", c.motion_hidden2 * c.motion_hidden1, c.motion_hidden1},
      {"emot.fc2_b", c.motion_hidden2, 0},
      {"emot.ph_w", c.z_hidden * c.motion_hidden2, c.motion_hidden2},
      {"emot.ph_b", c.z_hidden, 0},
      {"emot.rot_w", 6 * c.z_hidden, c.z_hidden, 0.5},
      {"emot.rot_b", 6, 0},
      {"emot.t_w", 3 * c.z_hidden, c.z_hidden, 0.5},
      {"emot.t_b", 3, 0},
      {"emot.zh_w", c.z_hidden * c.motion_hidden2, c.motion_hidden2},
      {"emot.zh_b", c.z_hidden, 0},
      {"emot.z_w", c.z_dim * c.z_hidden, c.z_hidden},
      {"emot.z_b", c.z_dim, 0},
      {"wc.l1_w", c.warp_hidden * warp_in, warp_in},
      {"wc.l1_b", c.warp_hidden, 0},
      {"wc.l2_w", warp_out * c.warp_hidden, c.warp_hidden, 0.1},
      {"wc.l2_b", warp_out, 0},
      {"wp.l1_w", c.warp_hidden * warp_in, warp_in},
      {"wp.l1_b", c.warp_hidden, 0},
      {"wp.l2_w", warp_out * c.warp_hidden, c.warp_hidden, 0.1},
      {"wp.l2_b", warp_out, 0},
      {"g3d.l1_w", 8 * c.vol_c, c.vol_c},
      {"g3d.l1_b", 8, 0},
      {"g3d.l2_w", c.vol_c * 8, 8},
      {"g3d.l2_b", c.vol_c, 0},
      {"g2d.l1_w", c.g2d_hidden * g2d_in, g2d_in},
      {"g2d.l1_b", c.g2d_hidden, 0},
      {"g2d.l2_w", c.g2d_mid * c.g2d_hidden, c.g2d_hidden},
      {"g2d.l2_b", c.g2d_mid, 0},
      {"g2d.l3_w", c.g2d_head * (c.g2d_mid + 4), c.g2d_mid + 4},
      {"g2d.l3_b", c.g2d_head, 0},
      {"g2d.l4_w", c.g2d_head, c.g2d_head},
      {"g2d.l4_b", 1, 0},
      {"g2d.ps_w", (c.image_size / c.vol_w) * (c.image_size / c.vol_w) * g2d_in, g2d_in},
      {"g2d.ps_b", (c.image_size / c.vol_w) * (c.image_size / c.vol_w), 0},
  };
  ParamVector p = init_from_specs(specs, seed);
  p.segment("g2d.l4_b")[0] = -1.0;  // start near the mean image brightness
  return p;
}

ParamVector init_audio_params(const ModelConfig& c, uint64_t seed) {
  int b_in = c.z_dim + c.audio_dim;
  int c_in = c.audio_dim + c.audio_feat;
  std::vector<SegSpec> specs = {
      {"aud.b1_w", c.audio_hidden * b_in, b_in},
      {"aud.b1_b", c.audio_hidden, 0},
      {"aud.b2_w", c.z_dim * c.audio_hidden, c.audio_hidden},
      {"aud.b2_b", c.z_dim, 0},
      {"aud.a_w", c.audio_feat * c.z_dim, c.z_dim},
      {"aud.a_b", c.audio_feat, 0},
      {"aud.c1_w", c.audio_hidden * c_in, c_in},
      {"aud.c1_b", c.audio_hidden, 0},
      {"aud.c2_w", c.z_dim * c.audio_hidden, c.audio_hidden, 0.5},
      {"aud.c2_b", c.z_dim, 0},
  };
  return init_from_specs(specs, seed);
}

RotGanParams init_rotgan_params(const ModelConfig& c, uint64_t seed) {
  int win = c.critic_window * 9;
  std::vector<SegSpec> gen = {
      {"gen.c1_w", c.rot_hidden * c.audio_dim * c.rot_kernel, c.audio_dim * c.rot_kernel},
      {"gen.c1_b", c.rot_hidden, 0},
      {"gen.c2_w", c.rot_hidden * c.rot_hidden * c.rot_kernel, c.rot_hidden * c.rot_kernel},
      {"gen.c2_b", c.rot_hidden, 0},
      {"gen.out_w", 9 * c.rot_hidden, c.rot_hidden, 0.5},
      {"gen.out_b", 9, 0},
  };
  std::vector<SegSpec> critics = {
      {"cl.w1", c.critic_hidden * win, win},
      {"cl.b1", c.critic_hidden, 0},
      {"cl.w2", c.critic_hidden, c.critic_hidden},
      {"cl.b2", 1, 0},
      {"cg.pose_w", 12 * 9, 9},
      {"cg.pose_b", 12, 0},
      {"cg.aud_w", 12 * c.audio_dim, c.audio_dim},
      {"cg.aud_b", 12, 0},
      {"cg.out_w", 24, 24},
      {"cg.out_b", 1, 0},
  };
  return {init_from_specs(gen, seed ^ 0xA5A5ull), init_from_specs(critics, seed ^ 0x5A5Aull)};
}

ParamBinding::ParamBinding(Tape& tape, const ParamVector& params, bool needs_grad)
    : tape_(&tape), params_(&params), needs_grad_(needs_grad) {}

Tensor ParamBinding::operator()(const std::string& name, Shape shape) const {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) {
    if (!(it->second.shape() == shape))
      throw DimensionError("param reused with another shape: " + name);
    return it->second;
  }
  auto seg = params_->segment(name);
  if (static_cast<int>(seg.size()) != shape.numel)
    throw DimensionError("segment size does not match requested shape: " + name);
  Tensor leaf = tape_->leaf(shape, seg.data(), needs_grad_);
  leaves_.emplace(name, leaf);
  return leaf;
}

void ParamBinding::collect_grads(ParamVector& out) const {
  if (!needs_grad_) return;
  for (const auto& [name, leaf] : leaves_) {
    auto dst = out.segment(name);
    auto g = leaf.grad();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
}

// ---------------- base model ----------------

namespace {

void check_stage(Tensor t, const char* stage) {
  for (double v : t.val())
    if (!std::isfinite(v)) throw NumericalDivergence("non-finite activations", stage);
}

Tensor image_leaf(Tape& tape, const world::ToyFace& face) {
  return tape.leaf(Shape{face.h, face.w}, face.image, false);
}

// learned expression displacement, trilinearly upsampled from a coarse
// lattice; bounded so sampling stays near the rigid grid
Tensor warp_residual(const BaseNets& nets, const char* prefix, Tensor b1, Tensor b2, Tensor b3,
                     Tensor t, Tensor z, Tensor e_s) {
  const ModelConfig& c = nets.cfg;
  int cc = c.warp_coarse;
  int warp_in = 12 + c.z_dim + c.es_dim;
  int warp_out = 3 * cc * cc * cc;
  std::string p(prefix);

  Tensor in = ad::concat({b1, b2, b3, t, z, e_s});
  Tensor h = ad::tanh_(ad::linear(nets.pb(p + ".l1_w", Shape{c.warp_hidden, warp_in}), in,
                                  nets.pb(p + ".l1_b", Shape{c.warp_hidden})));
  Tensor coarse = ad::mul_scalar(
      ad::tanh_(ad::linear(nets.pb(p + ".l2_w", Shape{warp_out, c.warp_hidden}), h,
                           nets.pb(p + ".l2_b", Shape{warp_out}))),
      0.3);
  Tensor coarse_vol = ad::reshape(coarse, Shape{3, cc, cc, cc});

  Tape& tape = *b1.tape;
  int n = c.vol_d * c.vol_h * c.vol_w;
  std::vector<double> lattice(static_cast<size_t>(3) * n);
  auto axis = [](int k, int size) { return size > 1 ? -1.0 + 2.0 * k / (size - 1) : 0.0; };
  int i = 0;
  for (int zz = 0; zz < c.vol_d; ++zz)
    for (int yy = 0; yy < c.vol_h; ++yy)
      for (int xx = 0; xx < c.vol_w; ++xx, ++i) {
        lattice[static_cast<size_t>(i)] = axis(xx, c.vol_w);
        lattice[static_cast<size_t>(n + i)] = axis(yy, c.vol_h);
        lattice[static_cast<size_t>(2 * n + i)] = axis(zz, c.vol_d);
      }
  Tensor grid = tape.leaf(Shape{3, n}, lattice, false);
  return ad::trilinear_sample(coarse_vol, grid);
}

}  // namespace

MotionOut encode_motion(const BaseNets& nets, Tensor image, Mode mode, Rng* dropout_rng) {
  const ModelConfig& c = nets.cfg;
  int half = c.image_size / 2;
  int pooled = half * half;
  Tensor x = ad::reshape(ad::avgpool2d(image, 2), Shape{pooled});
  Tensor h1 = ad::tanh_(ad::linear(nets.pb("emot.fc1_w", Shape{c.motion_hidden1, pooled}), x,
                                   nets.pb("emot.fc1_b", Shape{c.motion_hidden1})));
  Tensor h2 = ad::tanh_(
      ad::linear(nets.pb("emot.fc2_w", Shape{c.motion_hidden2, c.motion_hidden1}), h1,
                 nets.pb("emot.fc2_b", Shape{c.motion_hidden2})));

  MotionOut out;
  Tape& tape = *image.tape;
  // dedicated pose branch; keeps expression crosstalk out of the estimates
  Tensor ph = ad::tanh_(ad::linear(nets.pb("emot.ph_w", Shape{c.z_hidden, c.motion_hidden2}),
                                   h2, nets.pb("emot.ph_b", Shape{c.z_hidden})));
  Tensor rot_pre = ad::linear(nets.pb("emot.rot_w", Shape{6, c.z_hidden}), ph,
                              nets.pb("emot.rot_b", Shape{6}));
  Tensor ident = tape.leaf(Shape{6}, std::vector<double>{1, 0, 0, 0, 1, 0}, false);
  out.rot6 = ad::add(ident, ad::mul_scalar(ad::tanh_(rot_pre), 1.2));

  // Gram-Schmidt on the tape; the identity bias keeps the 6D input away from
  // the degenerate set
  Tensor a1 = ad::slice(out.rot6, 0, 3);
  Tensor a2 = ad::slice(out.rot6, 3, 3);
  Tensor one = tape.constant(1.0);
  out.b1 = ad::vec_scale(a1, ad::div(one, ad::norm2(a1, 1e-18)));
  Tensor proj = ad::dot(out.b1, a2);
  Tensor u2 = ad::sub(a2, ad::vec_scale(out.b1, proj));
  out.b2 = ad::vec_scale(u2, ad::div(one, ad::norm2(u2, 1e-18)));
  out.b3 = ad::cross3(out.b1, out.b2);

  out.t = ad::mul_scalar(ad::tanh_(ad::linear(nets.pb("emot.t_w", Shape{3, c.z_hidden}), ph,
                                              nets.pb("emot.t_b", Shape{3}))),
                         0.25);

  Tensor zh = ad::tanh_(ad::linear(nets.pb("emot.zh_w", Shape{c.z_hidden, c.motion_hidden2}),
                                   h2, nets.pb("emot.zh_b", Shape{c.z_hidden})));
  Tensor z_raw = ad::linear(nets.pb("emot.z_w", Shape{c.z_dim, c.z_hidden}), zh,
                            nets.pb("emot.z_b", Shape{c.z_dim}));
  // unit-normalized expression descriptor; all its consumers are cosine-based
  // or bounded, so the direction carries the content
  Tensor z = ad::vec_scale(z_raw, ad::div(one, ad::norm2(z_raw, 1e-12)));
  if (mode == Mode::train && dropout_rng != nullptr && c.dropout_rate > 0.0) {
    std::vector<double> mask(static_cast<size_t>(c.z_dim));
    double keep = 1.0 - c.dropout_rate;
    for (double& m : mask) m = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    z = ad::mul(z, tape.leaf(Shape{c.z_dim}, mask, false));
  }
  out.z = z;
  return out;
}

std::pair<Tensor, Tensor> encode_appearance(const BaseNets& nets, Tensor image) {
  const ModelConfig& c = nets.cfg;
  int vol_channels = c.vol_c * c.vol_d;
  // full-resolution features first, pooling after, so fine expression detail
  // reaches the appearance volume
  Tensor full = ad::reshape(image, Shape{1, c.image_size, c.image_size});
  Tensor feats = ad::tanh_(ad::conv2d3x3(full,
                                         nets.pb("eapp.conv_w", Shape{c.app_channels, 1, 3, 3}),
                                         nets.pb("eapp.conv_b", Shape{c.app_channels})));
  Tensor grid8 = ad::avgpool2d(feats, c.image_size / c.vol_h);
  Tensor vol_pre = ad::conv1x1(grid8, nets.pb("eapp.vol_w", Shape{vol_channels, c.app_channels}),
                               nets.pb("eapp.vol_b", Shape{vol_channels}));
  Tensor v_s = ad::reshape(vol_pre, Shape{c.vol_c, c.vol_d, c.vol_h, c.vol_w});
  Tensor e_s = ad::linear(nets.pb("eapp.es_w", Shape{c.es_dim, c.app_channels}),
                          ad::spatial_mean(feats), nets.pb("eapp.es_b", Shape{c.es_dim}));
  return {v_s, e_s};
}

Tensor canonical_volume(const BaseNets& nets, Tensor v_s, const MotionOut& m, Tensor e_s) {
  const ModelConfig& c = nets.cfg;
  Tensor grid = ad::add(ad::rigid_grid(m.b1, m.b2, m.b3, m.t, false, c.vol_d, c.vol_h, c.vol_w),
                        warp_residual(nets, "wc", m.b1, m.b2, m.b3, m.t, m.z, e_s));
  Tensor sampled = ad::trilinear_sample(v_s, grid);
  Tensor h = ad::tanh_(ad::conv1x1(sampled, nets.pb("g3d.l1_w", Shape{8, c.vol_c}),
                                   nets.pb("g3d.l1_b", Shape{8})));
  // bounded canonical volume keeps the volume-matching loss scale-stable
  Tensor out = ad::tanh_(ad::conv1x1(h, nets.pb("g3d.l2_w", Shape{c.vol_c, 8}),
                                     nets.pb("g3d.l2_b", Shape{c.vol_c})));
  return ad::reshape(out, Shape{c.vol_c, c.vol_d, c.vol_h, c.vol_w});
}

Tensor decode_image(const BaseNets& nets, Tensor v_canon, const MotionOut& pose_from,
                    Tensor z_driver, Tensor e_s) {
  const ModelConfig& c = nets.cfg;
  Tensor grid = ad::add(
      ad::rigid_grid(pose_from.b1, pose_from.b2, pose_from.b3, pose_from.t, true, c.vol_d,
                     c.vol_h, c.vol_w),
      warp_residual(nets, "wp", pose_from.b1, pose_from.b2, pose_from.b3, pose_from.t, z_driver,
                    e_s));
  Tensor posed = ad::trilinear_sample(v_canon, grid);  // {C, D*H*W}
  // the generator reads the warped volume alone; appearance reaches it only
  // through V^C, while e_s conditions the warp fields
  int vol_channels = c.vol_c * c.vol_d;
  int cells = c.vol_h * c.vol_w;
  Tensor withes = ad::reshape(posed, Shape{vol_channels, cells});
  int g2d_in = vol_channels;
  Tensor f1 = ad::tanh_(ad::conv1x1(withes, nets.pb("g2d.l1_w", Shape{c.g2d_hidden, g2d_in}),
                                    nets.pb("g2d.l1_b", Shape{c.g2d_hidden})));
  Tensor f2 = ad::tanh_(ad::conv1x1(f1, nets.pb("g2d.l2_w", Shape{c.g2d_mid, c.g2d_hidden}),
                                    nets.pb("g2d.l2_b", Shape{c.g2d_mid})));
  Tensor up = ad::bilinear_resize(ad::reshape(f2, Shape{c.g2d_mid, c.vol_h, c.vol_w}),
                                  c.image_size, c.image_size);
  // subcell positional channels let the shared head paint structure sharper
  // than the upsampled feature lattice
  int hw = c.image_size * c.image_size;
  int factor = c.image_size / c.vol_w;
  Tape& tape = *v_canon.tape;
  std::vector<double> pos(static_cast<size_t>(4) * hw);
  for (int y = 0; y < c.image_size; ++y)
    for (int x = 0; x < c.image_size; ++x) {
      size_t i = static_cast<size_t>(y) * c.image_size + x;
      pos[i] = -1.0 + 2.0 * (x % factor) / (factor - 1);
      pos[static_cast<size_t>(hw) + i] = -1.0 + 2.0 * (y % factor) / (factor - 1);
      pos[static_cast<size_t>(2 * hw) + i] = -1.0 + 2.0 * x / (c.image_size - 1);
      pos[static_cast<size_t>(3 * hw) + i] = -1.0 + 2.0 * y / (c.image_size - 1);
    }
  Tensor pos_t = tape.leaf(Shape{4, hw}, pos, false);
  Tensor up_cat = ad::reshape(
      ad::concat({ad::reshape(up, Shape{c.g2d_mid * hw}), ad::reshape(pos_t, Shape{4 * hw})}),
      Shape{c.g2d_mid + 4, hw});
  Tensor f3 = ad::tanh_(ad::conv1x1(up_cat,
                                    nets.pb("g2d.l3_w", Shape{c.g2d_head, c.g2d_mid + 4}),
                                    nets.pb("g2d.l3_b", Shape{c.g2d_head})));
  Tensor pre = ad::conv1x1(f3, nets.pb("g2d.l4_w", Shape{1, c.g2d_head}),
                           nets.pb("g2d.l4_b", Shape{1}));

  // pixel-shuffle branch: each cell paints its own factor x factor block as a
  // linear readout of the cell features, which keeps blob-scale detail crisp
  int block = factor * factor;
  Tensor ps = ad::conv1x1(withes, nets.pb("g2d.ps_w", Shape{block, g2d_in}),
                          nets.pb("g2d.ps_b", Shape{block}));
  std::vector<int> shuffle(static_cast<size_t>(hw));
  for (int y = 0; y < c.image_size; ++y)
    for (int x = 0; x < c.image_size; ++x) {
      int cell = (y / factor) * c.vol_w + (x / factor);
      int sub = (y % factor) * factor + (x % factor);
      shuffle[static_cast<size_t>(y) * c.image_size + x] = sub * cells + cell;
    }
  Tensor ps_img = ad::gather(ad::reshape(ps, Shape{block * cells}), shuffle);
  Tensor out = ad::add(ad::reshape(pre, Shape{hw}), ps_img);
  return ad::reshape(ad::sigmoid_(out), Shape{c.image_size, c.image_size});
}

BaseForward forward_base(const BaseNets& nets, const world::ToyFace& x_s,
                         const world::ToyFace& x_d, Mode mode, Rng* dropout_rng) {
  Tape& tape = *nets.pb("emot.fc1_b", Shape{nets.cfg.motion_hidden1}).tape;
  Tensor img_s = image_leaf(tape, x_s);
  Tensor img_d = image_leaf(tape, x_d);
  BaseForward out;
  out.source = encode_motion(nets, img_s, mode, dropout_rng);
  out.driver = encode_motion(nets, img_d, mode, dropout_rng);
  auto [v_s, e_s] = encode_appearance(nets, img_s);
  out.v_s = v_s;
  out.e_s = e_s;
  check_stage(out.v_s, "E_app");
  out.v_canon = canonical_volume(nets, v_s, out.source, e_s);
  check_stage(out.v_canon, "G_3D");
  out.prediction = decode_image(nets, out.v_canon, out.driver, out.driver.z, e_s);
  check_stage(out.prediction, "G_2D");
  return out;
}

// ---------------- history ----------------

size_t History::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw DimensionError("history: unknown column " + name);
}

double History::column_mean(const std::string& name, size_t first_row, size_t last_row) const {
  size_t col = column_index(name);
  last_row = std::min(last_row, rows.size());
  if (first_row >= last_row) throw DimensionError("history: empty row range");
  double acc = 0.0;
  for (size_t r = first_row; r < last_row; ++r) acc += rows[r][col];
  return acc / static_cast<double>(last_row - first_row);
}

// ---------------- base training ----------------

namespace {

struct TermLog {
  std::map<std::string, double> values;
  void add(const std::string& k, double v) { values[k] += v; }
};

Tensor build_main_loss(const BaseNets& nets, const world::PairQuintuplet& q,
                       const TrainConfig& cfg, Mode mode, Rng* dropout_rng, TermLog* log) {
  Tape& tape = *nets.pb("emot.fc1_b", Shape{nets.cfg.motion_hidden1}).tape;
  const losses::LossWeights& w = cfg.weights;
  losses::DatasetTag tag =
      q.pool == world::Pool::extreme ? losses::DatasetTag::extreme : losses::DatasetTag::common;

  Tensor img_s = image_leaf(tape, q.s.face);
  Tensor img_d = image_leaf(tape, q.d.face);
  Tensor img_ss = image_leaf(tape, q.s_star.face);
  Tensor img_ds = image_leaf(tape, q.d_star.face);
  Tensor img_sm = image_leaf(tape, q.s_m.face);

  MotionOut m_s = encode_motion(nets, img_s, mode, dropout_rng);
  MotionOut m_d = encode_motion(nets, img_d, mode, dropout_rng);
  MotionOut m_ss = encode_motion(nets, img_ss, mode, dropout_rng);
  MotionOut m_ds = encode_motion(nets, img_ds, mode, dropout_rng);

  auto [v_s, e_s] = encode_appearance(nets, img_s);
  Tensor v_canon_s = canonical_volume(nets, v_s, m_s, e_s);
  Tensor pred_sd = decode_image(nets, v_canon_s, m_d, m_d.z, e_s);
  check_stage(pred_sd, "G_2D");

  auto photo = losses::photometric_suite(pred_sd, q.d.face, w);

  Tensor l_cv = tape.constant(0.0);
  if (!cfg.ablation.disable_cv) {
    auto [v_d, e_d] = encode_appearance(nets, img_d);
    Tensor v_canon_d = canonical_volume(nets, v_d, m_d, e_d);
    l_cv = losses::canonical_volume_loss(v_canon_s, v_canon_d);
  }

  // cross-reenactment passes feeding the CosFace pair sets
  auto [v_ss, e_ss] = encode_appearance(nets, img_ss);
  MotionOut m_ss_full = m_ss;
  Tensor v_canon_ss = canonical_volume(nets, v_ss, m_ss_full, e_ss);
  Tensor pred_ssd = decode_image(nets, v_canon_ss, m_d, m_d.z, e_ss);

  Tensor z_sd = encode_motion(nets, pred_sd, mode, dropout_rng).z;
  Tensor z_ssd = encode_motion(nets, pred_ssd, mode, dropout_rng).z;

  losses::PairList positives{{z_sd, m_d.z}, {z_ssd, m_d.z}};
  losses::PairList negatives{{z_sd, m_ds.z}, {z_ssd, m_ds.z}};
  if (!cfg.ablation.disable_extended_sampling) {
    // desired head pose from x_s^m, emotions from x_d
    MotionOut m_sm = encode_motion(nets, img_sm, mode, dropout_rng);
    Tensor pred_ssmd = decode_image(nets, v_canon_ss, m_sm, m_d.z, e_ss);
    Tensor z_ssmd = encode_motion(nets, pred_ssmd, mode, dropout_rng).z;
    positives.push_back({z_ssmd, m_d.z});
    negatives.push_back({z_ssmd, m_ds.z});
  }
  Tensor l_cos = losses::cosface_loss(positives, negatives, w.cosface_s, w.cosface_m);

  Tensor l_sdm =
      cfg.ablation.disable_sdm ? tape.constant(0.0) : losses::sdm_loss(m_s.z, m_d.z, tag, w);

  Tensor l_gan = tape.constant(0.0);  // hinge-GAN image term defaults off at toy scale
  Tensor total = losses::total_loss_main({photo.total, l_cos, l_sdm, l_cv, l_gan}, w);

  if (log != nullptr) {
    log->add("l_pho", photo.total.scalar());
    log->add("l_in", photo.l_in.scalar());
    log->add("l_face", photo.l_face.scalar());
    log->add("l_gaze", photo.l_gaze.scalar());
    log->add("l_eyes", photo.l_eyes.scalar());
    log->add("l_mouth", photo.l_mouth.scalar());
    log->add("l_ears", photo.l_ears.scalar());
    log->add("l_cos", l_cos.scalar());
    log->add("l_sdm", l_sdm.scalar());
    log->add("l_cv", l_cv.scalar());
    log->add("l_adv", 0.0);
    log->add("l_fm", 0.0);
    log->add("total", total.scalar());
  }
  return total;
}

const std::vector<std::string> kBaseColumns = {
    "iteration", "lr",     "total", "l_pho", "l_in", "l_face", "l_gaze", "l_eyes",
    "l_mouth",   "l_ears", "l_cos", "l_sdm", "l_cv", "l_adv",  "l_fm"};

}  // namespace

std::pair<ParamVector, History> train_base(const world::World& w, const TrainConfig& cfg) {
  cfg.validate();
  ParamVector params = init_base_params(cfg.model, cfg.seed);
  AdamW opt(params.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  History hist;
  hist.columns = kBaseColumns;

  for (int it = 0; it < cfg.iterations; ++it) {
    double lr = cosine_lr(it, cfg.iterations, cfg.lr_start, cfg.lr_end);
    Rng samp(cfg.seed, 1000000 + static_cast<uint64_t>(it));
    Rng drop(cfg.seed, 2000000 + static_cast<uint64_t>(it));

    Tape tape;
    ParamBinding pb(tape, params, true);
    BaseNets nets{cfg.model, pb};
    TermLog log;
    Tensor batch_total;
    try {
      for (int b = 0; b < cfg.batch_size; ++b) {
        world::PairQuintuplet q = w.sample_training_batch(samp);
        Tensor item = build_main_loss(nets, q, cfg, Mode::train, &drop, &log);
        batch_total = b == 0 ? item : ad::add(batch_total, item);
      }
      batch_total = ad::mul_scalar(batch_total, 1.0 / cfg.batch_size);
      if (!std::isfinite(batch_total.scalar()))
        throw NumericalDivergence("non-finite training loss", "total");
      tape.backward(batch_total);
    } catch (const NumericalDivergence& e) {
      throw NumericalDivergence(std::string(e.what()) + " at iteration " + std::to_string(it),
                                e.location);
    }

    ParamVector grads = params.same_layout_zeros();
    pb.collect_grads(grads);
    grads.check_finite("gradient at iteration " + std::to_string(it));
    opt.step(params.values(), grads.values(), lr);

    std::vector<double> row{static_cast<double>(it), lr};
    for (size_t c = 2; c < hist.columns.size(); ++c)
      row.push_back(log.values[hist.columns[c]] / cfg.batch_size);
    hist.rows.push_back(std::move(row));
  }
  return {std::move(params), std::move(hist)};
}

numgrad::DifferentiableProgram base_loss_program(const world::World& w, const TrainConfig& cfg,
                                                 const world::PairQuintuplet& batch) {
  (void)w;
  auto run = [cfg, batch](const ParamVector& params,
                          bool with_grad) -> std::pair<double, ParamVector> {
    Tape tape;
    ParamBinding pb(tape, params, with_grad);
    BaseNets nets{cfg.model, pb};
    Tensor total = build_main_loss(nets, batch, cfg, Mode::eval, nullptr, nullptr);
    double loss = total.scalar();
    ParamVector grads = params.same_layout_zeros();
    if (with_grad) {
      tape.backward(total);
      pb.collect_grads(grads);
    }
    return {loss, std::move(grads)};
  };
  numgrad::DifferentiableProgram prog;
  prog.value = [run](const ParamVector& p) { return run(p, false).first; };
  prog.value_and_grad = [run](const ParamVector& p) { return run(p, true); };
  return prog;
}

// ---------------- audio encoder ----------------

std::vector<Tensor> forward_audio(const ModelConfig& cfg, const ParamBinding& pb,
                                  const world::AudioEmbeddingSequence& emb,
                                  std::span<const double> z0) {
  if (emb.empty()) throw DomainError("forward_audio: empty embedding sequence");
  if (static_cast<int>(z0.size()) != cfg.z_dim) throw DimensionError("forward_audio: bad z0");
  Tape& tape = *pb("aud.b1_b", Shape{cfg.audio_hidden}).tape;
  int b_in = cfg.z_dim + cfg.audio_dim;
  int c_in = cfg.audio_dim + cfg.audio_feat;

  std::vector<double> z0v(z0.begin(), z0.end());
  Tensor z0_leaf = tape.leaf(Shape{cfg.z_dim}, z0v, false);
  Tensor emb1 = tape.leaf(Shape{cfg.audio_dim}, emb[0], false);

  Tensor hb = ad::tanh_(ad::linear(pb("aud.b1_w", Shape{cfg.audio_hidden, b_in}),
                                   ad::concat({z0_leaf, emb1}),
                                   pb("aud.b1_b", Shape{cfg.audio_hidden})));
  Tensor z_base = ad::linear(pb("aud.b2_w", Shape{cfg.z_dim, cfg.audio_hidden}), hb,
                             pb("aud.b2_b", Shape{cfg.z_dim}));

  std::vector<Tensor> out;
  out.reserve(emb.size());
  Tensor prev = z0_leaf;
  for (size_t t = 0; t < emb.size(); ++t) {
    Tensor emb_t = t == 0 ? emb1 : tape.leaf(Shape{cfg.audio_dim}, emb[t], false);
    Tensor feat = ad::tanh_(ad::linear(pb("aud.a_w", Shape{cfg.audio_feat, cfg.z_dim}), prev,
                                       pb("aud.a_b", Shape{cfg.audio_feat})));
    Tensor hc = ad::tanh_(ad::linear(pb("aud.c1_w", Shape{cfg.audio_hidden, c_in}),
                                     ad::concat({emb_t, feat}),
                                     pb("aud.c1_b", Shape{cfg.audio_hidden})));
    Tensor resid = ad::linear(pb("aud.c2_w", Shape{cfg.z_dim, cfg.audio_hidden}), hc,
                              pb("aud.c2_b", Shape{cfg.z_dim}));
    Tensor zt = ad::add(z_base, resid);
    out.push_back(zt);
    prev = zt;
  }
  return out;
}

std::vector<double> teacher_latent(const ModelConfig& cfg, const ParamVector& base_params,
                                   const world::ToyFace& face) {
  Tape tape;
  ParamBinding pb(tape, base_params, false);
  BaseNets nets{cfg, pb};
  MotionOut m = encode_motion(nets, image_leaf(tape, face), Mode::eval, nullptr);
  return m.z.val();
}

rot6d::RigidTransform teacher_pose(const ModelConfig& cfg, const ParamVector& base_params,
                                   const world::ToyFace& face) {
  Tape tape;
  ParamBinding pb(tape, base_params, false);
  BaseNets nets{cfg, pb};
  MotionOut m = encode_motion(nets, image_leaf(tape, face), Mode::eval, nullptr);
  rot6d::RigidTransform out;
  for (int r = 0; r < 3; ++r) {
    out.rotation[static_cast<size_t>(3 * r)] = m.b1.val()[static_cast<size_t>(r)];
    out.rotation[static_cast<size_t>(3 * r + 1)] = m.b2.val()[static_cast<size_t>(r)];
    out.rotation[static_cast<size_t>(3 * r + 2)] = m.b3.val()[static_cast<size_t>(r)];
    out.translation[static_cast<size_t>(r)] = m.t.val()[static_cast<size_t>(r)];
  }
  return out;
}

std::vector<double> decode_with_latent(const ModelConfig& cfg, const ParamVector& base_params,
                                       const world::ToyFace& source,
                                       const rot6d::RigidTransform& driver_pose,
                                       std::span<const double> z) {
  Tape tape;
  ParamBinding pb(tape, base_params, false);
  BaseNets nets{cfg, pb};
  Tensor img_s = image_leaf(tape, source);
  MotionOut m_s = encode_motion(nets, img_s, Mode::eval, nullptr);
  auto [v_s, e_s] = encode_appearance(nets, img_s);
  Tensor v_canon = canonical_volume(nets, v_s, m_s, e_s);

  MotionOut pose;
  std::vector<double> b1{driver_pose.rotation[0], driver_pose.rotation[3], driver_pose.rotation[6]};
  std::vector<double> b2{driver_pose.rotation[1], driver_pose.rotation[4], driver_pose.rotation[7]};
  std::vector<double> b3{driver_pose.rotation[2], driver_pose.rotation[5], driver_pose.rotation[8]};
  pose.b1 = tape.leaf(Shape{3}, b1, false);
  pose.b2 = tape.leaf(Shape{3}, b2, false);
  pose.b3 = tape.leaf(Shape{3}, b3, false);
  std::vector<double> tv(driver_pose.translation.begin(), driver_pose.translation.end());
  pose.t = tape.leaf(Shape{3}, tv, false);
  std::vector<double> zv(z.begin(), z.end());
  Tensor z_leaf = tape.leaf(Shape{cfg.z_dim}, zv, false);
  Tensor pred = decode_image(nets, v_canon, pose, z_leaf, e_s);
  return pred.val();
}

std::vector<uint8_t> mouth_mask_from_image(const std::vector<double>& image,
                                           const world::ToyFace& reference) {
  if (image.size() != reference.mask_mouth.size())
    throw DimensionError("mouth_mask_from_image: shape mismatch");
  int h = reference.h, w = reference.w;
  std::vector<uint8_t> region(image.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool near = false;
      for (int dy = -2; dy <= 2 && !near; ++dy)
        for (int dx = -2; dx <= 2 && !near; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w &&
              reference.mask_mouth[static_cast<size_t>(yy) * w + xx])
            near = true;
        }
      region[static_cast<size_t>(y) * w + x] = near ? 1 : 0;
    }
  std::vector<uint8_t> mask(image.size(), 0);
  for (size_t i = 0; i < image.size(); ++i)
    mask[i] = (region[i] && image[i] > 0.45) ? 1 : 0;
  return mask;
}

namespace {

const std::vector<std::string> kAudioColumns = {
    "iteration", "lr",    "total",  "l_idt", "l_latent", "l_mouth",          "l_pca",
    "l_vtr",     "l_bce", "l_lips", "l_l1",  "l_face",   "plain_latent_mae", "disable_pca_loss"};

}  // namespace

std::pair<ParamVector, History> train_audio(const world::World& w,
                                            const ParamVector& base_params,
                                            const latent::MouthBasis& basis,
                                            const TrainConfig& cfg) {
  cfg.validate();
  if (basis.k < 8) throw PrerequisiteError("train_audio: mouth basis width must be >= 8");

  // refuse a collapsed teacher
  {
    Rng probe_rng(cfg.seed, 999);
    latent::LatentSet probes;
    probes.d = cfg.model.z_dim;
    const int n_probe = 96;
    for (int i = 0; i < n_probe; ++i) {
      int id = static_cast<int>(probe_rng.next_below(w.identities(world::Pool::common).size()));
      world::FactorVector f = w.sample_factors(world::Pool::common, id, probe_rng);
      auto z = teacher_latent(cfg.model, base_params, world::render(f, w.config().image_size));
      probes.data.insert(probes.data.end(), z.begin(), z.end());
      ++probes.n;
    }
    double auc = 1.0;
    try {
      auc = latent::pca_spectrum(probes).second.auc_z;
    } catch (const DomainError&) {
      throw PrerequisiteError("train_audio: teacher latents are degenerate (zero variance)");
    }
    if (auc > 0.99)
      throw PrerequisiteError("train_audio: teacher latents collapsed (AUC_z = " +
                              std::to_string(auc) + " > 0.99)");
  }

  ParamVector params = init_audio_params(cfg.model, cfg.seed);
  AdamW opt(params.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  History hist;
  hist.columns = kAudioColumns;
  const losses::LossWeights& lw = cfg.weights;

  for (int it = 0; it < cfg.iterations; ++it) {
    double lr = cosine_lr(it, cfg.iterations, cfg.lr_start, cfg.lr_end);
    Rng samp(cfg.seed, 3000000 + static_cast<uint64_t>(it));

    int frames =
        cfg.clip_min_frames + static_cast<int>(samp.next_below(static_cast<uint64_t>(
                                  cfg.clip_max_frames - cfg.clip_min_frames + 1)));
    int id = static_cast<int>(samp.next_below(w.identities(world::Pool::common).size()));
    auto clip = w.mouth_only_sequence(world::Pool::common, id, frames, samp);

    std::vector<std::array<double, world::kMouthDim>> traj;
    traj.reserve(clip.size());
    for (const auto& s : clip) traj.push_back(s.factors.mouth);
    auto emb = w.synth_audio(traj, samp, cfg.audio_noise_sigma);

    std::vector<std::vector<double>> teacher(clip.size());
    for (size_t t = 0; t < clip.size(); ++t)
      teacher[t] = teacher_latent(cfg.model, base_params, clip[t].face);

    Tape tape;
    ParamBinding pb(tape, params, true);
    ParamBinding base_pb(tape, base_params, false);
    BaseNets base_nets{cfg.model, base_pb};

    auto z_hat = forward_audio(cfg.model, pb, emb, teacher[0]);

    Tensor l_pca_sum = tape.constant(0.0);
    Tensor l_vtr_sum = tape.constant(0.0);
    Tensor l_latent_sum = tape.constant(0.0);
    for (size_t t = 0; t < z_hat.size(); ++t) {
      Tensor z_ref = tape.leaf(Shape{cfg.model.z_dim}, teacher[t], false);
      Tensor l_vtr = ad::l1_sum(z_hat[t], z_ref);
      Tensor l_lat;
      Tensor l_pca = tape.constant(0.0);
      if (cfg.ablation.plain_latent_mae) {
        l_lat = ad::add(ad::mul_scalar(ad::l1_mean(z_hat[t], z_ref), lw.w_pca),
                        ad::mul_scalar(l_vtr, lw.w_vtr));
      } else if (cfg.ablation.disable_pca_loss) {
        l_lat = ad::mul_scalar(l_vtr, lw.w_vtr);
      } else {
        l_pca = losses::pca_mouth_loss(z_hat[t], z_ref, basis, 8);
        l_lat = ad::add(ad::mul_scalar(l_pca, lw.w_pca), ad::mul_scalar(l_vtr, lw.w_vtr));
      }
      l_pca_sum = ad::add(l_pca_sum, l_pca);
      l_vtr_sum = ad::add(l_vtr_sum, l_vtr);
      l_latent_sum = ad::add(l_latent_sum, l_lat);
    }
    double inv_t = 1.0 / static_cast<double>(z_hat.size());
    Tensor l_latent = ad::mul_scalar(l_latent_sum, inv_t);

    // photometric terms on a small frame subset, decoded through the frozen
    // base model
    Tensor img0 = image_leaf(tape, clip[0].face);
    MotionOut m0 = encode_motion(base_nets, img0, Mode::eval, nullptr);
    auto [v_s0, e_s0] = encode_appearance(base_nets, img0);
    Tensor v_canon0 = canonical_volume(base_nets, v_s0, m0, e_s0);

    Tensor l_idt_sum = tape.constant(0.0);
    Tensor l_mouth_sum = tape.constant(0.0);
    double l_bce_acc = 0.0, l_lips_acc = 0.0, l_l1_acc = 0.0, l_face_acc = 0.0;
    int pf = std::min(cfg.photo_frames_per_iter, frames);
    for (int k = 0; k < pf; ++k) {
      size_t t = samp.next_below(static_cast<uint64_t>(frames));
      Tensor img_t = image_leaf(tape, clip[t].face);
      MotionOut m_t = encode_motion(base_nets, img_t, Mode::eval, nullptr);
      Tensor pred = decode_image(base_nets, v_canon0, m_t, z_hat[t], e_s0);

      world::ToyFace gt_eval = clip[t].face;
      gt_eval.mask_mouth = mouth_mask_from_image(gt_eval.image, clip[t].face);
      auto pred_mask = mouth_mask_from_image(pred.val(), clip[t].face);
      auto terms =
          losses::speech_loss_suite(pred, pred_mask, gt_eval, z_hat[t], teacher[t], basis, lw);
      l_idt_sum = ad::add(l_idt_sum, terms.l_idt);
      l_mouth_sum = ad::add(l_mouth_sum, terms.l_mouth);
      l_bce_acc += terms.l_bce.scalar();
      l_lips_acc += terms.l_lips.scalar();
      l_l1_acc += terms.l_l1.scalar();
      l_face_acc += terms.l_face.scalar();
    }
    double inv_pf = pf > 0 ? 1.0 / pf : 0.0;
    Tensor l_idt = ad::mul_scalar(l_idt_sum, inv_pf);
    Tensor l_mouth = ad::mul_scalar(l_mouth_sum, inv_pf);

    Tensor total = ad::add(ad::add(l_idt, l_latent), l_mouth);
    if (!std::isfinite(total.scalar()))
      throw NumericalDivergence("non-finite speech loss at iteration " + std::to_string(it),
                                "total");
    tape.backward(total);
    ParamVector grads = params.same_layout_zeros();
    pb.collect_grads(grads);
    grads.check_finite("audio gradient at iteration " + std::to_string(it));
    opt.step(params.values(), grads.values(), lr);

    hist.rows.push_back({static_cast<double>(it), lr, total.scalar(), l_idt.scalar(),
                         l_latent.scalar(), l_mouth.scalar(), l_pca_sum.scalar() * inv_t,
                         l_vtr_sum.scalar() * inv_t, l_bce_acc * inv_pf, l_lips_acc * inv_pf,
                         l_l1_acc * inv_pf, l_face_acc * inv_pf,
                         cfg.ablation.plain_latent_mae ? 1.0 : 0.0,
                         cfg.ablation.disable_pca_loss ? 1.0 : 0.0});
  }
  return {std::move(params), std::move(hist)};
}

// ---------------- rotation model ----------------

PoseTrack sample_pose_track(const ModelConfig& cfg, int frames, double max_rotation_rad,
                            double max_translation, const std::vector<double>& map_w,
                            const std::vector<double>& map_b, Rng& rng, double noise_sigma) {
  if (frames < 2) throw DomainError("sample_pose_track: need at least two frames");
  // two seeded sinusoids per channel keep the track smooth and bounded
  struct Osc {
    double a1, f1, p1, a2, f2, p2;
  };
  auto osc = [&rng](double bound) {
    Osc o;
    double a = rng.uniform(0.3, 1.0), b = rng.uniform(0.1, 0.6);
    double norm = bound / (a + b);
    o.a1 = a * norm;
    o.a2 = b * norm;
    o.f1 = 1.0 + static_cast<double>(rng.next_below(3));
    o.f2 = 2.0 + static_cast<double>(rng.next_below(4));
    o.p1 = rng.uniform(0.0, 6.283185307179586);
    o.p2 = rng.uniform(0.0, 6.283185307179586);
    return o;
  };
  std::array<Osc, 6> oscs;
  for (int k = 0; k < 3; ++k) oscs[static_cast<size_t>(k)] = osc(0.9 * max_rotation_rad);
  for (int k = 3; k < 6; ++k) oscs[static_cast<size_t>(k)] = osc(0.9 * max_translation);
  auto eval = [](const Osc& o, double u) {
    return o.a1 * std::sin(o.f1 * u + o.p1) + o.a2 * std::sin(o.f2 * u + o.p2);
  };

  PoseTrack track;
  track.poses.frames.reserve(static_cast<size_t>(frames));
  track.embeddings.reserve(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    double u = 6.283185307179586 * t / frames;
    double feat[6];
    for (int k = 0; k < 6; ++k) feat[k] = eval(oscs[static_cast<size_t>(k)], u);
    rot6d::RigidTransform pose;
    pose.rotation = rot6d::rotation_xyz(feat[0], feat[1], feat[2]);
    pose.translation = {feat[3], feat[4], feat[5]};
    track.poses.frames.push_back(rot6d::encode_pose(pose));

    std::vector<double> e(static_cast<size_t>(cfg.audio_dim));
    for (int i = 0; i < cfg.audio_dim; ++i) {
      double acc = map_b[static_cast<size_t>(i)];
      for (int j = 0; j < 6; ++j) acc += map_w[static_cast<size_t>(i) * 6 + j] * feat[j];
      e[static_cast<size_t>(i)] = std::tanh(acc);
      if (noise_sigma > 0.0) e[static_cast<size_t>(i)] += noise_sigma * rng.normal();
    }
    track.embeddings.push_back(std::move(e));
  }
  return track;
}

Tensor rotation_generator(const ModelConfig& cfg, const ParamBinding& pb,
                          const world::AudioEmbeddingSequence& emb) {
  if (emb.empty()) throw DomainError("rotation_generator: empty embeddings");
  Tape& tape = *pb("gen.c1_b", Shape{cfg.rot_hidden}).tape;
  int tlen = static_cast<int>(emb.size());
  std::vector<double> flat(static_cast<size_t>(cfg.audio_dim) * tlen);
  for (int t = 0; t < tlen; ++t)
    for (int c = 0; c < cfg.audio_dim; ++c)
      flat[static_cast<size_t>(c) * tlen + t] = emb[static_cast<size_t>(t)][static_cast<size_t>(c)];
  Tensor x = tape.leaf(Shape{cfg.audio_dim, tlen}, flat, false);
  Tensor h1 =
      ad::tanh_(ad::conv1d(x, pb("gen.c1_w", Shape{cfg.rot_hidden, cfg.audio_dim, cfg.rot_kernel}),
                           pb("gen.c1_b", Shape{cfg.rot_hidden})));
  Tensor h2 = ad::tanh_(
      ad::conv1d(h1, pb("gen.c2_w", Shape{cfg.rot_hidden, cfg.rot_hidden, cfg.rot_kernel}),
                 pb("gen.c2_b", Shape{cfg.rot_hidden})));
  Tensor raw =
      ad::conv1x1(h2, pb("gen.out_w", Shape{9, cfg.rot_hidden}), pb("gen.out_b", Shape{9}));
  // 6D prefix biased to the identity rotation so every frame decodes to SO(3)
  std::vector<double> bias(static_cast<size_t>(9) * tlen, 0.0);
  std::vector<double> scale(static_cast<size_t>(9) * tlen, 0.25);
  for (int t = 0; t < tlen; ++t) {
    bias[static_cast<size_t>(0) * tlen + t] = 1.0;
    bias[static_cast<size_t>(4) * tlen + t] = 1.0;
    for (int c = 0; c < 6; ++c) scale[static_cast<size_t>(c) * tlen + t] = 1.2;
  }
  Tensor out = ad::add(tape.leaf(Shape{9, tlen}, bias, false),
                       ad::mul(ad::tanh_(raw), tape.leaf(Shape{9, tlen}, scale, false)));
  return out;
}

namespace {

// local 1D patch critic over N-frame windows
struct LocalCritic : losses::Critic {
  const ModelConfig& cfg;
  const ParamBinding& pb;
  LocalCritic(const ModelConfig& c, const ParamBinding& p) : cfg(c), pb(p) {}

  std::vector<std::vector<int>> windows(int tlen) const {
    std::vector<std::vector<int>> out;
    int n = cfg.critic_window;
    for (int start = 0; start + n <= tlen; start += cfg.critic_stride) {
      std::vector<int> idx;
      idx.reserve(static_cast<size_t>(9) * n);
      for (int c = 0; c < 9; ++c)
        for (int t = start; t < start + n; ++t) idx.push_back(c * tlen + t);
      out.push_back(std::move(idx));
    }
    if (out.empty()) throw DomainError("LocalCritic: sequence shorter than the window");
    return out;
  }

  Tensor score(Tensor x) override {
    int tlen = x.shape().d[1];
    auto win = windows(tlen);
    int wdim = 9 * cfg.critic_window;
    Tensor acc = x.tape->constant(0.0);
    for (const auto& idx : win) {
      Tensor xw = ad::gather(x, idx);
      Tensor h = ad::tanh_(ad::linear(pb("cl.w1", Shape{cfg.critic_hidden, wdim}), xw,
                                      pb("cl.b1", Shape{cfg.critic_hidden})));
      acc = ad::add(acc, ad::linear(pb("cl.w2", Shape{1, cfg.critic_hidden}), h,
                                    pb("cl.b2", Shape{1})));
    }
    return ad::mul_scalar(acc, 1.0 / static_cast<double>(win.size()));
  }

  std::pair<Tensor, Tensor> score_with_input_grad(Tensor x) override {
    int tlen = x.shape().d[1];
    auto win = windows(tlen);
    int wdim = 9 * cfg.critic_window;
    Tensor acc = x.tape->constant(0.0);
    Tensor gsum;
    Tensor w1 = pb("cl.w1", Shape{cfg.critic_hidden, wdim});
    Tensor w2 = pb("cl.w2", Shape{1, cfg.critic_hidden});
    Tensor w2row = ad::reshape(w2, Shape{cfg.critic_hidden});
    for (size_t k = 0; k < win.size(); ++k) {
      Tensor xw = ad::gather(x, win[k]);
      Tensor u = ad::tanh_(ad::linear(w1, xw, pb("cl.b1", Shape{cfg.critic_hidden})));
      acc = ad::add(acc, ad::linear(w2, u, pb("cl.b2", Shape{1})));
      // d score / d xw = W1^T (w2 .* (1 - u^2))
      Tensor v = ad::mul(ad::affine(ad::mul(u, u), -1.0, 1.0), w2row);
      Tensor gxw =
          ad::reshape(ad::matmul(ad::reshape(v, Shape{1, cfg.critic_hidden}), w1), Shape{wdim});
      Tensor scattered = ad::scatter_add(gxw, win[k], x.numel());
      gsum = k == 0 ? scattered : ad::add(gsum, scattered);
    }
    double inv = 1.0 / static_cast<double>(win.size());
    return {ad::mul_scalar(acc, inv), ad::reshape(ad::mul_scalar(gsum, inv), x.shape())};
  }
};

// global critic: pooled pose summary joined with the pooled audio embedding
struct GlobalCritic : losses::Critic {
  const ModelConfig& cfg;
  const ParamBinding& pb;
  std::vector<double> audio_pool;
  GlobalCritic(const ModelConfig& c, const ParamBinding& p,
               const world::AudioEmbeddingSequence& emb)
      : cfg(c), pb(p), audio_pool(static_cast<size_t>(c.audio_dim), 0.0) {
    for (const auto& e : emb)
      for (int i = 0; i < cfg.audio_dim; ++i)
        audio_pool[static_cast<size_t>(i)] += e[static_cast<size_t>(i)];
    for (double& v : audio_pool) v /= static_cast<double>(emb.size());
  }

  Tensor audio_branch(Tape& tape) {
    Tensor ap = tape.leaf(Shape{cfg.audio_dim}, audio_pool, false);
    return ad::tanh_(
        ad::linear(pb("cg.aud_w", Shape{12, cfg.audio_dim}), ap, pb("cg.aud_b", Shape{12})));
  }

  Tensor score(Tensor x) override {
    Tape& tape = *x.tape;
    int tlen = x.shape().d[1];
    Tensor pooled = ad::spatial_mean(ad::reshape(x, Shape{9, tlen, 1}));
    Tensor a =
        ad::tanh_(ad::linear(pb("cg.pose_w", Shape{12, 9}), pooled, pb("cg.pose_b", Shape{12})));
    Tensor cat = ad::concat({a, audio_branch(tape)});
    return ad::linear(pb("cg.out_w", Shape{1, 24}), cat, pb("cg.out_b", Shape{1}));
  }

  std::pair<Tensor, Tensor> score_with_input_grad(Tensor x) override {
    Tape& tape = *x.tape;
    int tlen = x.shape().d[1];
    Tensor pooled = ad::spatial_mean(ad::reshape(x, Shape{9, tlen, 1}));
    Tensor wp = pb("cg.pose_w", Shape{12, 9});
    Tensor a = ad::tanh_(ad::linear(wp, pooled, pb("cg.pose_b", Shape{12})));
    Tensor cat = ad::concat({a, audio_branch(tape)});
    Tensor w_out = pb("cg.out_w", Shape{1, 24});
    Tensor s = ad::linear(w_out, cat, pb("cg.out_b", Shape{1}));
    // d score / d pooled = Wp^T ((1 - a^2) .* w_out[0:12]); each frame then
    // receives 1/T of it
    Tensor v_pose = ad::slice(ad::reshape(w_out, Shape{24}), 0, 12);
    Tensor v = ad::mul(ad::affine(ad::mul(a, a), -1.0, 1.0), v_pose);
    Tensor g_pooled = ad::reshape(ad::matmul(ad::reshape(v, Shape{1, 12}), wp), Shape{9});
    Tensor g_full = ad::mul_scalar(ad::broadcast_cols(g_pooled, tlen), 1.0 / tlen);
    return {s, g_full};
  }
};

Tensor pose_leaf(Tape& tape, const rot6d::PoseSequence& seq) {
  int tlen = static_cast<int>(seq.length());
  std::vector<double> flat(static_cast<size_t>(9) * tlen);
  for (int t = 0; t < tlen; ++t)
    for (int c = 0; c < 9; ++c)
      flat[static_cast<size_t>(c) * tlen + t] =
          seq.frames[static_cast<size_t>(t)][static_cast<size_t>(c)];
  return tape.leaf(Shape{9, tlen}, flat, false);
}

const std::vector<std::string> kRotColumns = {"step", "kind",   "lr",  "loss", "recon",
                                              "smooth", "adv",  "gp",  "d_real", "d_fake"};

}  // namespace

std::pair<RotGanParams, History> train_rotation_gan(const world::World& w,
                                                    const TrainConfig& cfg) {
  cfg.validate();
  RotGanParams params = init_rotgan_params(cfg.model, cfg.seed);
  AdamW opt_gen(params.generator.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                cfg.weight_decay);
  AdamW opt_critic(params.critics.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                   cfg.weight_decay);
  History hist;
  hist.columns = kRotColumns;

  double max_rad = w.config().max_rotation_deg * 3.14159265358979323846 / 180.0;
  Rng map_rng(cfg.seed, 4242);
  std::vector<double> map_w(static_cast<size_t>(cfg.model.audio_dim) * 6);
  std::vector<double> map_b(static_cast<size_t>(cfg.model.audio_dim));
  for (double& v : map_w) v = 1.2 * map_rng.normal();
  for (double& v : map_b) v = 0.2 * map_rng.normal();

  const losses::LossWeights& lw = cfg.weights;
  bool adversarial = lw.lambda_adv > 0.0;
  long step = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    double lr = cosine_lr(it, cfg.iterations, cfg.lr_start, cfg.lr_end);

    if (adversarial) {
      // five critic updates for every generator update
      for (int cstep = 0; cstep < cfg.critic_steps_per_gen; ++cstep) {
        Rng samp(cfg.seed, 5000000 + static_cast<uint64_t>(step));
        Rng gp_rng(cfg.seed, 6000000 + static_cast<uint64_t>(step));
        PoseTrack track = sample_pose_track(cfg.model, cfg.rot_seq_frames, max_rad,
                                            w.config().max_translation, map_w, map_b, samp, 0.02);
        Tape tape;
        ParamBinding pb_gen(tape, params.generator, false);
        ParamBinding pb_critic(tape, params.critics, true);
        Tensor real = pose_leaf(tape, track.poses);
        Tensor fake = rotation_generator(cfg.model, pb_gen, track.embeddings);
        LocalCritic local(cfg.model, pb_critic);
        GlobalCritic global(cfg.model, pb_critic, track.embeddings);
        std::vector<Tensor> reals{real}, fakes{fake};
        auto t_local = losses::wgan_gp_losses(local, reals, fakes, lw.lambda_gp, gp_rng);
        auto t_global = losses::wgan_gp_losses(global, reals, fakes, lw.lambda_gp, gp_rng);
        Tensor loss = ad::add(t_local.critic_loss, t_global.critic_loss);
        tape.backward(loss);
        ParamVector grads = params.critics.same_layout_zeros();
        pb_critic.collect_grads(grads);
        grads.check_finite("critic gradient at step " + std::to_string(step));
        opt_critic.step(params.critics.values(), grads.values(), lr);
        double gp = t_local.gradient_penalty.scalar() + t_global.gradient_penalty.scalar();
        double d_real = local.score(real).scalar() + global.score(real).scalar();
        double d_fake = local.score(fake).scalar() + global.score(fake).scalar();
        hist.rows.push_back({static_cast<double>(step), 0.0, lr, loss.scalar(), 0.0, 0.0, 0.0,
                             gp, d_real, d_fake});
        ++step;
      }
    }

    Rng samp(cfg.seed, 5000000 + static_cast<uint64_t>(step));
    PoseTrack track = sample_pose_track(cfg.model, cfg.rot_seq_frames, max_rad,
                                        w.config().max_translation, map_w, map_b, samp, 0.02);
    Tape tape;
    ParamBinding pb_gen(tape, params.generator, true);
    ParamBinding pb_critic(tape, params.critics, false);
    Tensor fake = rotation_generator(cfg.model, pb_gen, track.embeddings);
    Tensor recon = losses::rotation_recon_loss(fake, track.poses, lw.lambda_rot, lw.lambda_trans);
    Tensor smooth = losses::smoothness_loss(fake);
    Tensor adv = tape.constant(0.0);
    if (adversarial) {
      LocalCritic local(cfg.model, pb_critic);
      GlobalCritic global(cfg.model, pb_critic, track.embeddings);
      adv = ad::neg(ad::add(local.score(fake), global.score(fake)));
    }
    Tensor loss = ad::add(
        ad::add(ad::mul_scalar(recon, lw.lambda_recons), ad::mul_scalar(adv, lw.lambda_adv)),
        ad::mul_scalar(smooth, lw.lambda_smooth));
    tape.backward(loss);
    ParamVector grads = params.generator.same_layout_zeros();
    pb_gen.collect_grads(grads);
    grads.check_finite("generator gradient at step " + std::to_string(step));
    opt_gen.step(params.generator.values(), grads.values(), lr);
    hist.rows.push_back({static_cast<double>(step), 1.0, lr, loss.scalar(), recon.scalar(),
                         smooth.scalar(), adv.scalar(), 0.0, 0.0, 0.0});
    ++step;
  }
  return {std::move(params), std::move(hist)};
}

ParamVector merge_rotgan(const RotGanParams& p) {
  ParamVector merged;
  for (const ParamVector* src : {&p.generator, &p.critics})
    for (const auto& s : src->segments()) {
      merged.add_segment(s.name, s.length);
      auto dst = merged.segment(s.name);
      auto v = src->segment(s.name);
      std::copy(v.begin(), v.end(), dst.begin());
    }
  return merged;
}

RotGanParams split_rotgan(const ParamVector& merged) {
  RotGanParams out;
  for (const auto& s : merged.segments()) {
    ParamVector& dst = s.name.rfind("gen.", 0) == 0 ? out.generator : out.critics;
    dst.add_segment(s.name, s.length);
    auto d = dst.segment(s.name);
    auto v = merged.segment(s.name);
    std::copy(v.begin(), v.end(), d.begin());
  }
  return out;
}

}  // namespace emo::train
