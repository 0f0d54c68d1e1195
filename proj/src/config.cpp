#include "emo/config.hpp"

#include <json.hpp>

#include "emo/formats.hpp"

namespace emo::config {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

void parse_weights(const json& j, losses::LossWeights& w) {
  reject_unknown(j, {"w_in", "w_face", "w_gaze", "w_eyes", "w_mouth", "w_ears", "w_adv",
                     "w_fm", "w_cos", "sdm_weight_common", "sdm_weight_extreme",
                     "sdm_margin_common", "sdm_margin_extreme", "cosface_s", "cosface_m",
                     "w_cv", "w_l1", "w_face_sp", "w_pca", "w_vtr", "w_bce", "w_lips",
                     "lambda_rot", "lambda_trans", "lambda_recons", "lambda_adv",
                     "lambda_smooth", "lambda_gp"},
                 "weights.");
  get(j, "w_in", w.w_in);
  get(j, "w_face", w.w_face);
  get(j, "w_gaze", w.w_gaze);
  get(j, "w_eyes", w.w_eyes);
  get(j, "w_mouth", w.w_mouth);
  get(j, "w_ears", w.w_ears);
  get(j, "w_adv", w.w_adv);
  get(j, "w_fm", w.w_fm);
  get(j, "w_cos", w.w_cos);
  get(j, "sdm_weight_common", w.sdm_weight_common);
  get(j, "sdm_weight_extreme", w.sdm_weight_extreme);
  get(j, "sdm_margin_common", w.sdm_margin_common);
  get(j, "sdm_margin_extreme", w.sdm_margin_extreme);
  get(j, "cosface_s", w.cosface_s);
  get(j, "cosface_m", w.cosface_m);
  get(j, "w_cv", w.w_cv);
  get(j, "w_l1", w.w_l1);
  get(j, "w_face_sp", w.w_face_sp);
  get(j, "w_pca", w.w_pca);
  get(j, "w_vtr", w.w_vtr);
  get(j, "w_bce", w.w_bce);
  get(j, "w_lips", w.w_lips);
  get(j, "lambda_rot", w.lambda_rot);
  get(j, "lambda_trans", w.lambda_trans);
  get(j, "lambda_recons", w.lambda_recons);
  get(j, "lambda_adv", w.lambda_adv);
  get(j, "lambda_smooth", w.lambda_smooth);
  get(j, "lambda_gp", w.lambda_gp);
}

void parse_stage(const json& j, train::TrainConfig& cfg, const std::string& where) {
  reject_unknown(j, {"iterations", "batch_size", "lr_start", "lr_end", "weight_decay",
                     "z_dim", "dropout_rate", "clip_min_frames", "clip_max_frames",
                     "photo_frames_per_iter", "audio_noise_sigma", "critic_steps_per_gen",
                     "rot_seq_frames", "disable_cv", "disable_sdm",
                     "disable_extended_sampling", "disable_pca_loss", "plain_latent_mae"},
                 where);
  get(j, "iterations", cfg.iterations);
  get(j, "batch_size", cfg.batch_size);
  get(j, "lr_start", cfg.lr_start);
  get(j, "lr_end", cfg.lr_end);
  get(j, "weight_decay", cfg.weight_decay);
  get(j, "z_dim", cfg.model.z_dim);
  get(j, "dropout_rate", cfg.model.dropout_rate);
  get(j, "clip_min_frames", cfg.clip_min_frames);
  get(j, "clip_max_frames", cfg.clip_max_frames);
  get(j, "photo_frames_per_iter", cfg.photo_frames_per_iter);
  get(j, "audio_noise_sigma", cfg.audio_noise_sigma);
  get(j, "critic_steps_per_gen", cfg.critic_steps_per_gen);
  get(j, "rot_seq_frames", cfg.rot_seq_frames);
  get(j, "disable_cv", cfg.ablation.disable_cv);
  get(j, "disable_sdm", cfg.ablation.disable_sdm);
  get(j, "disable_extended_sampling", cfg.ablation.disable_extended_sampling);
  get(j, "disable_pca_loss", cfg.ablation.disable_pca_loss);
  get(j, "plain_latent_mae", cfg.ablation.plain_latent_mae);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"seed", "out_dir", "world", "base", "audio", "rotgan", "weights",
                     "distill", "arms"},
                 "");
  ExperimentConfig cfg;
  // stage defaults
  cfg.base.iterations = 2000;
  cfg.base.batch_size = 4;
  cfg.audio.iterations = 400;
  cfg.audio.lr_start = 1e-4;
  cfg.audio.lr_end = 1e-8;
  cfg.rotgan.iterations = 80;
  cfg.rotgan.lr_start = 1e-3;
  cfg.rotgan.lr_end = 1e-5;

  get(j, "seed", cfg.seed);
  get(j, "out_dir", cfg.out_dir);
  if (j.contains("world")) {
    const json& w = j.at("world");
    reject_unknown(w, {"image_size", "common_identities", "extreme_identities",
                       "extreme_fraction", "common_amplitude", "extreme_amplitude",
                       "max_rotation_deg", "max_translation", "audio_dim", "seed"},
                   "world.");
    get(w, "image_size", cfg.world.image_size);
    get(w, "common_identities", cfg.world.common_identities);
    get(w, "extreme_identities", cfg.world.extreme_identities);
    get(w, "extreme_fraction", cfg.world.extreme_fraction);
    get(w, "common_amplitude", cfg.world.common_amplitude);
    get(w, "extreme_amplitude", cfg.world.extreme_amplitude);
    get(w, "max_rotation_deg", cfg.world.max_rotation_deg);
    get(w, "max_translation", cfg.world.max_translation);
    get(w, "audio_dim", cfg.world.audio_dim);
    get(w, "seed", cfg.world.seed);
  }
  if (!j.contains("world") || !j.at("world").contains("seed")) cfg.world.seed = cfg.seed;
  if (j.contains("base")) parse_stage(j.at("base"), cfg.base, "base.");
  if (j.contains("audio")) parse_stage(j.at("audio"), cfg.audio, "audio.");
  if (j.contains("rotgan")) parse_stage(j.at("rotgan"), cfg.rotgan, "rotgan.");
  if (j.contains("weights")) {
    losses::LossWeights w;
    parse_weights(j.at("weights"), w);
    cfg.base.weights = w;
    cfg.audio.weights = w;
    cfg.rotgan.weights = w;
  }
  if (j.contains("distill")) {
    const json& d = j.at("distill");
    reject_unknown(d, {"frames", "components"}, "distill.");
    get(d, "frames", cfg.distill.frames);
    get(d, "components", cfg.distill.components);
  }
  if (j.contains("arms")) {
    for (const json& a : j.at("arms")) {
      reject_unknown(a, {"name", "disable_cv", "disable_sdm", "disable_extended_sampling",
                         "disable_pca_loss", "plain_latent_mae", "z_dim"},
                     "arms[].");
      ArmConfig arm;
      get(a, "name", arm.name);
      get(a, "disable_cv", arm.ablation.disable_cv);
      get(a, "disable_sdm", arm.ablation.disable_sdm);
      get(a, "disable_extended_sampling", arm.ablation.disable_extended_sampling);
      get(a, "disable_pca_loss", arm.ablation.disable_pca_loss);
      get(a, "plain_latent_mae", arm.ablation.plain_latent_mae);
      get(a, "z_dim", arm.z_dim);
      if (arm.name.empty()) throw ConfigError("every ablation arm needs a name");
      cfg.arms.push_back(arm);
    }
  }
  cfg.apply_seed(cfg.seed);
  cfg.base.validate();
  cfg.audio.validate();
  cfg.rotgan.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  return from_json(io::read_text_file(path));
}

void ExperimentConfig::apply_seed(uint64_t seed_override) {
  seed = seed_override;
  base.seed = seed_override;
  audio.seed = seed_override;
  rotgan.seed = seed_override;
  world.seed = world.seed == 0 ? seed_override : world.seed;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["world"] = {{"image_size", world.image_size},
                {"common_identities", world.common_identities},
                {"extreme_identities", world.extreme_identities},
                {"extreme_fraction", world.extreme_fraction},
                {"common_amplitude", world.common_amplitude},
                {"extreme_amplitude", world.extreme_amplitude},
                {"max_rotation_deg", world.max_rotation_deg},
                {"max_translation", world.max_translation},
                {"audio_dim", world.audio_dim},
                {"seed", world.seed}};
  auto stage = [](const train::TrainConfig& c) {
    return json{{"iterations", c.iterations},
                {"batch_size", c.batch_size},
                {"lr_start", c.lr_start},
                {"lr_end", c.lr_end},
                {"weight_decay", c.weight_decay},
                {"z_dim", c.model.z_dim},
                {"dropout_rate", c.model.dropout_rate},
                {"disable_cv", c.ablation.disable_cv},
                {"disable_sdm", c.ablation.disable_sdm},
                {"disable_extended_sampling", c.ablation.disable_extended_sampling},
                {"disable_pca_loss", c.ablation.disable_pca_loss},
                {"plain_latent_mae", c.ablation.plain_latent_mae}};
  };
  j["base"] = stage(base);
  j["audio"] = stage(audio);
  j["rotgan"] = stage(rotgan);
  j["distill"] = {{"frames", distill.frames}, {"components", distill.components}};
  json arms_json = json::array();
  for (const auto& a : arms)
    arms_json.push_back({{"name", a.name},
                         {"disable_cv", a.ablation.disable_cv},
                         {"disable_sdm", a.ablation.disable_sdm},
                         {"disable_extended_sampling", a.ablation.disable_extended_sampling},
                         {"disable_pca_loss", a.ablation.disable_pca_loss},
                         {"plain_latent_mae", a.ablation.plain_latent_mae},
                         {"z_dim", a.z_dim}});
  j["arms"] = arms_json;
  return j.dump(2);
}

}  // namespace emo::config
