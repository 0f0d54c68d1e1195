// Batch experiment runner: world generation, latent-spectrum analysis, the
// three training stages, mouth-basis distillation, evaluation and seed-matched
// ablation tables.

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "emo/config.hpp"
#include "emo/evalkit.hpp"
#include "emo/formats.hpp"
#include "emo/latent_analysis.hpp"
#include "emo/synthworld.hpp"
#include "emo/toytrain.hpp"

namespace fs = std::filesystem;
using namespace emo;

namespace {

constexpr const char* kVersion = "0.1.0";

// exit codes per error class
enum ExitCode {
  kOk = 0,
  kOtherError = 1,
  kConfigError = 2,
  kFormatError = 3,
  kPrerequisiteError = 4,
  kDivergenceError = 5,
};

int worker_threads() {
  if (const char* env = std::getenv("EMOLATENT_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

struct Manifest {
  std::string command;
  uint64_t config_hash = 0;
  std::vector<std::string> files;
  double wall_clock_sec = 0.0;

  void write(const fs::path& dir) const {
    nlohmann::json j;
    j["tool_version"] = kVersion;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["files"] = files;
    j["wall_clock_sec"] = wall_clock_sec;
    for (const auto& f : files)
      if (!fs::exists(dir / f)) throw FormatError("manifest references missing file " + f, 0);
    io::write_text_file(dir / "manifest.json", j.dump(2) + "\n");
  }
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

config::ExperimentConfig load_config(const std::string& path, uint64_t seed, bool seed_given) {
  config::ExperimentConfig cfg = config::ExperimentConfig::from_file(path);
  if (seed_given) cfg.apply_seed(seed);
  return cfg;
}

int cmd_gen_world(const config::ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  fs::create_directories(out);
  world::World w(cfg.world);
  Manifest manifest{"gen-world", io::fnv1a_hash(cfg.to_json()), {}, 0.0};

  // demo sequence from the first common identity
  Rng rng(cfg.seed, 11);
  auto seq = w.mouth_only_sequence(world::Pool::common, 0, 48, rng);
  std::vector<world::ToyFace> faces;
  std::vector<world::FactorVector> factors;
  for (auto& s : seq) {
    faces.push_back(std::move(s.face));
    factors.push_back(s.factors);
  }
  io::write_frames_bin(out / "frames.bin", faces);
  io::write_landmarks_csv(out / "landmarks.csv", faces);
  io::write_factors_csv(out / "factors.csv", factors);
  manifest.files = {"frames.bin", "landmarks.csv", "factors.csv"};

  nlohmann::json summary;
  summary["seed"] = cfg.world.seed;
  summary["common_identities"] = cfg.world.common_identities;
  summary["extreme_identities"] = cfg.world.extreme_identities;
  summary["extreme_fraction"] = cfg.world.extreme_fraction;
  summary["image_size"] = cfg.world.image_size;
  io::write_text_file(out / "world_summary.json", summary.dump(2) + "\n");
  manifest.files.push_back("world_summary.json");

  manifest.wall_clock_sec = timer.elapsed();
  manifest.write(out);
  return kOk;
}

int cmd_analyze(const fs::path& input, const fs::path& out) {
  Timer timer;
  fs::create_directories(out);
  latent::LatentSet z = io::read_latent_auto(input);
  auto [model, summary] = latent::pca_spectrum(z);
  Manifest manifest{"analyze", io::fnv1a_hash(input.string()), {}, 0.0};
  io::write_spectrum_csv(out / "spectrum.csv", model.eigenvalues, summary);
  io::write_spectrum_json(out / "spectrum.json", summary);
  manifest.files = {"spectrum.csv", "spectrum.json"};
  manifest.wall_clock_sec = timer.elapsed();
  manifest.write(out);
  std::cout << "auc_z " << io::format_double(summary.auc_z) << "\n";
  return kOk;
}

int cmd_train(const config::ExperimentConfig& cfg, const std::string& stage, const fs::path& out,
              const std::string& base_ckpt, const std::string& basis_path) {
  Timer timer;
  fs::create_directories(out);
  world::World w(cfg.world);
  Manifest manifest{"train-" + stage, io::fnv1a_hash(cfg.to_json()), {}, 0.0};

  if (stage == "base") {
    auto [params, history] = train::train_base(w, cfg.base);
    io::write_checkpoint(out / "base.ckpt", params);
    io::write_history_csv(out / "history_base.csv", history.columns, history.rows);
    manifest.files = {"base.ckpt", "history_base.csv"};
  } else if (stage == "audio") {
    if (base_ckpt.empty())
      throw PrerequisiteError("missing prerequisite for stage audio: --checkpoint (base)");
    if (basis_path.empty())
      throw PrerequisiteError("missing prerequisite for stage audio: --basis");
    numgrad::ParamVector base = io::read_checkpoint(base_ckpt);
    latent::MouthBasis basis = io::read_mouth_basis(basis_path);
    auto [params, history] = train::train_audio(w, base, basis, cfg.audio);
    io::write_checkpoint(out / "audio.ckpt", params);
    io::write_history_csv(out / "history_audio.csv", history.columns, history.rows);
    manifest.files = {"audio.ckpt", "history_audio.csv"};
  } else if (stage == "rotgan") {
    auto [params, history] = train::train_rotation_gan(w, cfg.rotgan);
    io::write_checkpoint(out / "rotgan.ckpt", train::merge_rotgan(params));
    io::write_history_csv(out / "history_rotgan.csv", history.columns, history.rows);
    manifest.files = {"rotgan.ckpt", "history_rotgan.csv"};
  } else {
    throw ConfigError("unknown training stage '" + stage + "'");
  }
  manifest.wall_clock_sec = timer.elapsed();
  manifest.write(out);
  return kOk;
}

int cmd_distill(const config::ExperimentConfig& cfg, const std::string& base_ckpt,
                const fs::path& out) {
  Timer timer;
  if (base_ckpt.empty()) throw PrerequisiteError("missing prerequisite for distill: --checkpoint");
  fs::create_directories(out);
  world::World w(cfg.world);
  numgrad::ParamVector base = io::read_checkpoint(base_ckpt);
  Manifest manifest{"distill", io::fnv1a_hash(cfg.to_json()), {}, 0.0};

  Rng rng(cfg.seed, 21);
  auto seq = w.mouth_only_sequence(world::Pool::common, 0, cfg.distill.frames, rng);
  latent::LatentSet z_m;
  z_m.d = cfg.base.model.z_dim;
  for (const auto& s : seq) {
    auto z = train::teacher_latent(cfg.base.model, base, s.face);
    z_m.data.insert(z_m.data.end(), z.begin(), z.end());
    ++z_m.n;
  }
  io::write_latent_bin(out / "mouth_latents.bin", z_m);
  latent::MouthBasis basis = latent::distill_mouth_basis(z_m, cfg.distill.components);
  io::write_mouth_basis(out / "mouth_basis.emmb", basis);
  manifest.files = {"mouth_latents.bin", "mouth_basis.emmb"};

  auto [model, summary] = latent::covariance_spectrum(z_m);
  (void)model;
  io::write_spectrum_json(out / "mouth_spectrum.json", summary);
  manifest.files.push_back("mouth_spectrum.json");

  manifest.wall_clock_sec = timer.elapsed();
  manifest.write(out);
  return kOk;
}

int cmd_eval(const config::ExperimentConfig& cfg, const std::string& base_ckpt,
             const std::string& audio_ckpt, const fs::path& out) {
  Timer timer;
  if (base_ckpt.empty()) throw PrerequisiteError("missing prerequisite for eval: --checkpoint");
  fs::create_directories(out);
  world::World w(cfg.world);
  numgrad::ParamVector base = io::read_checkpoint(base_ckpt);
  Manifest manifest{"eval", io::fnv1a_hash(cfg.to_json()), {}, 0.0};

  evalkit::EvalReport report = evalkit::evaluate_base(cfg.base.model, base, w, 256, cfg.seed);
  if (!audio_ckpt.empty()) {
    numgrad::ParamVector audio = io::read_checkpoint(audio_ckpt);
    auto m = evalkit::audio_mode_metrics(cfg.base.model, base, &audio, w, 4, 64, cfg.seed + 17,
                                         cfg.audio.audio_noise_sigma);
    report.m_p = m.m_p;
    report.m_v = m.m_v;
    report.f_p = m.f_p;
    report.f_v = m.f_v;
    report.has_landmark_metrics = true;
  }
  io::write_text_file(out / "eval_report.json", report.to_json() + "\n");
  evalkit::AblationTable single;
  single.names = {"model"};
  single.reports = {report};
  io::write_text_file(out / "eval_report.csv", single.to_csv());
  manifest.files = {"eval_report.json", "eval_report.csv"};
  manifest.wall_clock_sec = timer.elapsed();
  manifest.write(out);
  std::cout << single.to_text();
  return kOk;
}

int cmd_ablate(const config::ExperimentConfig& cfg, const std::vector<std::string>& only,
               const fs::path& out) {
  Timer timer;
  fs::create_directories(out);
  world::World w(cfg.world);
  Manifest manifest{"ablate", io::fnv1a_hash(cfg.to_json()), {}, 0.0};

  std::vector<config::ArmConfig> arms = cfg.arms;
  if (arms.empty()) throw ConfigError("ablate: config has no arms");
  if (!only.empty()) {
    std::vector<config::ArmConfig> filtered;
    for (const auto& name : only) {
      bool found = false;
      for (const auto& a : arms)
        if (a.name == name) {
          filtered.push_back(a);
          found = true;
        }
      if (!found) throw ConfigError("ablate: unknown arm '" + name + "'");
    }
    arms = filtered;
  }

  std::vector<evalkit::ArmSpec> specs(arms.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= arms.size() || failed.load()) return;
      try {
        train::TrainConfig tc = cfg.base;
        tc.ablation = arms[i].ablation;
        if (arms[i].z_dim > 0) tc.model.z_dim = arms[i].z_dim;
        auto [params, history] = train::train_base(w, tc);
        (void)history;
        specs[i] = {arms[i].name, std::move(params), tc};
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        error_message = e.what();
        failed.store(true);
      }
    }
  };
  int n_threads = std::min<int>(worker_threads(), static_cast<int>(arms.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failed.load()) throw std::runtime_error("ablation arm failed: " + error_message);

  evalkit::AblationTable table = evalkit::ablation_report(specs, w);
  io::write_text_file(out / "ablation.txt", table.to_text());
  io::write_text_file(out / "ablation.csv", table.to_csv());
  io::write_text_file(out / "ablation.json", table.to_json() + "\n");
  manifest.files = {"ablation.txt", "ablation.csv", "ablation.json"};
  for (size_t i = 0; i < specs.size(); ++i) {
    std::string name = "arm_" + specs[i].name + ".ckpt";
    io::write_checkpoint(out / name, specs[i].base_params);
    manifest.files.push_back(name);
  }
  manifest.wall_clock_sec = timer.elapsed();
  manifest.write(out);
  std::cout << table.to_text();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emolatent: toy-scale latent-expression laboratory"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir, input_path, stage, base_ckpt, basis_path, audio_ckpt;
  std::vector<std::string> arm_names;
  uint64_t seed = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "seed override")
        ->each([&seed_given](const std::string&) { seed_given = true; });
  };

  CLI::App* gen = app.add_subcommand("gen-world", "render world samples and summary");
  add_common(gen);
  CLI::App* analyze = app.add_subcommand("analyze", "latent dump -> spectrum report");
  analyze->add_option("--input", input_path, "latent dump (CSV or EMLZ)")->required();
  analyze->add_option("--out", out_dir, "output directory");
  CLI::App* tr = app.add_subcommand("train", "train a stage");
  add_common(tr);
  tr->add_option("--stage", stage, "base|audio|rotgan")->required();
  tr->add_option("--checkpoint", base_ckpt, "base checkpoint (audio stage)");
  tr->add_option("--basis", basis_path, "mouth basis file (audio stage)");
  CLI::App* dist = app.add_subcommand("distill", "distill the mouth basis");
  add_common(dist);
  dist->add_option("--checkpoint", base_ckpt, "base checkpoint")->required();
  CLI::App* ev = app.add_subcommand("eval", "evaluate checkpoints");
  add_common(ev);
  ev->add_option("--checkpoint", base_ckpt, "base checkpoint")->required();
  ev->add_option("--audio-checkpoint", audio_ckpt, "audio checkpoint (optional)");
  CLI::App* ab = app.add_subcommand("ablate", "train and evaluate ablation arms");
  add_common(ab);
  ab->add_option("--arm", arm_names, "subset of arm names to run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) return cmd_analyze(input_path, out_dir.empty() ? "out" : out_dir);
    auto cfg = load_config(config_path, seed, seed_given);
    fs::path out = out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir);
    if (gen->parsed()) return cmd_gen_world(cfg, out);
    if (tr->parsed()) return cmd_train(cfg, stage, out, base_ckpt, basis_path);
    if (dist->parsed()) return cmd_distill(cfg, base_ckpt, out);
    if (ev->parsed()) return cmd_eval(cfg, base_ckpt, audio_ckpt, out);
    if (ab->parsed()) return cmd_ablate(cfg, arm_names, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormatError;
  } catch (const PrerequisiteError& e) {
    std::cerr << "prerequisite error: " << e.what() << "\n";
    return kPrerequisiteError;
  } catch (const NumericalDivergence& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kDivergenceError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOtherError;
  }
  return kOk;
}
