#pragma once

// On-disk formats. Binary layouts are little-endian with fixed magics:
//   EMLZ  latent dump      u32 n, u32 d, n*d f64 row-major
//   EMFR  frame sequence   u32 t, u32 h, u32 w, t*h*w f64 pixels
//   EMCK  checkpoint       u32 version, segment table, f64 weights
//   EMMB  mouth basis      u32 d, u32 k, mean, components, eigenvalues
// CSV floats are written with %.17g so f64 values round-trip exactly.

#include <filesystem>
#include <string>
#include <vector>

#include "emo/latent_analysis.hpp"
#include "emo/numgrad.hpp"
#include "emo/rotation6d.hpp"
#include "emo/synthworld.hpp"

namespace emo::io {

std::string format_double(double v);

void write_latent_csv(const std::filesystem::path& path, const latent::LatentSet& z);
latent::LatentSet read_latent_csv(const std::filesystem::path& path);
void write_latent_bin(const std::filesystem::path& path, const latent::LatentSet& z);
latent::LatentSet read_latent_bin(const std::filesystem::path& path);
// dispatch on the EMLZ magic, falling back to CSV
latent::LatentSet read_latent_auto(const std::filesystem::path& path);

void write_spectrum_csv(const std::filesystem::path& path,
                        const std::vector<double>& eigenvalues,
                        const latent::SpectrumSummary& summary);
void write_spectrum_json(const std::filesystem::path& path,
                         const latent::SpectrumSummary& summary);

void write_pose_csv(const std::filesystem::path& path, const rot6d::PoseSequence& seq);
rot6d::PoseSequence read_pose_csv(const std::filesystem::path& path);

void write_frames_bin(const std::filesystem::path& path, const std::vector<world::ToyFace>& faces);
std::vector<std::vector<double>> read_frames_bin(const std::filesystem::path& path, int& h, int& w);
void write_landmarks_csv(const std::filesystem::path& path,
                         const std::vector<world::ToyFace>& faces);
void write_factors_csv(const std::filesystem::path& path,
                       const std::vector<world::FactorVector>& factors);

void write_checkpoint(const std::filesystem::path& path, const numgrad::ParamVector& params);
numgrad::ParamVector read_checkpoint(const std::filesystem::path& path);

void write_mouth_basis(const std::filesystem::path& path, const latent::MouthBasis& basis);
latent::MouthBasis read_mouth_basis(const std::filesystem::path& path);

void write_history_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
                       const std::vector<std::vector<double>>& rows);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);
uint64_t fnv1a_hash(const std::string& data);

}  // namespace emo::io
