#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bap/autodiff.hpp"
#include "bap/raster.hpp"

namespace bap {

enum class Arch { PlantedLinear, Linear, Mlp, Cnn };

std::string arch_tag(Arch arch);
Arch parse_arch(const std::string& tag);

struct ImageShape {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;

  std::size_t flat() const { return height * width * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct PlantedConfig {
  std::uint64_t seed = 1;
  double alpha = 0.0;  // weight of the non-additive pooled-square branch
  std::string nonlinearity = "pool4-square";
  ImageShape image;
  std::size_t dim = 64;
};

inline constexpr std::size_t kMlpHidden = 256;
inline constexpr std::size_t kPhiPool = 4;

// Differentiable raster -> unit-norm embedding map.
//
// planted-linear and linear share one parameterization:
//   z = W vec(x) + alpha * P vec(avgpool4(x)^2)
// where the P branch exists only when alpha > 0. Only the planted teacher is
// built frozen; its unfrozen clone carries the tag "linear".
class EncoderModel {
 public:
  EncoderModel() = default;

  Arch arch() const { return arch_; }
  std::size_t dim() const { return dim_; }
  const ImageShape& image() const { return image_; }
  bool frozen() const { return frozen_; }
  std::uint64_t seed() const { return seed_; }
  double alpha() const { return alpha_; }

  // Pre-normalization output [B x d] for a batch [B x H x W x C].
  Var forward_raw(Tape& tape, const Tensor& batch);
  // Unit-norm embeddings [B x d].
  Var forward(Tape& tape, const Tensor& batch);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  // Empty for frozen models.
  std::vector<Parameter*> trainable();

  void freeze() { frozen_ = true; }

  // FNV-1a over the exact bytes of every parameter, in order.
  std::uint64_t checksum() const;

  friend EncoderModel planted_teacher(const PlantedConfig& cfg);
  friend EncoderModel make_student(Arch arch, std::size_t dim, ImageShape image, std::uint64_t seed);
  friend EncoderModel clone_unfrozen(const EncoderModel& teacher);
  friend EncoderModel load_encoder(const std::filesystem::path& path);

 private:
  void check_batch(const Tensor& batch) const;
  Parameter& param(const std::string& name);

  Arch arch_ = Arch::Linear;
  std::size_t dim_ = 0;
  ImageShape image_;
  bool frozen_ = false;
  std::uint64_t seed_ = 0;
  double alpha_ = 0.0;
  std::vector<Parameter> params_;
};

EncoderModel planted_teacher(const PlantedConfig& cfg);
EncoderModel make_student(Arch arch, std::size_t dim, ImageShape image, std::uint64_t seed);
EncoderModel clone_unfrozen(const EncoderModel& teacher);

// Inference helpers (no tape kept). Rows of the result are unit norm.
Tensor encode(EncoderModel& model, const Raster& image);
Tensor encode_batch(EncoderModel& model, const std::vector<Raster>& images,
                    std::size_t chunk = 128);
Tensor encode_batch(EncoderModel& model, std::span<const Raster* const> images,
                    std::size_t chunk = 128);

// `path` receives the BAPT parameter stream; a JSON header sits beside it at
// path + ".json".
void save_encoder(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_encoder(const std::filesystem::path& path);

}  // namespace bap
