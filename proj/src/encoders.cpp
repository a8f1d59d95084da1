#include "bap/encoders.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "bap/bapt_io.hpp"
#include "bap/error.hpp"
#include "bap/rng.hpp"
#include "json.hpp"

namespace bap {

namespace {

Tensor gaussian(Shape shape, Rng& rng, double sd) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) {
    v = static_cast<float>(rng.normal(0.0, sd));
  }
  return t;
}

std::size_t phi_dim(const ImageShape& s) {
  return (s.height / kPhiPool) * (s.width / kPhiPool) * s.channels;
}

// Spatial extent after three stride-2, pad-1, 3x3 convolutions.
std::size_t cnn_out(std::size_t n) {
  for (int i = 0; i < 3; ++i) {
    n = (n + 2 - 3) / 2 + 1;
  }
  return n;
}

constexpr std::size_t kCnnChannels[3] = {16, 32, 32};

}  // namespace

std::string arch_tag(Arch arch) {
  switch (arch) {
    case Arch::PlantedLinear:
      return "planted-linear";
    case Arch::Linear:
      return "linear";
    case Arch::Mlp:
      return "mlp";
    case Arch::Cnn:
      return "cnn";
  }
  return "?";
}

Arch parse_arch(const std::string& tag) {
  if (tag == "planted-linear") return Arch::PlantedLinear;
  if (tag == "linear") return Arch::Linear;
  if (tag == "mlp") return Arch::Mlp;
  if (tag == "cnn") return Arch::Cnn;
  throw ConfigError("unknown encoder architecture '" + tag + "'");
}

EncoderModel planted_teacher(const PlantedConfig& cfg) {
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha)) {
    throw ConfigError("planted teacher needs alpha >= 0");
  }
  if (cfg.nonlinearity != "pool4-square") {
    throw ConfigError("unsupported planted nonlinearity '" + cfg.nonlinearity + "'");
  }
  if (cfg.image.height % kPhiPool != 0 || cfg.image.width % kPhiPool != 0) {
    throw ConfigError("planted teacher needs extents divisible by 4");
  }
  EncoderModel m;
  m.arch_ = Arch::PlantedLinear;
  m.dim_ = cfg.dim;
  m.image_ = cfg.image;
  m.frozen_ = true;
  m.seed_ = cfg.seed;
  m.alpha_ = cfg.alpha;
  Rng rng(stable_hash({cfg.seed, 0x706c616e74ULL}));
  const std::size_t flat = cfg.image.flat();
  m.params_.push_back({"W", gaussian({cfg.dim, flat}, rng, 1.0 / std::sqrt(double(flat))), {}});
  if (cfg.alpha > 0.0) {
    const std::size_t pd = phi_dim(cfg.image);
    m.params_.push_back({"P", gaussian({cfg.dim, pd}, rng, 1.0 / std::sqrt(double(pd))), {}});
  }
  return m;
}

EncoderModel make_student(Arch arch, std::size_t dim, ImageShape image, std::uint64_t seed) {
  if (arch == Arch::PlantedLinear) {
    throw ConfigError("make_student: planted-linear is a teacher-only architecture");
  }
  EncoderModel m;
  m.arch_ = arch;
  m.dim_ = dim;
  m.image_ = image;
  m.seed_ = seed;
  Rng rng(stable_hash({seed, static_cast<std::uint64_t>(arch), 0x73747564ULL}));
  const std::size_t flat = image.flat();
  switch (arch) {
    case Arch::Linear:
      m.params_.push_back({"W", gaussian({dim, flat}, rng, 1.0 / std::sqrt(double(flat))), {}});
      break;
    case Arch::Mlp:
      m.params_.push_back({"fc1.weight", gaussian({kMlpHidden, flat}, rng, std::sqrt(2.0 / flat)), {}});
      m.params_.push_back({"fc1.bias", Tensor({kMlpHidden}), {}});
      m.params_.push_back({"fc2.weight", gaussian({dim, kMlpHidden}, rng, 1.0 / std::sqrt(double(kMlpHidden))), {}});
      m.params_.push_back({"fc2.bias", Tensor({dim}), {}});
      break;
    case Arch::Cnn: {
      std::size_t cin = image.channels;
      for (int i = 0; i < 3; ++i) {
        const std::size_t fan_in = 9 * cin;
        const std::string prefix = "conv" + std::to_string(i + 1);
        m.params_.push_back({prefix + ".weight", gaussian({kCnnChannels[i], fan_in}, rng, std::sqrt(2.0 / fan_in)), {}});
        m.params_.push_back({prefix + ".bias", Tensor({kCnnChannels[i]}), {}});
        cin = kCnnChannels[i];
      }
      const std::size_t feat = cnn_out(image.height) * cnn_out(image.width) * cin;
      m.params_.push_back({"head.weight", gaussian({dim, feat}, rng, 1.0 / std::sqrt(double(feat))), {}});
      m.params_.push_back({"head.bias", Tensor({dim}), {}});
      break;
    }
    case Arch::PlantedLinear:
      break;
  }
  return m;
}

EncoderModel clone_unfrozen(const EncoderModel& teacher) {
  EncoderModel m = teacher;
  m.frozen_ = false;
  if (m.arch_ == Arch::PlantedLinear) {
    m.arch_ = Arch::Linear;
  }
  for (Parameter& p : m.params_) {
    p.grad = Tensor();
  }
  return m;
}

void EncoderModel::check_batch(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != image_.height || batch.dim(2) != image_.width ||
      batch.dim(3) != image_.channels) {
    throw DimensionError("encoder expects [B x " + std::to_string(image_.height) + " x " +
                         std::to_string(image_.width) + " x " + std::to_string(image_.channels) +
                         "], got " + shape_str(batch.shape()));
  }
}

Parameter& EncoderModel::param(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name == name) {
      return p;
    }
  }
  throw ManifestError("encoder has no parameter '" + name + "'");
}

Var EncoderModel::forward_raw(Tape& tape, const Tensor& batch) {
  check_batch(batch);
  auto leaf = [&](const std::string& name) {
    Parameter& p = param(name);
    return frozen_ ? tape.constant_view(p.value) : tape.parameter(p);
  };
  const std::size_t b = batch.dim(0);
  switch (arch_) {
    case Arch::PlantedLinear:
    case Arch::Linear: {
      Var flat = tape.constant(batch.reshaped({b, image_.flat()}));
      Var z = linear(flat, leaf("W"));
      if (alpha_ > 0.0) {
        Var pooled = avg_pool(tape.constant_view(batch), kPhiPool);
        Var phi = reshape(square(pooled), {b, phi_dim(image_)});
        z = add(z, scale(linear(phi, leaf("P")), static_cast<float>(alpha_)));
      }
      return z;
    }
    case Arch::Mlp: {
      Var flat = tape.constant(batch.reshaped({b, image_.flat()}));
      Var h = gelu(add_bias(linear(flat, leaf("fc1.weight")), leaf("fc1.bias")));
      return add_bias(linear(h, leaf("fc2.weight")), leaf("fc2.bias"));
    }
    case Arch::Cnn: {
      Var h = tape.constant_view(batch);
      for (int i = 0; i < 3; ++i) {
        const std::string prefix = "conv" + std::to_string(i + 1);
        h = gelu(conv2d(h, leaf(prefix + ".weight"), leaf(prefix + ".bias"), 3, 2, 1));
      }
      const std::size_t feat = h.value().numel() / b;
      h = reshape(h, {b, feat});
      return add_bias(linear(h, leaf("head.weight")), leaf("head.bias"));
    }
  }
  throw ContractError("unreachable architecture");
}

Var EncoderModel::forward(Tape& tape, const Tensor& batch) {
  return l2_normalize_rows(forward_raw(tape, batch));
}

std::vector<Parameter*> EncoderModel::trainable() {
  std::vector<Parameter*> out;
  if (!frozen_) {
    for (Parameter& p : params_) {
      out.push_back(&p);
    }
  }
  return out;
}

std::uint64_t EncoderModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : params_) {
    for (float v : p.value.data()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) {
        h ^= (bits >> (8 * k)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

Tensor encode(EncoderModel& model, const Raster& image) {
  const Raster* one[] = {&image};
  Tensor out = encode_batch(model, one);
  return out.reshaped({model.dim()});
}

Tensor encode_batch(EncoderModel& model, std::span<const Raster* const> images, std::size_t chunk) {
  if (images.empty()) {
    throw DimensionError("encode_batch: no images");
  }
  const std::size_t d = model.dim();
  Tensor out({images.size(), d});
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t n = std::min(chunk, images.size() - start);
    for (std::size_t i = 0; i < n; ++i) {
      const Raster& r = *images[start + i];
      if (r.height != model.image().height || r.width != model.image().width ||
          r.channels != model.image().channels) {
        throw DimensionError("encode: raster extents do not match the encoder");
      }
    }
    Tensor batch = stack_rasters(images.subspan(start, n));
    Tape tape(false);
    Var z = model.forward(tape, batch);
    std::copy(z.value().data().begin(), z.value().data().end(), out.data().begin() + start * d);
  }
  return out;
}

Tensor encode_batch(EncoderModel& model, const std::vector<Raster>& images, std::size_t chunk) {
  std::vector<const Raster*> ptrs;
  ptrs.reserve(images.size());
  for (const Raster& r : images) {
    ptrs.push_back(&r);
  }
  return encode_batch(model, ptrs, chunk);
}

void save_encoder(const EncoderModel& model, const std::filesystem::path& path) {
  std::vector<Tensor> tensors;
  nlohmann::json names = nlohmann::json::array();
  for (const Parameter& p : model.params()) {
    tensors.push_back(p.value);
    names.push_back(p.name);
  }
  save_bapt(path, tensors);
  nlohmann::json header = {
      {"arch", arch_tag(model.arch())},
      {"d", model.dim()},
      {"height", model.image().height},
      {"width", model.image().width},
      {"channels", model.image().channels},
      {"seed", model.seed()},
      {"alpha", model.alpha()},
      {"frozen", model.frozen()},
      {"params", names},
  };
  std::ofstream out(path.string() + ".json");
  if (!out) {
    throw IoError("cannot write encoder header for " + path.string());
  }
  out << header.dump(2) << "\n";
}

EncoderModel load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) {
    throw IoError("missing encoder header " + path.string() + ".json");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad encoder header: ") + e.what());
  }
  EncoderModel m;
  m.arch_ = parse_arch(header.at("arch").get<std::string>());
  m.dim_ = header.at("d").get<std::size_t>();
  m.image_ = {header.at("height").get<std::size_t>(), header.at("width").get<std::size_t>(),
              header.at("channels").get<std::size_t>()};
  m.seed_ = header.at("seed").get<std::uint64_t>();
  m.alpha_ = header.at("alpha").get<double>();
  m.frozen_ = header.at("frozen").get<bool>();
  std::vector<Tensor> tensors = load_bapt(path);
  const auto& names = header.at("params");
  if (names.size() != tensors.size()) {
    throw IoError("encoder header lists " + std::to_string(names.size()) + " parameters, stream has " +
                  std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    m.params_.push_back({names[i].get<std::string>(), std::move(tensors[i]), {}});
  }
  return m;
}

}  // namespace bap
