#include "bap/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bap/bapt_io.hpp"
#include "bap/error.hpp"
#include "bap/rng.hpp"
#include "json.hpp"

namespace bap {

namespace {

std::vector<double> row_mean(const Tensor& rows, std::span<const std::size_t> which) {
  const std::size_t d = rows.dim(1);
  std::vector<double> acc(d, 0.0);
  for (std::size_t r : which) {
    const auto row = rows.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      acc[j] += row[j];
    }
  }
  for (double& v : acc) {
    v /= static_cast<double>(which.size());
  }
  return acc;
}

Tensor normalized(const std::vector<double>& v, const char* what) {
  double n = 0.0;
  for (double x : v) {
    n += x * x;
  }
  n = std::sqrt(n);
  if (!(n > kMinNorm)) {
    throw DegenerateInputError(std::string(what) + ": mean vector is zero");
  }
  Tensor out({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(v[i] / n);
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = i;
  }
  return v;
}

}  // namespace

Tensor anchor_from_embeddings(const Tensor& embeddings) {
  if (embeddings.rank() != 2) {
    throw DimensionError("anchor_from_embeddings expects [K x d]");
  }
  const auto all = iota(embeddings.dim(0));
  return normalized(row_mean(embeddings, all), "anchor");
}

std::vector<std::size_t> anchor_background_indices(std::size_t pool_size, std::size_t K, std::uint64_t seed) {
  if (K == 0) {
    throw ConfigError("K must be >= 1");
  }
  if (pool_size == 0) {
    throw ConfigError("background pool is empty");
  }
  Rng rng(seed);
  if (pool_size >= K) {
    return rng.sample_without_replacement(pool_size, K);
  }
  std::vector<std::size_t> out(K);
  for (std::size_t& i : out) {
    i = rng.below(pool_size);
  }
  return out;
}

Tensor anchor_embeddings(EncoderModel& teacher, const ForegroundInstance& fg, std::span<const BackgroundImage> pool,
                         std::size_t K, std::uint64_t seed, Degradation degradation) {
  const auto idx = anchor_background_indices(pool.size(), K, seed);
  std::vector<Raster> composites;
  composites.reserve(K);
  for (std::size_t i : idx) {
    composites.push_back(composite(fg, pool[i], kAnchorScale, Placement::Center, 0, degradation).raster);
  }
  return encode_batch(teacher, composites);
}

Tensor extract_anchor(EncoderModel& teacher, const ForegroundInstance& fg, std::span<const BackgroundImage> pool,
                      std::size_t K, std::uint64_t seed, Degradation degradation) {
  return anchor_from_embeddings(anchor_embeddings(teacher, fg, pool, K, seed, degradation));
}

const Tensor& AnchorSet::at(std::uint64_t fg_id) const {
  auto it = anchors.find(fg_id);
  if (it == anchors.end()) {
    throw ManifestError("no anchor for foreground " + std::to_string(fg_id));
  }
  return it->second;
}

AnchorSet extract_anchors(EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                          std::span<const BackgroundImage> pool, std::size_t K, std::uint64_t seed,
                          std::uint64_t pool_id, Degradation degradation) {
  AnchorSet set;
  set.K = K;
  set.teacher_tag = arch_tag(teacher.arch()) + ":" + std::to_string(teacher.seed());
  set.pool_id = pool_id;
  set.with_replacement = pool.size() < K;
  for (const ForegroundInstance* fg : foregrounds) {
    try {
      set.anchors[fg->id] = extract_anchor(teacher, *fg, pool, K, stable_hash({seed, fg->id}), degradation);
    } catch (const DegenerateMaskError&) {
      set.skipped.push_back(fg->id);
    }
  }
  return set;
}

void save_anchors(const AnchorSet& set, const std::filesystem::path& path) {
  std::vector<Tensor> tensors;
  std::ofstream meta(path.string() + ".jsonl", std::ios::trunc);
  if (!meta) {
    throw IoError("cannot write anchor manifest for " + path.string());
  }
  for (const auto& [id, a] : set.anchors) {
    tensors.push_back(a);
    nlohmann::ordered_json j;
    j["fg_id"] = id;
    j["K"] = set.K;
    j["teacher_tag"] = set.teacher_tag;
    j["pool_id"] = set.pool_id;
    j["with_replacement"] = set.with_replacement;
    meta << j.dump() << "\n";
  }
  save_bapt(path, tensors);
}

AnchorSet load_anchors(const std::filesystem::path& path) {
  const std::vector<Tensor> tensors = load_bapt(path);
  std::ifstream meta(path.string() + ".jsonl");
  if (!meta) {
    throw IoError("cannot read anchor manifest for " + path.string());
  }
  AnchorSet set;
  std::string line;
  std::size_t i = 0;
  while (std::getline(meta, line)) {
    if (line.empty()) {
      continue;
    }
    if (i >= tensors.size()) {
      throw ManifestError("anchor manifest lists more anchors than " + path.string() + " holds");
    }
    try {
      const auto j = nlohmann::json::parse(line);
      set.K = j.at("K").get<std::size_t>();
      set.teacher_tag = j.at("teacher_tag").get<std::string>();
      set.pool_id = j.at("pool_id").get<std::uint64_t>();
      set.with_replacement = j.at("with_replacement").get<bool>();
      set.anchors[j.at("fg_id").get<std::uint64_t>()] = tensors[i++];
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(std::string("anchor manifest: ") + e.what());
    }
  }
  if (i != tensors.size()) {
    throw ManifestError("anchor manifest and tensor file disagree in " + path.string());
  }
  return set;
}

double BackgroundMean::norm() const {
  double s = 0.0;
  for (double v : mu) {
    s += v * v;
  }
  return std::sqrt(s);
}

BackgroundMean mean_of_rows(const Tensor& embeddings) {
  BackgroundMean m;
  const auto all = iota(embeddings.dim(0));
  m.mu = row_mean(embeddings, all);
  m.count = embeddings.dim(0);
  return m;
}

BackgroundMean estimate_mu_bg(EncoderModel& teacher, std::span<const BackgroundImage> pool, std::size_t n_samples,
                              std::uint64_t seed) {
  if (n_samples == 0) {
    throw ConfigError("estimate_mu_bg needs n >= 1");
  }
  const auto idx = anchor_background_indices(pool.size(), n_samples, seed);
  std::vector<const Raster*> rasters;
  for (std::size_t i : idx) {
    rasters.push_back(&pool[i].raster);
  }
  return mean_of_rows(encode_batch(teacher, rasters));
}

double residual_variance(const Tensor& bg_embeddings, std::size_t K, std::size_t trials, const BackgroundMean& mu,
                         std::uint64_t seed, bool allow_replacement) {
  if (trials < 2) {
    throw ConfigError("residual_variance needs at least two trials");
  }
  const std::size_t n = bg_embeddings.dim(0);
  if (K > n && !allow_replacement) {
    throw ConfigError("K = " + std::to_string(K) + " exceeds the background pool of " + std::to_string(n));
  }
  if (mu.mu.size() != bg_embeddings.dim(1)) {
    throw DimensionError("residual_variance: mu dimension mismatch");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto idx = anchor_background_indices(n, K, stable_hash({seed, K, t}));
    const auto mean = row_mean(bg_embeddings, idx);
    double sq = 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double e = mean[j] - mu.mu[j];
      sq += e * e;
    }
    total += sq;
  }
  return total / static_cast<double>(trials);
}

double residual_variance(EncoderModel& teacher, std::span<const BackgroundImage> pool, std::size_t K,
                         std::size_t trials, const BackgroundMean& mu, std::uint64_t seed, bool allow_replacement) {
  std::vector<const Raster*> rasters;
  for (const BackgroundImage& b : pool) {
    rasters.push_back(&b.raster);
  }
  return residual_variance(encode_batch(teacher, rasters), K, trials, mu, seed, allow_replacement);
}

std::vector<Tensor> class_prototypes(EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                                     std::size_t num_classes, std::size_t per_class) {
  std::vector<Tensor> out;
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    std::vector<Raster> iso;
    for (const ForegroundInstance* fg : foregrounds) {
      if (fg->y == c && iso.size() < per_class) {
        iso.push_back(isolate_on_canvas(*fg, kAnchorScale));
      }
    }
    if (iso.empty()) {
      throw ConfigError("no exemplars for class " + std::to_string(c));
    }
    out.push_back(anchor_from_embeddings(encode_batch(teacher, iso)));
  }
  return out;
}

std::vector<Tensor> group_prototypes(EncoderModel& teacher, std::span<const BackgroundImage> backgrounds,
                                     std::size_t num_groups) {
  std::vector<Tensor> out;
  for (std::uint32_t g = 0; g < num_groups; ++g) {
    std::vector<const Raster*> rasters;
    for (const BackgroundImage& b : backgrounds) {
      if (b.g == g) {
        rasters.push_back(&b.raster);
      }
    }
    if (rasters.empty()) {
      throw ConfigError("no backgrounds for group " + std::to_string(g));
    }
    out.push_back(anchor_from_embeddings(encode_batch(teacher, rasters)));
  }
  return out;
}

KSweepReport k_sweep(EncoderModel& teacher, std::span<const ForegroundInstance* const> foregrounds,
                     std::span<const BackgroundImage> pool, std::span<const std::size_t> K_grid,
                     const Prototypes& prototypes, const Tensor& pool_embeddings, const BackgroundMean& mu,
                     std::size_t var_trials, std::uint64_t seed) {
  if (K_grid.empty()) {
    throw ConfigError("k_sweep: empty K grid");
  }
  if (!std::is_sorted(K_grid.begin(), K_grid.end()) || K_grid.front() == 0) {
    throw ConfigError("k_sweep: K grid must be ascending and positive");
  }
  KSweepReport r;
  r.Ks.assign(K_grid.begin(), K_grid.end());
  const std::size_t nk = K_grid.size();
  r.fg_sim_each.assign(nk, {});
  r.bg_sim_max_each.assign(nk, {});
  const std::size_t kmax = K_grid.back();
  for (const ForegroundInstance* fg : foregrounds) {
    if (fg->y >= prototypes.classes.size()) {
      throw ConfigError("k_sweep: no prototype for class " + std::to_string(fg->y));
    }
    const Tensor emb = anchor_embeddings(teacher, *fg, pool, kmax, stable_hash({seed, fg->id}));
    for (std::size_t ki = 0; ki < nk; ++ki) {
      const auto prefix = iota(K_grid[ki]);
      const Tensor a = normalized(row_mean(emb, prefix), "anchor");
      r.fg_sim_each[ki].push_back(cosine_sim(a, prototypes.classes[fg->y]));
      double best = -1.0;
      for (const Tensor& g : prototypes.groups) {
        best = std::max(best, cosine_sim(a, g));
      }
      r.bg_sim_max_each[ki].push_back(best);
    }
  }
  for (std::size_t ki = 0; ki < nk; ++ki) {
    double f = 0.0, b = 0.0;
    for (std::size_t i = 0; i < foregrounds.size(); ++i) {
      f += r.fg_sim_each[ki][i];
      b += r.bg_sim_max_each[ki][i];
    }
    r.fg_sim.push_back(f / static_cast<double>(foregrounds.size()));
    r.bg_sim_max.push_back(b / static_cast<double>(foregrounds.size()));
    r.var_eps.push_back(residual_variance(pool_embeddings, K_grid[ki], var_trials, mu, seed, true));
  }
  return r;
}

void write_k_sweep_csv(const std::filesystem::path& path, const KSweepReport& r, double slope) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << "K,fg_sim,bg_sim_max,var_eps,loglog_slope\n";
  char buf[200];
  for (std::size_t i = 0; i < r.Ks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8f,%.8e,%.6f\n", r.Ks[i], r.fg_sim[i], r.bg_sim_max[i], r.var_eps[i],
                  slope);
    out << buf;
  }
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("loglog_slope needs two or more aligned points");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw DegenerateInputError("loglog_slope: non-positive value");
    }
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double sign_test_p(std::size_t successes, std::size_t n) {
  // Sum of binomial pmf in log space.
  double p = 0.0;
  for (std::size_t k = successes; k <= n; ++k) {
    const double lg = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0);
    p += std::exp(lg);
  }
  return std::min(1.0, p);
}

std::vector<Tensor> orthogonal_targets(std::size_t d, std::size_t num_targets, std::uint64_t seed) {
  if (num_targets > d) {
    throw DimensionError("orthogonal_targets: " + std::to_string(num_targets) + " targets exceed d = " +
                         std::to_string(d));
  }
  Rng rng(seed);
  std::vector<std::vector<double>> basis;
  while (basis.size() < num_targets) {
    std::vector<double> v(d);
    for (double& x : v) {
      x = rng.normal();
    }
    // Two Gram-Schmidt passes keep the set orthogonal to double precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double p = 0.0;
        for (std::size_t i = 0; i < d; ++i) p += v[i] * b[i];
        for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) {
      continue;
    }
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  std::vector<Tensor> out;
  for (const auto& b : basis) {
    Tensor t({d});
    for (std::size_t i = 0; i < d; ++i) t[i] = static_cast<float>(b[i]);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace bap
