#include "bap/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "bap/error.hpp"
#include "bap/rng.hpp"

#ifndef BAP_CODE_HASH
#define BAP_CODE_HASH "unknown"
#endif

namespace bap {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

template <class T>
void take(const json& j, const char* key, T& v) {
  if (j.contains(key)) {
    try {
      v = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw ConfigError("config section '" + where + "' must be an object");
  }
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError("unknown config key '" + where + "." + k + "'");
    }
  }
}

json section(const json& j, const char* key) { return j.contains(key) ? j.at(key) : json::object(); }

AdditivityMode parse_additivity_mode(const std::string& tag) {
  if (tag == "regular") return AdditivityMode::Regular;
  if (tag == "disjoint") return AdditivityMode::Disjoint;
  throw ConfigError("unknown additivity mode '" + tag + "'");
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["world"] = {{"seed", world_seed},
                {"num_classes", num_classes},
                {"held_out_classes", held_out_classes},
                {"num_groups", num_groups},
                {"fg_per_class", fg_per_class},
                {"bg_per_group", bg_per_group},
                {"image", image},
                {"context_correlation", context_correlation}};
  j["data"] = {{"train_per_class", train_per_class},
               {"test_per_cell", test_per_cell},
               {"rhos", rhos},
               {"degradation", degradation_tag(degradation)}};
  j["teacher"] = {{"kind", teacher},
                  {"alpha", alpha},
                  {"seed", teacher_seed},
                  {"dim", dim},
                  {"learned",
                   {{"epochs", learned.epochs},
                    {"items_per_epoch", learned.items_per_epoch},
                    {"batch", learned.batch},
                    {"lr", learned.lr},
                    {"weight_decay", learned.weight_decay}}}};
  j["bap"] = {{"pool_groups", pool_groups},
              {"pool_per_group", pool_per_group},
              {"N", bap.N},
              {"M", bap.M},
              {"K", bap.K},
              {"epochs", bap.epochs},
              {"batch", bap.batch},
              {"lr", bap.lr},
              {"weight_decay", bap.weight_decay},
              {"warmup", bap.warmup},
              {"floor_ratio", bap.floor_ratio},
              {"regenerate", bap.regenerate},
              {"early_stop", bap.early_stop},
              {"scale_lo", bap.scale_lo},
              {"scale_hi", bap.scale_hi},
              {"control_probe_epochs", bap.probe_epochs},
              {"control_head_lr", bap.head_lr}};
  j["probe"] = {{"epochs", probe.epochs},
                {"batch", probe.batch},
                {"lr", probe.lr},
                {"weight_decay", probe.weight_decay},
                {"prototype_exemplars", prototype_exemplars}};
  j["finetune"] = {{"probe_epochs", finetune.probe_epochs},
                   {"probe_lr", finetune.probe_lr},
                   {"epochs", finetune.epochs},
                   {"lr", finetune.lr},
                   {"head_lr", finetune.head_lr},
                   {"weight_decay", finetune.weight_decay},
                   {"warmup", finetune.warmup},
                   {"floor_ratio", finetune.floor_ratio},
                   {"batch", finetune.batch}};
  j["retention"] = {{"per_group", retention_per_group}, {"contraction_contexts", contraction_contexts}};
  j["additivity"] = {{"n", additivity_n}, {"alphas", additivity_alphas}, {"mode", additivity_mode_tag(additivity_mode)}};
  j["k_ablation"] = {{"grid", k_grid},
                     {"foregrounds", k_foregrounds},
                     {"var_trials", var_trials},
                     {"mu_samples", mu_samples},
                     {"var_grid", var_k_grid}};
  j["ablation"] = {{"n_grid", n_grid},
                   {"m_grid", m_grid},
                   {"m_sweep_n", m_sweep_n},
                   {"k_train_grid", k_train_grid},
                   {"seeds", ablation_seeds}};
  j["seed"] = seed;
  j["num_seeds"] = num_seeds;
  j["methods"] = methods;
  j["out"] = out;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  only_keys(j, "config",
            {"world", "data", "teacher", "bap", "probe", "finetune", "retention", "additivity", "k_ablation",
             "ablation", "seed", "num_seeds", "methods", "out"});
  ExperimentConfig c;

  const json w = section(j, "world");
  only_keys(w, "world",
            {"seed", "num_classes", "held_out_classes", "num_groups", "fg_per_class", "bg_per_group", "image",
             "context_correlation"});
  take(w, "seed", c.world_seed);
  take(w, "num_classes", c.num_classes);
  take(w, "held_out_classes", c.held_out_classes);
  take(w, "num_groups", c.num_groups);
  take(w, "fg_per_class", c.fg_per_class);
  take(w, "bg_per_group", c.bg_per_group);
  take(w, "image", c.image);
  take(w, "context_correlation", c.context_correlation);

  const json d = section(j, "data");
  only_keys(d, "data", {"train_per_class", "test_per_cell", "rhos", "degradation"});
  take(d, "train_per_class", c.train_per_class);
  take(d, "test_per_cell", c.test_per_cell);
  take(d, "rhos", c.rhos);
  if (d.contains("degradation")) c.degradation = parse_degradation(d.at("degradation").get<std::string>());

  const json t = section(j, "teacher");
  only_keys(t, "teacher", {"kind", "alpha", "seed", "dim", "learned"});
  take(t, "kind", c.teacher);
  take(t, "alpha", c.alpha);
  take(t, "seed", c.teacher_seed);
  take(t, "dim", c.dim);
  const json l = section(t, "learned");
  only_keys(l, "teacher.learned", {"epochs", "items_per_epoch", "batch", "lr", "weight_decay"});
  take(l, "epochs", c.learned.epochs);
  take(l, "items_per_epoch", c.learned.items_per_epoch);
  take(l, "batch", c.learned.batch);
  take(l, "lr", c.learned.lr);
  take(l, "weight_decay", c.learned.weight_decay);

  const json b = section(j, "bap");
  only_keys(b, "bap",
            {"pool_groups", "pool_per_group", "N", "M", "K", "epochs", "batch", "lr", "weight_decay", "warmup",
             "floor_ratio", "regenerate", "early_stop", "scale_lo", "scale_hi", "control_probe_epochs",
             "control_head_lr"});
  take(b, "pool_groups", c.pool_groups);
  take(b, "pool_per_group", c.pool_per_group);
  take(b, "N", c.bap.N);
  take(b, "M", c.bap.M);
  take(b, "K", c.bap.K);
  take(b, "epochs", c.bap.epochs);
  take(b, "batch", c.bap.batch);
  take(b, "lr", c.bap.lr);
  take(b, "weight_decay", c.bap.weight_decay);
  take(b, "warmup", c.bap.warmup);
  take(b, "floor_ratio", c.bap.floor_ratio);
  take(b, "regenerate", c.bap.regenerate);
  take(b, "early_stop", c.bap.early_stop);
  take(b, "scale_lo", c.bap.scale_lo);
  take(b, "scale_hi", c.bap.scale_hi);
  take(b, "control_probe_epochs", c.bap.probe_epochs);
  take(b, "control_head_lr", c.bap.head_lr);

  const json p = section(j, "probe");
  only_keys(p, "probe", {"epochs", "batch", "lr", "weight_decay", "prototype_exemplars"});
  take(p, "epochs", c.probe.epochs);
  take(p, "batch", c.probe.batch);
  take(p, "lr", c.probe.lr);
  take(p, "weight_decay", c.probe.weight_decay);
  take(p, "prototype_exemplars", c.prototype_exemplars);

  const json f = section(j, "finetune");
  only_keys(f, "finetune",
            {"probe_epochs", "probe_lr", "epochs", "lr", "head_lr", "weight_decay", "warmup", "floor_ratio", "batch"});
  take(f, "probe_epochs", c.finetune.probe_epochs);
  take(f, "probe_lr", c.finetune.probe_lr);
  take(f, "epochs", c.finetune.epochs);
  take(f, "lr", c.finetune.lr);
  take(f, "head_lr", c.finetune.head_lr);
  take(f, "weight_decay", c.finetune.weight_decay);
  take(f, "warmup", c.finetune.warmup);
  take(f, "floor_ratio", c.finetune.floor_ratio);
  take(f, "batch", c.finetune.batch);

  const json r = section(j, "retention");
  only_keys(r, "retention", {"per_group", "contraction_contexts"});
  take(r, "per_group", c.retention_per_group);
  take(r, "contraction_contexts", c.contraction_contexts);

  const json a = section(j, "additivity");
  only_keys(a, "additivity", {"n", "alphas", "mode"});
  take(a, "n", c.additivity_n);
  take(a, "alphas", c.additivity_alphas);
  if (a.contains("mode")) c.additivity_mode = parse_additivity_mode(a.at("mode").get<std::string>());

  const json k = section(j, "k_ablation");
  only_keys(k, "k_ablation", {"grid", "foregrounds", "var_trials", "mu_samples", "var_grid"});
  take(k, "grid", c.k_grid);
  take(k, "foregrounds", c.k_foregrounds);
  take(k, "var_trials", c.var_trials);
  take(k, "mu_samples", c.mu_samples);
  take(k, "var_grid", c.var_k_grid);

  const json ab = section(j, "ablation");
  only_keys(ab, "ablation", {"n_grid", "m_grid", "m_sweep_n", "k_train_grid", "seeds"});
  take(ab, "n_grid", c.n_grid);
  take(ab, "m_grid", c.m_grid);
  take(ab, "m_sweep_n", c.m_sweep_n);
  take(ab, "k_train_grid", c.k_train_grid);
  take(ab, "seeds", c.ablation_seeds);

  take(j, "seed", c.seed);
  take(j, "num_seeds", c.num_seeds);
  take(j, "methods", c.methods);
  take(j, "out", c.out);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

void save_config(const ExperimentConfig& cfg, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << cfg.to_json().dump(2) << '\n';
  if (!out) {
    throw ConfigError("cannot write config " + path.string());
  }
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"native-zs", "native-lp", "lp-ft", "control",
                                             "bap-lp",    "bap-zs",    "ortho"};
  return m;
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  for (const std::string& m : c.methods) {
    const auto& k = known_methods();
    if (std::find(k.begin(), k.end(), m) == k.end()) fail("unknown method '" + m + "'");
  }
  if (c.num_classes < 2) fail("num_classes must be at least 2");
  if (c.num_groups < 2) fail("num_groups must be at least 2");
  if (c.image < 16) fail("image side must be at least 16");
  if (c.rhos.empty()) fail("rhos must not be empty");
  for (double r : c.rhos) {
    if (!(r >= 0.5 && r <= 1.0)) fail("rho must lie in [0.5, 1.0]");
  }
  if (c.teacher != "planted-linear" && c.teacher != "learned") fail("unknown teacher kind '" + c.teacher + "'");
  if (c.num_seeds == 0) fail("num_seeds must be positive");
  if (c.bap.N == 0 || c.bap.M == 0 || c.bap.K == 0 || c.bap.epochs == 0 || c.bap.batch == 0) {
    fail("bap N, M, K, epochs and batch must be positive");
  }
  if (c.pool_groups < 2 || c.pool_per_group == 0) fail("background pool needs two groups and a positive size");
  if (c.k_grid.empty() || c.var_k_grid.empty()) fail("K grids must not be empty");
  if (c.additivity_n == 0) fail("additivity n must be positive");
  if (c.ablation_seeds == 0) fail("ablation seeds must be positive");
  if (c.contraction_contexts < 2 || c.contraction_contexts > c.pool_groups * c.retention_per_group) {
    fail("contraction contexts must lie in [2, pool_groups * retention per_group]");
  }
}

std::string code_hash() { return BAP_CODE_HASH; }

std::uint64_t run_seed(std::uint64_t global, std::size_t index) { return stable_hash({global, index}); }

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void write_lines(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << header << '\n';
  for (const auto& r : rows) out << r << '\n';
  if (!out) {
    throw ConfigError("cannot write " + path.string());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
}

fs::path prepared(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

}  // namespace

std::string metrics_csv_header() { return "run_id,method,rho,avg,wga,acc_00,acc_01,acc_10,acc_11,bsi,seed"; }

std::string metrics_csv_row(const MetricsRow& r) {
  return r.run_id + "," + r.method + "," + fmt(r.rho, 2) + "," + fmt(r.avg) + "," + fmt(r.wga) + "," +
         fmt(r.acc[0][0]) + "," + fmt(r.acc[0][1]) + "," + fmt(r.acc[1][0]) + "," + fmt(r.acc[1][1]) + "," +
         fmt(r.bsi) + "," + std::to_string(r.seed);
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ManifestError("cannot open metrics " + path.string());
  }
  std::string line;
  std::getline(in, line);
  if (line != metrics_csv_header()) {
    throw ManifestError("unexpected metrics header in " + path.string());
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 11) {
      throw ManifestError("malformed metrics row: " + line);
    }
    MetricsRow r;
    r.run_id = c[0];
    r.method = c[1];
    r.rho = std::stod(c[2]);
    r.avg = std::stod(c[3]);
    r.wga = std::stod(c[4]);
    r.acc[0][0] = std::stod(c[5]);
    r.acc[0][1] = std::stod(c[6]);
    r.acc[1][0] = std::stod(c[7]);
    r.acc[1][1] = std::stod(c[8]);
    r.bsi = std::stod(c[9]);
    r.seed = std::stoull(c[10]);
    rows.push_back(r);
  }
  return rows;
}

std::string ablation_csv_header() { return "sweep,label,N,M,K,degradation,epoch,seed,avg,wga"; }

std::string ablation_csv_row(const AblationRow& r) {
  return r.sweep + "," + r.label + "," + std::to_string(r.N) + "," + std::to_string(r.M) + "," +
         std::to_string(r.K) + "," + r.degradation + "," + std::to_string(r.epoch) + "," + std::to_string(r.seed) +
         "," + fmt(r.avg) + "," + fmt(r.wga);
}

// ---------------------------------------------------------------------------
// Shared experiment state

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

// Seed-derivation tags, one per consumer.
enum SeedTag : std::uint64_t {
  kTagData = 1,
  kTagSelect,
  kTagAnchors,
  kTagAlign,
  kTagProbe,
  kTagBsi,
  kTagFinetune,
  kTagOrtho,
  kTagOod,
  kTagRetention,
  kTagContraction,
};

std::uint64_t derive(std::uint64_t seed, SeedTag tag) { return stable_hash({seed, static_cast<std::uint64_t>(tag)}); }

std::string rho_tag(double rho) { return fmt(rho, 2); }

class Lab {
 public:
  explicit Lab(const ExperimentConfig& cfg) : cfg_(cfg) {
    validate(cfg);
    shape_ = ImageShape{cfg.image, cfg.image, 3};
    WorldConfig wc;
    wc.seed = cfg.world_seed;
    wc.num_classes = cfg.num_classes + cfg.held_out_classes;
    wc.num_bg_groups = cfg.num_groups;
    wc.fg_per_class = cfg.fg_per_class;
    wc.bg_per_group = cfg.bg_per_group;
    wc.image = shape_;
    wc.context_correlation = cfg.context_correlation;
    world_ = gen_world(wc);
    full_split_ = split_world(world_);

    task_ = world_;
    task_.config.num_classes = cfg.num_classes;
    std::erase_if(task_.foregrounds, [&](const ForegroundInstance& f) { return f.y >= cfg.num_classes; });
    split_ = split_world(task_);

    pool_ = gen_background_pool(cfg.world_seed, cfg.pool_groups, cfg.pool_per_group, shape_);
    for (std::uint64_t id : split_.train_fg) train_fgs_.push_back(&task_.foreground(id));
    for (std::uint64_t id : split_.test_fg) test_fgs_.push_back(&task_.foreground(id));
    for (std::uint64_t id : split_.test_bg) {
      const BackgroundImage& b = task_.background(id);
      if (b.g == 0) bsi_g0_.push_back(b);
      if (b.g == 1) bsi_g1_.push_back(b);
    }
    teacher_ = build_teacher();
    prototypes_ = class_prototypes(teacher_, train_fgs_, cfg.num_classes, cfg.prototype_exemplars);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const World& world() const { return world_; }
  const World& task() const { return task_; }
  const WorldSplit& split() const { return split_; }
  const WorldSplit& full_split() const { return full_split_; }
  const std::vector<BackgroundImage>& pool() const { return pool_; }
  const std::vector<const ForegroundInstance*>& train_fgs() const { return train_fgs_; }
  const std::vector<const ForegroundInstance*>& test_fgs() const { return test_fgs_; }
  const std::vector<Tensor>& prototypes() const { return prototypes_; }
  EncoderModel& teacher() { return teacher_; }
  const ImageShape& shape() const { return shape_; }

  std::pair<GroupedDataset, GroupedDataset> datasets(double rho, std::uint64_t seed) const {
    DatasetSizes sizes;
    sizes.train_per_class = cfg_.train_per_class;
    sizes.test_per_cell = cfg_.test_per_cell;
    auto ds = build_grouped_dataset(task_, split_, rho, sizes, derive(seed, kTagData));
    check_disjoint_backgrounds(ds.first, ds.second);
    return ds;
  }

  // Class-balanced pick of n training foregrounds.
  std::vector<const ForegroundInstance*> select_foregrounds(std::size_t n, std::uint64_t seed) const {
    if (n > train_fgs_.size()) {
      throw ConfigError("N = " + std::to_string(n) + " exceeds the " + std::to_string(train_fgs_.size()) +
                        " training foregrounds");
    }
    std::vector<std::vector<const ForegroundInstance*>> by_class(cfg_.num_classes);
    for (const ForegroundInstance* f : train_fgs_) by_class[f->y].push_back(f);
    Rng rng(derive(seed, kTagSelect));
    for (auto& v : by_class) rng.shuffle(v);
    std::vector<const ForegroundInstance*> out;
    for (std::size_t round = 0; out.size() < n; ++round) {
      for (auto& v : by_class) {
        if (round < v.size() && out.size() < n) out.push_back(v[round]);
      }
    }
    return out;
  }

  AlignConfig align_config(std::uint64_t seed) const {
    AlignConfig ac = cfg_.bap;
    ac.seed = derive(seed, kTagAlign);
    ac.degradation = cfg_.degradation;
    return ac;
  }

  ProbeConfig probe_config(std::uint64_t seed) const {
    ProbeConfig pc = cfg_.probe;
    pc.seed = derive(seed, kTagProbe);
    return pc;
  }

  double bsi_of(EncoderModel& enc, std::uint64_t seed) const {
    return bsi_protocol(enc, test_fgs_, bsi_g0_, bsi_g1_, cfg_.num_classes, derive(seed, kTagBsi)).mean;
  }

 private:
  EncoderModel build_teacher() {
    if (cfg_.teacher == "planted-linear") {
      PlantedConfig pc;
      pc.seed = cfg_.teacher_seed;
      pc.alpha = cfg_.alpha;
      pc.image = shape_;
      pc.dim = cfg_.dim;
      return planted_teacher(pc);
    }
    LearnedTeacherConfig lc = cfg_.learned;
    lc.dim = cfg_.dim;
    lc.seed = cfg_.teacher_seed;
    std::vector<const ForegroundInstance*> fgs;
    for (std::uint64_t id : full_split_.train_fg) fgs.push_back(&world_.foreground(id));
    return learned_teacher(fgs, pool_, cfg_.num_classes + cfg_.held_out_classes, lc);
  }

  const ExperimentConfig& cfg_;
  ImageShape shape_;
  World world_, task_;
  WorldSplit full_split_, split_;
  std::vector<BackgroundImage> pool_;
  std::vector<const ForegroundInstance*> train_fgs_, test_fgs_;
  std::vector<BackgroundImage> bsi_g0_, bsi_g1_;
  EncoderModel teacher_;
  std::vector<Tensor> prototypes_;
};

GroupMetrics probe_metrics(EncoderModel& enc, const LabeledImages& train, const LabeledImages& test,
                           std::size_t classes, std::size_t groups, const ProbeConfig& pc) {
  const ProbeHead h = train_probe(encode_batch(enc, train.images), train.y, classes, pc);
  return group_metrics(h.predict(encode_batch(enc, test.images)), test.y, test.g, classes, groups);
}

GroupMetrics zero_shot_metrics(EncoderModel& enc, const std::vector<Tensor>& prototypes, const LabeledImages& test,
                               std::size_t classes, std::size_t groups) {
  const PrototypeBatch p = prototype_classify(encode_batch(enc, test.images), prototypes);
  return group_metrics(p.labels, test.y, test.g, classes, groups);
}

void fill_cells(MetricsRow& row, const GroupMetrics& m) {
  row.avg = m.avg;
  row.wga = m.wga;
  for (std::uint32_t y = 0; y < 2; ++y)
    for (std::uint32_t g = 0; g < 2; ++g) row.acc[y][g] = m.cell_accuracy(y, g);
}

json metrics_json(const GroupMetrics& m) {
  json cells = json::array();
  for (const auto& [key, cell] : m.cells) {
    cells.push_back({{"y", key.first}, {"g", key.second}, {"count", cell.count}, {"correct", cell.correct}});
  }
  json empty = json::array();
  for (const auto& [y, g] : m.empty_groups) empty.push_back({y, g});
  return {{"avg", m.avg}, {"wga", m.wga}, {"cells", cells}, {"empty_groups", empty}};
}

json log_json(const TrainLog& log) {
  return {{"epoch_loss", log.epoch_loss},
          {"epoch_lr", log.epoch_lr},
          {"steps", log.lr_trace.size()},
          {"checksum", log.checksum},
          {"early_stopped", log.early_stopped}};
}

// Encoders trained once per seed and shared by every rho.
struct SeedModels {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  std::vector<const ForegroundInstance*> fgs;
  std::optional<EncoderModel> bap;
  TrainLog bap_log;
  double bap_ms = 0.0;
  RetentionResult retention;
  RetentionResult retention_zs;
  ContractionResult contraction;
  std::optional<ControlResult> control;
  double control_ms = 0.0;
  std::optional<EncoderModel> ortho;
  TrainLog ortho_log;
  double ortho_ms = 0.0;
  double ood_accuracy = 0.0;
  double ood_teacher = 0.0;
};

std::vector<BackgroundImage> retention_pool(const ExperimentConfig& cfg, const ImageShape& shape) {
  return gen_background_pool(cfg.world_seed, cfg.pool_groups, cfg.retention_per_group, shape, 1000);
}

// Trains the BAP student (and its anchors) for one seed.
std::pair<EncoderModel, TrainLog> run_bap(Lab& lab, const std::vector<const ForegroundInstance*>& fgs,
                                          const AlignConfig& ac, std::uint64_t seed, AnchorSet* keep = nullptr) {
  AnchorSet anchors =
      extract_anchors(lab.teacher(), fgs, lab.pool(), ac.K, derive(seed, kTagAnchors), 0, ac.degradation);
  auto out = train_bap(lab.teacher(), anchors, fgs, lab.pool(), ac);
  if (keep) *keep = std::move(anchors);
  return out;
}

void ensure_bap(Lab& lab, SeedModels& s, const fs::path& out) {
  if (s.bap) return;
  const auto t0 = Clock::now();
  AnchorSet anchors;
  auto [student, log] = run_bap(lab, s.fgs, lab.align_config(s.seed), s.seed, &anchors);
  s.bap_ms = ms_since(t0);
  s.bap = std::move(student);
  s.bap_log = std::move(log);
  const std::string tag = "s" + std::to_string(s.index);
  save_anchors(anchors, prepared(out / "anchors" / ("anchors-" + tag + ".bapt")));
  save_encoder(*s.bap, prepared(out / "models" / ("bap-" + tag + ".bapt")));
  write_train_log_csv(prepared(out / "logs" / ("bap-" + tag + ".csv")), s.bap_log);

  const auto rp = retention_pool(lab.cfg(), lab.shape());
  std::vector<BackgroundImage> rtr, rte;
  for (std::size_t i = 0; i < rp.size(); ++i) (i % 10 < 7 ? rtr : rte).push_back(rp[i]);
  ProbeConfig pc = lab.probe_config(s.seed);
  pc.seed = derive(s.seed, kTagRetention);
  s.retention = retention_eval(lab.teacher(), *s.bap, rtr, rte, lab.cfg().pool_groups, pc);
  s.retention_zs = retention_zero_shot(lab.teacher(), *s.bap, rtr, rte, lab.cfg().pool_groups);
  s.contraction = contraction(lab.teacher(), *s.bap, s.fgs, rp, lab.cfg().contraction_contexts,
                              derive(s.seed, kTagContraction));
}

void ensure_control(Lab& lab, SeedModels& s, const fs::path& out) {
  if (s.control) return;
  const auto t0 = Clock::now();
  s.control = train_control(lab.teacher(), s.fgs, lab.pool(), lab.cfg().num_classes, lab.align_config(s.seed));
  s.control_ms = ms_since(t0);
  const std::string tag = "s" + std::to_string(s.index);
  save_encoder(s.control->encoder, prepared(out / "models" / ("control-" + tag + ".bapt")));
  write_train_log_csv(prepared(out / "logs" / ("control-" + tag + ".csv")), s.control->log);
}

void ensure_ortho(Lab& lab, SeedModels& s, const fs::path& out) {
  if (s.ortho) return;
  const ExperimentConfig& cfg = lab.cfg();
  const auto targets = orthogonal_targets(lab.teacher().dim(), cfg.num_classes, derive(s.seed, kTagOrtho));
  std::map<std::uint32_t, std::size_t> c2t;
  for (std::uint32_t c = 0; c < cfg.num_classes; ++c) c2t[c] = c;
  const auto t0 = Clock::now();
  auto [enc, log] = train_orthogonal(lab.teacher(), targets, c2t, s.fgs, lab.pool(), lab.align_config(s.seed));
  s.ortho_ms = ms_since(t0);
  s.ortho = std::move(enc);
  s.ortho_log = std::move(log);
  save_encoder(*s.ortho, prepared(out / "models" / ("ortho-s" + std::to_string(s.index) + ".bapt")));

  // Held-out classes, scored zero-shot against teacher prototypes of every class.
  if (cfg.held_out_classes == 0) return;
  const World& w = lab.world();
  std::vector<const ForegroundInstance*> all_train;
  for (std::uint64_t id : lab.full_split().train_fg) all_train.push_back(&w.foreground(id));
  const auto protos =
      class_prototypes(lab.teacher(), all_train, cfg.num_classes + cfg.held_out_classes, cfg.prototype_exemplars);
  std::vector<Raster> images;
  std::vector<std::uint32_t> labels;
  Rng rng(derive(s.seed, kTagOod));
  const auto& test_bg = lab.full_split().test_bg;
  for (std::uint64_t id : lab.full_split().test_fg) {
    const ForegroundInstance& f = w.foreground(id);
    if (f.y < cfg.num_classes) continue;
    const BackgroundImage& b = w.background(test_bg[rng.below(test_bg.size())]);
    images.push_back(composite(f, b, rng.uniform(cfg.bap.scale_lo, cfg.bap.scale_hi), Placement::Center, 0).raster);
    labels.push_back(f.y);
  }
  s.ood_accuracy = accuracy(prototype_classify(encode_batch(*s.ortho, images), protos).labels, labels);
  s.ood_teacher = accuracy(prototype_classify(encode_batch(lab.teacher(), images), protos).labels, labels);
}

struct SummaryRow {
  std::string method;
  double rho = 0.0;
  std::size_t n = 0;
  MeanStd avg, wga, bsi;
};

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const MetricsRow*>> groups;
  for (const MetricsRow& r : rows) {
    const auto key = std::make_pair(r.method, rho_tag(r.rho));
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> a, w, b;
    for (const MetricsRow* r : g) {
      a.push_back(r->avg);
      w.push_back(r->wga);
      b.push_back(r->bsi);
    }
    out.push_back({key.first, g.front()->rho, g.size(), mean_std(a), mean_std(w), mean_std(b)});
  }
  return out;
}

void write_summary(const fs::path& path, const std::vector<MetricsRow>& rows) {
  std::vector<std::string> lines;
  for (const SummaryRow& s : summarize(rows)) {
    lines.push_back(s.method + "," + rho_tag(s.rho) + "," + std::to_string(s.n) + "," + fmt(s.avg.mean) + "," +
                    fmt(s.avg.std) + "," + fmt(s.wga.mean) + "," + fmt(s.wga.std) + "," + fmt(s.bsi.mean) + "," +
                    fmt(s.bsi.std));
  }
  write_lines(path, "method,rho,n,avg_mean,avg_std,wga_mean,wga_std,bsi_mean,bsi_std", lines);
}

std::string run_id(const std::string& method, double rho, std::size_t index) {
  return method + "-rho" + rho_tag(rho) + "-s" + std::to_string(index);
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

std::vector<GroupedDataset> cmd_gen_data(const ExperimentConfig& cfg) {
  Lab lab(cfg);
  const fs::path out = cfg.out;
  save_config(cfg, out / "config.json");
  std::vector<GroupedDataset> written;
  const std::uint64_t seed = run_seed(cfg.seed, 0);
  for (double rho : cfg.rhos) {
    auto [train, test] = lab.datasets(rho, seed);
    write_manifest(prepared(out / "data" / ("train-rho" + rho_tag(rho) + ".jsonl")), train);
    write_manifest(prepared(out / "data" / ("test-rho" + rho_tag(rho) + ".jsonl")), test);
    written.push_back(std::move(train));
    written.push_back(std::move(test));
  }
  return written;
}

std::vector<AdditivityReport> cmd_probe_additivity(const ExperimentConfig& cfg) {
  validate(cfg);
  const ImageShape shape{cfg.image, cfg.image, 3};
  WorldConfig wc;
  wc.seed = cfg.world_seed;
  wc.num_classes = cfg.num_classes + cfg.held_out_classes;
  wc.num_bg_groups = cfg.num_groups;
  wc.fg_per_class = cfg.fg_per_class;
  wc.bg_per_group = cfg.bg_per_group;
  wc.image = shape;
  wc.context_correlation = cfg.context_correlation;
  const World w = gen_world(wc);
  std::vector<AdditivityReport> reports;
  std::vector<std::string> lines;
  for (double alpha : cfg.additivity_alphas) {
    PlantedConfig pc;
    pc.seed = cfg.teacher_seed;
    pc.alpha = alpha;
    pc.image = shape;
    pc.dim = cfg.dim;
    EncoderModel t = planted_teacher(pc);
    const auto triples = make_triples(t, w.foregrounds, w.backgrounds, cfg.additivity_n, cfg.additivity_mode,
                                      cfg.bap.scale_lo, cfg.bap.scale_hi, run_seed(cfg.seed, 0));
    AdditivityReport r = batch_additivity(t, triples);
    r.encoder = arch_tag(t.arch());
    r.alpha = alpha;
    lines.push_back(additivity_csv_row(r));
    reports.push_back(std::move(r));
  }
  const fs::path out = cfg.out;
  save_config(cfg, out / "config.json");
  write_lines(out / "additivity.csv", additivity_csv_header(), lines);
  return reports;
}

KAblationResult cmd_k_ablation(const ExperimentConfig& cfg) {
  Lab lab(cfg);
  const std::uint64_t seed = run_seed(cfg.seed, 0);
  KAblationResult res;

  // A large dedicated pool stands behind mu_bg and the variance columns.
  const std::size_t per_group = (cfg.mu_samples + cfg.pool_groups - 1) / cfg.pool_groups;
  const auto big = gen_background_pool(cfg.world_seed, cfg.pool_groups, per_group, lab.shape(), 2000);
  std::vector<const Raster*> rasters;
  for (const auto& b : big) rasters.push_back(&b.raster);
  const Tensor emb = encode_batch(lab.teacher(), rasters);
  const BackgroundMean mu = mean_of_rows(emb);
  res.mu_count = mu.count;

  Prototypes protos;
  protos.classes = lab.prototypes();
  protos.groups = group_prototypes(lab.teacher(), lab.pool(), cfg.pool_groups);
  const auto fgs = lab.select_foregrounds(std::min(cfg.k_foregrounds, lab.train_fgs().size()), seed);
  res.sweep = k_sweep(lab.teacher(), fgs, lab.pool(), cfg.k_grid, protos, emb, mu, cfg.var_trials, seed);

  std::vector<double> ks;
  for (std::size_t K : cfg.var_k_grid) {
    res.var_K.push_back(K);
    ks.push_back(static_cast<double>(K));
    res.var_eps.push_back(residual_variance(emb, K, cfg.var_trials, mu, seed));
  }
  res.var_slope = loglog_slope(ks, res.var_eps);

  std::vector<double> sweep_k(res.sweep.Ks.begin(), res.sweep.Ks.end());
  const fs::path out = cfg.out;
  save_config(cfg, out / "config.json");
  write_k_sweep_csv(prepared(out / "k_ablation.csv"), res.sweep, loglog_slope(sweep_k, res.sweep.var_eps));
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < res.var_K.size(); ++i) {
    lines.push_back(std::to_string(res.var_K[i]) + "," + fmt(res.var_eps[i], 9) + "," + fmt(res.var_slope));
  }
  write_lines(out / "var_law.csv", "K,var_eps,loglog_slope", lines);
  return res;
}

std::vector<MetricsRow> cmd_run_matrix(const ExperimentConfig& cfg) {
  Lab lab(cfg);
  const fs::path out = cfg.out;
  save_config(cfg, out / "config.json");
  const std::size_t C = cfg.num_classes, G = cfg.num_groups;

  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < cfg.num_seeds; ++i) {
    SeedModels s;
    s.index = i;
    s.seed = run_seed(cfg.seed, i);
    s.fgs = lab.select_foregrounds(cfg.bap.N, s.seed);
    const CompositeSpec spec;

    for (double rho : cfg.rhos) {
      auto [train_ds, test_ds] = lab.datasets(rho, s.seed);
      const LabeledImages train = render_dataset(lab.task(), train_ds, spec);
      const LabeledImages test = render_dataset(lab.task(), test_ds, spec);
      const ProbeConfig pc = lab.probe_config(s.seed);

      for (const std::string& method : cfg.methods) {
        const auto t0 = Clock::now();
        MetricsRow row;
        row.method = method;
        row.rho = rho;
        row.seed = s.seed;
        row.run_id = run_id(method, rho, i);
        GroupMetrics m;
        json extras = json::object();
        json logs = json::object();
        std::string bsi_encoder;
        EncoderModel* enc = nullptr;
        std::optional<FinetuneResult> ft;

        if (method == "native-zs") {
          m = zero_shot_metrics(lab.teacher(), lab.prototypes(), test, C, G);
          enc = &lab.teacher();
          bsi_encoder = "teacher";
        } else if (method == "native-lp") {
          m = probe_metrics(lab.teacher(), train, test, C, G, pc);
          enc = &lab.teacher();
          bsi_encoder = "teacher";
        } else if (method == "lp-ft") {
          FinetuneConfig fc = cfg.finetune;
          fc.seed = derive(s.seed, kTagFinetune);
          ft = finetune_on_correlated(lab.teacher(), train, test, C, G, fc);
          m = group_metrics(ft->head.predict(encode_batch(ft->encoder, test.images)), test.y, test.g, C, G);
          enc = &ft->encoder;
          bsi_encoder = "lp-ft encoder";
          extras["wga_trace"] = ft->wga;
          extras["avg_trace"] = ft->avg;
          logs["finetune"] = log_json(ft->log);
          save_encoder(ft->encoder,
                       prepared(out / "models" / ("lpft-rho" + rho_tag(rho) + "-s" + std::to_string(i) + ".bapt")));
        } else if (method == "control") {
          ensure_control(lab, s, out);
          m = probe_metrics(s.control->encoder, train, test, C, G, pc);
          enc = &s.control->encoder;
          bsi_encoder = "control encoder";
          extras["control_train_accuracy"] = s.control->train_accuracy;
          extras["single_class_batches"] = s.control->single_class_batches;
          extras["train_ms"] = s.control_ms;
          logs["control"] = log_json(s.control->log);
        } else if (method == "bap-lp" || method == "bap-zs") {
          ensure_bap(lab, s, out);
          m = method == "bap-lp" ? probe_metrics(*s.bap, train, test, C, G, pc)
                                 : zero_shot_metrics(*s.bap, lab.prototypes(), test, C, G);
          enc = &*s.bap;
          bsi_encoder = "bap encoder";
          extras["retention_before"] = s.retention.before;
          extras["retention_after"] = s.retention.after;
          extras["retention_zero_shot_before"] = s.retention_zs.before;
          extras["retention_zero_shot_after"] = s.retention_zs.after;
          extras["contraction_fraction"] = s.contraction.fraction;
          extras["train_ms"] = s.bap_ms;
          logs["bap"] = log_json(s.bap_log);
        } else if (method == "ortho") {
          ensure_ortho(lab, s, out);
          m = probe_metrics(*s.ortho, train, test, C, G, pc);
          enc = &*s.ortho;
          bsi_encoder = "ortho encoder";
          extras["ood_accuracy"] = s.ood_accuracy;
          extras["ood_teacher_accuracy"] = s.ood_teacher;
          extras["train_ms"] = s.ortho_ms;
          logs["ortho"] = log_json(s.ortho_log);
        }
        fill_cells(row, m);
        row.bsi = lab.bsi_of(*enc, s.seed);
        rows.push_back(row);

        json rec = {{"run_id", row.run_id},
                    {"method", method},
                    {"rho", rho},
                    {"seed", s.seed},
                    {"run_index", i},
                    {"global_seed", cfg.seed},
                    {"code_hash", code_hash()},
                    {"config", cfg.to_json()},
                    {"metrics", metrics_json(m)},
                    {"bsi", row.bsi},
                    {"bsi_encoder", bsi_encoder},
                    {"train_logs", logs},
                    {"extras", extras},
                    {"timing_ms", ms_since(t0)}};
        write_json(out / "runs" / (row.run_id + ".json"), rec);
      }
    }
  }

  std::vector<std::string> lines;
  for (const MetricsRow& r : rows) lines.push_back(metrics_csv_row(r));
  write_lines(out / "metrics.csv", metrics_csv_header(), lines);
  write_summary(out / "summary.csv", rows);
  return rows;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const std::string& which) {
  static const std::set<std::string> kinds = {"seg", "n_sweep", "m_sweep", "k_train_sweep", "ft"};
  if (!kinds.count(which)) {
    throw ConfigError("unknown ablation '" + which + "' (seg, n_sweep, m_sweep, k_train_sweep, ft)");
  }
  Lab lab(cfg);
  const std::size_t C = cfg.num_classes, G = cfg.num_groups;
  const fs::path out = cfg.out;
  save_config(cfg, out / "config.json");
  std::vector<AblationRow> rows;

  for (std::size_t i = 0; i < cfg.ablation_seeds; ++i) {
    const std::uint64_t seed = run_seed(cfg.seed, i);
    auto [train_ds, test_ds] = lab.datasets(1.0, seed);
    const CompositeSpec spec;
    const LabeledImages train = render_dataset(lab.task(), train_ds, spec);
    const LabeledImages test = render_dataset(lab.task(), test_ds, spec);
    const ProbeConfig pc = lab.probe_config(seed);

    auto bap_row = [&](const std::string& label, std::size_t N, std::size_t M, std::size_t K, Degradation d) {
      AlignConfig ac = lab.align_config(seed);
      ac.N = N;
      ac.M = M;
      ac.K = K;
      ac.degradation = d;
      const auto fgs = lab.select_foregrounds(N, seed);
      auto [student, log] = run_bap(lab, fgs, ac, seed);
      const GroupMetrics m = probe_metrics(student, train, test, C, G, pc);
      AblationRow r{which, label, N, M, K, degradation_tag(d), ac.epochs, seed, m.avg, m.wga};
      rows.push_back(r);
      return student;
    };

    if (which == "seg") {
      const GroupMetrics native = probe_metrics(lab.teacher(), train, test, C, G, pc);
      rows.push_back({which, "native-lp", 0, 0, 0, "none", 0, seed, native.avg, native.wga});
      for (Degradation d : {Degradation::Perfect, Degradation::Noisy, Degradation::Botched, Degradation::BBox}) {
        bap_row("bap-lp", cfg.bap.N, cfg.bap.M, cfg.bap.K, d);
      }
    } else if (which == "n_sweep") {
      for (std::size_t N : cfg.n_grid) bap_row("bap-lp", N, cfg.bap.M, cfg.bap.K, cfg.degradation);
    } else if (which == "m_sweep") {
      for (std::size_t N : cfg.m_sweep_n)
        for (std::size_t M : cfg.m_grid) bap_row("bap-lp", N, M, cfg.bap.K, cfg.degradation);
    } else if (which == "k_train_sweep") {
      for (std::size_t K : cfg.k_train_grid) bap_row("bap-lp", cfg.bap.N, cfg.bap.M, K, cfg.degradation);
    } else {
      const EncoderModel student = bap_row("bap-lp", cfg.bap.N, cfg.bap.M, cfg.bap.K, cfg.degradation);
      FinetuneConfig fc = cfg.finetune;
      fc.seed = derive(seed, kTagFinetune);
      const FinetuneResult ft = finetune_on_correlated(student, train, test, C, G, fc);
      for (std::size_t e = 0; e < ft.wga.size(); ++e) {
        rows.push_back({which, "bap-ft", cfg.bap.N, cfg.bap.M, cfg.bap.K, degradation_tag(cfg.degradation), e, seed,
                        ft.avg[e], ft.wga[e]});
      }
    }
  }

  std::vector<std::string> lines;
  for (const AblationRow& r : rows) lines.push_back(ablation_csv_row(r));
  write_lines(out / ("ablate_" + which + ".csv"), ablation_csv_header(), lines);
  return rows;
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string& header) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, header);
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_csv(line));
  }
  return rows;
}

std::size_t column(const std::string& header, const std::string& name) {
  const auto cols = split_csv(header);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == name) return i;
  }
  throw ManifestError("column '" + name + "' missing from header " + header);
}

// Groups ablation rows by the listed key columns and averages avg/wga.
void aggregate_ablation(const fs::path& src, const fs::path& dst, const std::vector<std::string>& keys,
                        const std::string& label_filter) {
  std::string header;
  const auto rows = read_csv(src, header);
  std::vector<std::size_t> kc;
  for (const auto& k : keys) kc.push_back(column(header, k));
  const std::size_t label = column(header, "label"), avg = column(header, "avg"), wga = column(header, "wga");
  std::vector<std::vector<std::string>> order;
  std::map<std::vector<std::string>, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (const auto& r : rows) {
    if (!label_filter.empty() && r[label] != label_filter) continue;
    std::vector<std::string> key;
    for (std::size_t c : kc) key.push_back(r[c]);
    if (!acc.count(key)) order.push_back(key);
    acc[key].first.push_back(std::stod(r[avg]));
    acc[key].second.push_back(std::stod(r[wga]));
  }
  std::string head;
  for (const auto& k : keys) head += k + ",";
  head += "n,avg_mean,avg_std,wga_mean,wga_std";
  std::vector<std::string> lines;
  for (const auto& key : order) {
    std::string line;
    for (const auto& k : key) line += k + ",";
    const auto& [a, w] = acc[key];
    const MeanStd ma = mean_std(a), mw = mean_std(w);
    line += std::to_string(a.size()) + "," + fmt(ma.mean) + "," + fmt(ma.std) + "," + fmt(mw.mean) + "," + fmt(mw.std);
    lines.push_back(line);
  }
  write_lines(dst, head, lines);
}

}  // namespace

ReportResult cmd_report(const fs::path& dir) {
  ReportResult res;
  if (!fs::exists(dir / "config.json")) {
    throw ManifestError("no config.json in " + dir.string());
  }
  const ExperimentConfig cfg = load_config(dir / "config.json");

  // Metrics straight from the RunRecords.
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < cfg.num_seeds; ++i) {
    for (double rho : cfg.rhos) {
      for (const std::string& method : cfg.methods) {
        const std::string id = run_id(method, rho, i);
        const fs::path p = dir / "runs" / (id + ".json");
        if (!fs::exists(p)) {
          res.missing.push_back("run " + id);
          continue;
        }
        std::ifstream in(p);
        json rec;
        in >> rec;
        MetricsRow r;
        r.run_id = id;
        r.method = method;
        r.rho = rec.at("rho").get<double>();
        r.seed = rec.at("seed").get<std::uint64_t>();
        r.bsi = rec.at("bsi").get<double>();
        const json& m = rec.at("metrics");
        r.avg = m.at("avg").get<double>();
        r.wga = m.at("wga").get<double>();
        for (const json& c : m.at("cells")) {
          const auto y = c.at("y").get<std::size_t>(), g = c.at("g").get<std::size_t>();
          const auto n = c.at("count").get<double>();
          if (y < 2 && g < 2 && n > 0) r.acc[y][g] = c.at("correct").get<double>() / n;
        }
        rows.push_back(r);
      }
    }
  }
  const fs::path summary = dir / "report" / "summary.csv";
  write_summary(summary, rows);
  res.written.push_back(summary);

  const fs::path plots = dir / "report";
  const fs::path k_src = dir / "k_ablation.csv";
  if (fs::exists(k_src)) {
    fs::copy_file(k_src, plots / "fig1_k_sweep.csv", fs::copy_options::overwrite_existing);
    res.written.push_back(plots / "fig1_k_sweep.csv");
    if (fs::exists(dir / "var_law.csv")) {
      fs::copy_file(dir / "var_law.csv", plots / "fig1_var_law.csv", fs::copy_options::overwrite_existing);
      res.written.push_back(plots / "fig1_var_law.csv");
    }
  } else {
    res.missing.push_back("fig1: k_ablation.csv");
  }
  struct FigureSource {
    std::string figure;
    std::string file;
    std::vector<std::string> keys;
    std::string label;
  };
  const std::vector<FigureSource> figs = {{"fig4_n_sweep", "ablate_n_sweep.csv", {"N"}, "bap-lp"},
                                          {"fig5_m_sweep", "ablate_m_sweep.csv", {"N", "M"}, "bap-lp"},
                                          {"fig6_finetune", "ablate_ft.csv", {"epoch"}, "bap-ft"}};
  for (const auto& f : figs) {
    const fs::path src = dir / f.file;
    if (!fs::exists(src)) {
      res.missing.push_back(f.figure + ": " + f.file);
      continue;
    }
    const fs::path dst = plots / (f.figure + ".csv");
    aggregate_ablation(src, dst, f.keys, f.label);
    res.written.push_back(dst);
  }
  for (const char* extra : {"ablate_seg.csv", "ablate_k_train_sweep.csv", "additivity.csv"}) {
    if (!fs::exists(dir / extra)) res.missing.push_back(std::string("table: ") + extra);
  }

  std::vector<std::string> missing_lines(res.missing.begin(), res.missing.end());
  write_lines(plots / "missing.txt", "# missing runs and sources", missing_lines);
  res.written.push_back(plots / "missing.txt");
  return res;
}

}  // namespace bap
