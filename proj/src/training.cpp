#include "codedlf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "codedlf/error.hpp"
#include "codedlf/hash.hpp"

namespace codedlf::train {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'L', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

json history_to_json(const std::vector<LossRecord>& h) {
  json arr = json::array();
  for (const auto& r : h) arr.push_back({r.step, r.loss, r.lr, r.wall_ms});
  return arr;
}

std::vector<LossRecord> history_from_json(const json& j) {
  std::vector<LossRecord> h;
  for (const auto& r : j) {
    h.push_back({r.at(0).get<std::uint64_t>(), r.at(1).get<double>(), r.at(2).get<double>(),
                 r.at(3).get<double>()});
  }
  return h;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

double lr_at(const TrainConfig& cfg, std::uint64_t step) {
  double lr = cfg.lr;
  const double total = static_cast<double>(cfg.total_steps());
  for (double frac : cfg.lr_decay_at) {
    if (static_cast<double>(step) >= frac * total) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

// Scene visited at `step`: epochs walk a seeded permutation of the dataset.
std::size_t scene_for_step(const TrainConfig& cfg, std::uint64_t step) {
  const std::size_t n = cfg.scene_count();
  const std::uint64_t per_epoch = n * cfg.steps_per_scene;
  const std::uint64_t epoch = step / per_epoch;
  const std::size_t slot = static_cast<std::size_t>((step % per_epoch) / cfg.steps_per_scene);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  StreamRng rng(hash_combine({cfg.seed, epoch, 0x0da7a5e7ULL}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order[slot];
}

}  // namespace

std::size_t TrainConfig::total_steps() const { return epochs * scene_count() * steps_per_scene; }

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (steps_per_scene < 1) throw Error(ErrorKind::InvalidConfig, "steps_per_scene must be >= 1");
  if (rays_per_batch < 1) throw Error(ErrorKind::InvalidConfig, "rays_per_batch must be >= 1");
  if (patch_h < 1 || patch_w < 1) throw Error(ErrorKind::InvalidConfig, "patch size must be >= 1");
  if (scene_count() == 0) throw Error(ErrorKind::InvalidConfig, "dataset is empty");
  if (!(lr > 0)) throw Error(ErrorKind::InvalidConfig, "lr must be > 0");
  if (grid_u < 1 || grid_v < 1) throw Error(ErrorKind::InvalidConfig, "view grid must be >= 1");
  bool synthesized = random_scenes > 0;
  for (const auto& e : dataset) synthesized = synthesized || e.spec.has_value();
  if (synthesized && (scene_h < patch_h || scene_w < patch_w)) {
    throw Error(ErrorKind::InvalidConfig, "scene size must be at least the patch size");
  }
  render.validate();
  model.feat.validate();
  model.nerf.validate();
}

json to_json(const TrainConfig& cfg) {
  json dataset = json::array();
  for (const auto& e : cfg.dataset) {
    if (e.spec) dataset.push_back({{"spec", scene_to_json(*e.spec)}});
    else dataset.push_back({{"path", e.path.string()}});
  }
  return {{"epochs", cfg.epochs},
          {"steps_per_scene", cfg.steps_per_scene},
          {"rays_per_batch", cfg.rays_per_batch},
          {"patch", {cfg.patch_h, cfg.patch_w}},
          {"lr", cfg.lr},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"lr_decay_at", cfg.lr_decay_at},
          {"lr_decay_factor", cfg.lr_decay_factor},
          {"seed", cfg.seed},
          {"mode", to_string(cfg.mode)},
          {"dataset", dataset},
          {"random_scenes", cfg.random_scenes},
          {"scene_seed", cfg.scene_seed},
          {"grid", {cfg.grid_u, cfg.grid_v}},
          {"scene_size", {cfg.scene_h, cfg.scene_w}},
          {"pattern_path", cfg.pattern_path.string()},
          {"pattern_k", cfg.pattern_k},
          {"pattern_tile", cfg.pattern_tile},
          {"pattern_seed", cfg.pattern_seed},
          {"model", models::to_json(cfg.model)},
          {"render", render::to_json(cfg.render)},
          {"checkpoint_path", cfg.checkpoint_path.string()},
          {"checkpoint_every", cfg.checkpoint_every},
          {"loss_log", cfg.loss_log.string()},
          {"resume_from", cfg.resume_from.string()}};
}

TrainConfig train_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "train config must be a JSON object");
  static const std::set<std::string> known = {
      "epochs",       "steps_per_scene", "rays_per_batch", "patch",          "lr",
      "beta1",        "beta2",           "adam_eps",       "lr_decay_at",    "lr_decay_factor",
      "seed",         "mode",            "dataset",        "random_scenes",  "scene_seed",
      "grid",         "scene_size",      "pattern_path",   "pattern_k",      "pattern_tile",
      "pattern_seed", "model",           "render",         "checkpoint_path", "checkpoint_every",
      "loss_log",     "resume_from"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorKind::InvalidConfig, "unknown train config key '" + key + "'");
  }
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.steps_per_scene = j.value("steps_per_scene", cfg.steps_per_scene);
    cfg.rays_per_batch = j.value("rays_per_batch", cfg.rays_per_batch);
    if (j.contains("patch")) {
      cfg.patch_h = j["patch"].at(0).get<std::size_t>();
      cfg.patch_w = j["patch"].at(1).get<std::size_t>();
    }
    cfg.lr = j.value("lr", cfg.lr);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.lr_decay_at = j.value("lr_decay_at", cfg.lr_decay_at);
    cfg.lr_decay_factor = j.value("lr_decay_factor", cfg.lr_decay_factor);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("mode")) cfg.mode = parse_input_mode(j["mode"].get<std::string>());
    if (j.contains("dataset")) {
      for (const auto& e : j["dataset"]) {
        DatasetEntry entry;
        if (e.contains("spec")) entry.spec = scene_from_json(e["spec"]);
        else if (e.contains("spec_path")) entry.spec = load_scene(resolve(base_dir, e["spec_path"].get<std::string>()));
        else if (e.contains("path")) entry.path = resolve(base_dir, e["path"].get<std::string>());
        else throw Error(ErrorKind::InvalidConfig, "dataset entry needs 'spec', 'spec_path' or 'path'");
        cfg.dataset.push_back(std::move(entry));
      }
    }
    cfg.random_scenes = j.value("random_scenes", cfg.random_scenes);
    cfg.scene_seed = j.value("scene_seed", cfg.scene_seed);
    if (j.contains("grid")) {
      cfg.grid_u = j["grid"].at(0).get<std::size_t>();
      cfg.grid_v = j["grid"].at(1).get<std::size_t>();
    }
    if (j.contains("scene_size")) {
      cfg.scene_h = j["scene_size"].at(0).get<std::size_t>();
      cfg.scene_w = j["scene_size"].at(1).get<std::size_t>();
    }
    auto path_key = [&](const char* key, fs::path& dst) {
      if (j.contains(key) && !j[key].get<std::string>().empty()) dst = resolve(base_dir, j[key].get<std::string>());
    };
    path_key("pattern_path", cfg.pattern_path);
    cfg.pattern_k = j.value("pattern_k", cfg.pattern_k);
    cfg.pattern_tile = j.value("pattern_tile", cfg.pattern_tile);
    cfg.pattern_seed = j.value("pattern_seed", cfg.pattern_seed);
    if (j.contains("model")) {
      cfg.model = models::model_config_from_json(j["model"]);
    }
    if (j.contains("render")) cfg.render = render::render_config_from_json(j["render"]);
    path_key("checkpoint_path", cfg.checkpoint_path);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    path_key("loss_log", cfg.loss_log);
    path_key("resume_from", cfg.resume_from);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::InvalidConfig, "override must look like key=value: '" + assignment + "'");
  }
  std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// --- checkpoint ------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  json tensors = json::array();
  std::vector<std::uint8_t> blob;
  std::uint64_t offset = 0;
  auto emit = [&](const std::string& name, const char* kind, const ad::Shape& shape,
                  std::span<const double> values) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset},
                       {"count", values.size()}});
    for (double v : values) put_f32(blob, v);
    offset += values.size();
  };
  for (const auto& name : ckpt.params.names()) {
    const auto& p = ckpt.params.get(name);
    const auto& m = ckpt.params.moments(name);
    emit(name, "param", p.shape(), p.data());
    emit(name, "adam_m", p.shape(), m.m);
    emit(name, "adam_v", p.shape(), m.v);
  }
  json header = {{"format", kFormatVersion},
                 {"model", models::to_json(ckpt.model)},
                 {"render", render::to_json(ckpt.render)},
                 {"mode", to_string(ckpt.mode)},
                 {"pattern", ckpt.pattern ? pattern_to_json(*ckpt.pattern) : json(nullptr)},
                 {"seed", ckpt.seed},
                 {"epoch", ckpt.epoch},
                 {"step", ckpt.params.step_count()},
                 {"history", history_to_json(ckpt.history)},
                 {"train_config", ckpt.train_config},
                 {"tensors", tensors},
                 {"blob_floats", offset}};
  std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw Error(ErrorKind::Checkpoint, "not a checkpoint (bad magic)");
  }
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (hlen > bytes.size() - 16) throw Error(ErrorKind::Checkpoint, "checkpoint truncated in header");
  json header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen),
                            nullptr, false);
  if (header.is_discarded()) throw Error(ErrorKind::Checkpoint, "checkpoint header is not valid JSON");
  Checkpoint ckpt;
  try {
    if (header.at("format").get<int>() != kFormatVersion) {
      throw Error(ErrorKind::Checkpoint, "unsupported checkpoint format version");
    }
    const std::uint64_t floats = header.at("blob_floats").get<std::uint64_t>();
    const std::size_t blob_start = 16 + hlen;
    if (bytes.size() - blob_start != floats * 4) {
      throw Error(ErrorKind::Checkpoint, "checkpoint blob size mismatch (truncated or padded)");
    }
    ckpt.model = models::model_config_from_json(header.at("model"));
    ckpt.render = render::render_config_from_json(header.at("render"));
    ckpt.mode = parse_input_mode(header.at("mode").get<std::string>());
    if (!header.at("pattern").is_null()) ckpt.pattern = pattern_from_json(header.at("pattern"));
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    ckpt.history = history_from_json(header.at("history"));
    ckpt.train_config = header.value("train_config", json::object());
    ckpt.params.set_f32_storage(true);
    const std::uint8_t* blob = bytes.data() + blob_start;
    for (const auto& t : header.at("tensors")) {
      auto name = t.at("name").get<std::string>();
      auto kind = t.at("kind").get<std::string>();
      auto shape = t.at("shape").get<ad::Shape>();
      auto off = t.at("offset").get<std::uint64_t>();
      auto count = t.at("count").get<std::uint64_t>();
      if (off + count > floats || ad::shape_size(shape) != count) {
        throw Error(ErrorKind::Checkpoint, "tensor '" + name + "' has an inconsistent index entry");
      }
      std::vector<double> values(count);
      for (std::uint64_t i = 0; i < count; ++i) values[i] = get_f32(blob + 4 * (off + i));
      if (kind == "param") ckpt.params.add(name, shape, std::move(values));
      else if (kind == "adam_m") ckpt.params.moments(name).m = std::move(values);
      else if (kind == "adam_v") ckpt.params.moments(name).v = std::move(values);
      else throw Error(ErrorKind::Checkpoint, "unknown tensor kind '" + kind + "'");
    }
    ckpt.params.set_step_count(header.at("step").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Checkpoint, std::string("checkpoint header: ") + e.what());
  }
  // Every parameter the architecture needs must be present.
  auto reference = models::init_params(ckpt.model, 0);
  for (const auto& name : reference.names()) {
    if (!ckpt.params.contains(name) || ckpt.params.get(name).shape() != reference.get(name).shape()) {
      throw Error(ErrorKind::Checkpoint, "checkpoint parameter '" + name + "' missing or misshaped");
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const fs::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// --- inference helpers -----------------------------------------------------

std::size_t featnet_in_channels(InputMode mode, const CodingPattern* pattern) {
  if (mode != InputMode::Joint) return 1;
  if (!pattern) throw Error(ErrorKind::InvalidConfig, "joint mode requires a coding pattern");
  return 1 + pattern->k;
}

Image observe(const LightField& lf, InputMode mode, const CodingPattern* pattern) {
  if (mode == InputMode::Joint) {
    if (!pattern) throw Error(ErrorKind::InvalidConfig, "joint mode requires a coding pattern");
    if (pattern->height != lf.height || pattern->width != lf.width) {
      CodingPattern sized = pattern->resized(lf.height, lf.width);
      return normalize(encode(lf, mode, &sized));
    }
  }
  return normalize(encode(lf, mode, pattern));
}

ad::Value network_input(const Image& normalized, InputMode mode, const CodingPattern* pattern) {
  if (mode != InputMode::Joint) return models::featnet_input(normalized);
  if (!pattern) throw Error(ErrorKind::InvalidConfig, "joint mode requires a coding pattern");
  CodingPattern sized = pattern->height == normalized.height && pattern->width == normalized.width
                            ? *pattern
                            : pattern->resized(normalized.height, normalized.width);
  std::vector<Image> planes;
  for (std::size_t k = 0; k < sized.k; ++k) planes.push_back(sized.exposure_plane(k));
  return models::featnet_input(normalized, planes);
}

ad::Value feature_volume(const Checkpoint& ckpt, const Image& normalized) {
  ad::NoGradGuard guard;
  auto input = network_input(normalized, ckpt.mode, ckpt.pattern ? &*ckpt.pattern : nullptr);
  return models::featnet_forward(ckpt.params, ckpt.model.feat, input);
}

render::RenderedView render_view(const Checkpoint& ckpt, const ad::Value& featvol,
                                 const ContinuousViewpoint& vp) {
  return render::render_view(featvol, ckpt.params, ckpt.model.nerf, vp, ckpt.render);
}

// --- training --------------------------------------------------------------

CodingPattern resolve_pattern(const TrainConfig& cfg) {
  if (!cfg.pattern_path.empty()) {
    CodingPattern p = load_pattern(cfg.pattern_path);
    if (p.grid_u != cfg.grid_u || p.grid_v != cfg.grid_v) {
      throw Error(ErrorKind::DimensionMismatch, "pattern view grid does not match the training grid");
    }
    return p.resized(cfg.patch_h, cfg.patch_w);
  }
  return make_default_pattern(cfg.pattern_k, cfg.grid_u, cfg.grid_v, cfg.patch_h, cfg.patch_w,
                              cfg.pattern_tile, cfg.pattern_seed);
}

LightField load_entry(const TrainConfig& cfg, std::size_t index) {
  if (index < cfg.dataset.size()) {
    const auto& e = cfg.dataset[index];
    if (e.spec) return synth_lightfield(*e.spec, cfg.grid_u, cfg.grid_v, cfg.scene_h, cfg.scene_w, 0);
    try {
      LightField lf = load_lightfield(e.path);
      if (lf.grid_u != cfg.grid_u || lf.grid_v != cfg.grid_v || lf.height < cfg.patch_h ||
          lf.width < cfg.patch_w) {
        throw Error(ErrorKind::InconsistentDimensions, "view grid or size incompatible with config");
      }
      return lf;
    } catch (const Error& err) {
      throw Error(err.kind(), "dataset entry " + e.path.string() + ": " + err.what());
    }
  }
  SceneSpec spec = random_scene(cfg.scene_seed + (index - cfg.dataset.size()));
  return synth_lightfield(spec, cfg.grid_u, cfg.grid_v, cfg.scene_h, cfg.scene_w, 0);
}

TrainBatch make_batch(const TrainConfig& cfg, const LightField& field, const CodingPattern* pattern,
                      std::uint64_t step) {
  StreamRng rng(hash_combine({cfg.seed, step, 0xba7c4ULL}));
  const std::size_t x0 = field.width > cfg.patch_w ? rng() % (field.width - cfg.patch_w + 1) : 0;
  const std::size_t y0 = field.height > cfg.patch_h ? rng() % (field.height - cfg.patch_h + 1) : 0;
  LightField patch = extract_patch(field, x0, y0, cfg.patch_h, cfg.patch_w);
  TrainBatch batch;
  batch.input = observe(patch, cfg.mode, pattern);
  batch.rays.reserve(cfg.rays_per_batch);
  for (std::size_t r = 0; r < cfg.rays_per_batch; ++r) {
    std::size_t u = rng() % patch.grid_u, v = rng() % patch.grid_v;
    std::size_t x = rng() % patch.width, y = rng() % patch.height;
    TargetRay t;
    t.ray = {static_cast<double>(u) - static_cast<double>(patch.center_u),
             static_cast<double>(v) - static_cast<double>(patch.center_v), static_cast<double>(x),
             static_cast<double>(y)};
    t.target = patch.at(u, v, y, x);
    t.id = step * cfg.rays_per_batch + r;
    batch.rays.push_back(t);
  }
  return batch;
}

ad::Value batch_loss(const Checkpoint& ckpt, const TrainBatch& batch) {
  auto input = network_input(batch.input, ckpt.mode, ckpt.pattern ? &*ckpt.pattern : nullptr);
  ad::Value featvol = models::featnet_forward(ckpt.params, ckpt.model.feat, input);
  std::vector<render::RayCoord> rays;
  std::vector<std::uint64_t> ids;
  std::vector<double> targets;
  for (const auto& r : batch.rays) {
    rays.push_back(r.ray);
    ids.push_back(r.id);
    targets.push_back(r.target);
  }
  auto out = render::render_rays(featvol, ckpt.params, ckpt.model.nerf, rays, ckpt.render,
                                 render::SampleMode::Train, ids);
  const std::size_t n = targets.size();
  return ad::mse(out.luminance, ad::Value::constant({n}, std::move(targets)));
}

double train_step(Checkpoint& ckpt, const TrainBatch& batch, double lr, const TrainConfig& cfg) {
  // The feature volume is detached and the rays are differentiated in small
  // chunks whose intermediates stay cache resident; the accumulated volume
  // gradient is then pushed through FeatNet once.
  constexpr std::size_t kRayChunk = 128;
  auto input = network_input(batch.input, ckpt.mode, ckpt.pattern ? &*ckpt.pattern : nullptr);
  ad::Value featvol = models::featnet_forward(ckpt.params, ckpt.model.feat, input);
  ad::Value detached =
      ad::Value::parameter(featvol.shape(), std::vector<double>(featvol.data().begin(), featvol.data().end()));
  const std::size_t n = batch.rays.size();
  if (n == 0) throw Error(ErrorKind::InvalidConfig, "train_step: empty batch");
  const ad::Value scale = ad::Value::constant({1}, {1.0 / static_cast<double>(n)});
  double loss = 0.0;
  for (std::size_t c0 = 0; c0 < n; c0 += kRayChunk) {
    const std::size_t c1 = std::min(n, c0 + kRayChunk);
    std::vector<render::RayCoord> rays;
    std::vector<std::uint64_t> ids;
    std::vector<double> targets;
    for (std::size_t r = c0; r < c1; ++r) {
      rays.push_back(batch.rays[r].ray);
      ids.push_back(batch.rays[r].id);
      targets.push_back(batch.rays[r].target);
    }
    auto out = render::render_rays(detached, ckpt.params, ckpt.model.nerf, rays, ckpt.render,
                                   render::SampleMode::Train, ids);
    ad::Value diff = ad::sub(out.luminance, ad::Value::constant({c1 - c0}, std::move(targets)));
    ad::Value part = ad::mul(ad::sum(ad::mul(diff, diff)), scale);
    loss += part.item();
    ad::backward(part);
  }
  ad::backward(featvol, detached.grad());
  ad::adam_step(ckpt.params, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  return loss;
}

void write_loss_log(const std::vector<LossRecord>& history, const fs::path& path) {
  std::ostringstream os;
  os << "step,loss,lr,wall_ms\n";
  os.precision(17);
  for (const auto& r : history) os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.wall_ms << '\n';
  std::string s = os.str();
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Checkpoint train(const TrainConfig& cfg_in, const TrainCallbacks& callbacks) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  std::optional<CodingPattern> pattern;
  if (cfg.mode == InputMode::Joint) pattern = resolve_pattern(cfg);
  cfg.model.feat.in_channels = featnet_in_channels(cfg.mode, pattern ? &*pattern : nullptr);
  cfg.render.seed = cfg.seed;

  Checkpoint ckpt;
  if (!cfg.resume_from.empty()) {
    ckpt = load_checkpoint(cfg.resume_from);
    if (ckpt.mode != cfg.mode || to_json(ckpt.model) != to_json(cfg.model) ||
        render::to_json(ckpt.render) != render::to_json(cfg.render)) {
      throw Error(ErrorKind::InvalidConfig, "resume checkpoint does not match the training config");
    }
  } else {
    ckpt.model = cfg.model;
    ckpt.render = cfg.render;
    ckpt.mode = cfg.mode;
    ckpt.params = models::init_params(cfg.model, cfg.seed);
    ckpt.params.set_f32_storage(true);
    ckpt.params.round_to_f32();
  }
  ckpt.pattern = pattern;
  ckpt.seed = cfg.seed;
  ckpt.train_config = to_json(cfg);

  const std::uint64_t total = cfg.total_steps();
  const std::uint64_t per_epoch = cfg.scene_count() * cfg.steps_per_scene;
  std::map<std::size_t, LightField> fields;
  const auto t0 = std::chrono::steady_clock::now();
  // Wall time keeps counting across resumes.
  const double base_ms = ckpt.history.empty() ? 0.0 : ckpt.history.back().wall_ms;
  for (std::uint64_t step = ckpt.params.step_count(); step < total; ++step) {
    std::size_t scene = scene_for_step(cfg, step);
    auto it = fields.find(scene);
    if (it == fields.end()) it = fields.emplace(scene, load_entry(cfg, scene)).first;
    TrainBatch batch = make_batch(cfg, it->second, pattern ? &*pattern : nullptr, step);
    double lr = lr_at(cfg, step);
    double loss = train_step(ckpt, batch, lr, cfg);
    if (!std::isfinite(loss)) throw Error(ErrorKind::NonFinite, "training loss became non-finite");
    double ms = base_ms + std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    LossRecord rec{step, loss, lr, ms};
    ckpt.history.push_back(rec);
    ckpt.epoch = (step + 1) / per_epoch;
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total) {
      if (!cfg.checkpoint_path.empty()) save_checkpoint(ckpt, cfg.checkpoint_path);
      if (!cfg.loss_log.empty()) write_loss_log(ckpt.history, cfg.loss_log);
    }
    if (callbacks.on_step) callbacks.on_step(rec);
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(ckpt, cfg.checkpoint_path);
  if (!cfg.loss_log.empty()) write_loss_log(ckpt.history, cfg.loss_log);
  return ckpt;
}

}  // namespace codedlf::train
