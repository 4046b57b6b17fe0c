#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "codedlf/coding.hpp"
#include "codedlf/lightfield.hpp"
#include "codedlf/models.hpp"
#include "codedlf/optim.hpp"
#include "codedlf/rendering.hpp"

namespace codedlf::train {

// A training scene: an inline spec (synthesized on demand) or a light-field
// directory on disk.
struct DatasetEntry {
  std::optional<SceneSpec> spec;
  std::filesystem::path path;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t steps_per_scene = 1;
  std::size_t rays_per_batch = 1024;
  std::size_t patch_h = 48;
  std::size_t patch_w = 48;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Learning rate is multiplied by lr_decay_factor at each listed fraction of
  // the total step count.
  std::vector<double> lr_decay_at = {0.6, 0.85};
  double lr_decay_factor = 0.5;
  std::uint64_t seed = 0;
  InputMode mode = InputMode::Joint;

  // Dataset: explicit entries plus `random_scenes` scenes drawn from
  // random_scene(scene_seed + i).
  std::vector<DatasetEntry> dataset;
  std::size_t random_scenes = 0;
  std::uint64_t scene_seed = 1000;
  std::size_t grid_u = 5;
  std::size_t grid_v = 5;
  std::size_t scene_h = 48;
  std::size_t scene_w = 48;

  // Coding pattern: loaded from pattern_path if set, otherwise generated.
  std::filesystem::path pattern_path;
  std::size_t pattern_k = 4;
  std::size_t pattern_tile = 4;
  std::uint64_t pattern_seed = 7;

  models::ModelConfig model;
  render::RenderConfig render;

  std::filesystem::path checkpoint_path;
  std::size_t checkpoint_every = 0;  // steps; 0 = only at the end
  std::filesystem::path loss_log;
  std::filesystem::path resume_from;

  std::size_t total_steps() const;
  std::size_t scene_count() const { return dataset.size() + random_scenes; }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Unknown keys are rejected. Relative paths resolve against `base_dir`.
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir = {});
// Applies a "key=value" override; nested keys use dots (model.nerfnet.width=32).
void apply_override(nlohmann::json& j, const std::string& assignment);

struct LossRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// Self-contained inference artifact.
struct Checkpoint {
  models::ModelConfig model;
  render::RenderConfig render;
  InputMode mode = InputMode::Joint;
  std::optional<CodingPattern> pattern;
  ad::ParamStore params;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::vector<LossRecord> history;
  nlohmann::json train_config;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

// One target ray: integer viewpoint offset and pixel, plus ground truth.
struct TargetRay {
  render::RayCoord ray;
  double target = 0.0;
  std::uint64_t id = 0;
};

struct TrainBatch {
  Image input;  // normalized coded image
  std::vector<TargetRay> rays;
};

// Normalized network input for `lf` under the checkpoint's input mode.
Image observe(const LightField& lf, InputMode mode, const CodingPattern* pattern);

// FeatNet input tensor: the normalized image, plus the exposure planes in
// joint mode.
ad::Value network_input(const Image& normalized, InputMode mode, const CodingPattern* pattern);

std::size_t featnet_in_channels(InputMode mode, const CodingPattern* pattern);

// Feature volume without graph recording.
ad::Value feature_volume(const Checkpoint& ckpt, const Image& normalized);

render::RenderedView render_view(const Checkpoint& ckpt, const ad::Value& featvol,
                                 const ContinuousViewpoint& vp);

// Forward, MSE over the batch rays, backward and one Adam step. Returns the loss.
double train_step(Checkpoint& ckpt, const TrainBatch& batch, double lr, const TrainConfig& cfg);

// Loss of a batch without updating anything.
ad::Value batch_loss(const Checkpoint& ckpt, const TrainBatch& batch);

struct TrainCallbacks {
  std::function<void(const LossRecord&)> on_step;
};

// Runs (or resumes) training and returns the final checkpoint.
Checkpoint train(const TrainConfig& cfg, const TrainCallbacks& callbacks = {});

// Builds the batch used at global step `step`; a pure function of the config.
TrainBatch make_batch(const TrainConfig& cfg, const LightField& field, const CodingPattern* pattern,
                      std::uint64_t step);

CodingPattern resolve_pattern(const TrainConfig& cfg);
LightField load_entry(const TrainConfig& cfg, std::size_t index);

void write_loss_log(const std::vector<LossRecord>& history, const std::filesystem::path& path);

}  // namespace codedlf::train
