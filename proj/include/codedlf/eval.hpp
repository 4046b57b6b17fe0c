#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "codedlf/image.hpp"
#include "codedlf/lightfield.hpp"
#include "codedlf/training.hpp"

namespace codedlf::eval {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / MSE); +inf for identical images.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Mean SSIM over all valid window x window positions (stride 1, uniform
// weights), C1 = (k1 peak)^2, C2 = (k2 peak)^2.
double ssim(const Image& a, const Image& b, std::size_t window = 8, double k1 = 0.01,
            double k2 = 0.03, double peak = 1.0);

struct EvalOptions {
  std::size_t m = 13;
  double step = 0.5;
  std::size_t height = 48;
  std::size_t width = 48;
  std::size_t grid_u = 5;
  std::size_t grid_v = 5;
  std::uint64_t synth_seed = 0;
};

// psnr[i][j] / ssim[i][j] belong to viewpoint (u, v) = (offset(i), offset(j))
// with offset(i) = (i - (m - 1) / 2) * step.
struct EvalReport {
  std::string checkpoint;
  std::string scene;
  std::size_t m = 0;
  double step = 0.0;
  std::vector<std::vector<double>> psnr;
  std::vector<std::vector<double>> ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::vector<std::string> warnings;

  double offset(std::size_t i) const;
  bool operator==(const EvalReport&) const = default;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
void save_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

// Encodes the scene's captured field with the checkpoint's input mode,
// computes the feature volume once and scores every grid viewpoint against
// synth_view ground truth.
EvalReport eval_grid(const train::Checkpoint& ckpt, const SceneSpec& scene, const EvalOptions& opts,
                     const std::string& checkpoint_id = "", const std::string& scene_id = "");

// PSNR heat map: one cell_px square per viewpoint, viridis over
// [lo, hi] (defaults to the finite range of the report).
std::vector<std::uint8_t> heatmap_png(const EvalReport& r, std::size_t cell_px = 16,
                                      std::optional<double> lo = std::nullopt,
                                      std::optional<double> hi = std::nullopt);

const std::array<Rgb8, 256>& viridis();

// Mean PSNR over the 16 corner-most viewpoints (2 x 2 at each corner).
double corner_psnr(const EvalReport& r);
// PSNR at the grid center (m odd) or mean of the 4 central cells (m even).
double center_psnr(const EvalReport& r);

struct AblationRow {
  std::string scene;
  std::string variant;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double corner_psnr = 0.0;
  double center_psnr = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  // Per-variant means over scenes, in first-appearance order.
  std::vector<AblationRow> summary;

  std::string to_csv() const;
  std::string to_markdown() const;
};

struct NamedScene {
  std::string id;
  SceneSpec spec;
};

struct NamedCheckpoint {
  std::string variant;
  const train::Checkpoint* checkpoint = nullptr;
};

AblationTable compare_ablations(const std::vector<NamedScene>& scenes,
                                const std::vector<NamedCheckpoint>& variants,
                                const EvalOptions& opts);

}  // namespace codedlf::eval
