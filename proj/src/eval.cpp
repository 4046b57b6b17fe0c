#include "codedlf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "codedlf/error.hpp"

namespace codedlf::eval {

using nlohmann::json;

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + ": images differ in size");
  }
}

json score_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

double score_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInf;
    throw Error(ErrorKind::Schema, "score must be a number or \"inf\"");
  }
  return j.get<double>();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string fmt(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (a.size() == 0) throw Error(ErrorKind::DimensionMismatch, "psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.pixels[i] - b.pixels[i];
    se += d * d;
  }
  double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Image& a, const Image& b, std::size_t window, double k1, double k2, double peak) {
  require_same_shape(a, b, "ssim");
  if (window == 0 || a.height < window || a.width < window) {
    throw Error(ErrorKind::DimensionMismatch, "ssim: image smaller than the window");
  }
  const double c1 = (k1 * peak) * (k1 * peak), c2 = (k2 * peak) * (k2 * peak);
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + window <= a.height; ++y0) {
    for (std::size_t x0 = 0; x0 + window <= a.width; ++x0) {
      double ma = 0, mb = 0;
      for (std::size_t y = y0; y < y0 + window; ++y)
        for (std::size_t x = x0; x < x0 + window; ++x) {
          ma += a.at(y, x);
          mb += b.at(y, x);
        }
      ma /= n;
      mb /= n;
      double va = 0, vb = 0, cov = 0;
      for (std::size_t y = y0; y < y0 + window; ++y)
        for (std::size_t x = x0; x < x0 + window; ++x) {
          double da = a.at(y, x) - ma, db = b.at(y, x) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double EvalReport::offset(std::size_t i) const {
  return (static_cast<double>(i) - static_cast<double>(m - 1) / 2.0) * step;
}

json to_json(const EvalReport& r) {
  json p = json::array(), s = json::array();
  for (std::size_t i = 0; i < r.m; ++i) {
    json prow = json::array(), srow = json::array();
    for (std::size_t j = 0; j < r.m; ++j) {
      prow.push_back(score_json(r.psnr[i][j]));
      srow.push_back(r.ssim[i][j]);
    }
    p.push_back(prow);
    s.push_back(srow);
  }
  return {{"checkpoint", r.checkpoint}, {"scene", r.scene},
          {"grid", {{"m", r.m}, {"step", r.step}}},
          {"psnr", p}, {"ssim", s},
          {"mean_psnr", score_json(r.mean_psnr)}, {"mean_ssim", r.mean_ssim},
          {"warnings", r.warnings}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.scene = j.at("scene").get<std::string>();
    r.m = j.at("grid").at("m").get<std::size_t>();
    r.step = j.at("grid").at("step").get<double>();
    const auto& p = j.at("psnr");
    const auto& s = j.at("ssim");
    if (p.size() != r.m || s.size() != r.m) throw Error(ErrorKind::Schema, "report grid size mismatch");
    for (std::size_t i = 0; i < r.m; ++i) {
      if (p[i].size() != r.m || s[i].size() != r.m) throw Error(ErrorKind::Schema, "report grid size mismatch");
      std::vector<double> prow, srow;
      for (std::size_t k = 0; k < r.m; ++k) {
        prow.push_back(score_from_json(p[i][k]));
        srow.push_back(s[i][k].get<double>());
      }
      r.psnr.push_back(std::move(prow));
      r.ssim.push_back(std::move(srow));
    }
    r.mean_psnr = score_from_json(j.at("mean_psnr"));
    r.mean_ssim = j.at("mean_ssim").get<double>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("eval report: ") + e.what());
  }
  return r;
}

void save_report(const EvalReport& r, const std::filesystem::path& path) {
  std::string text = to_json(r).dump(2) + "\n";
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

EvalReport load_report(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::Schema, path.string() + ": not valid JSON");
  return report_from_json(j);
}

EvalReport eval_grid(const train::Checkpoint& ckpt, const SceneSpec& scene, const EvalOptions& opts,
                     const std::string& checkpoint_id, const std::string& scene_id) {
  if (opts.m < 1 || !(opts.step > 0)) throw Error(ErrorKind::InvalidConfig, "eval: need m >= 1, step > 0");
  validate_scene(scene, ckpt.render.t_min, ckpt.render.t_max);
  LightField lf = synth_lightfield(scene, opts.grid_u, opts.grid_v, opts.height, opts.width, opts.synth_seed);
  Image input = train::observe(lf, ckpt.mode, ckpt.pattern ? &*ckpt.pattern : nullptr);
  ad::Value featvol = train::feature_volume(ckpt, input);

  EvalReport r;
  r.checkpoint = checkpoint_id;
  r.scene = scene_id;
  r.m = opts.m;
  r.step = opts.step;
  r.psnr.assign(r.m, std::vector<double>(r.m));
  r.ssim.assign(r.m, std::vector<double>(r.m));
  std::vector<double> all_p, all_s;
  for (std::size_t i = 0; i < r.m; ++i) {
    for (std::size_t j = 0; j < r.m; ++j) {
      ContinuousViewpoint vp{r.offset(i), r.offset(j)};
      Image truth = synth_view(scene, vp, opts.height, opts.width, opts.synth_seed);
      Image pred = train::render_view(ckpt, featvol, vp).image;
      r.psnr[i][j] = psnr(pred, truth);
      r.ssim[i][j] = ssim(pred, truth);
      all_p.push_back(r.psnr[i][j]);
      all_s.push_back(r.ssim[i][j]);
    }
  }
  r.mean_psnr = mean_of(all_p);
  r.mean_ssim = mean_of(all_s);

  const double extent = std::abs(r.offset(0));
  const double captured = static_cast<double>(std::min(opts.grid_u, opts.grid_v) - 1) / 2.0;
  if (extent > captured) {
    r.warnings.push_back("grid extends to |u|,|v| = " + fmt(extent) + " beyond the captured views (" +
                         fmt(captured) + "); outer viewpoints are extrapolated");
  }
  double max_d = 0.0;
  for (const auto& l : scene.layers) max_d = std::max(max_d, std::abs(l.disparity));
  const double shift = max_d * extent;
  if (shift > static_cast<double>(std::min(opts.height, opts.width)) / 4.0) {
    r.warnings.push_back("parallax of up to " + fmt(shift) +
                         " px exceeds a quarter of the image; border content is unobserved");
  }
  return r;
}

const std::array<Rgb8, 256>& viridis() {
  static const std::array<Rgb8, 256> table = {{
#include "viridis.inc"
  }};
  return table;
}

std::vector<std::uint8_t> heatmap_png(const EvalReport& r, std::size_t cell_px, std::optional<double> lo,
                                      std::optional<double> hi) {
  if (r.m == 0 || cell_px == 0) throw Error(ErrorKind::InvalidConfig, "heatmap: empty grid");
  double fmin = kInf, fmax = -kInf;
  for (const auto& row : r.psnr)
    for (double v : row)
      if (std::isfinite(v)) {
        fmin = std::min(fmin, v);
        fmax = std::max(fmax, v);
      }
  double a = lo.value_or(std::isfinite(fmin) ? fmin : 0.0);
  double b = hi.value_or(std::isfinite(fmax) ? fmax : 1.0);
  const auto& table = viridis();
  const std::size_t side = r.m * cell_px;
  std::vector<Rgb8> px(side * side);
  // Rows follow v, columns follow u.
  for (std::size_t i = 0; i < r.m; ++i) {
    for (std::size_t j = 0; j < r.m; ++j) {
      double v = r.psnr[i][j];
      double f = std::isinf(v) ? (v > 0 ? 1.0 : 0.0) : (b > a ? (v - a) / (b - a) : 0.5);
      f = std::clamp(f, 0.0, 1.0);
      Rgb8 c = table[static_cast<std::size_t>(std::lround(f * 255.0))];
      for (std::size_t y = j * cell_px; y < (j + 1) * cell_px; ++y)
        for (std::size_t x = i * cell_px; x < (i + 1) * cell_px; ++x) px[y * side + x] = c;
    }
  }
  return encode_png_rgb8(side, side, px);
}

double corner_psnr(const EvalReport& r) {
  if (r.m < 4) throw Error(ErrorKind::InvalidConfig, "corner_psnr needs m >= 4");
  const std::size_t idx[4] = {0, 1, r.m - 2, r.m - 1};
  std::vector<double> v;
  for (std::size_t i : idx)
    for (std::size_t j : idx) v.push_back(r.psnr[i][j]);
  return mean_of(v);
}

double center_psnr(const EvalReport& r) {
  if (r.m % 2 == 1) return r.psnr[r.m / 2][r.m / 2];
  const std::size_t c = r.m / 2;
  return mean_of({r.psnr[c - 1][c - 1], r.psnr[c - 1][c], r.psnr[c][c - 1], r.psnr[c][c]});
}

AblationTable compare_ablations(const std::vector<NamedScene>& scenes,
                                const std::vector<NamedCheckpoint>& variants, const EvalOptions& opts) {
  if (scenes.empty()) throw Error(ErrorKind::InvalidConfig, "compare_ablations: empty scene set");
  if (variants.empty()) throw Error(ErrorKind::InvalidConfig, "compare_ablations: no variants");
  AblationTable t;
  std::map<std::string, std::vector<const AblationRow*>> by_variant;
  for (const auto& s : scenes) {
    for (const auto& v : variants) {
      if (!v.checkpoint) throw Error(ErrorKind::InvalidConfig, "compare_ablations: null checkpoint");
      EvalReport r = eval_grid(*v.checkpoint, s.spec, opts, v.variant, s.id);
      t.rows.push_back({s.id, v.variant, r.mean_psnr, r.mean_ssim,
                        r.m >= 4 ? corner_psnr(r) : r.mean_psnr, center_psnr(r)});
    }
  }
  for (const auto& v : variants) {
    AblationRow sum{"mean", v.variant, 0, 0, 0, 0};
    double n = 0;
    for (const auto& row : t.rows) {
      if (row.variant != v.variant) continue;
      sum.mean_psnr += row.mean_psnr;
      sum.mean_ssim += row.mean_ssim;
      sum.corner_psnr += row.corner_psnr;
      sum.center_psnr += row.center_psnr;
      n += 1;
    }
    sum.mean_psnr /= n;
    sum.mean_ssim /= n;
    sum.corner_psnr /= n;
    sum.center_psnr /= n;
    t.summary.push_back(sum);
  }
  return t;
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "scene,variant,mean_psnr,mean_ssim,corner_psnr,center_psnr\n";
  for (const auto* set : {&rows, &summary})
    for (const auto& r : *set)
      os << r.scene << ',' << r.variant << ',' << fmt(r.mean_psnr) << ',' << fmt(r.mean_ssim) << ','
         << fmt(r.corner_psnr) << ',' << fmt(r.center_psnr) << '\n';
  return os.str();
}

std::string AblationTable::to_markdown() const {
  std::ostringstream os;
  os << "| variant | PSNR (dB) | SSIM | corner PSNR | center PSNR |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : summary)
    os << "| " << r.variant << " | " << fmt(r.mean_psnr) << " | " << fmt(r.mean_ssim) << " | "
       << fmt(r.corner_psnr) << " | " << fmt(r.center_psnr) << " |\n";
  return os.str();
}

}  // namespace codedlf::eval
