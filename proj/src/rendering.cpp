#include "codedlf/rendering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include "codedlf/error.hpp"

namespace codedlf::render {

using nlohmann::json;

void RenderConfig::validate() const {
  if (!(std::isfinite(t_min) && std::isfinite(t_max) && t_min < t_max)) {
    throw Error(ErrorKind::InvalidConfig, "render: need finite t_min < t_max");
  }
  if (n_train_samples < 2 || n_test_samples < 2) {
    throw Error(ErrorKind::InvalidConfig, "render: sample counts must be >= 2");
  }
}

json to_json(const RenderConfig& cfg) {
  return {{"t_min", cfg.t_min},
          {"t_max", cfg.t_max},
          {"n_train_samples", cfg.n_train_samples},
          {"n_test_samples", cfg.n_test_samples},
          {"seed", cfg.seed}};
}

RenderConfig render_config_from_json(const json& j) {
  RenderConfig cfg;
  try {
    cfg.t_min = j.value("t_min", cfg.t_min);
    cfg.t_max = j.value("t_max", cfg.t_max);
    cfg.n_train_samples = j.value("n_train_samples", cfg.n_train_samples);
    cfg.n_test_samples = j.value("n_test_samples", cfg.n_test_samples);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("render config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

double affine(double v, double lo, double hi) { return 2.0 * (v - lo) / (hi - lo) - 1.0; }

}  // namespace

ad::Vec3 map_to_ndc(const RayCoord& ray, double t, std::size_t height, std::size_t width,
                    const RenderConfig& cfg) {
  // Degenerate 1-pixel axes map to the center.
  double x = width > 1 ? affine(ray.x + ray.u * t, 0.0, static_cast<double>(width - 1)) : 0.0;
  double y = height > 1 ? affine(ray.y + ray.v * t, 0.0, static_cast<double>(height - 1)) : 0.0;
  return {x, y, affine(t, cfg.t_min, cfg.t_max)};
}

std::vector<double> place_samples(const RenderConfig& cfg, SampleMode mode, StreamRng* rng) {
  const std::size_t n = mode == SampleMode::Train ? cfg.n_train_samples : cfg.n_test_samples;
  const double bin = (cfg.t_max - cfg.t_min) / static_cast<double>(n);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lo = cfg.t_min + bin * static_cast<double>(i);
    double offset = 0.5;
    if (mode == SampleMode::Train) {
      if (!rng) throw Error(ErrorKind::InvalidConfig, "place_samples: train mode needs an rng");
      offset = rng->uniform();
    }
    t[i] = lo + bin * offset;
  }
  // A draw at the very bottom of bin i+1 can round onto the top of bin i.
  for (std::size_t i = 1; i < n; ++i) {
    if (t[i] <= t[i - 1]) t[i] = std::nextafter(t[i - 1], cfg.t_max);
  }
  return t;
}

CompositeResult composite(std::span<const double> c, std::span<const double> sigma,
                          std::span<const double> t, double t_far) {
  if (c.size() != sigma.size() || c.size() != t.size()) {
    throw Error(ErrorKind::DimensionMismatch, "composite: c, sigma and t must have equal length");
  }
  CompositeResult r;
  const std::size_t n = t.size();
  r.weights.resize(n);
  r.transmittance.resize(n);
  double trans = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double next = i + 1 < n ? t[i + 1] : t_far;
    if (i + 1 < n ? !(next > t[i]) : !(next >= t[i])) {
      throw Error(ErrorKind::NonMonotone, "composite: sample positions must be strictly increasing");
    }
    if (sigma[i] < 0) throw Error(ErrorKind::InvalidConfig, "composite: negative density");
    double keep = std::exp(-sigma[i] * (next - t[i]));
    r.transmittance[i] = trans;
    r.weights[i] = trans * (1.0 - keep);
    r.luminance += r.weights[i] * c[i];
    trans *= keep;
  }
  r.final_transmittance = trans;
  return r;
}

double RayBatch::pseudo_depth(std::size_t ray) const {
  double wsum = 0.0, wt = 0.0;
  for (std::size_t i = 0; i < samples_per_ray; ++i) {
    std::size_t idx = ray * samples_per_ray + i;
    wsum += weights[idx];
    wt += weights[idx] * t[idx];
  }
  return wt / std::max(wsum, 1e-8);
}

RayBatch render_rays(const ad::Value& featvol, const ad::ParamStore& params,
                     const models::NeRFNetConfig& nerf, std::span<const RayCoord> rays,
                     const RenderConfig& cfg, SampleMode mode,
                     std::span<const std::uint64_t> ray_ids) {
  if (featvol.rank() != 4) {
    throw Error(ErrorKind::DimensionMismatch,
                "render: feature volume must be [H,W,D,C], got " + ad::shape_string(featvol.shape()));
  }
  if (!ray_ids.empty() && ray_ids.size() != rays.size()) {
    throw Error(ErrorKind::DimensionMismatch, "render: one id per ray required");
  }
  const std::size_t h = featvol.dim(0), w = featvol.dim(1);
  const std::size_t nr = rays.size();
  const std::size_t s = mode == SampleMode::Train ? cfg.n_train_samples : cfg.n_test_samples;
  RayBatch out;
  out.samples_per_ray = s;
  out.t.resize(nr * s);
  std::vector<ad::Vec3> coords(nr * s);
  std::vector<models::NerfQuery> queries(nr * s);
  std::vector<double> shared_t;
  if (mode == SampleMode::Test) shared_t = place_samples(cfg, mode);
  for (std::size_t r = 0; r < nr; ++r) {
    std::vector<double> ts;
    if (mode == SampleMode::Train) {
      StreamRng rng(hash_combine({cfg.seed, ray_ids.empty() ? r : ray_ids[r]}));
      ts = place_samples(cfg, mode, &rng);
    }
    const auto& tv = mode == SampleMode::Train ? ts : shared_t;
    for (std::size_t i = 0; i < s; ++i) {
      std::size_t idx = r * s + i;
      out.t[idx] = tv[i];
      coords[idx] = map_to_ndc(rays[r], tv[i], h, w, cfg);
      queries[idx] = {coords[idx].x, coords[idx].y, coords[idx].z, rays[r].u, rays[r].v};
    }
  }
  ad::Value feats = ad::trilinear_gather(featvol, coords);
  models::NerfOutput o = models::nerfnet_forward(params, nerf, queries, feats);
  out.luminance = ad::volume_render(ad::reshape(o.c, {nr, s}), ad::reshape(o.sigma, {nr, s}), out.t,
                                    cfg.t_max, &out.weights);
  return out;
}

double render_ray(const ad::Value& featvol, const ad::ParamStore& params,
                  const models::NeRFNetConfig& nerf, const RayCoord& ray, const RenderConfig& cfg,
                  SampleMode mode, std::uint64_t ray_id) {
  ad::NoGradGuard guard;
  std::uint64_t id = ray_id;
  return render_rays(featvol, params, nerf, std::span(&ray, 1), cfg, mode, std::span(&id, 1))
      .luminance.item();
}

std::size_t thread_limit() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CODEDLF_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

RenderedView render_view(const ad::Value& featvol, const ad::ParamStore& params,
                         const models::NeRFNetConfig& nerf, const ContinuousViewpoint& vp,
                         const RenderConfig& cfg) {
  if (featvol.rank() != 4) {
    throw Error(ErrorKind::DimensionMismatch, "render_view: feature volume must be [H,W,D,C]");
  }
  if (!std::isfinite(vp.u) || !std::isfinite(vp.v)) {
    throw Error(ErrorKind::InvalidConfig, "render_view: viewpoint must be finite");
  }
  const std::size_t h = featvol.dim(0), w = featvol.dim(1);
  RenderedView out{Image(h, w), Image(h, w)};
  constexpr std::size_t kChunk = 256;
  const std::size_t total = h * w;
  const std::size_t n_chunks = (total + kChunk - 1) / kChunk;

  auto run_chunk = [&](std::size_t chunk) {
    ad::NoGradGuard guard;
    std::size_t begin = chunk * kChunk, end = std::min(total, begin + kChunk);
    std::vector<RayCoord> rays;
    rays.reserve(end - begin);
    for (std::size_t p = begin; p < end; ++p) {
      rays.push_back({vp.u, vp.v, static_cast<double>(p % w), static_cast<double>(p / w)});
    }
    RayBatch b = render_rays(featvol, params, nerf, rays, cfg, SampleMode::Test);
    auto lum = b.luminance.data();
    for (std::size_t r = 0; r < rays.size(); ++r) {
      out.image.pixels[begin + r] = lum[r];
      out.depth.pixels[begin + r] = b.pseudo_depth(r);
    }
  };

  const std::size_t n_threads = std::min(thread_limit(), n_chunks);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < n_chunks; c += n_threads) run_chunk(c);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace codedlf::render
