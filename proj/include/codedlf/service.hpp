#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "codedlf/autodiff.hpp"
#include "codedlf/image.hpp"
#include "codedlf/training.hpp"

namespace httplib {
class Server;
}

namespace codedlf::service {

struct ServiceOptions {
  std::filesystem::path web_root = "web";
};

// Renders views of one observation on demand. The feature volume is computed
// once in the constructor; requests only trace rays.
class RenderService {
 public:
  RenderService(train::Checkpoint ckpt, const Image& normalized_input, ServiceOptions opts = {});
  ~RenderService();
  RenderService(const RenderService&) = delete;
  RenderService& operator=(const RenderService&) = delete;

  nlohmann::json info() const;
  // 16-bit grayscale PNG of the view, or of the pseudo-depth mapped from
  // [t_min, t_max] to [0, 1].
  std::vector<std::uint8_t> render_png(double u, double v, bool depth) const;

  // Number of feature-volume computations performed by this service.
  std::uint64_t feature_computations() const { return feature_computations_; }

  // Blocking; returns after stop().
  bool listen(const std::string& host, int port);
  // Binds to a free port, returning it; serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;

 private:
  void setup_routes();

  train::Checkpoint ckpt_;
  ad::Value featvol_;
  std::size_t height_ = 0, width_ = 0;
  double u_extent_ = 3.0, v_extent_ = 3.0;
  std::uint64_t feature_computations_ = 0;
  ServiceOptions opts_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace codedlf::service
