#pragma once

// HTTP API behind the slider UI:
//   POST /sliders                 calibrate a prompt, returns the slider
//   GET  /sliders/{id}            the calibration profile
//   POST /sliders/{id}/render     render one slider position
//   GET  /sliders/{id}/metrics    continuity metric and tradeoff curve
//   GET  /healthz                 collaborator status

#include <memory>
#include <string>

#include "steerkit/engine.hpp"

namespace steerkit {

class SliderService {
 public:
  // With check_backend set, construction runs the backend conformance probe
  // and throws on failure.
  explicit SliderService(Engine& engine, bool check_backend = true);
  ~SliderService();
  SliderService(const SliderService&) = delete;
  SliderService& operator=(const SliderService&) = delete;

  // Ephemeral port on a background thread.
  int start(const std::string& host = "127.0.0.1");
  // Blocks until stop() is called from another thread or a signal handler.
  void listen(const std::string& host, int port);
  // Stops serving and writes every session's render cache to
  // <root>/sessions/<id>.json.
  void stop();
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace steerkit
