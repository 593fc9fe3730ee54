#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "steerkit/backend.hpp"
#include "steerkit/http_util.hpp"

namespace steerkit {

struct RemoteBackendConfig {
  std::string base_url;
  std::size_t max_batch = 20;
  // When set, encode replies from any other encoder are rejected.
  std::string encoder_id;
  HttpOptions http;
};

// JSON-over-HTTP client for the /v1/encode, /v1/generate,
// /v1/generate_batch and /v1/distance endpoints.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteBackendConfig config);

  BackendCapabilities capabilities() const override;
  PromptEmbedding encode(const std::string& prompt) override;
  ImageRef generate(const PromptEmbedding& emb, std::uint64_t seed,
                    const Schedule& schedule) override;
  std::vector<ImageRef> generate_batch(std::span<const PromptEmbedding> embs,
                                       std::uint64_t seed,
                                       const Schedule& schedule) override;
  double distance(const ImageRef& a, const ImageRef& b) override;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  RemoteBackendConfig config_;
  mutable std::mutex mu_;
  std::string seen_encoder_id_;
};

nlohmann::json generate_item_json(const PromptEmbedding& emb, std::uint64_t seed,
                                  const Schedule& schedule);

// Serves any Backend over the same wire protocol. The optional observer sees
// every (path, request, response) triple, which is how fixtures are recorded.
class BackendHttpServer {
 public:
  using Observer = std::function<void(const std::string& path, const nlohmann::json& request,
                                      const nlohmann::json& response)>;

  explicit BackendHttpServer(Backend& backend, Observer observer = nullptr);
  ~BackendHttpServer();
  BackendHttpServer(const BackendHttpServer&) = delete;
  BackendHttpServer& operator=(const BackendHttpServer&) = delete;

  // Binds an ephemeral port on host and serves on a background thread.
  int start(const std::string& host = "127.0.0.1");
  // Blocks serving on host:port.
  void listen(const std::string& host, int port);
  void stop();
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Replays recorded (path, request) -> response pairs; requests without a
// recording get 404. The fixture document is {"interactions": [{"path",
// "request", "response"}, ...]}.
class FixtureHttpServer {
 public:
  explicit FixtureHttpServer(const nlohmann::json& fixture);
  ~FixtureHttpServer();
  FixtureHttpServer(const FixtureHttpServer&) = delete;
  FixtureHttpServer& operator=(const FixtureHttpServer&) = delete;

  int start(const std::string& host = "127.0.0.1");
  void stop();
  std::string base_url() const;
  std::size_t misses() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace steerkit
