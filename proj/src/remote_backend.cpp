#include "steerkit/remote_backend.hpp"

#include <atomic>
#include <cmath>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "server_thread.hpp"
#include "steerkit/error.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

using nlohmann::json;

json generate_item_json(const PromptEmbedding& emb, std::uint64_t seed,
                        const Schedule& schedule) {
  return json{{"embedding", embedding_to_json(emb, Dtype::f64)},
              {"seed", seed},
              {"schedule",
               {{"kind", schedule_name(schedule.mode)}, {"total_steps", schedule.total_steps}}}};
}

RemoteBackend::RemoteBackend(RemoteBackendConfig config) : config_(std::move(config)) {
  split_url(config_.base_url);
  if (config_.max_batch == 0) throw Error(Errc::usage, "max_batch must be positive");
}

BackendCapabilities RemoteBackend::capabilities() const {
  std::lock_guard lock(mu_);
  return {config_.max_batch,
          config_.encoder_id.empty() ? seen_encoder_id_ : config_.encoder_id, false};
}

json RemoteBackend::post(const std::string& path, const json& body) {
  return post_json(join_url(config_.base_url, path), body, config_.http);
}

PromptEmbedding RemoteBackend::encode(const std::string& prompt) {
  if (prompt.empty()) throw Error(Errc::validation, "cannot encode an empty prompt");
  PromptEmbedding emb = embedding_from_json(post("/v1/encode", {{"prompt", prompt}}), prompt);
  std::lock_guard lock(mu_);
  const std::string& expected =
      config_.encoder_id.empty() ? seen_encoder_id_ : config_.encoder_id;
  if (!expected.empty() && expected != emb.encoder_id()) {
    throw Error(Errc::encoder_mismatch,
                fmt::format("backend answered with encoder '{}', expected '{}'",
                            emb.encoder_id(), expected));
  }
  if (seen_encoder_id_.empty()) seen_encoder_id_ = emb.encoder_id();
  return emb;
}

namespace {

ImageRef ref_from(const std::string& id, const PromptEmbedding& emb, const json& reply,
                  std::size_t index) {
  ImageRef ref;
  ref.id = id;
  ref.prompt_hash = prompt_hash(emb.prompt_text());
  if (reply.contains("image_url") && reply["image_url"].is_string()) {
    ref.url = reply["image_url"].get<std::string>();
  } else if (reply.contains("image_urls") && reply["image_urls"].is_array() &&
             index < reply["image_urls"].size()) {
    ref.url = reply["image_urls"][index].get<std::string>();
  }
  return ref;
}

}  // namespace

ImageRef RemoteBackend::generate(const PromptEmbedding& emb, std::uint64_t seed,
                                 const Schedule& schedule) {
  const json reply = post("/v1/generate", generate_item_json(emb, seed, schedule));
  try {
    return ref_from(reply.at("image_id").get<std::string>(), emb, reply, 0);
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad /v1/generate reply: {}", e.what()));
  }
}

std::vector<ImageRef> RemoteBackend::generate_batch(std::span<const PromptEmbedding> embs,
                                                    std::uint64_t seed,
                                                    const Schedule& schedule) {
  check_batch_size(embs.size());
  if (embs.empty()) return {};
  json items = json::array();
  for (const auto& e : embs) items.push_back(generate_item_json(e, seed, schedule));
  const json reply = post("/v1/generate_batch", {{"items", std::move(items)}});
  try {
    const auto& ids = reply.at("image_ids");
    if (ids.size() != embs.size()) {
      throw Error(Errc::backend_status,
                  fmt::format("batch of {} answered with {} ids", embs.size(), ids.size()));
    }
    std::vector<ImageRef> out;
    for (std::size_t i = 0; i < embs.size(); ++i) {
      out.push_back(ref_from(ids[i].get<std::string>(), embs[i], reply, i));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad /v1/generate_batch reply: {}", e.what()));
  }
}

double RemoteBackend::distance(const ImageRef& a, const ImageRef& b) {
  const json reply = post("/v1/distance", {{"a", a.id}, {"b", b.id}});
  double d = 0.0;
  try {
    d = reply.at("distance").get<double>();
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad /v1/distance reply: {}", e.what()));
  }
  if (!std::isfinite(d) || d < 0.0) {
    throw Error(Errc::backend_status, fmt::format("backend returned distance {}", d));
  }
  return d;
}

// ---------------------------------------------------------------------------

namespace {

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

int status_for(const Error& e) {
  switch (e.code()) {
    case Errc::unknown_ref:
    case Errc::not_found:
      return 404;
    case Errc::transport:
    case Errc::backend_status:
      return 502;
    default:
      return 400;
  }
}

Schedule schedule_from(const json& j) {
  Schedule s;
  if (j.contains("schedule")) {
    const auto& sj = j.at("schedule");
    s.mode = parse_schedule(sj.value("kind", std::string("uniform")));
    s.total_steps = sj.value("total_steps", 30);
  }
  return s;
}

}  // namespace

struct BackendHttpServer::Impl {
  Impl(Backend& b, Observer o) : backend(b), observer(std::move(o)), runner(server) {}

  void route(const std::string& path, std::function<json(const json&)> handler) {
    server.Post(path, [this, path, handler](const httplib::Request& req,
                                            httplib::Response& res) {
      json request;
      try {
        request = json::parse(req.body);
      } catch (const json::parse_error& e) {
        reply_json(res, 400, {{"error", e.what()}});
        return;
      }
      try {
        json response = handler(request);
        if (observer) observer(path, request, response);
        reply_json(res, 200, response);
      } catch (const Error& e) {
        reply_json(res, status_for(e), {{"error", e.what()}, {"code", errc_name(e.code())}});
      } catch (const std::exception& e) {
        reply_json(res, 400, {{"error", e.what()}});
      }
    });
  }

  Backend& backend;
  Observer observer;
  httplib::Server server;
  detail::ServerThread runner;
};

BackendHttpServer::BackendHttpServer(Backend& backend, Observer observer)
    : impl_(std::make_unique<Impl>(backend, std::move(observer))) {
  Backend& b = impl_->backend;
  impl_->route("/v1/encode", [&b](const json& req) {
    const auto emb = b.encode(req.at("prompt").get<std::string>());
    return embedding_to_json(emb, Dtype::f64);
  });
  impl_->route("/v1/generate", [&b](const json& req) {
    const auto emb = embedding_from_json(req.at("embedding"));
    const auto ref = b.generate(emb, req.at("seed").get<std::uint64_t>(), schedule_from(req));
    json out{{"image_id", ref.id}};
    if (!ref.url.empty()) out["image_url"] = ref.url;
    return out;
  });
  impl_->route("/v1/generate_batch", [&b](const json& req) {
    const auto& items = req.at("items");
    if (items.empty()) return json{{"image_ids", json::array()}};
    std::vector<PromptEmbedding> embs;
    for (const auto& item : items) embs.push_back(embedding_from_json(item.at("embedding")));
    // One seed and schedule per batch, taken from the first item.
    const auto refs = b.generate_batch(embs, items[0].at("seed").get<std::uint64_t>(),
                                       schedule_from(items[0]));
    json ids = json::array();
    for (const auto& r : refs) ids.push_back(r.id);
    return json{{"image_ids", ids}};
  });
  impl_->route("/v1/distance", [&b](const json& req) {
    ImageRef a;
    ImageRef c;
    a.id = req.at("a").get<std::string>();
    c.id = req.at("b").get<std::string>();
    return json{{"distance", b.distance(a, c)}};
  });
}

BackendHttpServer::~BackendHttpServer() { stop(); }

int BackendHttpServer::start(const std::string& host) { return impl_->runner.start(host); }

void BackendHttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw Error(Errc::io, fmt::format("cannot listen on {}:{}", host, port));
  }
}

void BackendHttpServer::stop() {
  impl_->runner.stop();
  impl_->server.stop();
}

std::string BackendHttpServer::base_url() const { return impl_->runner.base_url(); }

// ---------------------------------------------------------------------------

struct FixtureHttpServer::Impl {
  Impl() : runner(server) {}
  httplib::Server server;
  detail::ServerThread runner;
  std::unordered_map<std::string, json> replies;
  std::atomic<std::size_t> misses{0};
};

FixtureHttpServer::FixtureHttpServer(const json& fixture) : impl_(std::make_unique<Impl>()) {
  for (const auto& it : fixture.at("interactions")) {
    const auto path = it.at("path").get<std::string>();
    impl_->replies[path + '\n' + it.at("request").dump()] = it.at("response");
  }
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    json request;
    try {
      request = json::parse(req.body);
    } catch (const json::parse_error& e) {
      reply_json(res, 400, {{"error", e.what()}});
      return;
    }
    const auto hit = impl_->replies.find(req.path + '\n' + request.dump());
    if (hit == impl_->replies.end()) {
      ++impl_->misses;
      spdlog::warn("fixture server: no recording for {}", req.path);
      reply_json(res, 404, {{"error", "no recorded interaction"}});
      return;
    }
    reply_json(res, 200, hit->second);
  };
  for (const char* path : {"/v1/encode", "/v1/generate", "/v1/generate_batch", "/v1/distance"}) {
    impl_->server.Post(path, handler);
  }
}

FixtureHttpServer::~FixtureHttpServer() { stop(); }

int FixtureHttpServer::start(const std::string& host) { return impl_->runner.start(host); }

void FixtureHttpServer::stop() { impl_->runner.stop(); }

std::string FixtureHttpServer::base_url() const { return impl_->runner.base_url(); }

std::size_t FixtureHttpServer::misses() const { return impl_->misses.load(); }

}  // namespace steerkit
