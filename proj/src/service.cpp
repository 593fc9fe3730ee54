#include "steerkit/service.hpp"

#include <map>
#include <mutex>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "server_thread.hpp"
#include "steerkit/codec.hpp"
#include "steerkit/error.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

namespace {

using nlohmann::json;

struct Session {
  CalibrationProfile profile;
  SteeringVector vector;
  std::mutex mu;
  // (alpha, seed) -> image
  std::map<std::pair<double, std::uint64_t>, ImageRef> renders;
};

int status_for(const Error& e) {
  switch (e.code()) {
    case Errc::not_found:
    case Errc::unknown_ref:
      return 404;
    default:
      break;
  }
  switch (exit_code_for(e.code())) {
    case 3: return 502;
    case 5: return 422;
    default: return 400;
  }
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json error_body(const std::string& code, const std::string& message) {
  return json{{"error", code}, {"message", message}};
}

}  // namespace

struct SliderService::Impl {
  Engine& engine;
  httplib::Server server;
  detail::ServerThread runner{server};
  std::string host;
  int port = -1;

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  // Serializes identical calibration requests.
  std::map<std::string, std::shared_ptr<std::mutex>> create_locks;
  bool flushed = false;

  explicit Impl(Engine& e) : engine(e) {}

  std::shared_ptr<Session> find_session(const std::string& id) {
    {
      std::lock_guard lock(sessions_mu);
      if (auto it = sessions.find(id); it != sessions.end()) return it->second;
    }
    // Profiles written by earlier runs are served too.
    const auto path = engine.profiles_dir() / (id + ".json");
    if (id.find_first_of("/\\.") != std::string::npos || !std::filesystem::exists(path)) {
      throw Error(Errc::not_found, fmt::format("no slider '{}'", id));
    }
    auto s = std::make_shared<Session>();
    s->profile = engine.load_profile(path.string());
    s->vector = engine.load_profile_vector(s->profile);
    std::lock_guard lock(sessions_mu);
    return sessions.emplace(id, std::move(s)).first->second;
  }

  std::filesystem::path resolve_vector(const std::string& name) const {
    for (const std::filesystem::path& p :
         {std::filesystem::path(name), engine.vectors_dir() / name, engine.vectors_dir() / (name + ".json")}) {
      if (std::filesystem::is_regular_file(p)) return p;
    }
    throw Error(Errc::not_found, fmt::format("no vector '{}'", name));
  }

  json create(const json& req) {
    CalibrateRequest cr;
    try {
      cr.prompt = req.at("prompt").get<std::string>();
      cr.vector_path = resolve_vector(req.at("vector").get<std::string>()).string();
      cr.edit_type = parse_edit_type(req.value("edit_type", std::string("local")));
      if (req.contains("overrides")) cr.overrides = req.at("overrides");
      if (req.contains("alpha_max")) cr.alpha_max = req.at("alpha_max").get<double>();
      if (req.contains("seed")) cr.seed = req.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw Error(Errc::usage, fmt::format("bad /sliders request: {}", e.what()));
    }
    cr.vector = vector_from_json(read_json_file(cr.vector_path));
    if (req.contains("concept") && req.at("concept").get<std::string>() != cr.vector.concept_name) {
      throw Error(Errc::validation, fmt::format("vector is for concept '{}', not '{}'",
                                                cr.vector.concept_name, req.at("concept").get<std::string>()));
    }

    std::shared_ptr<std::mutex> gate;
    {
      std::lock_guard lock(sessions_mu);
      auto& slot = create_locks[sha256_hex(req.dump())];
      if (!slot) slot = std::make_shared<std::mutex>();
      gate = slot;
    }
    std::lock_guard serial(*gate);
    auto s = std::make_shared<Session>();
    s->profile = engine.calibrate(cr);
    s->vector = cr.vector;
    engine.store_profile(s->profile);
    const std::string id = s->profile.id;
    json out{{"slider_id", id},
             {"valid_points", s->profile.valid_points},
             {"band", to_json(s->profile.band)},
             {"generations_used", s->profile.generations_used},
             {"selection", s->profile.selected_words}};
    if (s->profile.valid_points.empty()) out["notice"] = "no usable range";
    std::lock_guard lock(sessions_mu);
    sessions.try_emplace(id, std::move(s));
    return out;
  }

  json render(const std::string& id, const json& req) {
    auto s = find_session(id);
    double alpha = 0.0;
    std::optional<std::uint64_t> seed;
    try {
      alpha = req.at("alpha").get<double>();
      if (req.contains("seed")) seed = req.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw Error(Errc::usage, fmt::format("bad render request: {}", e.what()));
    }
    const auto& pts = s->profile.valid_points;
    if (pts.empty()) throw Error(Errc::validation, "slider has no usable range");
    if (alpha < pts.front() - 1e-9 || alpha > pts.back() + 1e-9) {
      throw Error(Errc::validation,
                  fmt::format("alpha {} outside the calibrated range [{}, {}]", alpha, pts.front(), pts.back()));
    }
    std::lock_guard lock(s->mu);
    const auto key = std::make_pair(alpha, seed.value_or(s->profile.seed));
    auto it = s->renders.find(key);
    if (it == s->renders.end()) {
      it = s->renders.emplace(key, engine.render(s->profile, s->vector, alpha, seed)).first;
    }
    json out{{"image_id", it->second.id}, {"alpha", alpha}, {"seed", key.second}};
    if (!it->second.url.empty()) out["image_url"] = it->second.url;
    return out;
  }

  json metrics(const std::string& id, std::size_t n) {
    auto s = find_session(id);
    if (engine.scorer() == nullptr) throw Error(Errc::not_found, "no scorer configured");
    std::lock_guard lock(s->mu);
    const Evaluation e = engine.evaluate(s->profile, s->vector, n);
    json curve = json::array();
    for (const auto& r : e.curve) curve.push_back({{"alpha", r.alpha}, {"vqa", r.vqa}, {"dreamsim", r.dreamsim}});
    return json{{"mid", e.mid}, {"curve", curve}, {"oracle", e.oracle}, {"n", n}};
  }

  json health(int& status) {
    json out;
    try {
      engine.backend().encode("healthz");
      out["backend"] = "ok";
    } catch (const std::exception& e) {
      out["backend"] = fmt::format("error: {}", e.what());
      status = 503;
    }
    out["llm"] = engine.llm() ? "configured" : "none";
    out["scorer"] = engine.scorer() ? "configured" : "none";
    return out;
  }

  template <typename Handler>
  void guarded(httplib::Response& res, Handler&& handler) {
    try {
      reply(res, 200, handler());
    } catch (const Error& e) {
      reply(res, status_for(e), error_body(std::string(errc_name(e.code())), e.what()));
    } catch (const json::exception& e) {
      reply(res, 400, error_body("Parse", e.what()));
    } catch (const std::exception& e) {
      reply(res, 500, error_body("Internal", e.what()));
    }
  }

  void install_routes() {
    server.Post("/sliders", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return create(json::parse(req.body)); });
    });
    server.Get(R"(/sliders/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return to_json(find_session(req.matches[1].str())->profile); });
    });
    server.Post(R"(/sliders/([A-Za-z0-9_-]+)/render)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    return render(req.matches[1].str(), req.body.empty() ? json::object() : json::parse(req.body));
                  });
                });
    server.Get(R"(/sliders/([A-Za-z0-9_-]+)/metrics)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   std::size_t n = engine.config().metrics.points;
                   if (req.has_param("n")) {
                     try {
                       n = std::stoul(req.get_param_value("n"));
                     } catch (const std::exception&) {
                       throw Error(Errc::usage, "n must be an integer");
                     }
                   }
                   return metrics(req.matches[1].str(), n);
                 });
               });
    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      int status = 200;
      const json body = health(status);
      reply(res, status, body);
    });
  }

  void flush() {
    std::lock_guard lock(sessions_mu);
    if (flushed) return;
    flushed = true;
    for (const auto& [id, s] : sessions) {
      std::lock_guard slock(s->mu);
      if (s->renders.empty()) continue;
      json renders = json::array();
      for (const auto& [key, ref] : s->renders) {
        renders.push_back({{"alpha", key.first}, {"seed", key.second}, {"image_id", ref.id}});
      }
      try {
        write_json_file(engine.config().storage_root / "sessions" / (id + ".json"),
                        json{{"slider_id", id}, {"renders", renders}});
      } catch (const Error& e) {
        spdlog::error("could not flush session {}: {}", id, e.what());
      }
    }
  }
};

SliderService::SliderService(Engine& engine, bool check_backend) : impl_(std::make_unique<Impl>(engine)) {
  if (check_backend) {
    const auto report = check_backend_conformance(engine.backend());
    if (!report.ok()) {
      std::string why;
      for (const auto& f : report.failures) why += "\n  " + f;
      throw Error(Errc::backend_status, "backend failed the startup conformance probe:" + why);
    }
  }
  impl_->install_routes();
}

SliderService::~SliderService() { stop(); }

int SliderService::start(const std::string& host) {
  impl_->host = host;
  impl_->port = impl_->runner.start(host);
  return impl_->port;
}

void SliderService::listen(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) {
    throw Error(Errc::io, fmt::format("cannot listen on {}:{}", host, port));
  }
  impl_->flush();
}

void SliderService::stop() {
  impl_->runner.stop();
  impl_->server.stop();
  impl_->flush();
}

std::string SliderService::base_url() const { return fmt::format("http://{}:{}", impl_->host, impl_->port); }

}  // namespace steerkit
