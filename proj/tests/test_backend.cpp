#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <future>

#include "oracles.hpp"
#include "steerkit/error.hpp"
#include "steerkit/http_util.hpp"
#include "steerkit/remote_backend.hpp"
#include "steerkit/synthetic_backend.hpp"
#include "steerkit/tensor_io.hpp"
#include "support.hpp"

using namespace steerkit;
using testsupport::saturating_world;

namespace {

SteeringVector axis_vector(const SyntheticWorld& w) {
  return SteeringVector{w.concept_axis, 1.0, "c", 1, w.encoder_id, std::nullopt};
}

RemoteBackendConfig remote_config(const std::string& url) {
  RemoteBackendConfig c;
  c.base_url = url;
  c.http.retries = 0;
  c.http.timeout = std::chrono::milliseconds(5000);
  return c;
}

}  // namespace

TEST(Synthetic, EncodeIsDeterministicWithOffsets) {
  SyntheticBackend b(saturating_world());
  const auto e1 = b.encode("a portrait of a man");
  const auto e2 = SyntheticBackend(saturating_world()).encode("a portrait of a man");
  EXPECT_EQ(e1, e2);
  ASSERT_EQ(e1.num_tokens(), 5u);
  EXPECT_EQ(e1.tokens()[1], (Token{"portrait", 2, 10}));
  EXPECT_NE(b.encode("a portrait of a woman").data(), e1.data());
  EXPECT_THROW((void)b.encode(""), Error);
  EXPECT_THROW((void)b.encode("   "), Error);
}

TEST(Synthetic, GenerateAndDistance) {
  const auto w = saturating_world(20.0, 0.5);
  SyntheticBackend b(w);
  const auto emb = b.encode("a cat on a mat");
  const Schedule sch;
  const auto base = b.generate(emb, 3, sch);
  EXPECT_EQ(b.generate(emb, 3, sch), base);
  EXPECT_NE(b.generate(emb, 4, sch).id, base.id);
  const auto vec = axis_vector(w);
  EXPECT_EQ(b.generate(apply_steering(emb, TokenSpan{1}, vec, 0.0), 3, sch), base);

  const auto at20 = b.generate(apply_steering(emb, TokenSpan{1}, vec, 20.0), 3, sch);
  EXPECT_NEAR(SyntheticBackend::effective_alpha(at20.id), 20.0, 1e-12);
  EXPECT_NEAR(b.distance(base, at20), 0.5 * (1.0 - std::exp(-1.0)), 1e-12);
  EXPECT_EQ(b.distance(at20, base), b.distance(base, at20));
  EXPECT_EQ(b.distance(at20, at20), 0.0);
  EXPECT_THROW((void)b.distance(base, ImageRef{"elsewhere-1", 0, "", ""}), Error);

  // Linear ramp averages (s + 1) / T over the steps: (T + 1) / (2T).
  const auto ramp = b.generate(apply_steering(emb, TokenSpan{1}, vec, 6.0), 3, {ScheduleMode::linear_ramp, 30});
  EXPECT_NEAR(SyntheticBackend::effective_alpha(ramp.id), 6.0 * 31.0 / 60.0, 1e-12);

  SyntheticWorld other = w;
  other.encoder_id = "other";
  EXPECT_THROW((void)SyntheticBackend(other).generate(emb, 0, sch), Error);
}

TEST(Synthetic, DistanceIsAMetricOnTheAlphaFamily) {
  const auto w = saturating_world();
  SyntheticBackend b(w);
  const auto emb = b.encode("a man");
  const auto vec = axis_vector(w);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 60.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), c = u(rng), d = u(rng);
    auto g = [&](double x) { return b.generate(apply_steering(emb, TokenSpan{1}, vec, x), 0, {}); };
    const auto ga = g(a), gc = g(c), gd = g(d);
    EXPECT_GE(b.distance(ga, gc), 0.0);
    EXPECT_LE(b.distance(ga, gd), b.distance(ga, gc) + b.distance(gc, gd) + 1e-15);
  }
  double prev_r = -1.0;
  for (double a = 0.0; a < 60.0; a += 0.5) {
    const double r = b.response(a);
    EXPECT_GT(r, prev_r);
    // Concave: the midpoint lies above the chord.
    EXPECT_GE(b.response(a + 0.25), 0.5 * (r + b.response(a + 0.5)));
    prev_r = r;
  }
}

TEST(Synthetic, BatchEqualsSequentialAndRespectsLimit) {
  auto w = saturating_world();
  w.max_batch = 3;
  SyntheticBackend b(w);
  const auto vec = axis_vector(w);
  const auto emb = b.encode("a man");
  std::vector<PromptEmbedding> items;
  for (double a : {0.0, 1.0, 2.0}) items.push_back(apply_steering(emb, TokenSpan{1}, vec, a));
  const auto batch = b.generate_batch(items, 9, {});
  for (std::size_t i = 0; i < items.size(); ++i) EXPECT_EQ(batch[i], b.generate(items[i], 9, {}));
  EXPECT_EQ(b.generate_batch(std::span(items).first(1), 9, {})[0], batch[0]);
  items.push_back(items[0]);
  try {
    (void)b.generate_batch(items, 9, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::batch_too_large);
  }
}

TEST(Synthetic, ConformanceAndNoise) {
  SyntheticBackend b(saturating_world());
  EXPECT_TRUE(check_backend_conformance(b).ok());
  auto w = saturating_world();
  w.distance_noise = true;
  SyntheticBackend noisy(w);
  const auto vec = axis_vector(w);
  const auto emb = noisy.encode("a man");
  const auto x = noisy.generate(emb, 0, {});
  const auto y = noisy.generate(apply_steering(emb, TokenSpan{1}, vec, 5.0), 0, {});
  EXPECT_LE(std::abs(noisy.distance(x, y) - noisy.response(5.0)), 1e-3);
  EXPECT_EQ(noisy.distance(x, y), noisy.distance(y, x));
  EXPECT_EQ(noisy.distance(x, x), 0.0);
}

TEST(Remote, ServesSyntheticOverHttp) {
  const auto w = saturating_world();
  SyntheticBackend local(w);
  std::atomic<int> seen{0};
  BackendHttpServer server(local, [&](const std::string&, const nlohmann::json&, const nlohmann::json&) { ++seen; });
  server.start();
  auto cfg = remote_config(server.base_url());
  RemoteBackend remote(cfg);

  const auto emb = remote.encode("a portrait of a man");
  EXPECT_EQ(emb, local.encode("a portrait of a man"));
  const auto vec = axis_vector(w);
  const auto steered = apply_steering(emb, TokenSpan{4}, vec, 3.0);
  const auto a = remote.generate(emb, 1, {});
  const auto b = remote.generate(steered, 1, {});
  EXPECT_EQ(b.id, local.generate(steered, 1, {}).id);
  EXPECT_NEAR(remote.distance(a, b), local.response(3.0), 1e-12);
  const std::vector<PromptEmbedding> items{emb, steered};
  const auto batch = remote.generate_batch(items, 1, {});
  EXPECT_EQ(batch[0].id, a.id);
  EXPECT_EQ(batch[1].id, b.id);
  EXPECT_TRUE(check_backend_conformance(remote).ok());
  EXPECT_GT(seen.load(), 0);

  // Concurrent use up to max_batch.
  std::vector<std::future<ImageRef>> fs;
  for (int i = 0; i < 8; ++i) {
    fs.push_back(std::async(std::launch::async, [&, i] {
      return remote.generate(apply_steering(emb, TokenSpan{4}, vec, 0.5 * i), 2, {});
    }));
  }
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(fs[i].get().id, local.generate(apply_steering(emb, TokenSpan{4}, vec, 0.5 * i), 2, {}).id);
  }

  // A fixed encoder id rejects other encoders.
  cfg.encoder_id = "someone-else";
  RemoteBackend pinned(cfg);
  EXPECT_THROW((void)pinned.encode("a man"), Error);
  server.stop();
}

TEST(Remote, RecordedFixturePassesConformance) {
  const auto fixture = read_json_file(testsupport::fixtures() / "backend_wire.json");
  FixtureHttpServer server(fixture);
  server.start();
  RemoteBackend remote(remote_config(server.base_url()));
  const auto report = check_backend_conformance(remote);
  EXPECT_TRUE(report.ok());
  EXPECT_TRUE(report.encode_deterministic);
  EXPECT_TRUE(report.self_distance_zero);
  EXPECT_TRUE(report.batch_matches_sequential);
  EXPECT_EQ(server.misses(), 0u);

  // Anything not recorded is a 404, which is not retried.
  try {
    (void)remote.encode("a dog");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::backend_status);
    EXPECT_FALSE(e.retriable());
  }
  server.stop();
}

TEST(Remote, RetriesServerErrorsThenSucceeds) {
  httplib::Server srv;
  std::atomic<int> calls{0};
  srv.Post("/echo", [&](const httplib::Request& req, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      res.set_content("{}", "application/json");
      return;
    }
    res.set_content(req.body, "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpOptions opt;
  opt.retries = 3;
  opt.backoff = std::chrono::milliseconds(1);
  const auto url = "http://127.0.0.1:" + std::to_string(port) + "/echo";
  EXPECT_EQ(post_json(url, {{"x", 1}}, opt), (nlohmann::json{{"x", 1}}));
  EXPECT_EQ(calls.load(), 3);

  calls = 0;
  opt.retries = 1;
  try {
    (void)post_json(url, {{"x", 1}}, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::backend_status);
    EXPECT_TRUE(e.retriable());
  }
  srv.stop();
  th.join();

  opt.retries = 0;
  opt.timeout = std::chrono::milliseconds(500);
  try {
    (void)post_json(url, {}, opt);  // nothing listening any more
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::transport);
  }
}

TEST(HttpUtil, SplitAndJoinUrls) {
  const auto p = split_url("http://localhost:8099/api");
  EXPECT_EQ(p.origin, "http://localhost:8099");
  EXPECT_EQ(p.path, "/api");
  EXPECT_EQ(split_url("https://example.com").path, "/");
  EXPECT_THROW((void)split_url("ftp://x"), Error);
  EXPECT_EQ(join_url("http://h/api/", "/v1/encode"), "http://h/api/v1/encode");
}
