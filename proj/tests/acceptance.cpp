// One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "steerkit/config.hpp"
#include "steerkit/dataset.hpp"
#include "steerkit/elastic.hpp"
#include "steerkit/engine.hpp"
#include "steerkit/error.hpp"
#include "steerkit/metrics.hpp"
#include "steerkit/remote_backend.hpp"
#include "steerkit/tensor_io.hpp"
#include "steerkit/token_select.hpp"
#include "support.hpp"

using namespace steerkit;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

// The check fills `detail` and returns whether the criterion holds.
void criterion(const std::string& name, const std::function<bool(std::string&)>& check) {
  std::string detail;
  bool ok = false;
  try {
    ok = check(detail);
  } catch (const std::exception& e) {
    detail = fmt::format("threw: {}", e.what());
  }
  if (!ok) ++failures;
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

PromptEmbedding embedding_of(const oracle::Mat& rows) {
  std::vector<Token> toks;
  Vector data;
  std::string text;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    toks.push_back({"w", text.size(), text.size() + 1});
    text += "w ";
    data.insert(data.end(), rows[i].begin(), rows[i].end());
  }
  return PromptEmbedding(text, toks, rows[0].size(), data, "acc");
}

bool math_oracle(std::string& detail) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int it = 0; it < 500; ++it) {
    const std::size_t k = 1 + rng() % 10, dim = 1 + rng() % 16, ntok = 2 + rng() % 6;
    // pool
    oracle::Mat rows;
    for (std::size_t i = 0; i < ntok; ++i) rows.push_back(oracle::random_vec(rng, dim, 2.0));
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ntok; ++i) {
      if (rng() % 2) idx.push_back(i);
    }
    if (idx.empty()) idx.push_back(ntok - 1);
    const auto emb = embedding_of(rows);
    worst = std::max(worst, oracle::max_abs_diff(pool_span(emb, TokenSpan(idx)), oracle::pool(rows, idx)));
    // DoM + normalize
    oracle::Mat pos, neg;
    for (std::size_t j = 0; j < k; ++j) {
      pos.push_back(oracle::random_vec(rng, dim));
      neg.push_back(oracle::random_vec(rng, dim));
    }
    const auto d = difference_of_means(pos, neg);
    const auto s = oracle::dom(pos, neg);
    worst = std::max(worst, oracle::max_abs_diff(d.s, s));
    worst = std::max(worst, std::abs(d.raw_norm - oracle::norm(s)));
    const auto v = normalize(d, "acc", k, "acc");
    worst = std::max(worst, oracle::max_abs_diff(v.direction, oracle::unit(s)));
    // apply_steering
    const double alpha = std::uniform_real_distribution<double>(-10, 10)(rng);
    const auto steered = apply_steering(emb, TokenSpan(idx), v, alpha);
    const auto want = oracle::steer(rows, idx, v.direction, alpha);
    for (std::size_t i = 0; i < ntok; ++i) {
      const auto r = steered.row(i);
      worst = std::max(worst, oracle::max_abs_diff(oracle::Vec(r.begin(), r.end()), want[i]));
    }
  }
  const double secs = seconds_since(t0);
  detail = fmt::format("500 instances, max abs error {:.3g} (tol 1e-12), {:.3f} s (limit 5 s)", worst, secs);
  return worst <= 1e-12 && secs < 5.0;
}

bool steering_identities(std::string& detail) {
  std::mt19937_64 rng(7);
  bool zero_ok = true, off_ok = true;
  double roundtrip = 0.0, norm_err = 0.0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t dim = 1 + rng() % 16, ntok = 3 + rng() % 6;
    oracle::Mat rows;
    for (std::size_t i = 0; i < ntok; ++i) rows.push_back(oracle::random_vec(rng, dim, 3.0));
    const auto emb = embedding_of(rows);
    const TokenSpan span{0, ntok - 1};
    const auto raw = oracle::random_vec(rng, dim, std::pow(10.0, static_cast<double>(rng() % 10) - 5.0));
    const auto v = normalize(raw, oracle::norm(raw), "acc", 1, "acc");
    norm_err = std::max(norm_err, std::abs(oracle::norm(v.direction) - 1.0));
    zero_ok &= bit_equal(apply_steering(emb, span, v, 0.0).data(), emb.data());
    const double a = std::uniform_real_distribution<double>(-25, 25)(rng);
    const auto fwd = apply_steering(emb, span, v, a);
    for (std::size_t i = 1; i + 1 < ntok; ++i) off_ok &= bit_equal(fwd.row(i), emb.row(i));
    const auto back = apply_steering(fwd, span, v, -a);
    roundtrip = std::max(roundtrip, oracle::max_abs_diff(back.data(), emb.data()));
  }
  detail = fmt::format("alpha=0 bit-identical {}, off-span bit-identical {}, +/-alpha error {:.3g} (tol 1e-12), "
                       "|norm-1| {:.3g} (tol 1e-9)",
                       zero_ok, off_ok, roundtrip, norm_err);
  return zero_ok && off_ok && roundtrip <= 1e-12 && norm_err <= 1e-9;
}

bool mid_golden(std::string& detail) {
  auto mid = [](const std::vector<double>& p, const std::vector<double>& q) {
    return mid_dist(normalize_increments(p, q));
  };
  const double same = mid({0.1, 0.4, 0.2, 0.2, 0.1}, {0.1, 0.4, 0.2, 0.2, 0.1});
  // N = 6 positions, five increments; semantic change all in one step.
  const double disjoint = mid({1, 0, 0, 0, 0}, {0.2, 0.2, 0.2, 0.2, 0.2});
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double lo = 1.0, hi = 0.0, scale_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(5), q(5);
    for (auto& x : p) x = u(rng);
    for (auto& x : q) x = u(rng);
    const double m = mid(p, q);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
    const double c = 0.1 + 100.0 * u(rng);
    for (auto& x : p) x *= c;
    for (auto& x : q) x *= c;
    scale_err = std::max(scale_err, std::abs(mid(p, q) - m));
  }
  detail = fmt::format("p=q -> {}, N=6 disjoint -> {:.9f}, range over 1000 [{:.4f}, {:.4f}], scale drift {:.3g}",
                       same, disjoint, lo, hi, scale_err);
  return same == 0.0 && std::abs(disjoint - 0.8) < 1e-7 && lo >= 0.0 && hi <= 1.0 && scale_err < 1e-6;
}

bool elastic_search(std::string& detail, std::size_t& generations) {
  const auto w = testsupport::saturating_world(15.0, 0.5);
  const ElasticConfig cfg = elastic_preset("local");
  const double alpha_max = 8.0;
  std::vector<CalibrationResult> runs;
  const auto t0 = Clock::now();
  auto s = testsupport::axis_setup(w);
  auto r = s.renderer();
  runs.push_back(calibrate(r, alpha_max, cfg));
  const double secs = seconds_since(t0);
  for (int i = 0; i < 2; ++i) {
    auto si = testsupport::axis_setup(w);
    auto ri = si.renderer();
    runs.push_back(calibrate(ri, alpha_max, cfg));
  }
  const auto& res = runs[0];
  const auto& x = res.band.points;
  bool spaced = true;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) spaced &= x[i + 1] - x[i] >= 0.01;
  bool in_band = !res.valid_points.empty();
  for (double a : res.valid_points) {
    const double d = oracle::saturating(a, 15.0, 0.5);
    in_band &= d >= 0.05 && d <= 0.15;
  }
  bool same = true;
  for (int i = 1; i < 3; ++i) {
    same &= runs[i].band.points == x && runs[i].valid_points == res.valid_points &&
            runs[i].history == res.history && runs[i].generations_total == res.generations_total;
  }
  generations = res.generations_total;
  detail = fmt::format("iterations {} (<= 25), points {} (<= 10), min spacing ok {}, {} valid points re-verified "
                       "in [0.05, 0.15] {}, deterministic x3 {}, {:.3f} s (limit 1 s)",
                       res.band.iterations_used, x.size(), spaced, res.valid_points.size(), in_band, same, secs);
  return res.band.iterations_used <= 25 && x.size() <= 10 && spaced && in_band && same && secs < 1.0;
}

bool extrapolation_cap(std::string& detail) {
  // Plateau D = 0.1 lies below sim_max = 0.15.
  const auto w = testsupport::saturating_world(15.0, 0.1);
  auto s = testsupport::axis_setup(w);
  auto r = s.renderer();
  const auto ext = extrapolate_alpha_max(r, 2.0, elastic_preset("local"));
  auto r2 = s.renderer();
  const auto full = calibrate(r2, 2.0, elastic_preset("local"));
  detail = fmt::format("steps {} (want 3), alpha_max 2 -> {} (want 16), calibrate reports {}", ext.steps,
                       ext.alpha_max, full.extrapolation_steps_taken);
  return ext.steps == 3 && ext.alpha_max == 16.0 && full.extrapolation_steps_taken == 3;
}

bool token_selection(std::string& detail) {
  struct Case {
    const char* prompt;
    const char* concept_name;
    std::string want;
  };
  const Case cases[] = {
      {"a woman in a park", "winter", "woman park"},
      {"a photorealistic lighthouse on a cliff", "cartoon", "photorealistic"},
      {"a lighthouse on a cliff", "cartoon", "lighthouse"},
      {"a portrait of a sad man", "smile", "sad"},
      {"a portrait of a man", "smile", "man"},
      {"a ripe tomato on the vine", "age", "ripe"},
      {"a tomato on the vine", "age", "tomato"},
  };
  const auto lex = default_lexicon();
  int rules_ok = 0, llm_ok = 0;
  std::string misses;
  for (const auto& c : cases) {
    const EditType t = lex.find(c.concept_name)->edit_type;
    auto join = [](const std::vector<std::string>& w) {
      std::string s;
      for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
      return s;
    };
    const auto rules = join(select_tokens_rules(c.prompt, c.concept_name, t, lex).words);
    ReplayLlmClient llm({"OUTPUT: " + c.want});
    const auto viallm = select_tokens_llm(c.prompt, c.concept_name, t, llm);
    if (rules == c.want) ++rules_ok;
    else misses += fmt::format(" [rules '{}' -> '{}']", c.prompt, rules);
    if (join(viallm.words) == c.want && viallm.source == SelectionSource::llm) ++llm_ok;
    else misses += fmt::format(" [llm '{}']", c.prompt);
  }
  detail = fmt::format("rule engine {}/7, LLM replay {}/7{}", rules_ok, llm_ok, misses);
  return rules_ok == 7 && llm_ok == 7;
}

bool dataset_roundtrip(std::string& detail) {
  bool equal = true;
  for (const char* name : {"bright_dark.jsonl", "smiling_neutral.jsonl"}) {
    const auto path = testsupport::fixtures() / name;
    const auto ds = load_dataset(path);
    validate_dataset(ds);
    equal &= serialize_dataset(ds) == read_text_file(path);
  }
  ReplayLlmClient llm({read_text_file(testsupport::fixtures() / "smile_reply_9.txt")});
  bool rejected = false;
  try {
    (void)generate_dataset("smile", 10, llm);
  } catch (const Error& e) {
    rejected = e.code() == Errc::count_mismatch;
  }
  detail = fmt::format("reference lines byte-equal {}, 9 lines for k=10 rejected {}", equal, rejected);
  return equal && rejected;
}

bool end_to_end(std::string& detail) {
  testsupport::TempDir dir;
  ::setenv("STEERKIT_TEST_ROOT", dir.path().c_str(), 1);
  ::setenv("STEERKIT_FIXTURES", testsupport::fixtures().c_str(), 1);
  const auto t0 = Clock::now();
  Engine engine(load_engine_config(testsupport::fixtures() / "e2e_config.json"));
  const auto ds = engine.generate_dataset("smile", 10);
  const auto vec = engine.build_vector(ds).vector;
  const auto vec_path = engine.store_vector(vec);
  CalibrateRequest req;
  req.prompt = "a portrait of a man";
  req.vector = vec;
  req.vector_path = vec_path.string();
  req.edit_type = EditType::local;
  const auto prof = engine.calibrate(req);
  engine.store_profile(prof);
  const auto reloaded = engine.load_profile(prof.id);
  const auto ev = engine.evaluate(reloaded, engine.load_profile_vector(reloaded), 6);
  const double secs = seconds_since(t0);
  detail = fmt::format("K={}, {} valid points (>= 2), MID {:.3g} (< 0.05), {:.3f} s (limit 10 s)", ds.size(),
                       prof.valid_points.size(), ev.mid, secs);
  return ds.size() == 10 && prof.valid_points.size() >= 2 && ev.mid < 0.05 && secs < 10.0;
}

bool wire_conformance(std::string& detail) {
  FixtureHttpServer server(read_json_file(testsupport::fixtures() / "backend_wire.json"));
  server.start();
  RemoteBackendConfig cfg;
  cfg.base_url = server.base_url();
  cfg.http.retries = 0;
  RemoteBackend remote(cfg);
  const auto rep = check_backend_conformance(remote);
  server.stop();
  detail = fmt::format("distance(a,a)=0 {}, encode deterministic {}, batch == sequential {}, symmetric {}, "
                       "unrecorded requests {}",
                       rep.self_distance_zero, rep.encode_deterministic, rep.batch_matches_sequential,
                       rep.distance_symmetric, server.misses());
  return rep.ok() && server.misses() == 0;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  std::size_t generations = 0;
  criterion("math-oracle", math_oracle);
  criterion("steering-identities", steering_identities);
  criterion("mid-golden", mid_golden);
  criterion("elastic-search", [&](std::string& d) { return elastic_search(d, generations); });
  criterion("extrapolation-cap", extrapolation_cap);
  criterion("token-selection", token_selection);
  criterion("dataset-roundtrip", dataset_roundtrip);
  criterion("end-to-end", end_to_end);
  criterion("wire-conformance", wire_conformance);
  // Reported, not asserted: MOVE renders a fresh alpha for every moved point.
  std::cout << fmt::format("INFO generations_used on the default world: {} (bound [4, 30] {})", generations,
                           generations >= 4 && generations <= 30 ? "met" : "not met")
            << std::endl;
  std::cout << (failures == 0 ? "ALL PASS" : fmt::format("{} FAILED", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
