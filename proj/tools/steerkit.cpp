// steerkit: command-line front end to the steering engine.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "steerkit/engine.hpp"
#include "steerkit/error.hpp"
#include "steerkit/service.hpp"
#include "steerkit/tensor_io.hpp"

namespace {

using nlohmann::json;
using namespace steerkit;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string backend_url;
  bool json_out = false;
  int verbosity = 0;
};

EngineConfig load_config(const Globals& g) {
  EngineConfig cfg = g.config_path.empty() ? engine_config_from_json(json::object())
                                           : load_engine_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.backend_url.empty()) {
    cfg.backend.kind = "http";
    cfg.backend.url = g.backend_url;
  }
  return cfg;
}

// Either one JSON document or human-readable lines on stdout.
class Output {
 public:
  explicit Output(bool as_json) : json_(as_json) {}
  ~Output() {
    if (json_) std::cout << doc_.dump(2) << "\n";
  }
  template <typename... Args>
  void line(fmt::format_string<Args...> f, Args&&... args) {
    if (!json_) std::cout << fmt::format(f, std::forward<Args>(args)...) << "\n";
  }
  json& doc() { return doc_; }

 private:
  bool json_;
  json doc_ = json::object();
};

EditType edit_type_or_default(const std::string& flag, const std::string& concept_name,
                              const ConceptLexicon& lexicon) {
  if (!flag.empty()) return parse_edit_type(flag);
  if (const auto* entry = lexicon.find(concept_name)) return entry->edit_type;
  return EditType::local;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// "key=value" pairs into an elastic override object; values parse as JSON
// where possible, otherwise as strings.
json parse_overrides(const std::vector<std::string>& sets) {
  json out = json::object();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(Errc::usage, fmt::format("--set expects key=value, got '{}'", s));
    }
    const std::string key = s.substr(0, eq);
    const std::string value = s.substr(eq + 1);
    try {
      out[key] = json::parse(value);
    } catch (const json::parse_error&) {
      out[key] = value;
    }
  }
  return out;
}

int run_gen_dataset(const Globals& g, const std::string& concept_name, std::size_t k,
                    std::string out_path, bool force) {
  Engine engine(load_config(g));
  if (out_path.empty()) {
    out_path = (engine.config().storage_root / "datasets" / (concept_name + ".jsonl")).string();
  }
  if (std::filesystem::exists(out_path) && !force) {
    throw Error(Errc::usage, fmt::format("{} exists; pass --force to overwrite", out_path));
  }
  const ContrastiveDataset ds = engine.generate_dataset(concept_name, k);
  validate_dataset(ds);
  const auto lint = lint_dataset(ds);
  write_text_file(out_path, serialize_dataset(ds));

  Output out(g.json_out);
  out.doc() = {{"path", out_path}, {"pairs", ds.size()}, {"concept", concept_name}, {"lint", lint}};
  out.line("wrote {} pairs for \"{}\" to {}", ds.size(), concept_name, out_path);
  out.line("validation: ok, {} lint finding(s)", lint.size());
  for (const auto& l : lint) out.line("  lint: {}", l);
  return 0;
}

int run_build_vector(const Globals& g, const std::string& dataset_path, const std::string& concept_name,
                     const std::string& out_path, bool force) {
  Engine engine(load_config(g));
  const ContrastiveDataset ds = load_dataset(dataset_path, concept_name);
  const SteeringBuild build = engine.build_vector(ds);

  std::filesystem::path path;
  if (out_path.empty()) {
    path = engine.store_vector(build.vector);
  } else {
    path = out_path;
    const std::string text = vector_to_json(build.vector).dump(2) + "\n";
    if (std::filesystem::exists(path) && !force && read_text_file(path) != text) {
      throw Error(Errc::usage, fmt::format("{} exists with different content; pass --force", path.string()));
    }
    write_text_file(path, text);
  }

  Output out(g.json_out);
  out.doc() = {{"path", path.string()},
               {"concept", build.vector.concept_name},
               {"raw_norm", build.vector.raw_norm},
               {"pair_count", build.vector.pair_count},
               {"encoder_id", build.vector.encoder_id},
               {"max_projection", *build.vector.max_projection},
               {"sha256", file_sha256(path)}};
  out.line("vector: {}", path.string());
  out.line("raw_norm {:.9g}  K {}  encoder {}", build.vector.raw_norm, build.vector.pair_count,
           build.vector.encoder_id);
  out.line("max projection (initial alpha_max) {:.9g}", *build.vector.max_projection);
  return 0;
}

int run_select_tokens(const Globals& g, const std::string& prompt, const std::string& concept_name,
                      const std::string& edit_flag, bool rules_only) {
  Engine engine(load_config(g));
  const EditType et = edit_type_or_default(edit_flag, concept_name, engine.lexicon());
  const TokenSelection sel = engine.select_tokens(prompt, concept_name, et, !rules_only);
  const PromptEmbedding emb = engine.backend().encode(prompt);
  const TokenSpan span = resolve_selection(sel.words, emb);

  Output out(g.json_out);
  out.doc() = {{"words", sel.words},
               {"source", selection_source_name(sel.source)},
               {"prompt_class", sel.prompt_class ? json(prompt_class_name(*sel.prompt_class)) : json(nullptr)},
               {"edit_type", edit_type_name(et)},
               {"span", span.indices()}};
  out.line("{}", fmt::join(sel.words, " "));
  out.line("source {}  class {}  edit {}  tokens [{}]", selection_source_name(sel.source),
           sel.prompt_class ? prompt_class_name(*sel.prompt_class) : "unknown", edit_type_name(et),
           fmt::join(span.indices(), ", "));
  return 0;
}

struct CalibrateArgs {
  std::string prompt;
  std::string vector_path;
  std::string edit_type;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<double> alpha_max;
  std::string schedule;
  std::string words;
  std::string out_path;
};

int run_calibrate(const Globals& g, const CalibrateArgs& a) {
  Engine engine(load_config(g));
  CalibrateRequest req;
  req.prompt = a.prompt;
  req.vector_path = a.vector_path;
  req.vector = vector_from_json(read_json_file(a.vector_path));
  req.edit_type = edit_type_or_default(a.edit_type, req.vector.concept_name, engine.lexicon());
  req.overrides = parse_overrides(a.sets);
  if (!a.preset.empty()) req.preset = a.preset;
  req.alpha_max = a.alpha_max;
  if (!a.schedule.empty()) req.schedule = parse_schedule(a.schedule);
  if (!a.words.empty()) req.words = split_words(a.words);

  const CalibrationProfile p = engine.calibrate(req);
  std::filesystem::path path;
  if (a.out_path.empty()) {
    path = engine.store_profile(p);
  } else {
    path = a.out_path;
    write_json_file(path, to_json(p));
  }

  Output out(g.json_out);
  out.doc() = to_json(p);
  out.doc()["profile_path"] = path.string();
  out.line("profile {} -> {}", p.id, path.string());
  out.line("tokens: {} ({})", fmt::join(p.selected_words, " "), selection_source_name(p.selection_source));
  out.line("alpha_max {:.6g} -> {:.6g} after {} extrapolation step(s)", p.alpha_max_initial,
           p.alpha_max_used, p.extrapolation_steps);
  out.line("band: {} points after {} iteration(s)", p.band.points.size(), p.band.iterations_used);
  out.line("valid points: [{:.6g}]", fmt::join(p.valid_points, ", "));
  out.line("generations_used {}", p.generations_used);
  if (p.valid_points.empty()) {
    spdlog::warn("calibration finished but no point lies inside [{}, {}]", p.cfg.sim_min, p.cfg.sim_max);
  }
  return 0;
}

int run_steer(const Globals& g, const std::string& prompt, const std::string& vector_path, double alpha,
              const std::string& schedule_name_flag, const std::string& edit_flag, const std::string& words) {
  Engine engine(load_config(g));
  const SteeringVector vec = vector_from_json(read_json_file(vector_path));
  const EditType et = edit_type_or_default(edit_flag, vec.concept_name, engine.lexicon());
  Schedule schedule;
  schedule.mode = parse_schedule(schedule_name_flag);
  schedule.total_steps = engine.config().schedule_steps;
  std::optional<std::vector<std::string>> chosen;
  if (!words.empty()) chosen = split_words(words);
  const auto r = engine.steer(prompt, vec, alpha, schedule, engine.config().seed, et, chosen);

  Output out(g.json_out);
  out.doc() = {{"image_id", r.image.id},
               {"alpha", alpha},
               {"schedule", {{"kind", schedule_name(schedule.mode)}, {"total_steps", schedule.total_steps}}},
               {"seed", engine.config().seed},
               {"words", r.selection.words},
               {"span", r.span.indices()}};
  if (!r.image.url.empty()) out.doc()["image_url"] = r.image.url;
  out.line("{}", r.image.id);
  if (!r.image.url.empty()) out.line("{}", r.image.url);
  return 0;
}

int run_evaluate(const Globals& g, const std::string& profile_ref, std::optional<std::size_t> n,
                 const std::string& out_dir) {
  Engine engine(load_config(g));
  const CalibrationProfile p = engine.load_profile(profile_ref);
  const SteeringVector vec = engine.load_profile_vector(p);
  const std::size_t points = n.value_or(engine.config().metrics.points);
  const Evaluation e = engine.evaluate(p, vec, points);

  std::filesystem::path trace_path;
  std::filesystem::path dir;
  if (out_dir.empty()) {
    trace_path = engine.store_trace(p.id, e.trace);
    dir = trace_path.parent_path();
  } else {
    dir = out_dir;
    trace_path = dir / fmt::format("{}-trace.json", p.id);
    write_json_file(trace_path, trace_to_json(e.trace));
  }
  const auto stem = trace_path.stem().string();
  const auto curve_path = dir / (stem + "-curve.csv");
  const auto inc_path = dir / (stem + "-increments.csv");
  write_text_file(curve_path, curve_csv(e.curve));
  write_text_file(inc_path, increments_csv(e.trace, e.increments, e.distributions));

  Output out(g.json_out);
  out.doc() = to_json(e);
  out.doc()["profile"] = p.id;
  out.doc()["files"] = {{"trace", trace_path.string()}, {"curve", curve_path.string()}, {"increments", inc_path.string()}};
  out.line("MID {:.9g} over {} points (alpha 0..{:.6g}, oracle {})", e.mid, points, e.trace.alpha_max, e.oracle);
  out.line("{}", curve_csv(e.curve));
  out.line("trace {}", trace_path.string());
  return 0;
}

int run_serve(const Globals& g, std::string host, int port, bool check) {
  EngineConfig cfg = load_config(g);
  if (host.empty()) host = cfg.service_host;
  if (port < 0) port = cfg.service_port;
  Engine engine(cfg);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  SliderService service(engine, check);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {} received, shutting down", sig);
    service.stop();
  });
  spdlog::info("serving on http://{}:{}", host, port);
  try {
    service.listen(host, port);
  } catch (...) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    throw;
  }
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("steerkit");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%^%l%$: %v");

  CLI::App app{"Concept steering vectors, slider calibration and continuity metrics"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Engine config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every generation (overrides the config)");
  app.add_option("--backend-url", g.backend_url, "Use the HTTP backend at this URL");
  app.add_flag("--json", g.json_out, "Machine-readable stdout");
  app.add_flag("-v,--verbose", g.verbosity, "More logging (repeatable)");

  std::function<int()> action;

  auto* gen = app.add_subcommand("gen-dataset", "Generate a contrastive prompt-pair dataset with the LLM");
  std::string gd_concept, gd_out;
  std::size_t gd_k = kDefaultPairCount;
  bool gd_force = false;
  gen->add_option("--concept", gd_concept, "Concept name")->required();
  gen->add_option("-k,--count", gd_k, "Number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("-o,--out", gd_out, "Output JSONL path");
  gen->add_flag("--force", gd_force, "Overwrite an existing file");
  gen->callback([&] { action = [&] { return run_gen_dataset(g, gd_concept, gd_k, gd_out, gd_force); }; });

  auto* build = app.add_subcommand("build-vector", "Build a steering vector from a dataset");
  std::string bv_dataset, bv_concept, bv_out;
  bool bv_force = false;
  build->add_option("--dataset", bv_dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  build->add_option("--concept", bv_concept, "Concept name (default: dataset file stem)");
  build->add_option("-o,--out", bv_out, "Output path (default: the artifact store)");
  build->add_flag("--force", bv_force, "Overwrite an existing file with different content");
  build->callback([&] { action = [&] { return run_build_vector(g, bv_dataset, bv_concept, bv_out, bv_force); }; });

  auto* sel = app.add_subcommand("select-tokens", "Show which prompt tokens would be steered");
  std::string st_prompt, st_concept, st_edit;
  bool st_rules = false;
  sel->add_option("--prompt", st_prompt)->required();
  sel->add_option("--concept", st_concept)->required();
  sel->add_option("--edit-type", st_edit, "local, global or stylization");
  sel->add_flag("--rules", st_rules, "Skip the LLM and use the rule engine");
  sel->callback([&] { action = [&] { return run_select_tokens(g, st_prompt, st_concept, st_edit, st_rules); }; });

  auto* cal = app.add_subcommand("calibrate", "Find the usable steering range for a prompt");
  CalibrateArgs ca;
  cal->add_option("--prompt", ca.prompt)->required();
  cal->add_option("--vector", ca.vector_path, "Steering vector file")->required()->check(CLI::ExistingFile);
  cal->add_option("--edit-type", ca.edit_type, "local, global or stylization");
  cal->add_option("--preset", ca.preset, "Named elastic preset, e.g. runtime-local");
  cal->add_option("--set", ca.sets, "Elastic override key=value (repeatable)");
  cal->add_option("--alpha-max", ca.alpha_max, "Initial alpha_max instead of the vector's projection");
  cal->add_option("--schedule", ca.schedule, "uniform, linear_ramp or negated_uniform");
  cal->add_option("--words", ca.words, "Comma-separated words to steer (skips token selection)");
  cal->add_option("-o,--out", ca.out_path, "Profile path (default: the artifact store)");
  cal->callback([&] { action = [&] { return run_calibrate(g, ca); }; });

  auto* steer = app.add_subcommand("steer", "Render one steered image");
  std::string sr_prompt, sr_vector, sr_schedule = "uniform", sr_edit, sr_words;
  double sr_alpha = 0.0;
  steer->add_option("--prompt", sr_prompt)->required();
  steer->add_option("--vector", sr_vector)->required()->check(CLI::ExistingFile);
  steer->add_option("--alpha", sr_alpha)->required();
  steer->add_option("--schedule", sr_schedule, "uniform, linear_ramp or negated_uniform");
  steer->add_option("--edit-type", sr_edit, "local, global or stylization");
  steer->add_option("--words", sr_words, "Comma-separated words to steer (skips token selection)");
  steer->callback([&] {
    action = [&] { return run_steer(g, sr_prompt, sr_vector, sr_alpha, sr_schedule, sr_edit, sr_words); };
  });

  auto* eval = app.add_subcommand("evaluate", "Slider continuity (MID) and tradeoff curve for a profile");
  std::string ev_profile, ev_out;
  std::optional<std::size_t> ev_n;
  eval->add_option("--profile", ev_profile, "Profile id or path")->required();
  eval->add_option("-n,--points", ev_n, "Slider positions (default 6)");
  eval->add_option("--out-dir", ev_out, "Where to write the trace and CSVs");
  eval->callback([&] { action = [&] { return run_evaluate(g, ev_profile, ev_n, ev_out); }; });

  auto* serve = app.add_subcommand("serve", "Run the slider HTTP service");
  std::string sv_host;
  int sv_port = -1;
  bool sv_no_check = false;
  serve->add_option("--host", sv_host);
  serve->add_option("--port", sv_port);
  serve->add_flag("--no-check", sv_no_check, "Skip the backend conformance probe at startup");
  serve->callback([&] { action = [&] { return run_serve(g, sv_host, sv_port, !sv_no_check); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  spdlog::set_level(g.verbosity >= 2 ? spdlog::level::debug
                    : g.verbosity == 1 ? spdlog::level::info
                                       : spdlog::level::warn);
  try {
    return action();
  } catch (const Error& e) {
    spdlog::error("{}: {}", errc_name(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
