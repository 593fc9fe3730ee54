#include "steerkit/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "steerkit/codec.hpp"
#include "steerkit/error.hpp"

namespace steerkit {

static_assert(std::endian::native == std::endian::little,
              "tensor container payloads are little-endian");

namespace {

using nlohmann::json;

std::string_view dtype_name(Dtype dtype) {
  return dtype == Dtype::f32 ? "f32" : "f64";
}

Dtype parse_dtype(const json& j) {
  if (!j.contains("dtype")) return Dtype::f32;
  const auto name = j.at("dtype").get<std::string>();
  if (name == "f32") return Dtype::f32;
  if (name == "f64") return Dtype::f64;
  throw Error(Errc::parse, fmt::format("unsupported dtype '{}'", name));
}

std::string pack(const Vector& values, Dtype dtype) {
  std::vector<std::uint8_t> bytes;
  if (dtype == Dtype::f64) {
    bytes.resize(values.size() * sizeof(double));
    std::memcpy(bytes.data(), values.data(), bytes.size());
  } else {
    std::vector<float> narrow(values.begin(), values.end());
    bytes.resize(narrow.size() * sizeof(float));
    std::memcpy(bytes.data(), narrow.data(), bytes.size());
  }
  return base64_encode(bytes);
}

Vector unpack(const std::string& b64, Dtype dtype, std::size_t count) {
  const auto bytes = base64_decode(b64);
  const std::size_t width = dtype == Dtype::f64 ? sizeof(double) : sizeof(float);
  if (bytes.size() != count * width) {
    throw Error(Errc::parse,
                fmt::format("payload holds {} bytes, shape requires {}", bytes.size(),
                            count * width));
  }
  Vector out(count);
  if (dtype == Dtype::f64) {
    std::memcpy(out.data(), bytes.data(), bytes.size());
  } else {
    std::vector<float> narrow(count);
    std::memcpy(narrow.data(), bytes.data(), bytes.size());
    std::copy(narrow.begin(), narrow.end(), out.begin());
  }
  return out;
}

std::pair<std::size_t, std::size_t> parse_shape(const json& j) {
  const auto& shape = j.at("shape");
  if (!shape.is_array() || shape.size() != 2) {
    throw Error(Errc::parse, "shape must be [rows, dim]");
  }
  return {shape[0].get<std::size_t>(), shape[1].get<std::size_t>()};
}

}  // namespace

json embedding_to_json(const PromptEmbedding& emb, Dtype dtype) {
  json tokens = json::array();
  for (const auto& t : emb.tokens()) {
    tokens.push_back({{"text", t.text}, {"start", t.start}, {"end", t.end}});
  }
  return json{{"encoder_id", emb.encoder_id()},
              {"dtype", dtype_name(dtype)},
              {"shape", {emb.num_tokens(), emb.dim()}},
              {"tokens", std::move(tokens)},
              {"prompt", emb.prompt_text()},
              {"data_b64", pack(emb.data(), dtype)}};
}

PromptEmbedding embedding_from_json(const json& j, const std::string& prompt_text) {
  try {
    const auto [rows, dim] = parse_shape(j);
    std::vector<Token> tokens;
    for (const auto& t : j.at("tokens")) {
      tokens.push_back({t.at("text").get<std::string>(), t.at("start").get<std::size_t>(),
                        t.at("end").get<std::size_t>()});
    }
    if (tokens.size() != rows) {
      throw Error(Errc::parse,
                  fmt::format("{} tokens but shape declares {} rows", tokens.size(), rows));
    }
    std::string prompt = prompt_text;
    if (prompt.empty() && j.contains("prompt")) prompt = j.at("prompt").get<std::string>();
    Vector data = unpack(j.at("data_b64").get<std::string>(), parse_dtype(j), rows * dim);
    return PromptEmbedding(std::move(prompt), std::move(tokens), dim, std::move(data),
                           j.at("encoder_id").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad tensor container: {}", e.what()));
  }
}

json vector_to_json(const SteeringVector& vec) {
  json j{{"encoder_id", vec.encoder_id},
         {"dtype", "f64"},
         {"shape", {1, vec.dim()}},
         {"tokens", json::array()},
         {"data_b64", pack(vec.direction, Dtype::f64)},
         {"concept", vec.concept_name},
         {"raw_norm", vec.raw_norm},
         {"pair_count", vec.pair_count}};
  if (vec.max_projection) j["max_projection"] = *vec.max_projection;
  return j;
}

SteeringVector vector_from_json(const json& j) {
  try {
    const auto [rows, dim] = parse_shape(j);
    if (rows != 1 || dim == 0) {
      throw Error(Errc::parse, "steering vector shape must be [1, dim]");
    }
    const Dtype dtype = parse_dtype(j);
    SteeringVector vec;
    vec.direction = unpack(j.at("data_b64").get<std::string>(), dtype, dim);
    vec.raw_norm = j.at("raw_norm").get<double>();
    vec.concept_name = j.at("concept").get<std::string>();
    vec.pair_count = j.at("pair_count").get<std::size_t>();
    vec.encoder_id = j.at("encoder_id").get<std::string>();
    if (j.contains("max_projection")) vec.max_projection = j.at("max_projection").get<double>();
    const double norm = l2_norm(vec.direction);
    if (std::abs(norm - 1.0) > 1e-6 || !(vec.raw_norm > 0.0) || vec.pair_count == 0) {
      throw Error(Errc::validation, "steering vector fails unit-norm / raw_norm / pair_count checks");
    }
    // f32 payloads lose unit norm at the 1e-7 level; restore it.
    if (dtype == Dtype::f32) {
      for (double& x : vec.direction) x /= norm;
    }
    return vec;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, fmt::format("bad steering vector: {}", e.what()));
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw Error(Errc::io, fmt::format("short write to {}", path.string()));
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse, fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace steerkit
