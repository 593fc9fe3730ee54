#pragma once

// Tensor container: the JSON envelope used for embeddings and steering
// vectors on disk and on the wire.
//
//   {"encoder_id": "...", "dtype": "f32"|"f64", "shape": [rows, dim],
//    "tokens": [{"text", "start", "end"}, ...],
//    "data_b64": <little-endian row-major floats, base64>}
//
// Steering vectors use shape [1, dim], an empty token list, and the extra
// keys "concept", "raw_norm" and "pair_count".

#include <filesystem>
#include <string>

#include <json.hpp>

#include "steerkit/tensor.hpp"

namespace steerkit {

enum class Dtype { f32, f64 };

nlohmann::json embedding_to_json(const PromptEmbedding& emb,
                                 Dtype dtype = Dtype::f64);
// A missing "dtype" key means f32. A missing "prompt" key leaves the prompt
// text empty unless `prompt_text` is given.
PromptEmbedding embedding_from_json(const nlohmann::json& j,
                                    const std::string& prompt_text = {});

nlohmann::json vector_to_json(const SteeringVector& vec);
SteeringVector vector_from_json(const nlohmann::json& j);

// Pretty-printed with a trailing newline; keys sorted, so output is stable.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace steerkit
