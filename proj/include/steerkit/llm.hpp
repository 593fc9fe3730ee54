#pragma once

// Chat-completion client used for dataset generation and token selection.

#include <cstddef>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "steerkit/http_util.hpp"

namespace steerkit {

struct ChatMessage {
  std::string role;
  std::string content;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages,
                               double temperature) = 0;
};

struct LlmConfig {
  std::string endpoint;  // full chat-completions URL
  std::string model;
  // Name of the environment variable holding the bearer token; empty for none.
  std::string api_key_env;
  HttpOptions http;
};

// POST {model, messages, temperature}; reads choices[0].message.content.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(LlmConfig config);
  std::string complete(const std::vector<ChatMessage>& messages,
                       double temperature) override;

 private:
  LlmConfig config_;
};

// Returns canned replies in order, repeating the last one once exhausted.
// Records every request it sees.
class ReplayLlmClient final : public LlmClient {
 public:
  explicit ReplayLlmClient(std::vector<std::string> replies);
  std::string complete(const std::vector<ChatMessage>& messages,
                       double temperature) override;

  std::size_t calls() const;
  std::vector<std::vector<ChatMessage>> requests() const;
  double last_temperature() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::string> replies_;
  std::vector<std::vector<ChatMessage>> requests_;
  double last_temperature_ = -1.0;
};

// Drops a leading <think>...</think> block and surrounding ``` fences that
// chat models sometimes wrap around the payload.
std::string strip_reply_wrapping(const std::string& reply);

}  // namespace steerkit
