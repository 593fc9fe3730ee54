#include "steerkit/llm.hpp"

#include <cstdlib>

#include <fmt/format.h>
#include <json.hpp>

#include "steerkit/error.hpp"

namespace steerkit {

HttpLlmClient::HttpLlmClient(LlmConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw Error(Errc::usage, "LLM endpoint is not configured");
  split_url(config_.endpoint);
}

std::string HttpLlmClient::complete(const std::vector<ChatMessage>& messages,
                                    double temperature) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  const nlohmann::json body{
      {"model", config_.model}, {"messages", msgs}, {"temperature", temperature}};

  HttpOptions http = config_.http;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw Error(Errc::usage,
                  fmt::format("environment variable {} is not set", config_.api_key_env));
    }
    http.headers.emplace_back("Authorization", fmt::format("Bearer {}", key));
  }
  const auto reply = post_json(config_.endpoint, body, http);
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::parse, fmt::format("unexpected chat-completion reply: {}",
                                         reply.dump().substr(0, 500)));
  }
}

ReplayLlmClient::ReplayLlmClient(std::vector<std::string> replies)
    : replies_(std::move(replies)) {
  if (replies_.empty()) throw Error(Errc::usage, "replay client needs at least one reply");
}

std::string ReplayLlmClient::complete(const std::vector<ChatMessage>& messages,
                                      double temperature) {
  std::lock_guard lock(mu_);
  const std::size_t i = std::min(requests_.size(), replies_.size() - 1);
  requests_.push_back(messages);
  last_temperature_ = temperature;
  return replies_[i];
}

std::size_t ReplayLlmClient::calls() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::vector<std::vector<ChatMessage>> ReplayLlmClient::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

double ReplayLlmClient::last_temperature() const {
  std::lock_guard lock(mu_);
  return last_temperature_;
}

std::string strip_reply_wrapping(const std::string& reply) {
  std::string text = reply;
  if (auto open = text.find("<think>"); open != std::string::npos) {
    if (auto close = text.find("</think>", open); close != std::string::npos) {
      text.erase(open, close + 8 - open);
    }
  }
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  text = trim(text);
  if (text.rfind("```", 0) == 0) {
    const auto first_nl = text.find('\n');
    text = first_nl == std::string::npos ? std::string() : text.substr(first_nl + 1);
    if (auto fence = text.rfind("```"); fence != std::string::npos) text.erase(fence);
    text = trim(text);
  }
  return text;
}

}  // namespace steerkit
