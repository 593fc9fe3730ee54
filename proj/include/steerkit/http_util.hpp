#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace steerkit {

struct HttpOptions {
  std::chrono::milliseconds timeout{120'000};
  // Extra attempts after the first for transport failures and 5xx replies.
  int retries = 3;
  // Doubles after every failed attempt.
  std::chrono::milliseconds backoff{250};
  std::vector<std::pair<std::string, std::string>> headers;
};

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

// Throws Usage for anything that is not http(s)://host[:port][/path].
UrlParts split_url(const std::string& url);

std::string join_url(const std::string& base, const std::string& path);

// POST a JSON body and parse the JSON reply. Transport errors and 5xx
// replies are retried; anything else surfaces immediately.
nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                         const HttpOptions& options);

nlohmann::json get_json(const std::string& url, const HttpOptions& options);

}  // namespace steerkit
