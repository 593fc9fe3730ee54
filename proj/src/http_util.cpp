#include "steerkit/http_util.hpp"

#include <regex>
#include <thread>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "steerkit/error.hpp"

namespace steerkit {

UrlParts split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/\s]+)(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    throw Error(Errc::usage, fmt::format("not an http(s) URL: '{}'", url));
  }
  UrlParts parts{m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
  return parts;
}

std::string join_url(const std::string& base, const std::string& path) {
  std::string out = base;
  while (!out.empty() && out.back() == '/') out.pop_back();
  if (path.empty() || path.front() != '/') out += '/';
  return out + path;
}

namespace {

using nlohmann::json;

template <typename Call>
json with_retries(const std::string& url, const HttpOptions& options, Call&& call) {
  auto backoff = options.backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return call();
    } catch (Error& e) {
      if (!e.retriable() || attempt >= options.retries) throw;
      spdlog::warn("{} failed ({}), retrying in {} ms", url, e.what(), backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
}

json parse_reply(const std::string& url, const httplib::Result& res) {
  if (!res) {
    throw Error(Errc::transport,
                fmt::format("{}: {}", url, httplib::to_string(res.error())))
        .set_retriable(true);
  }
  if (res->status >= 500) {
    throw Error(Errc::backend_status,
                fmt::format("{}: HTTP {} {}", url, res->status, res->body))
        .set_retriable(true);
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(Errc::backend_status,
                fmt::format("{}: HTTP {} {}", url, res->status, res->body));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse, fmt::format("{}: reply is not JSON: {}", url, e.what()));
  }
}

httplib::Client make_client(const UrlParts& parts, const HttpOptions& options) {
  httplib::Client client(parts.origin);
  const auto secs = options.timeout.count() / 1000;
  const auto usecs = (options.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  return client;
}

httplib::Headers to_headers(const HttpOptions& options) {
  httplib::Headers headers;
  for (const auto& [k, v] : options.headers) headers.emplace(k, v);
  return headers;
}

}  // namespace

json post_json(const std::string& url, const json& body, const HttpOptions& options) {
  const UrlParts parts = split_url(url);
  const std::string payload = body.dump();
  return with_retries(url, options, [&] {
    auto client = make_client(parts, options);
    auto res = client.Post(parts.path, to_headers(options), payload, "application/json");
    return parse_reply(url, res);
  });
}

json get_json(const std::string& url, const HttpOptions& options) {
  const UrlParts parts = split_url(url);
  return with_retries(url, options, [&] {
    auto client = make_client(parts, options);
    auto res = client.Get(parts.path, to_headers(options));
    return parse_reply(url, res);
  });
}

}  // namespace steerkit
