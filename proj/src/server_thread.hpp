#pragma once

// Runs an httplib::Server on a background thread bound to an ephemeral port.

#include <string>
#include <thread>

#include <httplib.h>
#include <fmt/format.h>

#include "steerkit/error.hpp"

namespace steerkit::detail {

class ServerThread {
 public:
  explicit ServerThread(httplib::Server& server) : server_(server) {}
  ~ServerThread() { stop(); }

  int start(const std::string& host) {
    host_ = host;
    port_ = server_.bind_to_any_port(host);
    if (port_ < 0) throw Error(Errc::io, fmt::format("cannot bind {}", host));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::string base_url() const { return fmt::format("http://{}:{}", host_, port_); }

 private:
  httplib::Server& server_;
  std::thread thread_;
  std::string host_;
  int port_ = -1;
};

}  // namespace steerkit::detail
