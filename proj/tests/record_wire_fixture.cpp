// Records the HTTP exchange of one conformance probe against the synthetic
// backend, for replay by FixtureHttpServer.
//
//   record_wire_fixture <out.json>

#include <iostream>
#include <mutex>

#include "steerkit/backend.hpp"
#include "steerkit/remote_backend.hpp"
#include "steerkit/synthetic_backend.hpp"
#include "steerkit/tensor_io.hpp"

int main(int argc, char** argv) {
  using namespace steerkit;
  if (argc != 2) {
    std::cerr << "usage: record_wire_fixture <out.json>\n";
    return 2;
  }
  SyntheticBackend synthetic(finalize_world({}));
  std::mutex mu;
  nlohmann::json interactions = nlohmann::json::array();
  BackendHttpServer server(synthetic, [&](const std::string& path, const nlohmann::json& req,
                                          const nlohmann::json& res) {
    std::lock_guard lock(mu);
    interactions.push_back({{"path", path}, {"request", req}, {"response", res}});
  });
  server.start();
  RemoteBackendConfig cfg;
  cfg.base_url = server.base_url();
  cfg.http.retries = 0;
  RemoteBackend remote(cfg);
  const auto report = check_backend_conformance(remote);
  server.stop();
  if (!report.ok()) {
    for (const auto& f : report.failures) std::cerr << f << "\n";
    return 1;
  }
  write_json_file(argv[1], {{"interactions", interactions}});
  std::cout << interactions.size() << " interactions\n";
  return 0;
}
