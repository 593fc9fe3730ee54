// Serves the synthetic backend over the /v1 wire protocol so the CLI and
// service can be exercised against a real HTTP endpoint.

#include <csignal>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "steerkit/config.hpp"
#include "steerkit/error.hpp"
#include "steerkit/remote_backend.hpp"
#include "steerkit/tensor_io.hpp"

int main(int argc, char** argv) {
  using namespace steerkit;
  CLI::App app{"Synthetic encoder/generator/distance backend over HTTP"};
  std::string world_path;
  std::string host = "127.0.0.1";
  int port = 8099;
  app.add_option("--world", world_path, "Synthetic world JSON")->check(CLI::ExistingFile);
  app.add_option("--host", host);
  app.add_option("--port", port);
  CLI11_PARSE(app, argc, argv);

  try {
    SyntheticWorld world = world_path.empty() ? finalize_world({})
                                              : synthetic_world_from_json(read_json_file(world_path));
    SyntheticBackend backend(world);
    BackendHttpServer server(backend);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
    });
    spdlog::info("synthetic backend on http://{}:{}", host, port);
    try {
      server.listen(host, port);
    } catch (...) {
      pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
      throw;
    }
    waiter.join();
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  }
  return 0;
}
