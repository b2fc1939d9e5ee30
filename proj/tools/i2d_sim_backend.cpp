// Simulated synthesizer / metric backend speaking the line protocol on
// stdin/stdout. Usage: i2d-sim-backend synthesizer|metric
#include <unistd.h>

#include <cstdio>
#include <iostream>
#include <string>
#include <thread>

#include "i2d/sim_backend.hpp"

int main(int argc, char** argv) {
  if (argc != 2 || (std::string(argv[1]) != "synthesizer" && std::string(argv[1]) != "metric")) {
    std::cerr << "usage: i2d-sim-backend synthesizer|metric\n";
    return 64;
  }
  const auto role = std::string(argv[1]) == "synthesizer" ? i2d::BackendKind::synthesizer : i2d::BackendKind::metric;
  i2d::SimServer server(role);
  std::ios::sync_with_stdio(false);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto reply = server.handle(line);
    switch (reply.action) {
      case i2d::SimAction::crash:
        std::cerr << "i2d-sim-backend: injected crash\n";
        std::_Exit(3);
      case i2d::SimAction::hang:
        for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
      case i2d::SimAction::reply:
        std::cout << reply.line << '\n' << std::flush;
        break;
    }
  }
  return 0;
}
