#pragma once

#include <chrono>
#include <string>
#include <vector>

namespace lmpvc {

/// Result of one complete generation cycle for one utterance.
struct LMP {
  std::string utterance;
  std::string code_text;  // dependencies first, top-level definition last
  std::string top_level_function;
  std::vector<std::string> dependency_functions;
  std::chrono::system_clock::time_point created_at{};
};

}  // namespace lmpvc
