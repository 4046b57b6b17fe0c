#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace codedlf::gradcheck {

struct CheckResult {
  std::string name;
  std::string kind;  // "op" or "pipeline"
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  bool passed = false;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double op_tolerance = 1e-6;
  double pipeline_tolerance = 1e-4;
};

// Every autodiff operator on random inputs plus the composed
// coded image -> FeatNet -> render -> MSE pipeline, against central
// differences in double precision.
std::vector<CheckResult> run_suite(const SuiteOptions& opts = {});

bool all_passed(const std::vector<CheckResult>& results);
nlohmann::json to_json(const std::vector<CheckResult>& results);

}  // namespace codedlf::gradcheck
