#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flilab/config_json.hpp"
#include "flilab/fit.hpp"
#include "flilab/model.hpp"
#include "flilab/simulate.hpp"
#include "flilab/train.hpp"

namespace flilab::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

struct FitSection {
  FitModelSpec model{};
  IrfSource irf = IrfSource::reference;
};

struct EvalSection {
  /// Methods the report must contain; empty accepts whatever is passed.
  std::vector<std::string> methods;
  bool plots = true;
};

/// Top-level JSON document. Absent sections keep their defaults.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  SimulationConfig simulate{};
  ModelConfig model{};
  TrainConfig train{};
  FitSection fit{};
  EvalSection eval{};
};

RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);
Json to_json(const RunConfig& c);

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Returns one of ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flilab::cli
