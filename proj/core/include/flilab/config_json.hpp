#pragma once

#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "flilab/error.hpp"
#include "flilab/fit.hpp"
#include "flilab/model.hpp"
#include "flilab/simulate.hpp"
#include "flilab/train.hpp"

namespace flilab {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read through the size_t overload");

using Json = nlohmann::ordered_json;

/// Reads keys out of one JSON object and rejects anything it did not read.
/// Error fields are dotted paths such as "simulate.tau1_ns.lo".
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path);

  bool has(const std::string& key) const;
  const Json& raw(const std::string& key);
  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const std::string& key, double& out);
  void get(const std::string& key, bool& out);
  void get(const std::string& key, std::string& out);
  void get(const std::string& key, std::size_t& out);
  void get(const std::string& key, Range& out);
  void get(const std::string& key, ParamBounds& out);

  /// Throws ConfigError naming the first key that was never read.
  void finish() const;

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

Json to_json(const SimulationConfig& c);
Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const FitModelSpec& c);

/// Each parser starts from defaults and overrides the keys present.
SimulationConfig simulation_from_json(const Json& j, const std::string& path = "simulate");
ModelConfig model_from_json(const Json& j, const std::string& path = "model");
TrainConfig train_from_json(const Json& j, const std::string& path = "train");
FitModelSpec fit_spec_from_json(const Json& j, const std::string& path = "fit.model");

/// Parses text, turning syntax errors into ConfigError.
Json parse_json_text(const std::string& text, const std::string& origin);
Json read_json_file(const std::string& path);

}  // namespace flilab
