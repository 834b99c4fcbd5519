#ifndef ASC_TOOLS_RUN_CONFIG_HPP
#define ASC_TOOLS_RUN_CONFIG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "asc/ablation.hpp"
#include "json.hpp"

namespace asc::cli {

/// Bad flags, unknown keys or invalid values; exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct KeySpec {
  std::string key;
  std::string help;
};

/// Flat key/value configuration. Every key has a default and a help line, and
/// maps to exactly one flag: key "ste_epochs" <-> "--ste-epochs".
class RunConfig {
 public:
  RunConfig();

  static const std::vector<KeySpec>& keys();
  static std::string flag_for(const std::string& key);

  /// Overlays a JSON object; unknown keys are a UsageError.
  void merge(const nlohmann::json& overrides);
  void merge_file(const std::filesystem::path& path);
  /// Parses a flag value using the type of the key's default.
  void set_from_string(const std::string& key, const std::string& value);

  const nlohmann::json& values() const { return values_; }
  std::uint64_t seed() const;

  SyntheticConfig data() const;
  std::vector<double> split_fractions() const;  // train, val; the test part is the rest
  ClipConfig clips() const;
  EncoderConfig encoder() const;
  SteTrainConfig ste() const;
  AscTrainConfig asc() const;
  AblationConfig ablation() const;
  MetricKind metric() const;
  double smooth_window() const;
  /// Builds every section once; any invalid value becomes a UsageError.
  void validate() const;

 private:
  nlohmann::json values_;
};

}  // namespace asc::cli

#endif  // ASC_TOOLS_RUN_CONFIG_HPP
