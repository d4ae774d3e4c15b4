#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mmworld/dit.hpp"
#include "mmworld/metrics.hpp"
#include "mmworld/range_codec.hpp"
#include "mmworld/scenegen.hpp"
#include "mmworld/trainer.hpp"

namespace mmw {

/// Flat dotted-key configuration with a fixed registry: unknown keys are
/// rejected, every key has a documented default, and the canonical dump is
/// stable for hashing.
class RunConfig {
 public:
  RunConfig();

  /// Merges a JSON object of overrides ({"range.beams": 16, ...}).
  void load_json(const std::string& text, const std::string& origin);
  void load_file(const std::string& path);
  /// Applies one "key=json-value" override (bare words become strings).
  void set_override(const std::string& assignment);

  double num(const std::string& key) const;
  int64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string str(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;

  uint64_t seed() const { return static_cast<uint64_t>(integer("seed")); }
  std::string dump(int indent = 2) const;  // canonical (sorted keys)
  uint64_t hash() const;                   // FNV-1a over dump(0)
  static std::string help();

  RangeSpec range_spec() const;
  SceneGenParams scenegen_params() const;
  VaeTrainConfig vae_train_config(bool camera_modality) const;
  DiTConfig dit_config() const;
  DitTrainConfig dit_train_config() const;
  MetricsConfig metrics_config() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Writes <dir>/manifest.json: command, seed, full config echo, config hash,
/// and format versions. Deterministic (no timestamps or absolute paths).
void write_manifest(const std::string& dir, const std::string& command, const RunConfig& cfg);

}  // namespace mmw
