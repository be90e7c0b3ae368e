#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "sgfa/model.hpp"
#include "sgfa/pipeline.hpp"
#include "sgfa/sampler.hpp"
#include "sgfa/synthgen.hpp"

namespace sgfa::cli {

enum class DrawFormat { Csv, Binary, None };

struct DataConfig {
  /// Directory holding a dataset.json index (written by synth or preprocess).
  std::string dir;
  /// Raw view CSVs; fitting them runs the preprocessing chain first.
  std::vector<std::string> views;
  std::string labels;
  std::string label_column;
  std::string confounds;
};

struct AnalysisConfig {
  double cosine = 0.8;
  bool welch = false;
  /// Robust factors (0-based) to project back to data space.
  std::vector<int> project;
};

/// Effective configuration of one invocation: defaults, then a preset, then
/// the config file, then command-line flags.
struct RunConfig {
  std::string preset = "synthetic";
  std::uint64_t seed = 20240101;

  ModelFamily family = ModelFamily::SparseGfaRhs;
  int num_factors = 5;
  HyperParams hyper;

  SamplerConfig sampler;

  SyntheticScenario scenario;
  int replicates = 1;

  DataConfig data;
  PreprocessOptions preprocess;
  AnalysisConfig analysis;

  std::string output_dir;
  DrawFormat draws = DrawFormat::Csv;

  /// Applies "synthetic" (K=5, 2500 iterations) or "real" (K=20, 6000).
  void apply_preset(const std::string& name);
  /// Throws a config error on the first violated invariant.
  void validate() const;
  nlohmann::json to_json() const;
  /// Overlays the keys present in `j`; unknown keys are rejected.
  void merge(const nlohmann::json& j);
};

const char* to_string(DrawFormat f);
DrawFormat parse_draw_format(const std::string& text);

/// Reads a JSON config file; a syntax error is a config error.
nlohmann::json read_config_file(const std::string& path);

}  // namespace sgfa::cli
