#pragma once

#include <filesystem>

#include "run_config.hpp"
#include "sgfa/error.hpp"

namespace sgfa::cli {

/// Exit status for an error kind: 2 config/argument, 3 I/O and input data,
/// 4 numerical or sampling failure, 5 missing upstream artifacts.
int exit_code(ErrorKind kind);

/// Each command writes below `root`: synth/, preprocess/, fit/, analysis/
/// or report/, each with a manifest.json inventory.
void cmd_synth(const RunConfig& config, const std::filesystem::path& root);
void cmd_preprocess(const RunConfig& config, const std::filesystem::path& root);
void cmd_fit(const RunConfig& config, const std::filesystem::path& root);
void cmd_analyze(const RunConfig& config, const std::filesystem::path& root);
void cmd_report(const RunConfig& config, const std::filesystem::path& root);

}  // namespace sgfa::cli
