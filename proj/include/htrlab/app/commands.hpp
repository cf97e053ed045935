#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "htrlab/app/config.hpp"
#include "htrlab/error.hpp"
#include "htrlab/eval/report.hpp"

namespace htrlab::app {

/// 2 for configuration problems, 3 for data problems, 4 for numeric
/// failures.
int exit_code_for(ErrorCode code);

/// Progress lines; null silences them.
using Log = std::function<void(const std::string&)>;

/// Synthetic data per the config, or the manifest when one is set.
data::Dataset load_dataset(const ExperimentConfig& cfg);

/// <output_dir>/<method>-seed<seed>, resolved against the output root.
std::filesystem::path run_dir(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trains one run and writes config.txt (resolved, single seed),
/// train_log.tsv, checkpoint.bin, codebook.bin for code methods and
/// layer_lrs.csv when per-layer rates exist. Returns the run directory.
std::filesystem::path cmd_train(const ExperimentConfig& cfg, std::uint64_t seed, const Log& log = {});

/// Run config and dataset, as persisted by cmd_train.
ExperimentConfig read_run_config(const std::filesystem::path& run);

enum class EvalMode { WithAdaptation, WithoutAdaptation, Both };

/// Test-writer protocol on a trained run. Writes report-<mode>.json/.txt and,
/// for Both, paired.json/.txt. `runs` overrides eval.runs when > 0.
/// CheckpointMismatch when the checkpoint does not match the run config.
std::vector<eval::EvalReport> cmd_eval(const std::filesystem::path& run, EvalMode mode, std::int64_t runs = 0,
                                       const Log& log = {});

/// One writer, one support/query split: adapt and decode. Writes
/// adapt-<writer>.json and returns its text.
std::string cmd_adapt(const std::filesystem::path& run, const std::string& writer, std::int64_t run_index = 0);

/// Writes the configured synthetic corpus (PNGs plus manifest) to `out`.
std::filesystem::path cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Merges the reports of several runs into summary.json/.txt, writes
/// parameters.txt per architecture and layer_lrs-<arch>-<method>.csv with the
/// seed-averaged rates. IncompatibleRuns when vocabularies differ or runs of
/// one architecture disagree on its configuration.
std::filesystem::path cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);

/// Aligned per-part and per-module parameter counts with a checked total.
std::string parameter_table_text(const models::ParameterTable& t);

}  // namespace htrlab::app
