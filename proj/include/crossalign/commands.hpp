#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crossalign/evaluation.hpp"
#include "crossalign/trainer.hpp"

namespace crossalign {

/// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Row label used in comparison tables ("Visual-Neural Alignment", ...).
std::string display_name(Method method);

/// Reads a dataset and applies the run's data overrides: responses are
/// regenerated from the stored forward model at config.noise, then
/// config.subsample neurons are kept. Stats are recomputed on the result.
DatasetContainer load_run_data(const RunConfig& config);
DatasetContainer apply_overrides(DatasetContainer data, const RunConfig& config);

/// Tasks for the requested modes; both modes share distractor stimuli.
std::vector<TaskInstance> build_eval_tasks(const DatasetContainer& data,
                                           std::span<const TaskMode> modes, Index K,
                                           std::uint64_t seed);

/// Scorer of a trained model on the test split of `data`.
template <typename Scalar>
Scorer model_scorer(const ModelParams<Scalar>& params, const DatasetContainer& data);

struct CompareReport {
  std::string dataset;
  RunConfig config;
  /// VNA, direct encoding, direct decoding, in that order.
  std::vector<EvalReport> reports;
};

/// Trains the three methods with identical seeds on `data` and evaluates
/// them on one shared task list.
CompareReport run_compare(const DatasetContainer& data, const RunConfig& config,
                          std::span<const TaskMode> modes);

std::string compare_report_to_json(const CompareReport& report);
std::string compare_report_to_csv(const CompareReport& report);
/// Plain-text table with columns Encoding, Decoding, Average.
std::string compare_report_table(const CompareReport& report);

/// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crossalign
