#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossalign/baselines.hpp"
#include "crossalign/dataio.hpp"

namespace crossalign {

/// One ranking problem. Encoding: the query is the image of
/// `query.stimulus` and the candidates are responses. Decoding: the query is
/// the response `query` and the candidates are images (their trial field is
/// unused). Candidate order is always the true match, then the distractors.
struct TaskInstance {
  TaskMode mode = TaskMode::encoding;
  Presentation query;
  Presentation truth;
  std::vector<Presentation> distractors;
  /// Seed the distractors were drawn with.
  std::uint64_t seed = 0;

  Index candidate_count() const { return static_cast<Index>(distractors.size()) + 1; }
  Presentation candidate(Index i) const {
    return i == 0 ? truth : distractors[static_cast<std::size_t>(i - 1)];
  }
  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

/// One instance per test presentation (stimulus, trial). Distractors are
/// K-1 distinct other test stimuli; for encoding each distractor response is
/// a random trial of its stimulus. Instance (s, t) draws from
/// derive_seed(seed, s, t) in both modes, so encoding and decoding see the
/// same distractor stimuli. K is clamped to the test set size with a
/// warning.
std::vector<TaskInstance> build_tasks(std::span<const Index> test, Index trials, TaskMode mode,
                                      Index K, std::uint64_t seed);

/// (#{d < true} + 0.5 #{d == true}) / #distractors.
double auc_single(double true_score, std::span<const double> distractor_scores);

/// Scores every candidate of an instance, in candidate order; higher is
/// better. Must be safe to call from several threads at once.
using Scorer = std::function<Eigen::VectorXd(const TaskInstance&)>;

struct InstanceResult {
  TaskMode mode = TaskMode::encoding;
  Index stimulus = 0;
  Index trial = 0;
  double auc = 0.0;
  friend bool operator==(const InstanceResult&, const InstanceResult&) = default;
};

struct EvalReport {
  std::string dataset;
  std::string method;
  Index K = 0;
  std::uint64_t seed = 0;
  std::optional<double> encoding_auc;
  std::optional<double> decoding_auc;
  /// Arithmetic mean of the modes that were evaluated.
  double average_auc = 0.0;
  std::vector<InstanceResult> instances;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Labels echoed into a report.
struct EvalLabels {
  std::string dataset;
  std::string method;
  Index K = 0;
  std::uint64_t seed = 0;
};

/// Scores every instance (in parallel, worker_count() threads) and averages
/// per mode. The result does not depend on the thread count. A scorer
/// failure is rethrown with the failing instance identified.
EvalReport evaluate(const Scorer& scorer, std::span<const TaskInstance> tasks,
                    const EvalLabels& labels);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& json);
/// Header line of the CSV format.
inline constexpr const char* kEvalCsvHeader = "dataset,method,mode,K,seed,auc";
/// One row per evaluated mode (no header).
std::string eval_report_csv_rows(const EvalReport& report);

/// Precomputed per-item representations of the test split: one row per test
/// stimulus on the image side and one per test presentation on the response
/// side. Scores compare an image-side row with a response-side row.
struct ScoreTable {
  enum class Similarity { cosine, negated_distance };
  Similarity similarity = Similarity::cosine;
  Eigen::MatrixXd image_side;
  Eigen::MatrixXd response_side;
  /// Row of stimulus s in image_side, -1 when absent.
  std::vector<Index> image_row;
  Index trials = 1;

  Index response_row(const Presentation& p) const;
  Eigen::VectorXd score(const TaskInstance& task) const;
};

/// Wraps a table as a Scorer (sharing ownership).
Scorer table_scorer(ScoreTable table);

/// VNA: cosine between f(M) and g(v).
template <typename Scalar>
ScoreTable make_score_table(const VnaParams<Scalar>& params, const DatasetContainer& data,
                            const NetworkOptions& options = {});
/// Direct encoding: -|f(M) - v| in z-scored response space.
template <typename Scalar>
ScoreTable make_score_table(const DirectEncoderParams<Scalar>& params,
                            const DatasetContainer& data, const NetworkOptions& options = {});
/// Direct decoding: -|M - g(v)| in pixel space.
template <typename Scalar>
ScoreTable make_score_table(const DirectDecoderParams<Scalar>& params,
                            const DatasetContainer& data, const NetworkOptions& options = {});

/// Scores from the dataset's forward model: -|r_clean(M) - v| on raw rates.
/// With noiseless data the true match scores exactly 0.
ScoreTable make_oracle_table(const DatasetContainer& data);

}  // namespace crossalign
