#include "crossalign/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "crossalign/alignment.hpp"
#include "crossalign/synthdata.hpp"

namespace crossalign {

namespace {

constexpr Index kEmbedChunk = 64;

std::string describe(const TaskInstance& task, std::size_t index) {
  return "instance " + std::to_string(index) + " (" + to_string(task.mode) + ", stimulus " +
         std::to_string(task.query.stimulus) + ", trial " + std::to_string(task.query.trial) + ")";
}

// Rethrows the active exception with context, keeping its category.
[[noreturn]] void rethrow_with_context(std::exception_ptr error, const std::string& context) {
  try {
    std::rethrow_exception(error);
  } catch (const ShapeError& e) {
    throw ShapeError(context + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ArgumentError(context + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(context + ": " + e.what());
  }
}

double mean_of(const std::vector<InstanceResult>& results, TaskMode mode, bool& any) {
  double sum = 0.0;
  Index count = 0;
  for (const auto& r : results) {
    if (r.mode == mode) {
      sum += r.auc;
      ++count;
    }
  }
  any = count > 0;
  return any ? sum / static_cast<double>(count) : 0.0;
}

std::vector<Presentation> test_presentations(const DatasetContainer& data) {
  std::vector<Presentation> out;
  for (Index s : data.splits.test) {
    for (Index t = 0; t < data.responses.trials; ++t) {
      out.push_back({s, t});
    }
  }
  return out;
}

std::vector<Index> image_rows(const DatasetContainer& data) {
  std::vector<Index> rows(static_cast<std::size_t>(data.stimuli.count), -1);
  for (std::size_t i = 0; i < data.splits.test.size(); ++i) {
    rows[static_cast<std::size_t>(data.splits.test[i])] = static_cast<Index>(i);
  }
  return rows;
}

// Applies `fn` to chunks of the test images and stacks the (B, k) outputs.
template <typename Scalar, typename Fn>
Eigen::MatrixXd map_images(const DatasetContainer& data, Fn&& fn) {
  const auto& ids = data.splits.test;
  Eigen::MatrixXd out;
  for (std::size_t begin = 0; begin < ids.size(); begin += kEmbedChunk) {
    const std::size_t end = std::min(ids.size(), begin + static_cast<std::size_t>(kEmbedChunk));
    const Tensor<Scalar> batch =
        gather_images<Scalar>(data.stimuli, std::span<const Index>(ids).subspan(begin, end - begin));
    const Tensor<Scalar> result = fn(batch);
    const Index rows = result.dim(0), cols = result.size() / rows;
    if (out.size() == 0) out.resize(static_cast<Index>(ids.size()), cols);
    out.middleRows(static_cast<Index>(begin), rows) = result.matrix(rows, cols).template cast<double>();
  }
  return out;
}

template <typename Scalar, typename Fn>
Eigen::MatrixXd map_responses(const DatasetContainer& data, Fn&& fn) {
  const auto ids = test_presentations(data);
  Eigen::MatrixXd out;
  for (std::size_t begin = 0; begin < ids.size(); begin += kEmbedChunk) {
    const std::size_t end = std::min(ids.size(), begin + static_cast<std::size_t>(kEmbedChunk));
    const Tensor<Scalar> batch = gather_responses<Scalar>(
        data.responses, data.stats,
        std::span<const Presentation>(ids).subspan(begin, end - begin));
    const Tensor<Scalar> result = fn(batch);
    const Index rows = result.dim(0), cols = result.size() / rows;
    if (out.size() == 0) out.resize(static_cast<Index>(ids.size()), cols);
    out.middleRows(static_cast<Index>(begin), rows) = result.matrix(rows, cols).template cast<double>();
  }
  return out;
}

ScoreTable empty_table(const DatasetContainer& data, ScoreTable::Similarity similarity) {
  if (data.splits.test.empty()) {
    throw DataError("dataset has an empty test split");
  }
  ScoreTable table;
  table.similarity = similarity;
  table.image_row = image_rows(data);
  table.trials = data.responses.trials;
  return table;
}

}  // namespace

std::vector<TaskInstance> build_tasks(std::span<const Index> test, Index trials, TaskMode mode,
                                      Index K, std::uint64_t seed) {
  if (K < 2) {
    throw ArgumentError("K must be at least 2, got " + std::to_string(K));
  }
  if (test.size() < 2) {
    throw ArgumentError("task construction needs at least 2 test stimuli, got " +
                        std::to_string(test.size()));
  }
  if (trials < 1) {
    throw ArgumentError("task construction needs at least one trial");
  }
  const auto available = static_cast<Index>(test.size());
  if (K > available) {
    warn("K=" + std::to_string(K) + " exceeds the " + std::to_string(available) +
         " test candidates; using K=" + std::to_string(available));
    K = available;
  }
  std::vector<TaskInstance> tasks;
  tasks.reserve(test.size() * static_cast<std::size_t>(trials));
  std::vector<Index> pool;
  for (std::size_t qi = 0; qi < test.size(); ++qi) {
    const Index s = test[qi];
    for (Index t = 0; t < trials; ++t) {
      TaskInstance task;
      task.mode = mode;
      task.query = {s, mode == TaskMode::encoding ? 0 : t};
      task.truth = {s, mode == TaskMode::encoding ? t : 0};
      task.seed = derive_seed(seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(t));
      Rng rng(task.seed);
      pool.clear();
      for (std::size_t j = 0; j < test.size(); ++j) {
        if (j != qi) pool.push_back(test[j]);
      }
      // Partial Fisher-Yates: the first K-1 slots are a uniform sample.
      for (std::size_t j = 0; j + 1 < static_cast<std::size_t>(K); ++j) {
        std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
      }
      // Trials are drawn after the stimuli so both modes share the stimuli.
      for (std::size_t j = 0; j + 1 < static_cast<std::size_t>(K); ++j) {
        const Index trial =
            mode == TaskMode::encoding
                ? static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(trials)))
                : 0;
        task.distractors.push_back({pool[j], trial});
      }
      tasks.push_back(std::move(task));
    }
  }
  return tasks;
}

double auc_single(double true_score, std::span<const double> distractor_scores) {
  if (distractor_scores.empty()) {
    throw ArgumentError("auc_single needs at least one distractor");
  }
  std::size_t wins = 0, ties = 0;
  for (double d : distractor_scores) {
    if (true_score > d) {
      ++wins;
    } else if (true_score == d) {
      ++ties;
    }
  }
  return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
         static_cast<double>(distractor_scores.size());
}

EvalReport evaluate(const Scorer& scorer, std::span<const TaskInstance> tasks,
                    const EvalLabels& labels) {
  if (tasks.empty()) {
    throw ArgumentError("evaluate: no task instances");
  }
  std::vector<InstanceResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size() && !failed; i = next++) {
      const TaskInstance& task = tasks[i];
      try {
        const Eigen::VectorXd scores = scorer(task);
        if (scores.size() != task.candidate_count()) {
          throw ShapeError("scorer returned " + std::to_string(scores.size()) + " scores for " +
                           std::to_string(task.candidate_count()) + " candidates");
        }
        if (!scores.allFinite()) {
          throw NumericError("scorer returned a non-finite score");
        }
        const std::span<const double> all(scores.data(), static_cast<std::size_t>(scores.size()));
        results[i] = {task.mode, task.query.stimulus, task.query.trial,
                      auc_single(all[0], all.subspan(1))};
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };

  const unsigned workers =
      std::max(1u, std::min<unsigned>(worker_count(), static_cast<unsigned>(tasks.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (errors[i]) rethrow_with_context(errors[i], describe(tasks[i], i));
  }

  EvalReport report{labels.dataset, labels.method, labels.K, labels.seed, {}, {}, 0.0,
                    std::move(results)};
  bool has_enc = false, has_dec = false;
  const double enc = mean_of(report.instances, TaskMode::encoding, has_enc);
  const double dec = mean_of(report.instances, TaskMode::decoding, has_dec);
  if (has_enc) report.encoding_auc = enc;
  if (has_dec) report.decoding_auc = dec;
  report.average_auc = has_enc && has_dec ? (enc + dec) / 2.0 : (has_enc ? enc : dec);
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  using nlohmann::ordered_json;
  auto optional = [](const std::optional<double>& v) -> ordered_json {
    return v ? ordered_json(*v) : ordered_json(nullptr);
  };
  ordered_json instances = ordered_json::array();
  for (const auto& r : report.instances) {
    instances.push_back({{"mode", to_string(r.mode)},
                         {"stimulus", r.stimulus},
                         {"trial", r.trial},
                         {"auc", r.auc}});
  }
  const ordered_json j = {{"dataset", report.dataset},
                          {"method", report.method},
                          {"K", report.K},
                          {"seed", report.seed},
                          {"encoding_auc", optional(report.encoding_auc)},
                          {"decoding_auc", optional(report.decoding_auc)},
                          {"average_auc", report.average_auc},
                          {"instances", instances}};
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.K = j.at("K").get<Index>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("encoding_auc").is_null()) r.encoding_auc = j["encoding_auc"].get<double>();
    if (!j.at("decoding_auc").is_null()) r.decoding_auc = j["decoding_auc"].get<double>();
    r.average_auc = j.at("average_auc").get<double>();
    for (const auto& item : j.at("instances")) {
      r.instances.push_back({parse_task_mode(item.at("mode").get<std::string>()),
                             item.at("stimulus").get<Index>(), item.at("trial").get<Index>(),
                             item.at("auc").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("eval report: ") + e.what());
  }
}

std::string eval_report_csv_rows(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  auto row = [&](const char* mode, double auc) {
    out << report.dataset << ',' << report.method << ',' << mode << ',' << report.K << ','
        << report.seed << ',' << auc << '\n';
  };
  if (report.encoding_auc) row("encoding", *report.encoding_auc);
  if (report.decoding_auc) row("decoding", *report.decoding_auc);
  return out.str();
}

Index ScoreTable::response_row(const Presentation& p) const {
  const Index row = image_row.at(static_cast<std::size_t>(p.stimulus));
  if (row < 0 || p.trial < 0 || p.trial >= trials) {
    throw ArgumentError("presentation (" + std::to_string(p.stimulus) + ", " +
                        std::to_string(p.trial) + ") is not in the test split");
  }
  return row * trials + p.trial;
}

Eigen::VectorXd ScoreTable::score(const TaskInstance& task) const {
  auto image = [&](Index stimulus) {
    const Index row = stimulus >= 0 && stimulus < static_cast<Index>(image_row.size())
                          ? image_row[static_cast<std::size_t>(stimulus)]
                          : -1;
    if (row < 0) {
      throw ArgumentError("stimulus " + std::to_string(stimulus) + " is not in the test split");
    }
    return image_side.row(row);
  };
  const Index K = task.candidate_count();
  Eigen::MatrixXd candidates(K, task.mode == TaskMode::encoding ? response_side.cols()
                                                                 : image_side.cols());
  Eigen::VectorXd query;
  if (task.mode == TaskMode::encoding) {
    query = image(task.query.stimulus).transpose();
    for (Index i = 0; i < K; ++i) candidates.row(i) = response_side.row(response_row(task.candidate(i)));
  } else {
    query = response_side.row(response_row(task.query)).transpose();
    for (Index i = 0; i < K; ++i) candidates.row(i) = image(task.candidate(i).stimulus);
  }
  return similarity == Similarity::cosine ? rank_candidates(query, candidates)
                                          : negated_distances(query, candidates);
}

Scorer table_scorer(ScoreTable table) {
  auto shared = std::make_shared<const ScoreTable>(std::move(table));
  return [shared](const TaskInstance& task) { return shared->score(task); };
}

template <typename Scalar>
ScoreTable make_score_table(const VnaParams<Scalar>& params, const DatasetContainer& data,
                            const NetworkOptions& options) {
  ScoreTable table = empty_table(data, ScoreTable::Similarity::cosine);
  table.image_side = map_images<Scalar>(
      data, [&](const Tensor<Scalar>& x) { return embed_images(params.visual, x, options); });
  table.response_side = map_responses<Scalar>(
      data, [&](const Tensor<Scalar>& x) { return embed_spikes(params.spike, x, options); });
  return table;
}

template <typename Scalar>
ScoreTable make_score_table(const DirectEncoderParams<Scalar>& params,
                            const DatasetContainer& data, const NetworkOptions& options) {
  ScoreTable table = empty_table(data, ScoreTable::Similarity::negated_distance);
  table.image_side = map_images<Scalar>(
      data, [&](const Tensor<Scalar>& x) { return predict_responses(params, x, options); });
  table.response_side =
      map_responses<Scalar>(data, [](const Tensor<Scalar>& x) { return x; });
  return table;
}

template <typename Scalar>
ScoreTable make_score_table(const DirectDecoderParams<Scalar>& params,
                            const DatasetContainer& data, const NetworkOptions& options) {
  ScoreTable table = empty_table(data, ScoreTable::Similarity::negated_distance);
  table.image_side = map_images<Scalar>(data, [](const Tensor<Scalar>& x) { return x; });
  table.response_side = map_responses<Scalar>(
      data, [&](const Tensor<Scalar>& x) { return predict_images(params, x, options); });
  return table;
}

ScoreTable make_oracle_table(const DatasetContainer& data) {
  if (!data.forward_model_json) {
    throw DataError("dataset '" + data.manifest.id + "' has no forward model");
  }
  const ForwardModelRecord record = forward_model_from_json(*data.forward_model_json);
  ScoreTable table = empty_table(data, ScoreTable::Similarity::negated_distance);
  std::vector<Index> subset = record.neuron_subset;
  if (subset.empty()) {
    for (Index i = 0; i < record.model.neurons(); ++i) subset.push_back(i);
  }
  if (static_cast<Index>(subset.size()) != data.responses.neurons) {
    throw DataError("forward model covers " + std::to_string(subset.size()) +
                    " neurons but the dataset has " + std::to_string(data.responses.neurons));
  }
  table.image_side.resize(static_cast<Index>(data.splits.test.size()),
                          static_cast<Index>(subset.size()));
  for (std::size_t i = 0; i < data.splits.test.size(); ++i) {
    const Eigen::VectorXd rates = record.model.clean_rates(data.stimuli.image(data.splits.test[i]));
    for (std::size_t k = 0; k < subset.size(); ++k) {
      table.image_side(static_cast<Index>(i), static_cast<Index>(k)) =
          static_cast<double>(static_cast<float>(rates[subset[k]]));
    }
  }
  const auto ids = test_presentations(data);
  table.response_side.resize(static_cast<Index>(ids.size()), data.responses.neurons);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = data.responses.response(ids[i].stimulus, ids[i].trial);
    for (Index k = 0; k < data.responses.neurons; ++k) {
      table.response_side(static_cast<Index>(i), k) = r[static_cast<std::size_t>(k)];
    }
  }
  return table;
}

#define CROSSALIGN_INSTANTIATE_EVALUATION(S)                                                  \
  template ScoreTable make_score_table(const VnaParams<S>&, const DatasetContainer&,          \
                                       const NetworkOptions&);                                \
  template ScoreTable make_score_table(const DirectEncoderParams<S>&,                         \
                                       const DatasetContainer&, const NetworkOptions&);       \
  template ScoreTable make_score_table(const DirectDecoderParams<S>&,                         \
                                       const DatasetContainer&, const NetworkOptions&);

CROSSALIGN_INSTANTIATE_EVALUATION(float)
CROSSALIGN_INSTANTIATE_EVALUATION(double)

#undef CROSSALIGN_INSTANTIATE_EVALUATION

}  // namespace crossalign
