#include "crossalign/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crossalign/synthdata.hpp"

namespace crossalign {

namespace {

using nlohmann::ordered_json;

constexpr std::array<Method, 3> kMethods{Method::vna, Method::direct_encode,
                                         Method::direct_decode};

std::vector<TaskMode> parse_modes(const std::string& text) {
  if (text == "both") return {TaskMode::encoding, TaskMode::decoding};
  return {parse_task_mode(text)};
}

template <typename T>
void overlay(T& target, const std::optional<T>& value) {
  if (value) target = *value;
}

/// Flags shared by train and compare.
struct ConfigFlags {
  std::optional<std::string> config_file;
  std::optional<std::string> data;
  std::optional<Index> latent_dim;
  std::optional<Index> batch_size;
  std::optional<Index> candidates;
  std::optional<double> learning_rate;
  std::optional<Index> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> eval_seed;
  std::optional<double> temperature;
  std::optional<Index> subsample;
  std::optional<std::uint64_t> subsample_seed;
  std::optional<double> noise;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON run configuration; flags override it")
        ->check(CLI::ExistingFile);
    app.add_option("--data", data, "Dataset directory");
    app.add_option("--d,--latent-dim", latent_dim, "Latent dimension (default 64)")
        ->check(CLI::PositiveNumber);
    app.add_option("--N,--batch-size", batch_size, "Batch size (default 256)")
        ->check(CLI::PositiveNumber);
    app.add_option("--K", candidates, "Candidates per task (default 400)")
        ->check(CLI::Range(Index{2}, std::numeric_limits<Index>::max()));
    app.add_option("--lr", learning_rate, "Adam learning rate (default 0.01)")
        ->check(CLI::PositiveNumber);
    app.add_option("--epochs", epochs, "Training epochs (default 100)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "Training seed (default 0)");
    app.add_option("--eval-seed", eval_seed, "Task construction seed (default 0)");
    app.add_option("--temperature", temperature, "Contrastive temperature (default 1)")
        ->check(CLI::PositiveNumber);
    app.add_option("--subsample", subsample, "Keep this many neurons (0 keeps all)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--subsample-seed", subsample_seed, "Seed of the neuron subset");
    app.add_option("--noise", noise, "Regenerate responses at this noise level")
        ->check(CLI::NonNegativeNumber);
  }

  RunConfig resolve(RunConfig base = {}) const {
    if (config_file) base = run_config_from_json(read_file(*config_file), base);
    overlay(base.data, data);
    overlay(base.latent_dim, latent_dim);
    overlay(base.batch_size, batch_size);
    overlay(base.candidates, candidates);
    overlay(base.learning_rate, learning_rate);
    overlay(base.epochs, epochs);
    overlay(base.seed, seed);
    overlay(base.eval_seed, eval_seed);
    overlay(base.temperature, temperature);
    overlay(base.subsample, subsample);
    overlay(base.subsample_seed, subsample_seed);
    if (noise) base.noise = noise;
    return base;
  }
};

std::string format_auc(const std::optional<double>& auc) {
  if (!auc) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *auc;
  return s.str();
}

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::filesystem::path default_history_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".history.json";
  return p;
}

void print_report(const EvalReport& r, std::ostream& out) {
  out << r.method << " on " << r.dataset << " (K=" << r.K << ", seed=" << r.seed
      << "): encoding " << format_auc(r.encoding_auc) << ", decoding "
      << format_auc(r.decoding_auc) << ", average " << format_auc(r.average_auc) << "\n";
}

int guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

std::string display_name(Method method) {
  switch (method) {
    case Method::vna:
      return "Visual-Neural Alignment";
    case Method::direct_encode:
      return "Direct Encoding";
    case Method::direct_decode:
      return "Direct Decoding";
  }
  return "?";
}

DatasetContainer apply_overrides(DatasetContainer data, const RunConfig& config) {
  std::optional<ForwardModelRecord> record;
  if (data.forward_model_json) record = forward_model_from_json(*data.forward_model_json);
  bool changed = false;
  if (config.noise) {
    if (!record) {
      throw DataError("--noise needs a dataset with a forward model");
    }
    ForwardModel model(record->model.seed(), record->model.channels(), record->model.neurons(),
                       *config.noise, record->model.noise());
    ResponseSet responses = gen_responses(data.stimuli, model, data.responses.trials);
    if (!record->neuron_subset.empty()) {
      responses = select_neurons(responses, record->neuron_subset);
    }
    data.responses = std::move(responses);
    record->model = std::move(model);
    changed = true;
  }
  if (config.subsample > 0 && config.subsample != data.responses.neurons) {
    const auto keep = choose_neurons(data.responses.neurons, config.subsample,
                                     config.subsample_seed);
    data.responses = select_neurons(data.responses, keep);
    if (record) {
      std::vector<Index> subset;
      for (Index k : keep) {
        subset.push_back(record->neuron_subset.empty()
                             ? k
                             : record->neuron_subset[static_cast<std::size_t>(k)]);
      }
      record->neuron_subset = std::move(subset);
    }
    changed = true;
  }
  if (changed) {
    data.manifest.neurons = data.responses.neurons;
    data.stats = compute_stats(data.responses, data.splits.train);
    if (record) data.forward_model_json = record->model.to_json(record->neuron_subset);
    validate(data);
  }
  return data;
}

DatasetContainer load_run_data(const RunConfig& config) {
  if (config.data.empty()) {
    throw ArgumentError("no dataset given (--data)");
  }
  return apply_overrides(read_dataset(config.data), config);
}

std::vector<TaskInstance> build_eval_tasks(const DatasetContainer& data,
                                           std::span<const TaskMode> modes, Index K,
                                           std::uint64_t seed) {
  std::vector<TaskInstance> tasks;
  for (TaskMode mode : modes) {
    auto part = build_tasks(data.splits.test, data.responses.trials, mode, K, seed);
    tasks.insert(tasks.end(), std::make_move_iterator(part.begin()),
                 std::make_move_iterator(part.end()));
  }
  return tasks;
}

template <typename Scalar>
Scorer model_scorer(const ModelParams<Scalar>& params, const DatasetContainer& data) {
  return std::visit([&](const auto& p) { return table_scorer(make_score_table(p, data)); },
                    params);
}

CompareReport run_compare(const DatasetContainer& data, const RunConfig& config,
                          std::span<const TaskMode> modes) {
  const auto tasks = build_eval_tasks(data, modes, config.candidates, config.eval_seed);
  const Index K = tasks.front().candidate_count();
  CompareReport report{data.manifest.id, config, {}};
  for (Method method : kMethods) {
    RunConfig c = config;
    c.method = method;
    try {
      const auto state = train<TrainScalar>(c, data);
      report.reports.push_back(evaluate(model_scorer<TrainScalar>(state.params, data), tasks,
                                        {data.manifest.id, to_string(method), K,
                                         config.eval_seed}));
    } catch (const NumericError& e) {
      throw NumericError(to_string(method) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(to_string(method) + ": " + e.what());
    }
  }
  return report;
}

std::string compare_report_to_json(const CompareReport& report) {
  ordered_json config = ordered_json::parse(run_config_to_json(report.config));
  config.erase("method");
  ordered_json methods = ordered_json::array();
  ordered_json table = ordered_json::array();
  for (const auto& r : report.reports) {
    methods.push_back(ordered_json::parse(eval_report_to_json(r)));
    table.push_back({{"method", r.method},
                     {"Encoding", optional_json(r.encoding_auc)},
                     {"Decoding", optional_json(r.decoding_auc)},
                     {"Average", r.average_auc}});
  }
  const ordered_json j = {{"dataset", report.dataset},
                          {"config", config},
                          {"table", table},
                          {"reports", methods}};
  return j.dump(2) + "\n";
}

std::string compare_report_to_csv(const CompareReport& report) {
  std::string out = std::string(kEvalCsvHeader) + "\n";
  for (const auto& r : report.reports) out += eval_report_csv_rows(r);
  return out;
}

std::string compare_report_table(const CompareReport& report) {
  std::size_t width = 7;
  for (const auto& r : report.reports) {
    width = std::max(width, display_name(parse_method(r.method)).size());
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Method" << std::right;
  for (const char* column : {"Encoding", "Decoding", "Average"}) out << "  " << std::setw(8) << column;
  out << "\n" << std::string(width + 30, '-') << "\n";
  for (const auto& r : report.reports) {
    out << std::left << std::setw(static_cast<int>(width)) << display_name(parse_method(r.method))
        << std::right << "  " << std::setw(8) << format_auc(r.encoding_auc) << "  "
        << std::setw(8) << format_auc(r.decoding_auc) << "  " << std::setw(8)
        << format_auc(r.average_auc) << "\n";
  }
  return out.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual-neural alignment toolkit: synthetic data, training and evaluation"};
  app.name("crossalign");
  app.require_subcommand(1);
  std::function<void()> action;

  // gen-data
  SyntheticDatasetSpec spec;
  std::string gen_out, gen_id = "synthetic";
  bool null_responses = false;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--stimuli", spec.stimuli, "Number of images S")->check(CLI::Range(2, 1 << 24));
  gen->add_option("--channels", spec.channels, "Image channels c")->check(CLI::Range(1, 64));
  gen->add_option("--neurons", spec.neurons, "Neurons n")->check(CLI::Range(1, 1 << 24));
  gen->add_option("--trials", spec.trials, "Trials per image T")->check(CLI::Range(1, 1 << 20));
  gen->add_option("--noise", spec.noise_level, "Trial noise level sigma")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", spec.seed, "Generator seed");
  gen->add_option("--id", gen_id, "Dataset id");
  gen->add_flag("--null", null_responses,
                "Responses independent of the stimuli (null control)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->callback([&] {
    action = [&] {
      spec.noise = null_responses ? NoiseKind::independent : NoiseKind::gaussian;
      const auto data = generate_dataset(spec, gen_id);
      write_dataset(data, gen_out);
      out << "wrote " << gen_out << ": id=" << data.manifest.id << " S=" << data.manifest.stimuli
          << " c=" << data.manifest.channels << " n=" << data.manifest.neurons
          << " T=" << data.manifest.trials << " train=" << data.splits.train.size()
          << " test=" << data.splits.test.size() << "\n";
    };
  });

  // train
  ConfigFlags train_flags;
  std::string train_method, train_out, train_history, train_resume;
  auto* tr = app.add_subcommand("train", "Train one method");
  tr->add_option("--method", train_method, "vna, direct-encode or direct-decode")
      ->check(CLI::IsMember({"vna", "direct-encode", "direct-decode"}));
  train_flags.attach(*tr);
  tr->add_option("--out", train_out, "Checkpoint path")->required();
  tr->add_option("--history", train_history, "History JSON path (default <out>.history.json)");
  tr->add_option("--resume", train_resume, "Continue from this checkpoint")
      ->check(CLI::ExistingFile);
  tr->callback([&] {
    action = [&] {
      TrainState<TrainScalar> state;
      DatasetContainer data;
      if (!train_resume.empty()) {
        state = load_checkpoint<TrainScalar>(train_resume);
        if (!train_method.empty() && parse_method(train_method) != method_of(state.params)) {
          throw DataError("checkpoint " + train_resume + " holds a " +
                          to_string(method_of(state.params)) + " model");
        }
        RunConfig c = train_flags.resolve(state.config);
        const Index epochs = c.epochs;
        c.epochs = state.config.epochs;
        if (c != state.config) throw ArgumentError("--resume only allows changing --epochs");
        state.config.epochs = epochs;
        state.history.config = state.config;
        data = load_run_data(state.config);
      } else {
        RunConfig c = train_flags.resolve();
        if (!train_method.empty()) c.method = parse_method(train_method);
        data = load_run_data(c);
        state = init_training<TrainScalar>(c, data);
      }
      train_until(state, data, state.config.epochs);
      save_checkpoint(state, train_out);
      write_file_atomic(train_history.empty() ? default_history_path(train_out)
                                              : std::filesystem::path(train_history),
                        history_to_json(state.history));
      out << "trained " << to_string(state.config.method) << " for " << state.epoch
          << " epochs (d=" << state.config.latent_dim << ", N=" << state.history.batch_size
          << ", lr=" << state.config.learning_rate << ")";
      if (!state.history.epoch_loss.empty()) {
        out << ", final loss " << state.history.epoch_loss.back();
      }
      out << "\nwrote " << train_out << "\n";
    };
  });

  // eval
  std::string eval_checkpoint, eval_mode = "both", eval_json, eval_csv;
  std::optional<std::string> eval_data;
  std::optional<Index> eval_K;
  std::optional<std::uint64_t> eval_seed;
  bool eval_oracle = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", eval_checkpoint, "Checkpoint from train")
      ->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset directory (default: the training dataset)");
  ev->add_option("--mode", eval_mode, "encoding, decoding or both")
      ->check(CLI::IsMember({"encoding", "decoding", "both"}));
  ev->add_option("--K", eval_K, "Candidates per task")
      ->check(CLI::Range(Index{2}, std::numeric_limits<Index>::max()));
  ev->add_option("--seed", eval_seed, "Task construction seed");
  ev->add_option("--json", eval_json, "Write the report as JSON");
  ev->add_option("--csv", eval_csv, "Write the report as CSV");
  // Test hook: score with the dataset's own forward model.
  ev->add_flag("--oracle", eval_oracle)->group("");
  ev->callback([&] {
    action = [&] {
      const auto modes = parse_modes(eval_mode);
      RunConfig config;
      std::optional<TrainState<TrainScalar>> state;
      if (!eval_oracle) {
        if (eval_checkpoint.empty()) throw ArgumentError("--checkpoint is required");
        state = load_checkpoint<TrainScalar>(eval_checkpoint);
        config = state->config;
      }
      overlay(config.data, eval_data);
      overlay(config.candidates, eval_K);
      overlay(config.eval_seed, eval_seed);
      const auto data = load_run_data(config);
      const auto tasks = build_eval_tasks(data, modes, config.candidates, config.eval_seed);
      const Scorer scorer = eval_oracle ? table_scorer(make_oracle_table(data))
                                        : model_scorer<TrainScalar>(state->params, data);
      const EvalReport report =
          evaluate(scorer, tasks,
                   {data.manifest.id, eval_oracle ? "oracle" : to_string(config.method),
                    tasks.front().candidate_count(), config.eval_seed});
      if (!eval_json.empty()) write_file_atomic(eval_json, eval_report_to_json(report));
      if (!eval_csv.empty()) {
        write_file_atomic(eval_csv,
                          std::string(kEvalCsvHeader) + "\n" + eval_report_csv_rows(report));
      }
      print_report(report, out);
    };
  });

  // compare
  ConfigFlags compare_flags;
  std::string compare_out, compare_mode = "both";
  auto* cmp = app.add_subcommand("compare", "Train and evaluate all three methods");
  compare_flags.attach(*cmp);
  cmp->add_option("--mode", compare_mode, "encoding, decoding or both")
      ->check(CLI::IsMember({"encoding", "decoding", "both"}));
  cmp->add_option("--out", compare_out, "Output directory")->required();
  cmp->callback([&] {
    action = [&] {
      const RunConfig config = compare_flags.resolve();
      const auto data = load_run_data(config);
      const auto modes = parse_modes(compare_mode);
      const CompareReport report = run_compare(data, config, modes);
      const std::filesystem::path dir(compare_out);
      std::filesystem::create_directories(dir);
      write_file_atomic(dir / "compare.json", compare_report_to_json(report));
      write_file_atomic(dir / "compare.csv", compare_report_to_csv(report));
      const std::string table = compare_report_table(report);
      write_file_atomic(dir / "table.txt", table);
      out << table;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  return action ? guarded(action, err) : kExitUsage;
}

template Scorer model_scorer(const ModelParams<float>&, const DatasetContainer&);
template Scorer model_scorer(const ModelParams<double>&, const DatasetContainer&);

}  // namespace crossalign
