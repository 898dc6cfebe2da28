#include <doctest.h>

#include <cstdlib>
#include <set>

#include <json.hpp>

#include "crossalign/evaluation.hpp"
#include "crossalign/synthdata.hpp"
#include "support.hpp"

using namespace crossalign;

namespace {

// Pairwise counting with integer arithmetic: 2 per win, 1 per tie.
double brute_force_auc(double truth, const std::vector<double>& distractors) {
  long long points = 0;
  for (double d : distractors) {
    if (truth > d) points += 2;
    else if (truth == d) points += 1;
  }
  return static_cast<double>(points) / (2.0 * static_cast<double>(distractors.size()));
}

std::vector<Index> iota_ids(Index n, Index from = 0) {
  std::vector<Index> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = from + i;
  return ids;
}

class ThreadsOverride {
 public:
  explicit ThreadsOverride(const char* value) { ::setenv("CROSSALIGN_THREADS", value, 1); }
  ~ThreadsOverride() { ::unsetenv("CROSSALIGN_THREADS"); }
};

class CaptureWarnings {
 public:
  CaptureWarnings() {
    set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~CaptureWarnings() { set_warning_sink({}); }
  std::vector<std::string> messages;
};

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("auc_single examples") {
  const std::vector<double> d{1, 2, 3, 4};
  CHECK(auc_single(5, d) == 1.0);
  CHECK(auc_single(0, d) == 0.0);
  CHECK(auc_single(2.5, d) == 0.5);
  CHECK(auc_single(2, d) == 0.375);
  CHECK(auc_single(1, std::vector<double>{1, 1}) == 0.5);
  CHECK_THROWS_AS(auc_single(1, std::vector<double>{}), ArgumentError);
}

TEST_CASE("auc_single agrees with pairwise counting") {
  Rng rng(77);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto count = 1 + uniform_index(rng, 60);
    // Small integer grid so ties are frequent.
    const bool coarse = trial % 2 == 0;
    auto draw = [&] {
      return coarse ? static_cast<double>(uniform_index(rng, 7)) : standard_normal(rng);
    };
    std::vector<double> distractors(count);
    for (auto& v : distractors) v = draw();
    const double truth = draw();
    REQUIRE(auc_single(truth, distractors) == brute_force_auc(truth, distractors));
  }
}

TEST_CASE("build_tasks structure") {
  const auto test = iota_ids(12, 100);
  const Index trials = 3;
  const auto enc = build_tasks(test, trials, TaskMode::encoding, 5, 42);
  const auto dec = build_tasks(test, trials, TaskMode::decoding, 5, 42);
  REQUIRE(enc.size() == 36);
  REQUIRE(dec.size() == 36);
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const auto& e = enc[i];
    const auto& d = dec[i];
    CHECK(e.mode == TaskMode::encoding);
    CHECK(d.mode == TaskMode::decoding);
    CHECK(e.candidate_count() == 5);
    CHECK(e.query.trial == 0);
    CHECK(e.truth.stimulus == e.query.stimulus);
    CHECK(d.truth == Presentation{d.query.stimulus, 0});
    CHECK(e.truth == d.query);
    std::set<Index> seen{e.truth.stimulus};
    for (Index k = 1; k < e.candidate_count(); ++k) {
      const auto c = e.candidate(k);
      CHECK(c.trial >= 0);
      CHECK(c.trial < trials);
      CHECK(std::find(test.begin(), test.end(), c.stimulus) != test.end());
      seen.insert(c.stimulus);
      // Both modes draw the same distractor stimuli.
      CHECK(d.candidate(k).stimulus == c.stimulus);
    }
    CHECK(seen.size() == 5);
  }
  CHECK(build_tasks(test, trials, TaskMode::encoding, 5, 42) == enc);
  CHECK(build_tasks(test, trials, TaskMode::encoding, 5, 43) != enc);
}

TEST_CASE("build_tasks arguments") {
  const auto test = iota_ids(6);
  CHECK_THROWS_AS(build_tasks(test, 1, TaskMode::encoding, 1, 0), ArgumentError);
  CHECK_THROWS_AS(build_tasks(iota_ids(1), 1, TaskMode::encoding, 2, 0), ArgumentError);
  CHECK_THROWS_AS(build_tasks(test, 0, TaskMode::encoding, 2, 0), ArgumentError);
  CaptureWarnings warnings;
  const auto tasks = build_tasks(test, 1, TaskMode::decoding, 400, 0);
  REQUIRE(warnings.messages.size() == 1);
  CHECK(warnings.messages[0].find("K=400") != std::string::npos);
  CHECK(tasks.front().candidate_count() == 6);
}

TEST_CASE("evaluate averages per mode") {
  const auto test = iota_ids(10);
  auto tasks = build_tasks(test, 2, TaskMode::encoding, 4, 1);
  const auto dec = build_tasks(test, 2, TaskMode::decoding, 4, 1);
  tasks.insert(tasks.end(), dec.begin(), dec.end());

  const Scorer perfect = [](const TaskInstance& t) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(t.candidate_count());
    s[0] = 1.0;
    return s;
  };
  // Decoding is flat (0.5), encoding is perfect.
  const Scorer mixed = [](const TaskInstance& t) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(t.candidate_count());
    if (t.mode == TaskMode::encoding) s[0] = 1.0;
    return s;
  };
  const auto a = evaluate(perfect, tasks, {"d", "m", 4, 1});
  CHECK(a.encoding_auc == 1.0);
  CHECK(a.decoding_auc == 1.0);
  CHECK(a.average_auc == 1.0);
  CHECK(a.instances.size() == 40);
  const auto b = evaluate(mixed, tasks, {"d", "m", 4, 1});
  CHECK(b.encoding_auc == 1.0);
  CHECK(b.decoding_auc == 0.5);
  CHECK(b.average_auc == 0.75);

  SUBCASE("single mode") {
    const auto only = evaluate(mixed, dec, {"d", "m", 4, 1});
    CHECK_FALSE(only.encoding_auc.has_value());
    CHECK(only.decoding_auc == 0.5);
    CHECK(only.average_auc == 0.5);
  }
  SUBCASE("independent of the thread count") {
    Rng rng(3);
    std::vector<Eigen::VectorXd> fixed;
    for (const auto& t : tasks) {
      Eigen::VectorXd s(t.candidate_count());
      for (Index i = 0; i < s.size(); ++i) s[i] = standard_normal(rng);
      fixed.push_back(s);
    }
    const Scorer lookup = [&](const TaskInstance& t) {
      const auto it = std::find(tasks.begin(), tasks.end(), t);
      return fixed[static_cast<std::size_t>(it - tasks.begin())];
    };
    EvalReport one, four;
    {
      ThreadsOverride threads("1");
      one = evaluate(lookup, tasks, {"d", "m", 4, 1});
    }
    {
      ThreadsOverride threads("4");
      four = evaluate(lookup, tasks, {"d", "m", 4, 1});
    }
    CHECK(one == four);
  }
  SUBCASE("scorer failures name the instance") {
    const Scorer short_scores = [](const TaskInstance& t) {
      return Eigen::VectorXd(Eigen::VectorXd::Zero(t.candidate_count() - 1));
    };
    CHECK_THROWS_WITH_AS(evaluate(short_scores, tasks, {}), doctest::Contains("instance 0"),
                         ShapeError);
    const Scorer nan_scores = [](const TaskInstance& t) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(t.candidate_count());
      if (t.query.stimulus == 3) s[1] = std::nan("");
      return s;
    };
    CHECK_THROWS_WITH_AS(evaluate(nan_scores, tasks, {}), doctest::Contains("stimulus 3"),
                         NumericError);
    CHECK_THROWS_AS(evaluate(perfect, std::vector<TaskInstance>{}, {}), ArgumentError);
  }
}

TEST_CASE("report serialisation") {
  EvalReport r;
  r.dataset = "synthetic";
  r.method = "vna";
  r.K = 40;
  r.seed = 9;
  r.encoding_auc = 0.1 + 0.2;
  r.decoding_auc = 2.0 / 3.0;
  r.average_auc = (*r.encoding_auc + *r.decoding_auc) / 2;
  r.instances = {{TaskMode::encoding, 1, 0, 0.25}, {TaskMode::decoding, 2, 1, 1.0 / 3.0}};
  const auto json = eval_report_to_json(r);
  CHECK(eval_report_from_json(json) == r);
  const auto parsed = nlohmann::json::parse(json);
  CHECK(parsed.at("average_auc").get<double>() == r.average_auc);
  CHECK_THROWS_AS(eval_report_from_json("{\"dataset\": 3}"), DataError);

  const std::string csv = eval_report_csv_rows(r);
  CHECK(csv.starts_with("synthetic,vna,encoding,40,9,0.30000000000000004\n"));
  CHECK(csv.find("synthetic,vna,decoding,40,9,0.66666666666666663\n") != std::string::npos);
  CHECK(std::string(kEvalCsvHeader) == "dataset,method,mode,K,seed,auc");

  r.encoding_auc.reset();
  const auto reparsed = nlohmann::json::parse(eval_report_to_json(r));
  CHECK(reparsed.at("encoding_auc").is_null());
  CHECK(eval_report_from_json(eval_report_to_json(r)) == r);
}

TEST_CASE("oracle table separates noiseless data") {
  SyntheticDatasetSpec spec;
  spec.stimuli = 30;
  spec.neurons = 16;
  spec.trials = 2;
  const auto data = generate_dataset(spec);
  const auto table = make_oracle_table(data);
  CHECK(table.image_side.rows() == 6);
  CHECK(table.response_side.rows() == 12);
  auto tasks = build_tasks(data.splits.test, 2, TaskMode::encoding, 6, 0);
  const auto dec = build_tasks(data.splits.test, 2, TaskMode::decoding, 6, 0);
  tasks.insert(tasks.end(), dec.begin(), dec.end());
  const auto report = evaluate(table_scorer(table), tasks, {});
  CHECK(report.encoding_auc == 1.0);
  CHECK(report.decoding_auc == 1.0);

  SUBCASE("presentations outside the test split are rejected") {
    TaskInstance bad = tasks.front();
    bad.truth.stimulus = data.splits.train.front();
    CHECK_THROWS_AS(table.score(bad), ArgumentError);
  }
  SUBCASE("datasets without a forward model") {
    auto plain = data;
    plain.forward_model_json.reset();
    CHECK_THROWS_AS(make_oracle_table(plain), DataError);
  }
}

}  // TEST_SUITE
