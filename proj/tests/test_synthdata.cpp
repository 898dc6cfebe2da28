#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "crossalign/synthdata.hpp"

using namespace crossalign;

namespace {

// Recomputes phi and the clean rates from the model's public matrices.
Eigen::VectorXd reference_rates(const ForwardModel& model, std::span<const float> image) {
  const Index c = model.channels();
  Eigen::VectorXd pooled(c * 256);
  for (Index ch = 0; ch < c; ++ch) {
    for (Index by = 0; by < 16; ++by) {
      for (Index bx = 0; bx < 16; ++bx) {
        double sum = 0;
        for (Index y = 0; y < 4; ++y) {
          for (Index x = 0; x < 4; ++x) {
            sum += image[static_cast<std::size_t>(ch * 4096 + (by * 4 + y) * 64 + bx * 4 + x)];
          }
        }
        pooled[ch * 256 + by * 16 + bx] = sum / 16.0 - 0.5;
      }
    }
  }
  const Eigen::VectorXd phi = (model.projection() * pooled).array().tanh().matrix();
  const Eigen::ArrayXd pre = (model.tuning() * phi + model.baseline()).array();
  return pre.exp().log1p().matrix();
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("forward model shapes and determinism") {
  const ForwardModel a(3, 2, 10), b(3, 2, 10), c(4, 2, 10);
  CHECK(a.projection().rows() == kFeatureDim);
  CHECK(a.projection().cols() == 2 * kFeatureGrid * kFeatureGrid);
  CHECK(a.tuning().rows() == 10);
  CHECK(a.tuning().cols() == kFeatureDim);
  CHECK((a.baseline().array() > 0).all());
  CHECK(a.projection() == b.projection());
  CHECK(a.tuning() == b.tuning());
  CHECK(a.projection() != c.projection());
}

TEST_CASE("clean rates follow the stated map") {
  const auto stimuli = gen_stimuli(6, 3, 5);
  const ForwardModel model(7, 3, 12);
  const Eigen::MatrixXd rates = model.clean_rates(stimuli);
  REQUIRE(rates.rows() == 6);
  REQUIRE(rates.cols() == 12);
  for (Index s = 0; s < 6; ++s) {
    const auto expected = reference_rates(model, stimuli.image(s));
    CHECK((rates.row(s).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((model.clean_rates(stimuli.image(s)) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK((rates.array() > 0).all());
}

TEST_CASE("gen_stimuli") {
  const auto a = gen_stimuli(5, 1, 11);
  CHECK(a.count == 5);
  CHECK(a.size == 64);
  CHECK(a.pixels.size() == 5 * 4096);
  for (float p : a.pixels) {
    REQUIRE(p >= 0.0f);
    REQUIRE(p <= 1.0f);
  }
  SUBCASE("image s depends only on (seed, s)") {
    const auto prefix = gen_stimuli(3, 1, 11);
    CHECK(std::equal(prefix.pixels.begin(), prefix.pixels.end(), a.pixels.begin()));
    CHECK(gen_stimuli(5, 1, 12).pixels != a.pixels);
  }
  SUBCASE("images are distinct and not flat") {
    for (Index s = 0; s < 5; ++s) {
      const auto img = a.image(s);
      const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
      CHECK(*hi - *lo > 0.2f);
      for (Index t = 0; t < s; ++t) CHECK(!std::equal(img.begin(), img.end(), a.image(t).begin()));
    }
  }
}

TEST_CASE("gen_responses noise kinds") {
  const auto stimuli = gen_stimuli(8, 1, 2);
  SUBCASE("sigma = 0 gives the clean rates on every trial") {
    const ForwardModel model(1, 1, 6, 0.0);
    const auto r = gen_responses(stimuli, model, 3);
    const Eigen::MatrixXd clean = model.clean_rates(stimuli);
    for (Index s = 0; s < 8; ++s) {
      for (Index t = 0; t < 3; ++t) {
        for (Index i = 0; i < 6; ++i) {
          CHECK(r.response(s, t)[static_cast<std::size_t>(i)] == static_cast<float>(clean(s, i)));
        }
      }
    }
  }
  SUBCASE("gaussian noise scales with the mean rate") {
    const auto big = gen_stimuli(40, 1, 2);
    const ForwardModel model(1, 1, 4, 0.3);
    const auto r = gen_responses(big, model, 50);
    const Eigen::MatrixXd clean = model.clean_rates(big);
    const Eigen::VectorXd rbar = clean.colwise().mean();
    for (Index i = 0; i < 4; ++i) {
      double sq = 0;
      for (Index s = 0; s < 40; ++s) {
        for (Index t = 0; t < 50; ++t) {
          const double d = r.response(s, t)[static_cast<std::size_t>(i)] - clean(s, i);
          sq += d * d;
        }
      }
      // Clipping at zero only shrinks deviations; rates sit well above 0.
      CHECK(std::sqrt(sq / 2000) == doctest::Approx(0.3 * rbar[i]).epsilon(0.08));
    }
  }
  SUBCASE("independent noise ignores the stimulus") {
    const ForwardModel model(1, 1, 5, 0.0, NoiseKind::independent);
    const auto r = gen_responses(stimuli, model, 2);
    // Trial noise is keyed by (s, t); swapping the images of two stimuli
    // changes nothing except through the population mean, which is shared.
    auto swapped = stimuli;
    std::swap_ranges(swapped.image(0).begin(), swapped.image(0).end(), swapped.image(1).begin());
    CHECK(gen_responses(swapped, model, 2) == r);
  }
  SUBCASE("trial (s, t) depends only on the seed and (s, t)") {
    const ForwardModel model(1, 1, 5, 0.5, NoiseKind::independent);
    const auto three = gen_responses(stimuli, model, 3);
    const auto two = gen_responses(stimuli, model, 2);
    for (Index s = 0; s < 8; ++s) {
      for (Index t = 0; t < 2; ++t) {
        const auto a = two.response(s, t), b = three.response(s, t);
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
      }
    }
  }
  CHECK_THROWS_AS(gen_responses(stimuli, ForwardModel(1, 3, 5), 1), ShapeError);
  CHECK_THROWS_AS(gen_responses(stimuli, ForwardModel(1, 1, 5), 0), ArgumentError);
}

TEST_CASE("neuron subsets") {
  const auto keep = choose_neurons(256, 48, 9);
  CHECK(keep.size() == 48);
  CHECK(std::is_sorted(keep.begin(), keep.end()));
  CHECK(std::adjacent_find(keep.begin(), keep.end()) == keep.end());
  CHECK(keep.front() >= 0);
  CHECK(keep.back() < 256);
  CHECK(choose_neurons(256, 48, 9) == keep);
  CHECK(choose_neurons(256, 48, 10) != keep);
  CHECK(choose_neurons(5, 5, 1) == std::vector<Index>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(choose_neurons(5, 6, 1), ArgumentError);
  CHECK_THROWS_AS(choose_neurons(5, 0, 1), ArgumentError);

  const auto stimuli = gen_stimuli(3, 1, 2);
  const auto full = gen_responses(stimuli, ForwardModel(1, 1, 20, 0.5), 2);
  const auto sub = subsample_neurons(full, 7, 4);
  const auto ids = choose_neurons(20, 7, 4);
  CHECK(sub.neurons == 7);
  for (Index s = 0; s < 3; ++s) {
    for (Index t = 0; t < 2; ++t) {
      for (std::size_t j = 0; j < ids.size(); ++j) {
        CHECK(sub.response(s, t)[j] == full.response(s, t)[static_cast<std::size_t>(ids[j])]);
      }
    }
  }
}

TEST_CASE("forward model JSON") {
  const ForwardModel model(21, 1, 9, 0.25, NoiseKind::independent);
  const auto json = model.to_json({1, 4, 8});
  const auto parsed = nlohmann::json::parse(json);
  CHECK(parsed.at("seed") == 21);
  CHECK(parsed.at("noise") == "independent");
  const auto record = forward_model_from_json(json);
  CHECK(record.neuron_subset == std::vector<Index>{1, 4, 8});
  CHECK(record.model.noise_level() == 0.25);
  CHECK(record.model.tuning() == model.tuning());
  CHECK_THROWS_AS(forward_model_from_json("{}"), DataError);
  CHECK_THROWS_AS(forward_model_from_json("not json"), DataError);
}

TEST_CASE("generate_dataset") {
  SyntheticDatasetSpec spec;
  spec.stimuli = 20;
  spec.neurons = 8;
  spec.trials = 2;
  spec.noise_level = 0.5;
  const auto a = generate_dataset(spec);
  const auto b = generate_dataset(spec);
  CHECK(a == b);
  validate(a);
  CHECK(a.splits.test.size() == 4);
  CHECK(a.splits.train.size() == 16);
  REQUIRE(a.forward_model_json.has_value());
  const auto record = forward_model_from_json(*a.forward_model_json);
  CHECK(gen_responses(a.stimuli, record.model, 2) == a.responses);
  spec.seed = 1;
  CHECK(generate_dataset(spec).responses != a.responses);
  spec.stimuli = 1;
  CHECK_THROWS_AS(generate_dataset(spec), ArgumentError);
}

}  // TEST_SUITE
