#include <doctest.h>

#include "crossalign/baselines.hpp"
#include "support.hpp"

using namespace crossalign;
using crossalign::testing::gradient_error;
using crossalign::testing::kTowerFloor;
using crossalign::testing::kTowerStep;
using crossalign::testing::normal_tensor;
using crossalign::testing::random_tensor;

namespace {

template <typename Params>
std::vector<Tensor<double>*> parameters_of(Params& params) {
  std::vector<Tensor<double>*> out;
  params.for_each_tensor([&](const std::string&, Tensor<double>& t, TensorRole role) {
    if (role == TensorRole::parameter) out.push_back(&t);
  });
  return out;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("direct encoder shapes") {
  auto params = make_direct_encoder<double>(1, 37, 3);
  CHECK(params.neurons() == 37);
  CHECK(params.net.proj_weight.shape() == Shape{37, 1024});
  Graph<double> g(false);
  const auto y = direct_encode_predict(params, g.constant(Tensor<double>(Shape{3, 1, 64, 64})),
                                       Mode::eval);
  CHECK(y.shape() == Shape{3, 37});
}

TEST_CASE("direct decoder shapes") {
  for (Index c : {1, 3}) {
    auto params = make_direct_decoder<double>({20, c}, 4);
    CHECK(params.trunk.proj_weight.shape() == Shape{1024, 512});
    Graph<double> g(false);
    std::vector<Shape> shapes;
    const auto y = direct_decode_predict(params, g.constant(Tensor<double>(Shape{2, 20})),
                                         Mode::eval, {}, &shapes);
    CHECK(y.shape() == Shape{2, c, 64, 64});
    REQUIRE(shapes.size() == 5);
    const std::array<Index, 5> channels{128, 64, 32, 16, c};
    for (std::size_t i = 0; i < 5; ++i) {
      const Index side = 4 << i;
      CHECK(shapes[i] == Shape{2, channels[i], side, side});
    }
    CHECK((y.value().data() > 0.0).all());
    CHECK((y.value().data() < 1.0).all());
  }
  auto params = make_direct_decoder<double>({20, 1}, 4);
  Graph<double> g(false);
  CHECK_THROWS_AS(direct_decode_predict(params, g.constant(Tensor<double>(Shape{2, 21})),
                                        Mode::eval),
                  ShapeError);
}

TEST_CASE("mse_loss") {
  Graph<double> g(false);
  const auto p = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  const auto t = Tensor<double>::from({2, 2}, {0, 2, 5, 4});
  CHECK(mse_loss(g.constant(p), g.constant(t)).value().item() == 1.25);
  CHECK(mse_loss(g.constant(p), g.constant(p)).value().item() == 0.0);
  CHECK_THROWS_AS(mse_loss(g.constant(p), g.constant(Tensor<double>(Shape{4}))), ShapeError);
}

TEST_CASE("negated_distances") {
  Eigen::Vector2d q(0, 0);
  Eigen::MatrixXd cands(3, 2);
  cands << 3, 4, 0, 0, -1, 0;
  const auto s = negated_distances(q, cands);
  CHECK(s[0] == -5.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == -1.0);
  const Eigen::RowVector2d row_query(0, 0);
  CHECK(negated_distances(row_query, cands) == s);
  CHECK_THROWS_AS(negated_distances(q, Eigen::MatrixXd(0, 2)), ArgumentError);
}

TEST_CASE("baseline_scores follow the prediction distances") {
  Rng rng(5);
  const auto images = random_tensor({4, 1, 64, 64}, rng, 0, 1);
  const auto responses = normal_tensor({4, 9}, rng);
  Tensor<double> one_image(Shape{1, 64, 64});
  one_image.data() = images.data().head(4096);
  Tensor<double> one_response(Shape{9});
  one_response.data() = responses.data().head(9);

  SUBCASE("direct encoder") {
    const auto params = make_direct_encoder<double>(1, 9, 6);
    const auto predicted = predict_responses(params, images);
    const auto pm = predicted.matrix(4, 9);
    const auto rm = responses.matrix(4, 9);
    const auto enc = baseline_scores(params, TaskMode::encoding, one_image, responses);
    const auto dec = baseline_scores(params, TaskMode::decoding, one_response, images);
    for (Index j = 0; j < 4; ++j) {
      CHECK(enc[j] == doctest::Approx(-(pm.row(0) - rm.row(j)).norm()).epsilon(1e-12));
      CHECK(dec[j] == doctest::Approx(-(pm.row(j) - rm.row(0)).norm()).epsilon(1e-12));
    }
    CHECK_THROWS_AS(baseline_scores(params, TaskMode::encoding, one_image, images), ShapeError);
  }
  SUBCASE("direct decoder") {
    const auto params = make_direct_decoder<double>({9, 1}, 7);
    const auto predicted = predict_images(params, responses);
    const auto pm = predicted.matrix(4, 4096);
    const auto im = images.matrix(4, 4096);
    const auto enc = baseline_scores(params, TaskMode::encoding, one_image, responses);
    const auto dec = baseline_scores(params, TaskMode::decoding, one_response, images);
    for (Index j = 0; j < 4; ++j) {
      CHECK(enc[j] == doctest::Approx(-(pm.row(j) - im.row(0)).norm()).epsilon(1e-12));
      CHECK(dec[j] == doctest::Approx(-(pm.row(0) - im.row(j)).norm()).epsilon(1e-12));
    }
  }
}

TEST_CASE("probe-scale baseline gradients match finite differences") {
  Rng rng(8);
  SUBCASE("direct encoder, 8x8 input, 3 blocks") {
    auto params = make_direct_encoder<double>(1, 5, 31, 3, 8);
    auto images = random_tensor({3, 1, 8, 8}, rng, 0, 1);
    auto inputs = parameters_of(params);
    inputs.insert(inputs.begin(), &images);
    const auto build = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return direct_encode_predict(params, v[0], Mode::train);
    };
    CHECK(gradient_error(build, inputs, 32, kTowerStep, kTowerFloor) < 1e-4);
  }
  SUBCASE("direct decoder to 8x8, 3 blocks") {
    auto params = make_direct_decoder<double>({5, 1, 8, 3}, 33);
    auto spikes = normal_tensor({3, 5}, rng);
    auto inputs = parameters_of(params);
    inputs.insert(inputs.begin(), &spikes);
    const auto build = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return direct_decode_predict(params, v[0], Mode::train);
    };
    CHECK(gradient_error(build, inputs, 34, kTowerStep, kTowerFloor) < 1e-4);
  }
  SUBCASE("mse_loss") {
    auto p = normal_tensor({3, 4}, rng);
    auto t = normal_tensor({3, 4}, rng);
    const auto build = [](Graph<double>&, const std::vector<Var<double>>& v) {
      return mse_loss(v[0], v[1]);
    };
    CHECK(gradient_error(build, {&p, &t}, 35) < 1e-4);
  }
}

}  // TEST_SUITE
