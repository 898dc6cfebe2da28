#include <doctest.h>

#include "crossalign/encoders.hpp"
#include "support.hpp"

using namespace crossalign;
using crossalign::testing::gradient_error;
using crossalign::testing::kTowerFloor;
using crossalign::testing::kTowerStep;
using crossalign::testing::random_tensor;

TEST_SUITE("encoders") {

TEST_CASE("resize_image") {
  Rng rng(1);
  SUBCASE("64x64 input is returned bit-for-bit") {
    const auto img = random_tensor({3, 64, 64}, rng, 0, 1);
    CHECK(resize_image(img) == img);
  }
  SUBCASE("constant images stay constant") {
    for (Index h : {1, 7, 64, 100}) {
      const auto img = Tensor<double>::filled({2, h, h + 3}, 0.7);
      const auto out = resize_image(img);
      CHECK(out.shape() == Shape{2, 64, 64});
      CHECK(((out.data() - 0.7).abs() < 1e-15).all());
    }
  }
  SUBCASE("2x2 ramp upsampled to 4x4") {
    const auto img = Tensor<double>::from({1, 2, 2}, {0, 1, 0, 1});
    const auto out = resize_image(img, 4);
    const auto m = out.matrix(4, 4);
    for (Index r = 1; r < 4; ++r) CHECK(m.row(r) == m.row(0));
    for (Index c = 1; c < 4; ++c) CHECK(m(0, c) >= m(0, c - 1));
    // Corner-aligned sampling: abscissae 0, 1/3, 2/3, 1.
    CHECK(m(0, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(m(0, 3) == 1.0);
  }
  SUBCASE("output stays in [0,1]") {
    const auto out = resize_image(random_tensor({1, 13, 9}, rng, 0, 1));
    CHECK((out.data() >= 0.0).all());
    CHECK((out.data() <= 1.0).all());
  }
  SUBCASE("zero-sized or non-image input is rejected") {
    CHECK_THROWS_AS(resize_image(Tensor<double>(Shape{4, 4})), ShapeError);
    CHECK_THROWS_AS(resize_image(Tensor<double>(Shape{1, 0, 4})), ShapeError);
  }
}

TEST_CASE("visual encoder shapes") {
  for (Index c : {1, 3}) {
    auto params = make_visual_encoder<double>({c, 64, 5, 64}, 7);
    CHECK(params.blocks[0].weight.shape() == Shape{16, c, 4, 4});
    CHECK(params.proj_weight.shape() == Shape{64, 1024});
    for (Index b : {1, 2, 8}) {
      Graph<double> g(false);
      std::vector<Shape> shapes;
      const auto y = visual_encode(params, g.constant(Tensor<double>(Shape{b, c, 64, 64})),
                                   Mode::eval, {}, &shapes);
      CHECK(y.shape() == Shape{b, 64});
      REQUIRE(shapes.size() == 5);
      for (std::size_t i = 0; i < 5; ++i) {
        const Index side = 64 >> (i + 1);
        CHECK(shapes[i] == Shape{b, kVisualChannels[i], side, side});
      }
    }
  }
  // The largest batch is checked in train mode only once; it is slow-ish.
  auto params = make_visual_encoder<double>({1, 64, 5, 64}, 7);
  Graph<double> g(false);
  const auto y = visual_encode(params, g.constant(Tensor<double>(Shape{256, 1, 64, 64})),
                               Mode::train);
  CHECK(y.shape() == Shape{256, 64});
}

TEST_CASE("visual encoder rejects wrong inputs") {
  auto params = make_visual_encoder<double>({3, 64, 5, 16}, 1);
  Graph<double> g(false);
  CHECK_THROWS_AS(visual_encode(params, g.constant(Tensor<double>(Shape{2, 1, 64, 64})), Mode::eval),
                  ShapeError);
  CHECK_THROWS_AS(visual_encode(params, g.constant(Tensor<double>(Shape{2, 3, 32, 32})), Mode::eval),
                  ShapeError);
}

TEST_CASE("spike encoder") {
  for (Index n : {800, 148}) {
    auto params = make_spike_encoder<double>(n, 64, 3);
    CHECK(params.hidden_weight.shape() == Shape{512, n});
    Graph<double> g(false);
    const auto y = spike_encode(params, g.constant(Tensor<double>(Shape{16, n})), Mode::eval);
    CHECK(y.shape() == Shape{16, 64});
  }
  SUBCASE("zero input in eval mode yields the projection bias") {
    auto params = make_spike_encoder<double>(10, 6, 4);
    Rng rng(2);
    params.proj_bias = random_tensor({6}, rng);
    Graph<double> g(false);
    const auto y = spike_encode(params, g.constant(Tensor<double>(Shape{1, 10})), Mode::eval);
    CHECK(y.value().data().matrix() == params.proj_bias.data().matrix());
  }
  SUBCASE("neuron count mismatch is rejected") {
    auto params = make_spike_encoder<double>(10, 6, 4);
    Graph<double> g(false);
    CHECK_THROWS_AS(spike_encode(params, g.constant(Tensor<double>(Shape{2, 11})), Mode::eval),
                    ShapeError);
  }
}

TEST_CASE("init_params") {
  auto a = init_params<double>(0, 1, 800, 64);
  auto b = init_params<double>(0, 1, 800, 64);
  auto c = init_params<double>(1, 1, 800, 64);
  CHECK(a.visual.blocks[0].weight.shape() == Shape{16, 1, 4, 4});
  bool all_equal = true, any_diff = false;
  std::vector<Tensor<double>*> ta, tb, tc;
  a.for_each_tensor([&](const std::string&, Tensor<double>& t, TensorRole) { ta.push_back(&t); });
  b.for_each_tensor([&](const std::string&, Tensor<double>& t, TensorRole) { tb.push_back(&t); });
  c.for_each_tensor([&](const std::string&, Tensor<double>& t, TensorRole) { tc.push_back(&t); });
  for (std::size_t i = 0; i < ta.size(); ++i) {
    all_equal = all_equal && *ta[i] == *tb[i];
    any_diff = any_diff || !(*ta[i] == *tc[i]);
  }
  CHECK(all_equal);
  CHECK(any_diff);

  SUBCASE("weights within the fan-in bound, biases zero, norms at identity") {
    a.for_each_tensor([](const std::string& name, Tensor<double>& t, TensorRole role) {
      INFO(name);
      if (name.ends_with("conv.weight") || name.ends_with("proj.weight") ||
          name.ends_with("hidden.weight")) {
        const Index fan_in = t.size() / t.dim(0);
        CHECK(t.data().abs().maxCoeff() <= std::sqrt(1.0 / static_cast<double>(fan_in)));
        CHECK(t.data().abs().maxCoeff() > 0.5 * std::sqrt(1.0 / static_cast<double>(fan_in)));
      } else if (name.ends_with("bias") || name.ends_with("beta") ||
                 name.ends_with("running_mean")) {
        CHECK((t.data() == 0.0).all());
      } else {
        CHECK((t.data() == 1.0).all());
      }
      CHECK((role == TensorRole::buffer) == (name.find("running") != std::string::npos));
    });
  }
}

TEST_CASE("eval-mode embeddings are batch independent") {
  auto params = init_params<double>(5, 1, 20, 8);
  Rng rng(3);
  // Give the running stats non-trivial values first.
  {
    Graph<double> g(false);
    visual_encode(params.visual, g.constant(random_tensor({4, 1, 64, 64}, rng, 0, 1)), Mode::train);
    spike_encode(params.spike, g.constant(random_tensor({4, 20}, rng)), Mode::train);
  }
  const auto images = random_tensor({5, 1, 64, 64}, rng, 0, 1);
  const auto spikes = random_tensor({5, 20}, rng);
  const auto all_img = embed_images(params.visual, images);
  const auto all_spk = embed_spikes(params.spike, spikes);
  for (Index i = 0; i < 5; ++i) {
    Tensor<double> one_img(Shape{1, 1, 64, 64});
    one_img.data() = images.data().segment(i * 4096, 4096);
    Tensor<double> one_spk(Shape{1, 20});
    one_spk.data() = spikes.data().segment(i * 20, 20);
    const auto e = embed_images(params.visual, one_img);
    const auto s = embed_spikes(params.spike, one_spk);
    CHECK((e.data() - all_img.data().segment(i * 8, 8)).abs().maxCoeff() < 1e-10);
    CHECK((s.data() - all_spk.data().segment(i * 8, 8)).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("probe-scale tower gradients match finite differences") {
  Rng rng(4);
  SUBCASE("visual tower, 8x8 input, 3 blocks, train mode") {
    auto params = make_visual_encoder<double>({1, 8, 3, 4}, 11);
    auto images = random_tensor({3, 1, 8, 8}, rng, 0, 1);
    std::vector<Tensor<double>*> inputs{&images};
    params.for_each_tensor("", [&](const std::string&, Tensor<double>& t, TensorRole role) {
      if (role == TensorRole::parameter) inputs.push_back(&t);
    });
    const auto build = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return visual_encode(params, v[0], Mode::train);
    };
    CHECK(gradient_error(build, inputs, 21, kTowerStep, kTowerFloor) < 1e-4);
  }
  SUBCASE("spike tower, train mode") {
    auto params = make_spike_encoder<double>(6, 4, 12);
    auto spikes = random_tensor({3, 6}, rng);
    std::vector<Tensor<double>*> inputs{&spikes};
    params.for_each_tensor("", [&](const std::string&, Tensor<double>& t, TensorRole role) {
      if (role == TensorRole::parameter) inputs.push_back(&t);
    });
    const auto build = [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return spike_encode(params, v[0], Mode::train);
    };
    CHECK(gradient_error(build, inputs, 22, kTowerStep, kTowerFloor) < 1e-4);
  }
}

}  // TEST_SUITE
