#include <cmath>
#include <cstdlib>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "mvtta/errors.hpp"
#include "mvtta/jsonio.hpp"
#include "mvtta/model.hpp"
#include "mvtta/tsd.hpp"

using mvtta::Architecture;
using mvtta::Model;
using mvtta::Params;
using mvtta::Rng;
using mvtta::StreamKind;
using mvtta::Vec;

namespace {

Architecture small_arch() {
  Architecture arch;
  arch.input_dim = 5;
  arch.hidden_dims = {6};
  arch.embed_dim = 4;
  arch.classes = 3;
  return arch;
}

}  // namespace

TEST_CASE("forward pass matches a naive re-implementation") {
  Rng rng = Rng::stream(11, StreamKind::Test);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch;
    arch.input_dim = 1 + static_cast<int>(rng.next_below(8));
    arch.hidden_dims = {1 + static_cast<int>(rng.next_below(8))};
    arch.embed_dim = 1 + static_cast<int>(rng.next_below(8));
    arch.classes = 2 + static_cast<int>(rng.next_below(6));
    const Model model = Model::random_init(arch, rng.next_u64());
    const Vec x =
        testutil::random_vec(static_cast<std::size_t>(arch.input_dim), rng);
    const Vec expected = testutil::naive_logits(arch, model.params(), x);
    const Vec got = model.logits(x);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("embedding and head compose to the full forward pass") {
  const Model model = Model::random_init(small_arch(), 99);
  Rng rng = Rng::stream(12, StreamKind::Test);
  const Vec x = testutil::random_vec(5, rng);
  const Vec direct = model.logits(x);
  const Vec via_embed = model.logits_from_embedding(model.embed(x));
  CHECK(direct == via_embed);
}

TEST_CASE("predict_proba is a normalized softmax") {
  const Model model = Model::random_init(small_arch(), 100);
  Rng rng = Rng::stream(13, StreamKind::Test);
  for (int i = 0; i < 10; ++i) {
    const Vec p = model.predict_proba(testutil::random_vec(5, rng, 3.0));
    double sum = 0.0;
    for (double v : p) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("stable_softmax survives large logits and fixed oracle") {
  const Vec p = mvtta::stable_softmax({1.0, 2.0, 3.0});
  CHECK(p[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(0.66524095577482184).epsilon(1e-12));

  const Vec big = mvtta::stable_softmax({1000.0, 1001.0, 999.0});
  CHECK(mvtta::all_finite(big));
  CHECK(big[1] > big[0]);
  CHECK(big[0] > big[2]);
}

TEST_CASE("model construction validates shapes") {
  const Architecture arch = small_arch();
  Params params = Model::random_init(arch, 1).params();

  Params wrong_count = params;
  wrong_count.layers.pop_back();
  CHECK_THROWS_AS(Model(arch, wrong_count), mvtta::ConfigError);

  Params wrong_shape = params;
  wrong_shape.layers[0].weight.cols += 1;
  CHECK_THROWS_AS(Model(arch, wrong_shape), mvtta::ConfigError);

  Params non_finite = params;
  non_finite.layers[1].bias[0] = std::nan("");
  CHECK_THROWS_AS(Model(arch, non_finite), mvtta::NumericError);

  CHECK_THROWS_AS(Model::random_init({5, {0}, 4, 3}, 1), mvtta::ConfigError);
  CHECK_THROWS_AS(Model::random_init({5, {6}, 4, 1}, 1), mvtta::ConfigError);
}

TEST_CASE("random_init is seed-deterministic with zero biases") {
  const Architecture arch = small_arch();
  const Model a = Model::random_init(arch, 7);
  const Model b = Model::random_init(arch, 7);
  const Model c = Model::random_init(arch, 8);
  CHECK(a.params().layers[0].weight.data == b.params().layers[0].weight.data);
  CHECK(a.params().layers[0].weight.data != c.params().layers[0].weight.data);
  for (const mvtta::LayerParams& layer : a.params().layers) {
    for (double bias : layer.bias) {
      CHECK(bias == 0.0);
    }
  }
}

TEST_CASE("forward rejects wrong dimension and non-finite input") {
  const Model model = Model::random_init(small_arch(), 4);
  CHECK_THROWS_AS((void)model.forward({1.0, 2.0}), mvtta::InputError);
  Vec bad(5, 1.0);
  bad[2] = std::nan("");
  CHECK_THROWS_AS((void)model.forward(bad), mvtta::NumericError);
}

TEST_CASE("backprop gradients match finite differences on a fixed scenario") {
  const Architecture arch = small_arch();
  Rng rng = Rng::stream(14, StreamKind::Test);
  for (int trial = 0; trial < 5; ++trial) {
    const Model model = Model::random_init(arch, 50 + trial);
    std::vector<Vec> inputs;
    for (int i = 0; i < 3; ++i) {
      inputs.push_back(testutil::random_vec(5, rng));
    }
    if (testutil::min_relu_margin(model, inputs) < 1e-3) {
      continue;  // avoid finite-difference probes that cross a ReLU kink
    }
    std::vector<mvtta::tsd::SmoothedLabel> targets;
    for (int i = 0; i < 3; ++i) {
      targets.push_back(mvtta::tsd::smooth_label(
          static_cast<int>(rng.next_below(3)), 3, 0.1));
    }
    const mvtta::tsd::LossTerms terms;
    const Params analytic =
        mvtta::tsd::backward(model, inputs, targets, terms);
    const Params fd = testutil::fd_gradient(
        arch, model.params(), [&](const Model& m) {
          return mvtta::tsd::batch_loss(m, inputs, targets, terms).total;
        });
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("sgd_step follows the heavy-ball recurrence") {
  Architecture arch;
  arch.input_dim = 1;
  arch.hidden_dims = {};
  arch.embed_dim = 1;
  arch.classes = 2;
  Params params;
  params.layers.resize(2);
  params.layers[0].weight = mvtta::Matrix(1, 1);
  params.layers[0].weight.data = {1.0};
  params.layers[0].bias = {0.5};
  params.layers[1].weight = mvtta::Matrix(2, 1);
  params.layers[1].weight.data = {2.0, -1.0};
  params.layers[1].bias = {0.0, 0.0};
  Model model(arch, params);

  Params grad = Params::zeros_like(params);
  grad.layers[0].weight.data = {0.2};
  grad.layers[0].bias = {-0.4};
  grad.layers[1].weight.data = {1.0, 0.0};
  grad.layers[1].bias = {0.0, 0.25};

  mvtta::SgdState state;
  sgd_step(model, grad, 0.1, state, 0.9);
  // First step: v = g, theta -= lr * g.
  CHECK(model.params().layers[0].weight.data[0] == doctest::Approx(1.0 - 0.02));
  CHECK(model.params().layers[0].bias[0] == doctest::Approx(0.5 + 0.04));

  sgd_step(model, grad, 0.1, state, 0.9);
  // Second step: v = 0.9 g + g = 1.9 g, theta -= lr * 1.9 g.
  CHECK(model.params().layers[0].weight.data[0] ==
        doctest::Approx(0.98 - 0.1 * 1.9 * 0.2));
  CHECK(model.params().layers[1].bias[1] ==
        doctest::Approx(-0.1 * 0.25 - 0.1 * 1.9 * 0.25));
}

TEST_CASE("sgd_step validates inputs") {
  Model model = Model::random_init(small_arch(), 3);
  Params grad = Params::zeros_like(model.params());
  mvtta::SgdState state;
  CHECK_THROWS_AS(sgd_step(model, grad, -1.0, state, 0.9), mvtta::ConfigError);
  CHECK_THROWS_AS(sgd_step(model, grad, 0.1, state, 1.0), mvtta::ConfigError);
  grad.layers[0].weight.data[0] = std::nan("");
  CHECK_THROWS_AS(sgd_step(model, grad, 0.1, state, 0.9), mvtta::NumericError);

  CHECK_NOTHROW(sgd_step(model, Params::zeros_like(model.params()), 0.0, state, 0.0));
}

TEST_CASE("ema_update matches the convex combination within one ulp") {
  const Architecture arch = small_arch();
  const Model source = Model::random_init(arch, 21);
  Model target_init = Model::random_init(arch, 22);
  mvtta::MomentumModel momentum(target_init);

  const double m = 0.999;
  const Params before = momentum.model().params();
  momentum.ema_update(source, m);
  for (std::size_t li = 0; li < before.layers.size(); ++li) {
    for (std::size_t i = 0; i < before.layers[li].weight.data.size(); ++i) {
      const double expected = m * before.layers[li].weight.data[i] +
                              (1.0 - m) * source.params().layers[li].weight.data[i];
      const double got = momentum.model().params().layers[li].weight.data[i];
      CHECK(std::abs(got - expected) <=
            std::abs(expected) * 2.3e-16 + 1e-300);
    }
  }
}

TEST_CASE("ema_update with m = 0 copies the source exactly") {
  const Architecture arch = small_arch();
  const Model source = Model::random_init(arch, 31);
  mvtta::MomentumModel momentum(Model::random_init(arch, 32));
  momentum.ema_update(source, 0.0);
  CHECK(momentum.model().params().layers[0].weight.data ==
        source.params().layers[0].weight.data);
  CHECK(momentum.model().params().layers[2].bias ==
        source.params().layers[2].bias);
}

TEST_CASE("ema_update fixed point is bitwise exact") {
  const Architecture arch = small_arch();
  const Model source = Model::random_init(arch, 41);
  mvtta::MomentumModel momentum(source);
  for (int i = 0; i < 5; ++i) {
    momentum.ema_update(source, 0.999);
  }
  for (std::size_t li = 0; li < source.params().layers.size(); ++li) {
    CHECK(momentum.model().params().layers[li].weight.data ==
          source.params().layers[li].weight.data);
    CHECK(momentum.model().params().layers[li].bias ==
          source.params().layers[li].bias);
  }
}

TEST_CASE("checkpoint round-trip preserves every bit") {
  const testutil::TempDir tmp("ckpt");
  const Model model = Model::random_init(small_arch(), 77);
  const std::string path = tmp.file("model.json");
  save_checkpoint(model, path);
  const Model loaded = mvtta::load_checkpoint(path);
  CHECK(loaded.arch() == model.arch());
  for (std::size_t li = 0; li < model.params().layers.size(); ++li) {
    CHECK(loaded.params().layers[li].weight.data ==
          model.params().layers[li].weight.data);
    CHECK(loaded.params().layers[li].bias == model.params().layers[li].bias);
  }
}

TEST_CASE("checkpoint loading rejects malformed files") {
  const testutil::TempDir tmp("ckpt_bad");

  mvtta::write_text_file(tmp.file("not_json.json"), "{nope");
  CHECK_THROWS_AS((void)mvtta::load_checkpoint(tmp.file("not_json.json")),
                  mvtta::DataError);

  mvtta::write_text_file(tmp.file("wrong_tag.json"),
                         R"({"format": "other", "arch": {}, "layers": []})");
  CHECK_THROWS_AS((void)mvtta::load_checkpoint(tmp.file("wrong_tag.json")),
                  mvtta::DataError);

  const Model model = Model::random_init(small_arch(), 78);
  save_checkpoint(model, tmp.file("model.json"));
  std::string text = mvtta::read_text_file(tmp.file("model.json"));
  // Corrupt the declared shape of the first layer.
  const std::size_t pos = text.find("\"rows\": 6");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 9, "\"rows\": 7");
  mvtta::write_text_file(tmp.file("bad_shape.json"), text);
  CHECK_THROWS_AS((void)mvtta::load_checkpoint(tmp.file("bad_shape.json")),
                  mvtta::DataError);

  CHECK_THROWS_AS((void)mvtta::load_checkpoint(tmp.file("missing.json")),
                  mvtta::InputError);
}

TEST_CASE("format_double round-trips exactly") {
  Rng rng = Rng::stream(15, StreamKind::Test);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.next_gaussian() * std::pow(10.0, rng.next_below(20));
    const std::string text = mvtta::format_double(x);
    CHECK(std::strtod(text.c_str(), nullptr) == x);
  }
  CHECK(mvtta::format_double(0.1) == "0.1");
  CHECK(mvtta::format_double(1.0) == "1");
  CHECK_THROWS_AS((void)mvtta::format_double(std::nan("")),
                  mvtta::NumericError);
  CHECK_THROWS_AS((void)mvtta::format_double(HUGE_VAL), mvtta::NumericError);
}
