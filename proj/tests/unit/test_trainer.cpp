#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "aetsep/error.hpp"
#include "aetsep/trainer.hpp"
#include "test_util.hpp"

using namespace aetsep;
using aetsep::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// A run small enough for unit tests: tiny model, half-second snippets.
train::TrainConfig tiny_config(const std::string& out_dir) {
  train::TrainConfig c;
  c.arch.window_len = 32;
  c.arch.stride = 8;
  c.arch.hidden = {8, 8};
  c.minutes = 0.05;
  c.batch_size = 2;
  c.max_steps = 4;
  c.snippet_s = 0.5;
  c.toy_speakers = 2;
  c.toy_minutes = 0.6;
  c.test_minutes = 0.05;
  c.eval_threads = 1;
  c.toy_dir = (fs::temp_directory_path() / "aetsep_test_shared_toy").string();
  c.out_dir = out_dir;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config text round trip and overrides") {
  train::TrainConfig c;
  train::set_config_value(c, "variant", "aet_mask");
  train::set_config_value(c, "hidden", "64,32");
  train::set_config_value(c, "loss", "0.75*sdr+0.25*stoi");
  train::set_config_value(c, "learning_rate", "0.003");
  train::set_config_value(c, "fourier_init", "true");
  CHECK(c.arch.variant == model::Variant::kAetMask);
  CHECK(c.arch.hidden == std::vector<std::size_t>{64, 32});
  CHECK(c.learning_rate == 0.003);
  CHECK(c.arch.fourier_init);
  const std::string text = train::config_to_text(c);
  const auto back = train::config_from_text("# comment\n" + text + "\n  \n");
  CHECK(train::config_to_text(back) == text);
  CHECK(train::config_keys().size() >= 27);

  CHECK_THROWS_AS(train::set_config_value(c, "nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(train::set_config_value(c, "batch_size", "eight"), ConfigError);
  CHECK_THROWS_AS(train::config_from_text("stride 16\n"), ConfigError);
}

TEST_CASE("config validation") {
  train::TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = train::TrainConfig{};
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = train::TrainConfig{};
  c.loss = "0.5*sdr+";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = train::TrainConfig{};
  c.optimizer = "rmsprop";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("adam matches the closed form of its first steps") {
  auto p = std::make_shared<ad::Parameter>("p", Tensor::vector({1.0, -2.0}), true);
  auto frozen = std::make_shared<ad::Parameter>("f", Tensor::vector({5.0}), false);
  const std::vector<ad::ParameterPtr> params{p, frozen};
  train::Adam opt(0.1);
  const double g[2] = {0.5, -3.0};
  double m[2] = {0, 0}, v[2] = {0, 0}, want[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    p->zero_grad();
    p->mutable_grad()[0] = g[0] * t;
    p->mutable_grad()[1] = g[1];
    opt.step(params);
    for (int i = 0; i < 2; ++i) {
      const double gi = i == 0 ? g[0] * t : g[1];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      want[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(p->value()[0] == doctest::Approx(want[0]).epsilon(1e-14));
  CHECK(p->value()[1] == doctest::Approx(want[1]).epsilon(1e-14));
  CHECK(frozen->value()[0] == 5.0);

  auto q = std::make_shared<ad::Parameter>("q", Tensor::vector({1.0}), true);
  q->mutable_grad()[0] = 2.0;
  train::Sgd(0.25).step({q});
  CHECK(q->value()[0] == 0.5);
}

TEST_CASE("gradient clipping") {
  auto a = std::make_shared<ad::Parameter>("a", Tensor::vector({0.0}), true);
  auto b = std::make_shared<ad::Parameter>("b", Tensor::vector({0.0}), true);
  a->mutable_grad()[0] = 3.0;
  b->mutable_grad()[0] = 4.0;
  CHECK(train::clip_grad_norm({a, b}, 1.0) == doctest::Approx(5.0));
  CHECK(a->grad()[0] == doctest::Approx(0.6));
  CHECK(b->grad()[0] == doctest::Approx(0.8));
  CHECK(train::clip_grad_norm({a, b}, 10.0) == doctest::Approx(1.0));
  CHECK(a->grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("training is deterministic and checkpoints evaluate bitwise") {
  // Identical configs, including the output directory: snapshot the first
  // run's artifacts before repeating it.
  const std::string d1 = scratch_dir("run1");
  const auto r1 = train::train(tiny_config(d1));
  const std::vector<std::string> artifacts{"checkpoint.aet", "report.json", "report.csv",
                                           "mixture.csv", "loss_trace.csv", "config.txt"};
  std::vector<std::string> first;
  for (const auto& f : artifacts) first.push_back(read_file(d1 + "/" + f));
  const auto r2 = train::train(tiny_config(d1));
  CHECK(r1.report.loss_trace.size() == 4);
  CHECK(r1.report.loss_trace == r2.report.loss_trace);
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    CAPTURE(artifacts[i]);
    CHECK(!first[i].empty());
    CHECK(read_file(d1 + "/" + artifacts[i]) == first[i]);
  }
  CHECK(fs::exists(fs::path(d1) / "timing.json"));

  // Calibration leaves every term at magnitude 1 on the first batch; the
  // first trace entry is that batch's loss before any update.
  CHECK(std::abs(r1.report.loss_trace[0] - 1.0) < 1e-9);

  const auto cfg = tiny_config(d1);
  const auto corpus = train::open_corpus(cfg);
  const auto examples = train::test_examples(corpus, cfg);
  const auto before = train::evaluate(*r1.model, examples, 1);
  const auto loaded = model::load_checkpoint(d1 + "/checkpoint.aet");
  const auto after = train::evaluate(loaded, examples, 1);
  CHECK(metrics::to_json(before).dump() == metrics::to_json(after).dump());
  CHECK(metrics::to_json(before).dump() == metrics::to_json(r1.report.test).dump());
}

TEST_CASE("evaluation properties on toy mixtures") {
  const auto cfg = tiny_config(scratch_dir("evalprops"));
  const auto corpus = train::open_corpus(cfg);
  auto c2 = cfg;
  c2.test_minutes = 0.3;
  const auto examples = train::test_examples(corpus, c2);
  REQUIRE(examples.size() == 36);
  std::vector<double> sir;
  for (const auto& ex : examples) {
    const auto own = train::score_estimate(ex.id, ex.target.samples, ex);
    CHECK(own.sdr_db == metrics::kDbClamp);
    sir.push_back(train::score_estimate(ex.id, ex.mixture.samples, ex).sir_db);
  }
  CHECK(std::abs(metrics::nearest_rank(sir, 50.0)) < 1.0);

  const std::string dir = scratch_dir("evalmanifest");
  data::write_test_manifest(dir, examples);
  model::SeparationModel m(cfg.arch);
  model::save_checkpoint(dir + "/m.aet", m);
  const auto report = train::evaluate(dir + "/m.aet", dir + "/manifest.json", 1);
  CHECK(report.rows.size() == examples.size());
}

TEST_CASE("parallel evaluation matches serial evaluation") {
  const auto cfg = tiny_config(scratch_dir("evalpar"));
  const auto examples = train::test_examples(train::open_corpus(cfg), cfg);
  const model::SeparationModel m(cfg.arch);
  const auto serial = train::evaluate(m, examples, 1);
  const auto par = train::evaluate(m, examples, 3);
  CHECK(metrics::to_json(serial).dump() == metrics::to_json(par).dump());
}

TEST_CASE("sweep axes") {
  CHECK(train::default_axis_values("stride").size() == 8);
  CHECK(train::default_axis_values("datasize") == std::vector<std::string>{"1", "2", "5", "10"});
  CHECK(train::default_axis_values("arch").size() == 7);
  CHECK(train::default_axis_values("loss").size() == 4);
  CHECK(train::axis_key("datasize") == "minutes");
  CHECK(train::axis_key("arch") == "variant");
  CHECK_THROWS_AS(train::default_axis_values("depth"), ConfigError);

  auto cfg = tiny_config(scratch_dir("sweep"));
  cfg.max_steps = 2;
  const auto points = train::sweep(cfg, "stride", {"8", "16"});
  REQUIRE(points.size() == 2);
  CHECK(points[1].report.config.arch.stride == 16);
  const std::string csv = train::sweep_csv(points);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(fs::exists(fs::path(cfg.out_dir) / "sweep_stride.csv"));
}

}  // TEST_SUITE

TEST_SUITE("smoke") {

TEST_CASE("loss trace stays finite for every architecture and loss") {
  for (const auto& variant : train::default_axis_values("arch")) {
    for (const auto& loss : train::default_axis_values("loss")) {
      CAPTURE(variant);
      CAPTURE(loss);
      auto cfg = tiny_config(scratch_dir("smoke"));
      train::set_config_value(cfg, "variant", variant);
      cfg.loss = loss;
      cfg.max_steps = 100;
      cfg.test_minutes = 0.02;
      const auto r = train::train(cfg);
      REQUIRE(r.report.loss_trace.size() == 100);
      bool finite = true;
      for (double v : r.report.loss_trace) finite = finite && std::isfinite(v);
      CHECK(finite);
    }
  }
}

}  // TEST_SUITE
