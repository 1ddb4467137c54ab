// aetsep: train, run and evaluate time-domain separation models.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aetsep/data.hpp"
#include "aetsep/error.hpp"
#include "aetsep/gradsuite.hpp"
#include "aetsep/metrics.hpp"
#include "aetsep/models.hpp"
#include "aetsep/tensor_io.hpp"
#include "aetsep/trainer.hpp"
#include "aetsep/wav.hpp"

namespace {

namespace fs = std::filesystem;
using namespace aetsep;

// Applies trailing "--key value" / "--key=value" pairs to the config.
void apply_overrides(train::TrainConfig& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    arg = arg.substr(2);
    std::string value;
    if (const auto eq = arg.find('='); eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + arg);
      value = extras[++i];
    }
    train::set_config_value(cfg, arg, value);
  }
}

train::TrainConfig make_config(const std::string& path, const std::vector<std::string>& extras) {
  train::TrainConfig cfg = path.empty() ? train::TrainConfig{} : train::load_config(path);
  apply_overrides(cfg, extras);
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

void print_summary(const metrics::SeparationReport& r) {
  std::printf("examples %zu\n", r.rows.size());
  std::printf("sdr_db  median %.3f  p25 %.3f  p75 %.3f\n", r.sdr_db.median, r.sdr_db.p25,
              r.sdr_db.p75);
  std::printf("sir_db  median %.3f  p25 %.3f  p75 %.3f\n", r.sir_db.median, r.sir_db.p25,
              r.sir_db.p75);
  std::printf("sar_db  median %.3f  p25 %.3f  p75 %.3f\n", r.sar_db.median, r.sar_db.p25,
              r.sar_db.p75);
  std::printf("stoi    median %.4f  p25 %.4f  p75 %.4f\n", r.stoi.median, r.stoi.p25,
              r.stoi.p75);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  // Loss expressions contain no ';', so ';' separates values.
  const char sep = s.find(';') != std::string::npos ? ';' : ',';
  while (std::getline(ss, tok, sep)) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-domain speech separation with adaptive front ends"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model and evaluate it on the test set");
  train_cmd->add_option("--config", config_path, "Flat key = value config file");
  train_cmd->allow_extras();

  std::string ckpt, in_path, out_path, grid_dump;
  bool unit_mask = false;
  auto* sep_cmd = app.add_subcommand("separate", "Run a checkpoint on a mixture WAV");
  sep_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sep_cmd->add_option("--in", in_path, "Mixture WAV")->required();
  sep_cmd->add_option("--out", out_path, "Estimate WAV (valid region only)")->required();
  sep_cmd->add_flag("--unit-mask", unit_mask,
                    "Replace the mask with ones (mask variants): output is the front-end "
                    "round trip");
  sep_cmd->add_option("--dump-grid", grid_dump,
                      "Write the mask/modulation grid (.csv for text, else binary)");

  std::string manifest, csv_path, json_path;
  std::size_t threads = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a test manifest");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest, "Test manifest JSON")->required();
  eval_cmd->add_option("--csv", csv_path, "Per-example CSV output");
  eval_cmd->add_option("--json", json_path, "JSON report output");
  eval_cmd->add_option("--threads", threads, "Worker threads (0: all cores)");

  std::string axis, values;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate along one axis");
  sweep_cmd->add_option("--axis", axis, "datasize | stride | arch | loss")->required();
  sweep_cmd->add_option("--config", config_path, "Base config file");
  sweep_cmd->add_option("--values", values,
                        "Override axis values (comma list, or ';' list for losses)");
  sweep_cmd->allow_extras();

  std::uint64_t seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", seed, "Random seed for test inputs");

  double minutes = 10.0;
  std::size_t speakers = 6;
  double test_minutes = 0.0;
  std::string out_dir;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic toy corpus");
  synth_cmd->add_option("--minutes", minutes, "Total minutes of audio")->required();
  synth_cmd->add_option("--seed", seed, "Random seed")->required();
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--speakers", speakers, "Speakers per class");
  synth_cmd->add_option("--test-minutes", test_minutes,
                        "Also write a test manifest of this many minutes of mixtures");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto cfg = make_config(config_path, train_cmd->remaining());
      const auto result = train::train(cfg, log_line);
      print_summary(result.report.test);
      std::printf("mixture sdr_db median %.3f  improvement %.3f dB\n",
                  result.report.mixture.sdr_db.median, result.report.sdr_improvement_db());
    } else if (*sep_cmd) {
      const auto model = model::load_checkpoint(ckpt);
      const Waveform mix = wav::load(in_path);
      if (mix.sample_rate != model.spec().sample_rate) {
        throw ConfigError("input is sampled at " + std::to_string(mix.sample_rate) +
                          " Hz, checkpoint expects " +
                          std::to_string(model.spec().sample_rate));
      }
      if (unit_mask && !model::is_mask(model.spec().variant)) {
        throw ConfigError("--unit-mask needs a mask variant");
      }
      const auto mode = unit_mask ? model::NetOverride::kUnit : model::NetOverride::kNone;
      const auto fwd = model.forward(ad::constant(Tensor::vector(mix.samples)), mode);
      wav::save(out_path, Waveform{fwd.estimate.value().to_vector(), mix.sample_rate});
      if (!grid_dump.empty()) {
        if (fs::path(grid_dump).extension() == ".csv") {
          io::write_grid_csv(grid_dump, fwd.net_out.values.value());
        } else {
          io::write_grid_raw(grid_dump, fwd.net_out.values.value());
        }
      }
      std::printf("wrote %zu samples (valid region of %zu input samples)\n",
                  fwd.estimate.value().size(), mix.size());
    } else if (*eval_cmd) {
      const auto report = train::evaluate(ckpt, manifest, threads);
      if (!csv_path.empty() || !json_path.empty()) {
        metrics::write_report(csv_path, json_path, report);
      }
      print_summary(report);
    } else if (*sweep_cmd) {
      const auto cfg = make_config(config_path, sweep_cmd->remaining());
      const auto points = train::sweep(cfg, axis, split_list(values), log_line);
      std::fputs(train::sweep_csv(points).c_str(), stdout);
    } else if (*grad_cmd) {
      const auto result = diag::run_gradient_suite(seed);
      std::fputs(diag::format_gradient_suite(result).c_str(), stdout);
      return result.passed() ? 0 : 1;
    } else if (*synth_cmd) {
      data::ToyCorpusOptions o;
      o.minutes = minutes;
      o.seed = seed;
      o.speakers_per_class = speakers;
      auto corpus = std::make_shared<const data::SpeakerCorpus>(data::synth_toy_corpus(out_dir, o));
      std::printf("wrote %zu speakers to %s\n", corpus->speakers().size(), out_dir.c_str());
      if (test_minutes > 0) {
        data::DatasetOptions d;
        d.minutes = test_minutes;
        d.batch_size = 1;
        d.seed = data::derive_seed(seed, 2);
        d.split = "test";
        const auto examples = data::MixtureStream(corpus, d).all();
        const std::string test_dir = (fs::path(out_dir) / "test_set").string();
        data::write_test_manifest(test_dir, examples);
        std::printf("wrote %zu test mixtures to %s\n", examples.size(), test_dir.c_str());
      }
    }
  } catch (const aetsep::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
