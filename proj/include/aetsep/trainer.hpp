#pragma once

// Training loop, evaluation and experiment sweeps.
//
// Config files are flat "key = value" text ('#' starts a comment). Keys:
//   variant window_len stride smoothing_len hidden fourier_init
//   loss minutes batch_size max_steps learning_rate optimizer clip_norm seed
//   corpus (path or "toy") toy_dir toy_speakers toy_minutes sample_rate
//   snippet_s test_minutes target_class interference_class
//   checkpoint_every log_every eval_threads out_dir
//
// One seed drives everything: the toy corpus uses `seed`, the training
// stream derive_seed(seed, 1), the test set derive_seed(seed, 2) and
// parameter initialization derive_seed(seed, 3).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aetsep/autodiff.hpp"
#include "aetsep/data.hpp"
#include "aetsep/metrics.hpp"
#include "aetsep/models.hpp"
#include "aetsep/objectives.hpp"

namespace aetsep::train {

struct TrainConfig {
  model::ArchitectureSpec arch;
  std::string loss = "sdr";
  double minutes = 10.0;
  std::size_t batch_size = 8;
  std::size_t max_steps = 1000;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";  // adam | sgd
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::string corpus = "toy";
  std::string toy_dir;  // default: <out_dir>/toy_corpus
  std::size_t toy_speakers = 6;
  double toy_minutes = 6.0;
  double sample_rate = kDefaultSampleRate;
  double snippet_s = 2.0;
  double test_minutes = 1.0;
  std::string target_class = "B";
  std::string interference_class = "A";
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t log_every = 0;         // 0: silent
  std::size_t eval_threads = 0;      // 0: hardware concurrency
  std::string out_dir = "run";

  // Throws ConfigError.
  void validate() const;
};

// Sets one key from its text form. Throws ConfigError for unknown keys or
// malformed values.
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);
TrainConfig config_from_text(const std::string& text);
TrainConfig load_config(const std::string& path);
// Canonical "key = value" lines, one per key in a fixed order.
std::string config_to_text(const TrainConfig& cfg);
std::vector<std::string> config_keys();

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update from the parameters' accumulated gradients.
  virtual void step(const std::vector<ad::ParameterPtr>& params) = 0;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<ad::ParameterPtr>& params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<const ad::Parameter*, std::pair<Tensor, Tensor>> moments_;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(const std::vector<ad::ParameterPtr>& params) override;

 private:
  double lr_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

// Scales gradients so their global l2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const std::vector<ad::ParameterPtr>& params, double max_norm);

// ---------------------------------------------------------------------------
// Data

// Opens cfg.corpus, or generates (or reuses) the toy corpus.
std::shared_ptr<const data::SpeakerCorpus> open_corpus(const TrainConfig& cfg);
data::MixtureStream training_stream(std::shared_ptr<const data::SpeakerCorpus> corpus,
                                    const TrainConfig& cfg);
std::vector<data::MixtureExample> test_examples(
    std::shared_ptr<const data::SpeakerCorpus> corpus, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation

// Scores an estimate against the references trimmed to its length.
metrics::MetricScores score_estimate(const std::string& id,
                                     const std::vector<double>& estimate,
                                     const data::MixtureExample& ex);

// Runs the model on every example (in parallel, read-only parameters).
// Row order follows the example order.
metrics::SeparationReport evaluate(const model::SeparationModel& model,
                                   const std::vector<data::MixtureExample>& examples,
                                   std::size_t threads = 0);
// Scores the unprocessed mixture, trimmed to the model's valid region.
metrics::SeparationReport evaluate_mixture(const model::SeparationModel& model,
                                           const std::vector<data::MixtureExample>& examples,
                                           std::size_t threads = 0);
// Loads a checkpoint and a test manifest.
metrics::SeparationReport evaluate(const std::string& checkpoint,
                                   const std::string& manifest,
                                   std::size_t threads = 0);

// ---------------------------------------------------------------------------
// Training

// Model estimates on a batch with references trimmed to the valid region.
std::vector<obj::LossSample> loss_samples(const model::SeparationModel& model,
                                          const std::vector<data::MixtureExample>& batch);

struct ExperimentReport {
  TrainConfig config;
  obj::CompositeLoss loss;  // with calibration constants
  std::vector<double> loss_trace;
  metrics::SeparationReport test;
  metrics::SeparationReport mixture;
  double wall_clock_s = 0.0;

  double sdr_improvement_db() const { return test.sdr_db.median - mixture.sdr_db.median; }
  // Excludes wall-clock, which goes to a separate timing file.
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::unique_ptr<model::SeparationModel> model;
  ExperimentReport report;
};

using LogFn = std::function<void(const std::string&)>;

// Builds the model, calibrates the loss on the first batch, trains for
// max_steps, saves <out_dir>/checkpoint.aet and evaluates on the test set.
// Writes config.txt, report.json, report.csv, mixture.csv, loss_trace.csv
// and timing.json under out_dir. Throws NumericError with a diagnostic (and
// <out_dir>/nan_dump.json) if the loss turns non-finite.
TrainResult train(const TrainConfig& cfg, const LogFn& log = {});

// ---------------------------------------------------------------------------
// Sweeps

struct SweepPoint {
  std::string axis;
  std::string value;
  ExperimentReport report;
};

// Default axis values: datasize {1,2,5,10}; stride {2,...,256}; arch: the
// seven variants; loss: {mse, sdr, 0.75*sdr+0.25*stoi, 0.5*sir+0.5*sar}.
std::vector<std::string> default_axis_values(std::string_view axis);
// Config key an axis writes ("datasize" -> minutes, "arch" -> variant).
std::string axis_key(std::string_view axis);

// One train + evaluate per value, each in <out_dir>/<axis>_<value>, sharing
// seed and toy corpus. Writes <out_dir>/sweep_<axis>.csv.
std::vector<SweepPoint> sweep(const TrainConfig& base, std::string_view axis,
                              std::vector<std::string> values = {},
                              const LogFn& log = {});
std::string sweep_csv(const std::vector<SweepPoint>& points);

}  // namespace aetsep::train
