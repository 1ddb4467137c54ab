#include "aetsep/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <mutex>
#include <sstream>
#include <thread>

#include "aetsep/error.hpp"
#include "aetsep/tensor_io.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace aetsep::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(std::string_view key, std::string_view v) {
  try {
    std::size_t pos = 0;
    const std::string s(v);
    const double d = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + std::string(key) + "' expects a number, got '" +
                      std::string(v) + "'");
  }
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  const std::string s(v);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config key '" + std::string(key) +
                      "' expects a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + std::string(key) + "' is out of range");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "' expects a boolean");
}

std::string hidden_text(const std::vector<std::size_t>& h) {
  std::string s;
  for (std::size_t i = 0; i < h.size(); ++i) s += (i ? "," : "") + std::to_string(h[i]);
  return s;
}

struct KeyDef {
  const char* name;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"variant",
       [](TrainConfig& c, std::string_view v) { c.arch.variant = model::parse_variant(v); },
       [](const TrainConfig& c) { return std::string(model::to_string(c.arch.variant)); }},
      {"window_len",
       [](TrainConfig& c, std::string_view v) { c.arch.window_len = to_uint("window_len", v); },
       [](const TrainConfig& c) { return std::to_string(c.arch.window_len); }},
      {"stride",
       [](TrainConfig& c, std::string_view v) { c.arch.stride = to_uint("stride", v); },
       [](const TrainConfig& c) { return std::to_string(c.arch.stride); }},
      {"smoothing_len",
       [](TrainConfig& c, std::string_view v) {
         c.arch.smoothing_len = to_uint("smoothing_len", v);
       },
       [](const TrainConfig& c) { return std::to_string(c.arch.smoothing_len); }},
      {"hidden",
       [](TrainConfig& c, std::string_view v) {
         c.arch.hidden.clear();
         std::istringstream is{std::string(v)};
         std::string tok;
         while (std::getline(is, tok, ',')) c.arch.hidden.push_back(to_uint("hidden", trim(tok)));
       },
       [](const TrainConfig& c) { return hidden_text(c.arch.hidden); }},
      {"fourier_init",
       [](TrainConfig& c, std::string_view v) { c.arch.fourier_init = to_bool("fourier_init", v); },
       [](const TrainConfig& c) { return std::string(c.arch.fourier_init ? "1" : "0"); }},
      {"loss", [](TrainConfig& c, std::string_view v) { c.loss = std::string(v); },
       [](const TrainConfig& c) { return c.loss; }},
      {"minutes", [](TrainConfig& c, std::string_view v) { c.minutes = to_double("minutes", v); },
       [](const TrainConfig& c) { return fmt(c.minutes); }},
      {"batch_size",
       [](TrainConfig& c, std::string_view v) { c.batch_size = to_uint("batch_size", v); },
       [](const TrainConfig& c) { return std::to_string(c.batch_size); }},
      {"max_steps",
       [](TrainConfig& c, std::string_view v) { c.max_steps = to_uint("max_steps", v); },
       [](const TrainConfig& c) { return std::to_string(c.max_steps); }},
      {"learning_rate",
       [](TrainConfig& c, std::string_view v) { c.learning_rate = to_double("learning_rate", v); },
       [](const TrainConfig& c) { return fmt(c.learning_rate); }},
      {"optimizer", [](TrainConfig& c, std::string_view v) { c.optimizer = std::string(v); },
       [](const TrainConfig& c) { return c.optimizer; }},
      {"clip_norm",
       [](TrainConfig& c, std::string_view v) { c.clip_norm = to_double("clip_norm", v); },
       [](const TrainConfig& c) { return fmt(c.clip_norm); }},
      {"seed", [](TrainConfig& c, std::string_view v) { c.seed = to_uint("seed", v); },
       [](const TrainConfig& c) { return std::to_string(c.seed); }},
      {"corpus", [](TrainConfig& c, std::string_view v) { c.corpus = std::string(v); },
       [](const TrainConfig& c) { return c.corpus; }},
      {"toy_dir", [](TrainConfig& c, std::string_view v) { c.toy_dir = std::string(v); },
       [](const TrainConfig& c) { return c.toy_dir; }},
      {"toy_speakers",
       [](TrainConfig& c, std::string_view v) { c.toy_speakers = to_uint("toy_speakers", v); },
       [](const TrainConfig& c) { return std::to_string(c.toy_speakers); }},
      {"toy_minutes",
       [](TrainConfig& c, std::string_view v) { c.toy_minutes = to_double("toy_minutes", v); },
       [](const TrainConfig& c) { return fmt(c.toy_minutes); }},
      {"sample_rate",
       [](TrainConfig& c, std::string_view v) { c.sample_rate = to_double("sample_rate", v); },
       [](const TrainConfig& c) { return fmt(c.sample_rate); }},
      {"snippet_s",
       [](TrainConfig& c, std::string_view v) { c.snippet_s = to_double("snippet_s", v); },
       [](const TrainConfig& c) { return fmt(c.snippet_s); }},
      {"test_minutes",
       [](TrainConfig& c, std::string_view v) { c.test_minutes = to_double("test_minutes", v); },
       [](const TrainConfig& c) { return fmt(c.test_minutes); }},
      {"target_class",
       [](TrainConfig& c, std::string_view v) { c.target_class = std::string(v); },
       [](const TrainConfig& c) { return c.target_class; }},
      {"interference_class",
       [](TrainConfig& c, std::string_view v) { c.interference_class = std::string(v); },
       [](const TrainConfig& c) { return c.interference_class; }},
      {"checkpoint_every",
       [](TrainConfig& c, std::string_view v) {
         c.checkpoint_every = to_uint("checkpoint_every", v);
       },
       [](const TrainConfig& c) { return std::to_string(c.checkpoint_every); }},
      {"log_every",
       [](TrainConfig& c, std::string_view v) { c.log_every = to_uint("log_every", v); },
       [](const TrainConfig& c) { return std::to_string(c.log_every); }},
      {"eval_threads",
       [](TrainConfig& c, std::string_view v) { c.eval_threads = to_uint("eval_threads", v); },
       [](const TrainConfig& c) { return std::to_string(c.eval_threads); }},
      {"out_dir", [](TrainConfig& c, std::string_view v) { c.out_dir = std::string(v); },
       [](const TrainConfig& c) { return c.out_dir; }},
  };
  return table;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs fn(i) for i in [0, n) on a small pool; exceptions are rethrown.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = worker_count(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    }));
  }
  for (auto& f : pool) f.get();
}

// Graph buffers are a few MB each and are freed every step. Keeping them in
// the heap instead of fresh mmaps avoids page-fault churn that otherwise
// costs a third of the step time.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
  });
#endif
}

std::vector<double> head(const std::vector<double>& v, std::size_t n) {
  return std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  arch.validate();
  obj::parse_loss(loss);
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be positive");
    }
  };
  positive(minutes, "minutes");
  positive(static_cast<double>(batch_size), "batch_size");
  positive(static_cast<double>(max_steps), "max_steps");
  positive(learning_rate, "learning_rate");
  positive(clip_norm, "clip_norm");
  positive(sample_rate, "sample_rate");
  positive(snippet_s, "snippet_s");
  positive(test_minutes, "test_minutes");
  positive(toy_minutes, "toy_minutes");
  if (optimizer != "adam" && optimizer != "sgd") {
    throw ConfigError("optimizer must be adam or sgd, got '" + optimizer + "'");
  }
  if (corpus.empty()) throw ConfigError("corpus must be a path or 'toy'");
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
  if (target_class == interference_class) {
    throw ConfigError("target and interference classes must differ");
  }
  const auto snippet = static_cast<std::size_t>(std::llround(snippet_s * sample_rate));
  if (snippet < arch.window_len) {
    throw ConfigError("snippet shorter than the analysis window");
  }
}

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : key_table()) {
    if (key == k.name) {
      k.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

TrainConfig config_from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " lacks '='");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_text(ss.str());
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& k : key_table()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& k : key_table()) keys.emplace_back(k.name);
  return keys;
}

// ---------------------------------------------------------------------------
// Optimizers

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<ad::ParameterPtr>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& p : params) {
    if (!p->trainable() || p->grad().empty()) continue;
    auto [it, inserted] = moments_.try_emplace(p.get());
    auto& [m, v] = it->second;
    if (inserted) {
      m = Tensor::zeros_like(p->value());
      v = Tensor::zeros_like(p->value());
    }
    const auto g = p->grad().flat();
    m.flat() = beta1_ * m.flat() + (1.0 - beta1_) * g;
    v.flat() = beta2_ * v.flat() + (1.0 - beta2_) * g.square();
    p->value().flat() -= lr_ * (m.flat() / c1) / ((v.flat() / c2).sqrt() + eps_);
  }
}

void Sgd::step(const std::vector<ad::ParameterPtr>& params) {
  for (const auto& p : params) {
    if (!p->trainable() || p->grad().empty()) continue;
    p->value().flat() -= lr_ * p->grad().flat();
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == "sgd") return std::make_unique<Sgd>(cfg.learning_rate);
  return std::make_unique<Adam>(cfg.learning_rate);
}

double clip_grad_norm(const std::vector<ad::ParameterPtr>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p->grad().empty()) sq += p->grad().flat().square().sum();
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p->grad().empty()) p->mutable_grad().flat() *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Data

std::shared_ptr<const data::SpeakerCorpus> open_corpus(const TrainConfig& cfg) {
  if (cfg.corpus != "toy") {
    auto corpus = std::make_shared<data::SpeakerCorpus>(data::SpeakerCorpus::open(cfg.corpus));
    if (corpus->sample_rate() != cfg.sample_rate) {
      throw ConfigError("corpus rate " + fmt(corpus->sample_rate()) +
                        " Hz differs from configured sample_rate " + fmt(cfg.sample_rate));
    }
    return corpus;
  }
  const fs::path dir = cfg.toy_dir.empty() ? fs::path(cfg.out_dir) / "toy_corpus"
                                           : fs::path(cfg.toy_dir);
  data::ToyCorpusOptions o;
  o.speakers_per_class = cfg.toy_speakers;
  o.minutes = cfg.toy_minutes;
  o.seed = cfg.seed;
  o.sample_rate = cfg.sample_rate;
  const std::string stamp = "speakers=" + std::to_string(o.speakers_per_class) +
                            "\nminutes=" + fmt(o.minutes) + "\nseed=" +
                            std::to_string(o.seed) + "\nsample_rate=" + fmt(o.sample_rate) +
                            "\n";
  const fs::path stamp_path = dir / "generator.txt";
  if (fs::exists(stamp_path) && fs::exists(dir / "manifest.json")) {
    std::ifstream is(stamp_path);
    std::stringstream ss;
    ss << is.rdbuf();
    if (ss.str() == stamp) {
      return std::make_shared<data::SpeakerCorpus>(data::SpeakerCorpus::open(dir.string()));
    }
  }
  auto corpus = std::make_shared<data::SpeakerCorpus>(data::synth_toy_corpus(dir.string(), o));
  write_text(stamp_path, stamp);
  return corpus;
}

data::MixtureStream training_stream(std::shared_ptr<const data::SpeakerCorpus> corpus,
                                    const TrainConfig& cfg) {
  data::DatasetOptions o;
  o.minutes = cfg.minutes;
  o.batch_size = cfg.batch_size;
  o.snippet_s = cfg.snippet_s;
  o.seed = data::derive_seed(cfg.seed, 1);
  o.split = "train";
  o.target_class = cfg.target_class;
  o.interference_class = cfg.interference_class;
  return data::MixtureStream(std::move(corpus), o);
}

std::vector<data::MixtureExample> test_examples(
    std::shared_ptr<const data::SpeakerCorpus> corpus, const TrainConfig& cfg) {
  data::DatasetOptions o;
  o.minutes = cfg.test_minutes;
  o.batch_size = 1;
  o.snippet_s = cfg.snippet_s;
  o.seed = data::derive_seed(cfg.seed, 2);
  o.split = "test";
  o.target_class = cfg.target_class;
  o.interference_class = cfg.interference_class;
  return data::MixtureStream(std::move(corpus), o).all();
}

// ---------------------------------------------------------------------------
// Evaluation

metrics::MetricScores score_estimate(const std::string& id,
                                     const std::vector<double>& estimate,
                                     const data::MixtureExample& ex) {
  const std::size_t n = estimate.size();
  if (n > ex.target.size()) throw ShapeError("estimate longer than the reference");
  const auto y = head(ex.target.samples, n);
  const auto z = head(ex.interference.samples, n);
  const auto bss = metrics::bss_eval(estimate, y, z);
  metrics::MetricScores s;
  s.id = id;
  s.sdr_db = bss.sdr_db;
  s.sir_db = bss.sir_db;
  s.sar_db = bss.sar_db;
  s.stoi = metrics::stoi_reference(estimate, y, ex.target.sample_rate);
  return s;
}

metrics::SeparationReport evaluate(const model::SeparationModel& model,
                                   const std::vector<data::MixtureExample>& examples,
                                   std::size_t threads) {
  if (examples.empty()) throw ConfigError("nothing to evaluate");
  std::vector<metrics::MetricScores> rows(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    if (ex.mixture.sample_rate != model.spec().sample_rate) {
      throw ConfigError("example " + ex.id + " sample rate differs from the model's");
    }
    rows[i] = score_estimate(ex.id, model.separate(ex.mixture).samples, ex);
  });
  return metrics::aggregate(std::move(rows));
}

metrics::SeparationReport evaluate_mixture(const model::SeparationModel& model,
                                           const std::vector<data::MixtureExample>& examples,
                                           std::size_t threads) {
  if (examples.empty()) throw ConfigError("nothing to evaluate");
  std::vector<metrics::MetricScores> rows(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    const std::size_t n = model.output_length(ex.mixture.size());
    rows[i] = score_estimate(ex.id, head(ex.mixture.samples, n), ex);
  });
  return metrics::aggregate(std::move(rows));
}

metrics::SeparationReport evaluate(const std::string& checkpoint,
                                   const std::string& manifest, std::size_t threads) {
  const auto model = model::load_checkpoint(checkpoint);
  return evaluate(model, data::load_test_manifest(manifest), threads);
}

// ---------------------------------------------------------------------------
// Training

std::vector<obj::LossSample> loss_samples(const model::SeparationModel& model,
                                          const std::vector<data::MixtureExample>& batch) {
  std::vector<obj::LossSample> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) {
    auto est = model.separate(ex.mixture).samples;
    const std::size_t n = est.size();
    out.push_back({Tensor::vector(std::move(est)), Tensor::vector(head(ex.target.samples, n)),
                   Tensor::vector(head(ex.interference.samples, n))});
  }
  return out;
}

json ExperimentReport::to_json() const {
  json cfg = json::object();
  for (const auto& k : key_table()) cfg[k.name] = k.get(config);
  json norms = json::array();
  for (const auto& t : loss.terms) norms.push_back(t.term.norm_const);
  return {{"config", cfg},
          {"loss", loss.to_string()},
          {"norm_consts", norms},
          {"steps", loss_trace.size()},
          {"loss_trace", loss_trace},
          {"test", metrics::to_json(test)},
          {"mixture", metrics::to_json(mixture)},
          {"sdr_improvement_db", sdr_improvement_db()}};
}

namespace {

// Writes the diagnostic dump and returns the message for the exception.
std::string nan_diagnostic(const TrainConfig& cfg, const obj::CompositeLoss& loss,
                           const model::SeparationModel& model, std::size_t step,
                           const data::MixtureExample& ex, const std::string& what,
                           const obj::LossContext& ctx) {
  json terms = json::object();
  std::string summary;
  try {
    const auto samples = loss_samples(model, {ex});
    for (const auto& t : loss.terms) {
      double v = std::nan("");
      try {
        v = obj::term_value(t.term.kind, ad::constant(samples[0].estimate),
                            ad::constant(samples[0].target),
                            ad::constant(samples[0].interference), ctx)
                .value()[0];
      } catch (const Error&) {
      }
      terms[obj::to_string(t.term.kind)] = std::isfinite(v) ? json(v) : json("non-finite");
      summary += std::string(" ") + obj::to_string(t.term.kind) + "=" + fmt(v);
    }
  } catch (const Error& e) {
    summary += std::string(" forward failed: ") + e.what();
  }
  const json dump = {{"step", step}, {"example", ex.id}, {"error", what}, {"terms", terms}};
  try {
    write_text(fs::path(cfg.out_dir) / "nan_dump.json", dump.dump(2) + "\n");
  } catch (const Error&) {
  }
  return "non-finite loss at step " + std::to_string(step) + " (example " + ex.id +
         "):" + summary + "; " + what;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const LogFn& log) {
  cfg.validate();
  tune_allocator();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "config.txt", config_to_text(cfg));

  auto corpus = open_corpus(cfg);
  const auto stream = training_stream(corpus, cfg);
  const auto tests = test_examples(corpus, cfg);

  model::ArchitectureSpec spec = cfg.arch;
  spec.seed = data::derive_seed(cfg.seed, 3);
  spec.sample_rate = cfg.sample_rate;
  auto model = std::make_unique<model::SeparationModel>(spec);
  const auto params = model->trainable_parameters();

  obj::LossContext ctx;
  ctx.sample_rate = cfg.sample_rate;
  ExperimentReport report;
  report.config = cfg;
  report.loss = obj::calibrate_unity(obj::parse_loss(cfg.loss),
                                     loss_samples(*model, stream.batch(0)), ctx);
  const auto optimizer = make_optimizer(cfg);
  const std::size_t nb = stream.batches_per_epoch();

  auto fetch = [&stream](std::size_t b) {
    return std::async(std::launch::async, [&stream, b] { return stream.batch(b); });
  };
  auto pending = fetch(0);
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const auto batch = pending.get();
    if (step + 1 < cfg.max_steps) pending = fetch((step + 1) % nb);
    for (const auto& p : params) p->zero_grad();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
      try {
        auto fwd = model->forward(ad::constant(Tensor::vector(ex.mixture.samples)));
        const std::size_t n = fwd.estimate.value().size();
        auto l = obj::composite_eval(report.loss, fwd.estimate,
                                     ad::constant(Tensor::vector(head(ex.target.samples, n))),
                                     ad::constant(Tensor::vector(head(ex.interference.samples, n))),
                                     ctx);
        total += l.value()[0];
        ad::backward(ad::scale(l, inv_b));
      } catch (const NumericError& e) {
        throw NumericError(nan_diagnostic(cfg, report.loss, *model, step, ex, e.what(), ctx));
      } catch (const DegenerateCorrelationError& e) {
        throw NumericError(nan_diagnostic(cfg, report.loss, *model, step, ex, e.what(), ctx));
      }
    }
    const double norm = clip_grad_norm(params, cfg.clip_norm);
    if (!std::isfinite(total) || !std::isfinite(norm)) {
      throw NumericError(nan_diagnostic(cfg, report.loss, *model, step, batch.front(),
                                        "non-finite gradient norm", ctx));
    }
    optimizer->step(params);
    report.loss_trace.push_back(total * inv_b);
    if (cfg.log_every && log && (step + 1) % cfg.log_every == 0) {
      log("step " + std::to_string(step + 1) + " loss " + fmt(total * inv_b) +
          " grad_norm " + fmt(norm));
    }
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0) {
      model::save_checkpoint((fs::path(cfg.out_dir) / "checkpoint_latest.aet").string(), *model);
    }
  }

  model::save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.aet").string(), *model);
  report.test = evaluate(*model, tests, cfg.eval_threads);
  report.mixture = evaluate_mixture(*model, tests, cfg.eval_threads);
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(cfg.out_dir);
  write_text(out / "report.json", report.to_json().dump(2) + "\n");
  write_text(out / "report.csv", metrics::to_csv(report.test));
  write_text(out / "mixture.csv", metrics::to_csv(report.mixture));
  std::string trace = "step,loss\n";
  for (std::size_t i = 0; i < report.loss_trace.size(); ++i) {
    trace += std::to_string(i + 1) + "," + fmt(report.loss_trace[i]) + "\n";
  }
  write_text(out / "loss_trace.csv", trace);
  write_text(out / "timing.json", json{{"wall_clock_s", report.wall_clock_s}}.dump(2) + "\n");
  if (log) {
    log("test median SDR " + fmt(report.test.sdr_db.median) + " dB, mixture " +
        fmt(report.mixture.sdr_db.median) + " dB, improvement " +
        fmt(report.sdr_improvement_db()) + " dB");
  }
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<std::string> default_axis_values(std::string_view axis) {
  if (axis == "datasize") return {"1", "2", "5", "10"};
  if (axis == "stride") return {"2", "4", "8", "16", "32", "64", "128", "256"};
  if (axis == "arch") {
    std::vector<std::string> out;
    for (auto v : model::kAllVariants) out.emplace_back(model::to_string(v));
    return out;
  }
  if (axis == "loss") return {"mse", "sdr", "0.75*sdr+0.25*stoi", "0.5*sir+0.5*sar"};
  throw ConfigError("unknown sweep axis '" + std::string(axis) +
                    "' (datasize, stride, arch, loss)");
}

std::string axis_key(std::string_view axis) {
  if (axis == "datasize") return "minutes";
  if (axis == "stride") return "stride";
  if (axis == "arch") return "variant";
  if (axis == "loss") return "loss";
  throw ConfigError("unknown sweep axis '" + std::string(axis) + "'");
}

std::vector<SweepPoint> sweep(const TrainConfig& base, std::string_view axis,
                              std::vector<std::string> values, const LogFn& log) {
  const std::string key = axis_key(axis);
  if (values.empty()) values = default_axis_values(axis);
  // Validate every point before spending time on any of them.
  std::vector<TrainConfig> configs;
  for (const auto& v : values) {
    TrainConfig cfg = base;
    set_config_value(cfg, key, v);
    std::string tag;
    for (char c : v) tag += std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? c : '_';
    cfg.out_dir = (fs::path(base.out_dir) / (std::string(axis) + "_" + tag)).string();
    if (cfg.corpus == "toy" && cfg.toy_dir.empty()) {
      cfg.toy_dir = (fs::path(base.out_dir) / "toy_corpus").string();
    }
    cfg.validate();
    configs.push_back(std::move(cfg));
  }
  std::vector<SweepPoint> points;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (log) log(std::string(axis) + " = " + values[i]);
    auto result = train(configs[i], log);
    points.push_back({std::string(axis), values[i], std::move(result.report)});
  }
  fs::create_directories(base.out_dir);
  write_text(fs::path(base.out_dir) / ("sweep_" + std::string(axis) + ".csv"), sweep_csv(points));
  return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out =
      "axis,value,seed,sdr_median,sdr_p25,sdr_p75,sir_median,sir_p25,sir_p75,"
      "sar_median,sar_p25,sar_p75,stoi_median,stoi_p25,stoi_p75,mixture_sdr_median\n";
  for (const auto& p : points) {
    const auto& t = p.report.test;
    std::string value = p.value;
    if (value.find(',') != std::string::npos) value = "\"" + value + "\"";
    out += p.axis + "," + value + "," + std::to_string(p.report.config.seed);
    for (const auto* q : {&t.sdr_db, &t.sir_db, &t.sar_db, &t.stoi}) {
      out += "," + fmt(q->median) + "," + fmt(q->p25) + "," + fmt(q->p75);
    }
    out += "," + fmt(p.report.mixture.sdr_db.median) + "\n";
  }
  return out;
}

}  // namespace aetsep::train
