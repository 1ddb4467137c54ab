#include "aetsep/models.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>

#include "aetsep/error.hpp"
#include "aetsep/tensor_io.hpp"

namespace aetsep::model {

namespace {

struct VariantName {
  Variant v;
  const char* name;
};

constexpr VariantName kNames[] = {
    {Variant::kStft, "stft"},
    {Variant::kStftSmoothed, "stft_smoothed"},
    {Variant::kStftSmoothedMask, "stft_smoothed_mask"},
    {Variant::kAet, "aet"},
    {Variant::kAetMask, "aet_mask"},
    {Variant::kFullAet, "full_aet"},
    {Variant::kFullAetMask, "full_aet_mask"},
};

Tensor uniform(Tensor::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(Variant v) {
  for (const auto& n : kNames) {
    if (n.v == v) return n.name;
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string s(name);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (char& c : s) {
    if (c == '-') c = '_';
  }
  for (const auto& n : kNames) {
    if (s == n.name) return n.v;
  }
  throw ConfigError("unknown architecture variant '" + std::string(name) + "'");
}

bool is_mask(Variant v) {
  return v == Variant::kStftSmoothedMask || v == Variant::kAetMask ||
         v == Variant::kFullAetMask;
}

bool has_fixed_front_end(Variant v) {
  return v == Variant::kStft || v == Variant::kStftSmoothed ||
         v == Variant::kStftSmoothedMask;
}

bool shares_synthesis(Variant v) {
  return v == Variant::kAet || v == Variant::kAetMask;
}

void ArchitectureSpec::validate() const {
  if (window_len < 2 || window_len % 2 != 0) {
    throw ConfigError("window_len must be even and at least 2");
  }
  if (stride == 0 || stride > window_len) {
    throw ConfigError("stride must lie in [1, window_len]");
  }
  if (smoothing_len == 0) throw ConfigError("smoothing_len must be positive");
  if (hidden.empty()) throw ConfigError("hidden layer list must be nonempty");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");
}

std::size_t ArchitectureSpec::net_input_width() const {
  return variant == Variant::kStft ? n_freq() : channels();
}

SeparationModel::SeparationModel(ArchitectureSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t n = spec_.window_len;
  const std::size_t nf = spec_.n_freq();
  const std::size_t k = spec_.channels();
  std::mt19937_64 rng(spec_.seed);

  if (has_fixed_front_end(spec_.variant)) {
    auto fb = dsp::build_fourier_filterbank(nf, n, spec_.stride);
    window_ = fb.window;
    analysis_ = std::make_shared<ad::Parameter>("analysis", fb.filters, false);
    synthesis_ = std::make_shared<ad::Parameter>(
        "synthesis", dsp::build_fourier_synthesis_bank(nf, n, spec_.stride).filters,
        false);
    if (spec_.variant != Variant::kStft) {
      smoothing_ = std::make_shared<ad::Parameter>(
          "smoothing", dsp::rectangular_smoothing(k, spec_.smoothing_len), false);
    }
  } else {
    const double bound = std::sqrt(1.0 / static_cast<double>(n));
    Tensor analysis = spec_.fourier_init
                          ? dsp::build_fourier_filterbank(nf, n, spec_.stride).filters
                          : uniform({k, n}, bound, rng);
    analysis_ = std::make_shared<ad::Parameter>("analysis", std::move(analysis), true);
    if (shares_synthesis(spec_.variant)) {
      synthesis_ = analysis_;
    } else {
      Tensor synthesis;
      if (spec_.fourier_init) {
        // Fold the mean overlap-add normalizer into the dual bank since the
        // trainable synthesis path applies none.
        synthesis = dsp::build_fourier_synthesis_bank(nf, n, spec_.stride).filters;
        const auto w = dsp::hann_window(n);
        double w2 = 0.0;
        for (double v : w.values()) w2 += v * v;
        const double gain = static_cast<double>(spec_.stride) / w2;
        for (double& v : synthesis.values()) v *= gain;
      } else {
        synthesis = uniform({k, n}, bound, rng);
      }
      synthesis_ =
          std::make_shared<ad::Parameter>("synthesis", std::move(synthesis), true);
    }
    smoothing_ = std::make_shared<ad::Parameter>(
        "smoothing", dsp::rectangular_smoothing(k, spec_.smoothing_len), true);
  }

  std::vector<std::size_t> widths{spec_.net_input_width()};
  widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
  widths.push_back(spec_.net_input_width());
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const double bound = std::sqrt(1.0 / static_cast<double>(widths[i]));
    const std::string prefix = "dense" + std::to_string(i);
    DenseLayer layer;
    layer.weight = std::make_shared<ad::Parameter>(
        prefix + ".weight", uniform({widths[i], widths[i + 1]}, bound, rng), true);
    layer.bias = std::make_shared<ad::Parameter>(
        prefix + ".bias", Tensor({widths[i + 1]}), true);
    layers_.push_back(std::move(layer));
  }
}

std::size_t SeparationModel::output_length(std::size_t len) const {
  return dsp::synthesis_length(
      dsp::frame_count(len, spec_.window_len, spec_.stride), spec_.window_len,
      spec_.stride);
}

ad::Var SeparationModel::net(const ad::Var& input) const {
  ad::Var h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = ad::dense(h, layers_[i].weight->var(), layers_[i].bias->var());
    const bool last = i + 1 == layers_.size();
    h = (last && is_mask(spec_.variant)) ? ad::sigmoid(h) : ad::softplus(h);
  }
  return h;
}

ForwardResult SeparationModel::forward(const ad::Var& mixture,
                                       NetOverride override_net) const {
  const std::size_t len = mixture.value().size();
  if (len < spec_.window_len) {
    throw InputTooShortError("mixture of " + std::to_string(len) +
                             " samples is shorter than the window (" +
                             std::to_string(spec_.window_len) + ")");
  }
  ForwardResult r;
  r.raw = dsp::analyze(mixture, analysis_->var(), spec_.stride);

  auto run_net = [&](const ad::Var& in) {
    switch (override_net) {
      case NetOverride::kUnit: return ad::constant(Tensor(in.shape(), 1.0));
      case NetOverride::kPassThrough: return in;
      case NetOverride::kNone: break;
    }
    return net(in);
  };

  if (spec_.variant == Variant::kStft) {
    auto [mag, phase] = dsp::magnitude_phase_pair(r.raw, spec_.n_freq());
    r.modulation = mag;
    r.carrier = phase;
    r.net_out = {run_net(mag.values), dsp::GridKind::kMagnitude};
    r.source = {ad::mul(ad::duplicate_cols(r.net_out.values), phase.values),
                dsp::GridKind::kRaw};
  } else {
    r.modulation = dsp::smooth_rectify(r.raw, smoothing_->var());
    r.carrier = dsp::carrier(r.raw, r.modulation);
    r.net_out.values = run_net(r.modulation.values);
    if (is_mask(spec_.variant)) {
      r.net_out.kind = dsp::GridKind::kMask;
      r.source.values = ad::mul(ad::mul(r.net_out.values, r.modulation.values),
                                r.carrier.values);
    } else {
      r.net_out.kind = dsp::GridKind::kModulation;
      r.source.values = ad::mul(r.net_out.values, r.carrier.values);
    }
    r.source.kind = dsp::GridKind::kRaw;
  }

  const auto kind = has_fixed_front_end(spec_.variant) ? dsp::FilterKind::kFourierFixed
                                                       : dsp::FilterKind::kTrainable;
  r.estimate = dsp::synthesize(r.source.values, synthesis_->var(), spec_.stride,
                               kind, window_);
  return r;
}

Waveform SeparationModel::separate(const Waveform& mixture,
                                   NetOverride override_net) const {
  auto out = forward(ad::constant(Tensor::vector(mixture.samples)), override_net);
  return Waveform{out.estimate.value().to_vector(), mixture.sample_rate};
}

std::vector<ad::ParameterPtr> SeparationModel::parameters() const {
  std::vector<ad::ParameterPtr> out{analysis_};
  if (synthesis_ != analysis_) out.push_back(synthesis_);
  if (smoothing_) out.push_back(smoothing_);
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<ad::ParameterPtr> SeparationModel::trainable_parameters() const {
  std::vector<ad::ParameterPtr> out;
  for (auto& p : parameters()) {
    if (p->trainable()) out.push_back(p);
  }
  return out;
}

std::size_t SeparationModel::dense_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight->value().size() + l.bias->value().size();
  return n;
}

SeparationModel SeparationModel::clone() const {
  SeparationModel copy(spec_);
  const auto src = parameters();
  const auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value() = src[i]->value();
  return copy;
}

std::string spec_to_text(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "variant=" << to_string(spec.variant) << '\n'
     << "window_len=" << spec.window_len << '\n'
     << "stride=" << spec.stride << '\n'
     << "smoothing_len=" << spec.smoothing_len << '\n'
     << "hidden=";
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    os << (i ? "," : "") << spec.hidden[i];
  }
  os << '\n'
     << "seed=" << spec.seed << '\n'
     << "fourier_init=" << (spec.fourier_init ? 1 : 0) << '\n'
     << "sample_rate=" << fmt_double(spec.sample_rate) << '\n';
  return os.str();
}

ArchitectureSpec spec_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("spec is missing '") + key + "'");
    return it->second;
  };
  ArchitectureSpec spec;
  try {
    spec.variant = parse_variant(need("variant"));
    spec.window_len = std::stoul(need("window_len"));
    spec.stride = std::stoul(need("stride"));
    spec.smoothing_len = std::stoul(need("smoothing_len"));
    spec.hidden.clear();
    std::istringstream hs(need("hidden"));
    std::string tok;
    while (std::getline(hs, tok, ',')) spec.hidden.push_back(std::stoul(tok));
    spec.seed = std::stoull(need("seed"));
    spec.fourier_init = need("fourier_init") == "1";
    spec.sample_rate = std::stod(need("sample_rate"));
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("malformed spec value: ") + e.what());
  }
  spec.validate();
  return spec;
}

void save_checkpoint(const std::string& path, const SeparationModel& model) {
  io::NamedTensorFile file;
  file.header = spec_to_text(model.spec());
  for (const auto& p : model.parameters()) file.tensors.emplace_back(p->name(), p->value());
  io::write_named_tensors(path, file);
}

SeparationModel load_checkpoint(const std::string& path) {
  auto file = io::read_named_tensors(path);
  SeparationModel model(spec_from_text(file.header));
  for (const auto& p : model.parameters()) {
    const Tensor& t = file.find(p->name());
    if (!t.same_shape(p->value())) {
      throw IoError("checkpoint tensor '" + p->name() + "' has shape " +
                    shape_string(t.shape()) + ", expected " +
                    shape_string(p->value().shape()));
    }
    p->value() = t;
  }
  return model;
}

}  // namespace aetsep::model
