#include <string>
#include <vector>

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "aetsep/autodiff.hpp"
#include "aetsep/data.hpp"
#include "aetsep/error.hpp"
#include "aetsep/metrics.hpp"
#include "aetsep/models.hpp"
#include "aetsep/objectives.hpp"
#include "aetsep/trainer.hpp"
#include "aetsep/transforms.hpp"

namespace py = pybind11;
using namespace aetsep;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor array_to_grid(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D grid");
  return Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                std::vector<double>(a.data(), a.data() + a.size()));
}

// Value and gradient with respect to x of a composite loss.
py::tuple loss_and_grad(const std::string& loss, const Array& x, const Array& y,
                        const Array& z, double sample_rate) {
  const auto parsed = obj::parse_loss(loss);
  auto px = std::make_shared<ad::Parameter>("x", Tensor::vector(to_vector(x)), true);
  obj::LossContext ctx;
  ctx.sample_rate = sample_rate;
  const auto l = obj::composite_eval(parsed, px->var(),
                                     ad::constant(Tensor::vector(to_vector(y))),
                                     ad::constant(Tensor::vector(to_vector(z))), ctx);
  ad::backward(l);
  return py::make_tuple(l.value()[0], to_array(px->grad().to_vector()));
}

py::dict scores_dict(const metrics::MetricScores& s) {
  py::dict d;
  d["id"] = s.id;
  d["sdr_db"] = s.sdr_db;
  d["sir_db"] = s.sir_db;
  d["sar_db"] = s.sar_db;
  d["stoi"] = s.stoi;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adaptive front-end source separation";

  static py::exception<Error> base(m, "AetsepError", PyExc_RuntimeError);
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<ShapeError> shape_error(m, "ShapeError", base.ptr());
  static py::exception<InputTooShortError> short_error(m, "InputTooShortError", base.ptr());
  static py::exception<DegenerateCorrelationError> degenerate_error(
      m, "DegenerateCorrelationError", base.ptr());
  static py::exception<NumericError> numeric_error(m, "NumericError", base.ptr());
  static py::exception<IoError> io_error(m, "IoError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(config_error.ptr(), e.what());
    } catch (const ShapeError& e) {
      PyErr_SetString(shape_error.ptr(), e.what());
    } catch (const InputTooShortError& e) {
      PyErr_SetString(short_error.ptr(), e.what());
    } catch (const DegenerateCorrelationError& e) {
      PyErr_SetString(degenerate_error.ptr(), e.what());
    } catch (const NumericError& e) {
      PyErr_SetString(numeric_error.ptr(), e.what());
    } catch (const IoError& e) {
      PyErr_SetString(io_error.ptr(), e.what());
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    }
  });

  m.def("variants", [] {
    std::vector<std::string> out;
    for (auto v : model::kAllVariants) out.emplace_back(model::to_string(v));
    return out;
  });

  // Transforms with the fixed Fourier front end.
  m.def(
      "analyze",
      [](const Array& x, std::size_t window_len, std::size_t stride) {
        const auto fb =
            dsp::build_fourier_filterbank(dsp::fourier_bins(window_len), window_len, stride);
        return tensor_to_array(dsp::analyze(Waveform{to_vector(x), kDefaultSampleRate}, fb));
      },
      py::arg("x"), py::arg("window_len"), py::arg("stride"));
  m.def(
      "synthesize",
      [](const Array& grid, std::size_t window_len, std::size_t stride) {
        const auto fb = dsp::build_fourier_synthesis_bank(dsp::fourier_bins(window_len),
                                                          window_len, stride);
        return to_array(dsp::synthesize(array_to_grid(grid), fb, kDefaultSampleRate).samples);
      },
      py::arg("grid"), py::arg("window_len"), py::arg("stride"));

  // Metrics.
  m.def(
      "bss_eval",
      [](const Array& x, const Array& y, const Array& z) {
        const auto s = metrics::bss_eval(to_vector(x), to_vector(y), to_vector(z));
        py::dict d;
        d["sdr_db"] = s.sdr_db;
        d["sir_db"] = s.sir_db;
        d["sar_db"] = s.sar_db;
        return d;
      },
      py::arg("x"), py::arg("y"), py::arg("z"));
  m.def(
      "stoi",
      [](const Array& x, const Array& y, double sample_rate) {
        return metrics::stoi_reference(to_vector(x), to_vector(y), sample_rate);
      },
      py::arg("x"), py::arg("y"), py::arg("sample_rate") = kDefaultSampleRate);

  // Objectives.
  m.def("loss_and_grad", &loss_and_grad, py::arg("loss"), py::arg("x"), py::arg("y"),
        py::arg("z"), py::arg("sample_rate") = kDefaultSampleRate);

  // Models.
  py::class_<model::SeparationModel>(m, "SeparationModel")
      .def(py::init([](const std::string& spec_text) {
             return model::SeparationModel(model::spec_from_text(spec_text));
           }),
           py::arg("spec_text"))
      .def_static("load", &model::load_checkpoint, py::arg("path"))
      .def("save", [](const model::SeparationModel& s,
                      const std::string& path) { model::save_checkpoint(path, s); })
      .def_property_readonly("spec_text",
                             [](const model::SeparationModel& s) {
                               return model::spec_to_text(s.spec());
                             })
      .def_property_readonly("variant",
                             [](const model::SeparationModel& s) {
                               return std::string(model::to_string(s.spec().variant));
                             })
      .def("output_length", &model::SeparationModel::output_length)
      .def(
          "separate",
          [](const model::SeparationModel& s, const Array& mixture, bool unit_mask) {
            const Waveform w{to_vector(mixture), s.spec().sample_rate};
            const auto ov = unit_mask ? model::NetOverride::kUnit : model::NetOverride::kNone;
            std::vector<double> out;
            {
              py::gil_scoped_release release;
              out = s.separate(w, ov).samples;
            }
            return to_array(out);
          },
          py::arg("mixture"), py::arg("unit_mask") = false);
  m.def(
      "default_spec_text",
      [](const std::string& variant) {
        model::ArchitectureSpec s;
        s.variant = model::parse_variant(variant);
        return model::spec_to_text(s);
      },
      py::arg("variant"));

  // Data.
  m.def(
      "synth_toy_corpus",
      [](const std::string& out_dir, std::size_t speakers_per_class, double minutes,
         std::uint64_t seed) {
        data::ToyCorpusOptions o;
        o.speakers_per_class = speakers_per_class;
        o.minutes = minutes;
        o.seed = seed;
        return data::synth_toy_corpus(out_dir, o).speakers().size();
      },
      py::arg("out_dir"), py::arg("speakers_per_class"), py::arg("minutes"), py::arg("seed"));

  // Training and evaluation. Reports cross the boundary as JSON text.
  m.def("config_keys", &train::config_keys);
  m.def(
      "default_config_text", [] { return train::config_to_text(train::TrainConfig{}); });
  m.def(
      "train_json",
      [](const std::string& config_text) {
        const auto cfg = train::config_from_text(config_text);
        py::gil_scoped_release release;
        return train::train(cfg).report.to_json().dump();
      },
      py::arg("config_text"));
  m.def(
      "evaluate_rows",
      [](const std::string& checkpoint, const std::string& manifest, std::size_t threads) {
        metrics::SeparationReport r;
        {
          py::gil_scoped_release release;
          r = train::evaluate(checkpoint, manifest, threads);
        }
        py::list rows;
        for (const auto& s : r.rows) rows.append(scores_dict(s));
        return rows;
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("threads") = 1);
}
