#include "aetsep/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "aetsep/error.hpp"

namespace aetsep::ad {

namespace {

using StridedFrames =
    Eigen::Map<const RowMatrix, Eigen::Unaligned, Eigen::OuterStride<>>;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

// Rows x cols view of overlapping frames: row n starts at data + n * hop.
StridedFrames frames_view(const double* data, std::size_t rows,
                          std::size_t cols, std::size_t hop) {
  return StridedFrames(data, idx(rows), idx(cols),
                       Eigen::OuterStride<>(idx(hop)));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " +
                     shape_string(a.shape()));
  }
}

std::size_t signal_length(const Var& s, const char* op) {
  const auto& shp = s.shape();
  if (shp.size() == 1) return shp[0];
  if (shp.size() == 2 && shp[0] == 1) return shp[1];
  throw ShapeError(std::string(op) + ": expected a [L] or [1 x L] signal, got " +
                   shape_string(shp));
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

template <typename Fwd, typename Deriv>
Var unary(const char* name, const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_op(name, std::move(out), {a}, [deriv](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor::zeros_like(value);
  return grad;
}

Tensor Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensor::zeros_like(node_->value);
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var variable(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "variable";
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_op(std::string op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + op + "'");
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = std::move(op);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.shared());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Var(std::move(n));
}

Parameter::Parameter(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)),
      trainable_(trainable),
      var_(trainable ? variable(std::move(value)) : constant(std::move(value))) {
  var_.node()->op = "parameter:" + name_;
}

void Parameter::zero_grad() {
  if (var_.node()->has_grad()) var_.node()->grad.fill(0.0);
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got " +
                     shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
  root.node()->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

// ---- convolutions --------------------------------------------------------

Var conv1d(const Var& signal, const Var& filters, std::size_t stride) {
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  require_rank2(filters, "conv1d");
  const std::size_t len = signal_length(signal, "conv1d");
  const std::size_t k = filters.value().dim(0);
  const std::size_t n = filters.value().dim(1);
  if (len < n) {
    throw InputTooShortError("conv1d: signal of " + std::to_string(len) +
                             " samples is shorter than filter length " +
                             std::to_string(n));
  }
  const std::size_t frames = (len - n) / stride + 1;

  Tensor out({frames, k});
  out.matrix().noalias() =
      frames_view(signal.value().data(), frames, n, stride) *
      filters.value().matrix().transpose();

  return make_op("conv1d", std::move(out), {signal, filters},
                 [stride, frames, n](Node& self) {
                   Node& sig = parent(self, 0);
                   Node& fil = parent(self, 1);
                   const auto g = self.grad.matrix();
                   if (fil.requires_grad) {
                     fil.ensure_grad().matrix().noalias() +=
                         g.transpose() *
                         frames_view(sig.value.data(), frames, n, stride);
                   }
                   if (sig.requires_grad) {
                     RowMatrix dframes = g * fil.value.matrix();
                     double* dx = sig.ensure_grad().data();
                     for (std::size_t r = 0; r < frames; ++r) {
                       const double* row = dframes.data() + r * n;
                       double* dst = dx + r * stride;
                       for (std::size_t t = 0; t < n; ++t) dst[t] += row[t];
                     }
                   }
                 });
}

Var transposed_conv1d(const Var& grid, const Var& filters, std::size_t stride) {
  if (stride == 0) throw ConfigError("transposed_conv1d: stride must be positive");
  require_rank2(grid, "transposed_conv1d");
  require_rank2(filters, "transposed_conv1d");
  const std::size_t frames = grid.value().dim(0);
  const std::size_t k = grid.value().dim(1);
  if (frames == 0) throw ShapeError("transposed_conv1d: empty grid");
  if (filters.value().dim(0) != k) {
    throw ConfigError("transposed_conv1d: grid has " + std::to_string(k) +
                      " channels but filterbank has " +
                      std::to_string(filters.value().dim(0)) + " filters");
  }
  const std::size_t n = filters.value().dim(1);
  const std::size_t len = (frames - 1) * stride + n;

  RowMatrix fr = grid.value().matrix() * filters.value().matrix();
  Tensor out({len});
  double* y = out.data();
  for (std::size_t r = 0; r < frames; ++r) {
    const double* row = fr.data() + r * n;
    double* dst = y + r * stride;
    for (std::size_t t = 0; t < n; ++t) dst[t] += row[t];
  }

  return make_op("transposed_conv1d", std::move(out), {grid, filters},
                 [stride, frames, n](Node& self) {
                   Node& grd = parent(self, 0);
                   Node& fil = parent(self, 1);
                   const auto dframes =
                       frames_view(self.grad.data(), frames, n, stride);
                   if (grd.requires_grad) {
                     grd.ensure_grad().matrix().noalias() +=
                         dframes * fil.value.matrix().transpose();
                   }
                   if (fil.requires_grad) {
                     fil.ensure_grad().matrix().noalias() +=
                         grd.value.matrix().transpose() * dframes;
                   }
                 });
}

Var causal_depthwise_conv(const Var& grid, const Var& filters) {
  require_rank2(grid, "causal_depthwise_conv");
  require_rank2(filters, "causal_depthwise_conv");
  const std::size_t frames = grid.value().dim(0);
  const std::size_t k = grid.value().dim(1);
  const std::size_t taps = filters.value().dim(1);
  if (filters.value().dim(0) != k) {
    throw ConfigError("causal_depthwise_conv: grid has " + std::to_string(k) +
                      " channels but smoothing bank has " +
                      std::to_string(filters.value().dim(0)) + " filters");
  }
  if (taps == 0) throw ConfigError("causal_depthwise_conv: empty filters");

  const Tensor& g = grid.value();
  const Tensor& f = filters.value();
  Tensor out({frames, k});
  for (std::size_t n = 0; n < frames; ++n) {
    double* o = out.data() + n * k;
    for (std::size_t j = 0; j < taps && j <= n; ++j) {
      const double* src = g.data() + (n - j) * k;
      for (std::size_t c = 0; c < k; ++c) o[c] += f[c * taps + j] * src[c];
    }
  }

  return make_op(
      "causal_depthwise_conv", std::move(out), {grid, filters},
      [frames, k, taps](Node& self) {
        Node& grd = parent(self, 0);
        Node& fil = parent(self, 1);
        const Tensor& dout = self.grad;
        if (grd.requires_grad) {
          Tensor& dg = grd.ensure_grad();
          for (std::size_t n = 0; n < frames; ++n) {
            const double* go = dout.data() + n * k;
            for (std::size_t j = 0; j < taps && j <= n; ++j) {
              double* dst = dg.data() + (n - j) * k;
              for (std::size_t c = 0; c < k; ++c) {
                dst[c] += fil.value[c * taps + j] * go[c];
              }
            }
          }
        }
        if (fil.requires_grad) {
          Tensor& df = fil.ensure_grad();
          for (std::size_t n = 0; n < frames; ++n) {
            const double* go = dout.data() + n * k;
            for (std::size_t j = 0; j < taps && j <= n; ++j) {
              const double* src = grd.value.data() + (n - j) * k;
              for (std::size_t c = 0; c < k; ++c) {
                df[c * taps + j] += src[c] * go[c];
              }
            }
          }
        }
      });
}

// ---- dense ---------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.value().dim(1) != b.value().dim(0)) {
    throw ConfigError("matmul: inner dimensions " + shape_string(a.shape()) +
                      " and " + shape_string(b.shape()) + " disagree");
  }
  Tensor out({a.value().dim(0), b.value().dim(1)});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return make_op("matmul", std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto g = self.grad.matrix();
    if (pa.requires_grad) {
      pa.ensure_grad().matrix().noalias() += g * pb.value.matrix().transpose();
    }
    if (pb.requires_grad) {
      pb.ensure_grad().matrix().noalias() += pa.value.matrix().transpose() * g;
    }
  });
}

Var dense(const Var& input, const Var& weight, const Var& bias) {
  require_rank2(input, "dense");
  require_rank2(weight, "dense");
  const std::size_t din = weight.value().dim(0);
  const std::size_t dout = weight.value().dim(1);
  if (input.value().dim(1) != din) {
    throw ConfigError("dense: input width " +
                      std::to_string(input.value().dim(1)) +
                      " does not match weight rows " + std::to_string(din));
  }
  if (bias.value().size() != dout) {
    throw ConfigError("dense: bias length " +
                      std::to_string(bias.value().size()) +
                      " does not match output width " + std::to_string(dout));
  }
  Tensor out({input.value().dim(0), dout});
  auto om = out.matrix();
  om.noalias() = input.value().matrix() * weight.value().matrix();
  const auto b = bias.value().matrix();  // 1 x dout
  om.rowwise() += b.row(0);

  return make_op("dense", std::move(out), {input, weight, bias}, [](Node& self) {
    Node& in = parent(self, 0);
    Node& w = parent(self, 1);
    Node& b = parent(self, 2);
    const auto g = self.grad.matrix();
    if (in.requires_grad) {
      in.ensure_grad().matrix().noalias() += g * w.value.matrix().transpose();
    }
    if (w.requires_grad) {
      w.ensure_grad().matrix().noalias() += in.value.matrix().transpose() * g;
    }
    if (b.requires_grad) {
      b.ensure_grad().matrix().row(0) += g.colwise().sum();
    }
  });
}

// ---- elementwise ---------------------------------------------------------

Var abs(const Var& a) {
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) {
        return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      });
}

// softplus and sigmoid run on Eigen arrays so exp/log1p vectorize.
Var softplus(const Var& a) {
  Tensor out(a.shape());
  const auto x = a.value().flat();
  // log1p(e) as log(u) * e / (u - 1), u = 1 + e, which stays accurate for
  // tiny e and vectorizes where Eigen's log1p does not.
  const Eigen::ArrayXd e = (-x.abs()).exp();
  const Eigen::ArrayXd u = 1.0 + e;
  out.flat() = x.max(0.0) + (u == 1.0).select(e, u.log() * e / (u - 1.0));
  return make_op("softplus", std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    // exp(-x) may overflow to inf for very negative x; 1 / inf is 0.
    p.ensure_grad().flat() +=
        self.grad.flat() * (1.0 + (-p.value.flat()).exp()).inverse();
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a.shape());
  out.flat() = (1.0 + (-a.value().flat()).exp()).inverse();
  return make_op("sigmoid", std::move(out), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    const auto y = self.value.flat();
    p.ensure_grad().flat() += self.grad.flat() * y * (1.0 - y);
  });
}

Var square(const Var& a) {
  return unary(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var clamp_min(const Var& a, double floor) {
  return unary(
      "clamp_min", a, [floor](double x) { return std::max(x, floor); },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] + b.value()[i];
  }
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& par = parent(self, p);
      if (!par.requires_grad) continue;
      par.ensure_grad().matrix() += self.grad.matrix();
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] - b.value()[i];
  }
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.ensure_grad().matrix() += self.grad.matrix();
    if (pb.requires_grad) pb.ensure_grad().matrix() -= self.grad.matrix();
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] * b.value()[i];
  }
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) { return div_guarded(a, b, 0.0); }

Var div_guarded(const Var& a, const Var& b, double eps) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.value()[i] / (b.value()[i] + eps);
  }
  return make_op(eps == 0.0 ? "div" : "div_guarded", std::move(out), {a, b},
                 [eps](Node& self) {
                   Node& pa = parent(self, 0);
                   Node& pb = parent(self, 1);
                   if (pa.requires_grad) {
                     Tensor& g = pa.ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] += self.grad[i] / (pb.value[i] + eps);
                     }
                   }
                   if (pb.requires_grad) {
                     Tensor& g = pb.ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       g[i] -= self.grad[i] * self.value[i] / (pb.value[i] + eps);
                     }
                   }
                 });
}

// ---- reductions ----------------------------------------------------------

Var reduce_sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op("reduce_sum", Tensor::scalar(s), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(reduce_sum(a), 1.0 / n);
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    s += a.value()[i] * b.value()[i];
  }
  return make_op("dot", Tensor::scalar(s), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double go = self.grad[0];
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pa.value[i];
    }
  });
}

// ---- layout --------------------------------------------------------------

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  const std::size_t rows = a.value().dim(0);
  const std::size_t cols = a.value().dim(1);
  if (begin > end || end > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") outside " +
                     std::to_string(cols) + " columns");
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  out.matrix() = a.value().matrix().middleCols(idx(begin), idx(w));
  return make_op("slice_cols", std::move(out), {a}, [begin, w](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    p.ensure_grad().matrix().middleCols(idx(begin), idx(w)) +=
        self.grad.matrix();
  });
}

Var duplicate_cols(const Var& a) {
  require_rank2(a, "duplicate_cols");
  const std::size_t rows = a.value().dim(0);
  const std::size_t cols = a.value().dim(1);
  Tensor out({rows, 2 * cols});
  out.matrix().leftCols(idx(cols)) = a.value().matrix();
  out.matrix().rightCols(idx(cols)) = a.value().matrix();
  return make_op("duplicate_cols", std::move(out), {a}, [cols](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    const auto g = self.grad.matrix();
    p.ensure_grad().matrix() += g.leftCols(idx(cols)) + g.rightCols(idx(cols));
  });
}

// ---- gradient check ------------------------------------------------------

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(const std::function<Var()>& f,
                           std::span<const ParameterPtr> params,
                           const GradCheckOptions& options) {
  for (const auto& p : params) p->zero_grad();
  {
    Var root = f();
    backward(root);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(p->grad().empty() ? Tensor::zeros_like(p->value())
                                         : p->grad());
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    GradCheckEntry entry;
    entry.name = p.name();
    const std::size_t n = p.value().size();
    const std::size_t step =
        options.max_probes_per_parameter == 0 || n <= options.max_probes_per_parameter
            ? 1
            : n / options.max_probes_per_parameter;
    for (std::size_t e = 0; e < n; e += step) {
      const double saved = p.value()[e];
      if (options.exclude && options.exclude(pi, e, saved)) {
        ++entry.excluded;
        continue;
      }
      p.value()[e] = saved + options.delta;
      const double fp = f().value()[0];
      p.value()[e] = saved - options.delta;
      const double fm = f().value()[0];
      p.value()[e] = saved;
      const double numeric = (fp - fm) / (2.0 * options.delta);
      const double a = analytic[pi][e];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      entry.max_rel_error = std::max(entry.max_rel_error,
                                     std::abs(a - numeric) / denom);
      ++entry.probed;
    }
    entry.passed = entry.max_rel_error < options.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace aetsep::ad
