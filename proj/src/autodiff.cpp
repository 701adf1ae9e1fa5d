#include "animer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "animer/kernels.hpp"

namespace animer::ad {

const std::vector<std::size_t>& Value::shape() const { return graph->shape_of(id); }

// ---- Graph -----------------------------------------------------------------

Value Graph::input(const std::string& name, std::vector<std::size_t> shape) {
  if (input_index_.count(name) || param_index_.count(name))
    throw std::invalid_argument("duplicate leaf name: " + name);
  Node n;
  n.kind = Kind::Input;
  n.name = name;
  n.shape = std::move(shape);
  nodes_.push_back(std::move(n));
  input_index_[name] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Value Graph::param(const std::string& name, Tensor initial, bool trainable) {
  if (input_index_.count(name) || param_index_.count(name))
    throw std::invalid_argument("duplicate leaf name: " + name);
  Node n;
  n.kind = Kind::Param;
  n.name = name;
  n.shape = initial.shape();
  n.leaf_index = params_.size();
  params_.push_back({name, std::move(initial), trainable});
  param_index_[name] = params_.size() - 1;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Value Graph::constant(Tensor value) {
  Node n;
  n.kind = Kind::Const;
  n.shape = value.shape();
  n.leaf_index = params_.size();
  params_.push_back({"", std::move(value), false});
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Value Graph::op(const std::string& op_name, std::vector<Value> inputs,
                std::vector<std::size_t> out_shape, Forward fwd, Backward bwd) {
  Node n;
  n.kind = Kind::Op;
  n.name = op_name;
  for (const Value& v : inputs) {
    if (v.graph != this) throw std::invalid_argument("op input from a different graph");
    n.inputs.push_back(v.id);
  }
  n.shape = std::move(out_shape);
  n.fwd = std::move(fwd);
  n.bwd = std::move(bwd);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Graph::mark_output(const std::string& name, Value v) {
  if (v.graph != this) throw std::invalid_argument("output from a different graph");
  outputs_[name] = v.id;
}

void Graph::set_param(const std::string& name, Tensor value) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw std::invalid_argument("unknown param: " + name);
  if (value.shape() != params_[it->second].value.shape())
    throw std::invalid_argument("param shape mismatch: " + name);
  params_[it->second].value = std::move(value);
}

const Tensor& Graph::param_value(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw std::invalid_argument("unknown param: " + name);
  return params_[it->second].value;
}

bool Graph::has_param(const std::string& name) const { return param_index_.count(name) > 0; }

std::vector<std::string> Graph::param_names(bool trainable_only) const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (!p.name.empty() && (!trainable_only || p.trainable)) out.push_back(p.name);
  return out;
}

void Graph::forward_values(const std::map<std::string, Tensor>& inputs,
                           std::vector<Tensor>& values) const {
  values.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.kind) {
      case Kind::Input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end()) throw std::invalid_argument("unbound input: " + n.name);
        if (it->second.shape() != n.shape)
          throw std::invalid_argument("input shape mismatch at node " + std::to_string(i) + ": " +
                                      n.name);
        values[i] = it->second;
        break;
      }
      case Kind::Param:
      case Kind::Const:
        values[i] = params_[n.leaf_index].value;
        break;
      case Kind::Op: {
        std::vector<const Tensor*> args;
        args.reserve(n.inputs.size());
        for (std::size_t j : n.inputs) args.push_back(&values[j]);
        values[i] = n.fwd(args);
        if (values[i].shape() != n.shape)
          throw std::logic_error("op " + n.name + " produced unexpected shape at node " +
                                 std::to_string(i));
        break;
      }
    }
  }
}

std::size_t Graph::output_id(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw std::invalid_argument("unknown output: " + name);
  return it->second;
}

std::map<std::string, Tensor> Graph::evaluate(const std::map<std::string, Tensor>& inputs) const {
  std::vector<Tensor> values;
  forward_values(inputs, values);
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out[name] = values[id];
  return out;
}

Tensor Graph::evaluate_one(const std::string& output,
                           const std::map<std::string, Tensor>& inputs) const {
  std::vector<Tensor> values;
  forward_values(inputs, values);
  return values[output_id(output)];
}

std::map<std::string, Tensor> Graph::gradient(const std::string& scalar_output,
                                              const std::map<std::string, Tensor>& inputs) const {
  const std::size_t out_id = output_id(scalar_output);
  if (nodes_[out_id].shape != std::vector<std::size_t>{1})
    throw std::invalid_argument("gradient: output '" + scalar_output + "' is not scalar");

  std::vector<Tensor> values;
  forward_values(inputs, values);

  std::vector<Tensor> adj(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);
  adj[out_id] = Tensor::scalar(1.0);
  live[out_id] = true;

  for (std::size_t ii = out_id + 1; ii-- > 0;) {
    if (!live[ii]) continue;
    const Node& n = nodes_[ii];
    if (n.kind != Kind::Op) continue;
    std::vector<const Tensor*> args;
    args.reserve(n.inputs.size());
    for (std::size_t j : n.inputs) args.push_back(&values[j]);
    std::vector<Tensor> grads = n.bwd(args, values[ii], adj[ii]);
    if (grads.size() != n.inputs.size())
      throw std::logic_error("op " + n.name + " backward arity mismatch");
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (grads[k].size() == 0) continue;  // no gradient for this slot
      const std::size_t j = n.inputs[k];
      if (!live[j]) {
        adj[j] = std::move(grads[k]);
        live[j] = true;
      } else {
        kernels::add_serial(adj[j].data(), grads[k].data(), adj[j].data(), adj[j].size());
      }
    }
  }

  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != Kind::Param) continue;
    const ParamSlot& slot = params_[n.leaf_index];
    if (!slot.trainable) continue;
    if (live[i])
      out[slot.name] = adj[i];
    else
      out[slot.name] = Tensor::zeros(n.shape);
  }
  return out;
}

GradCheckReport Graph::grad_check(const std::string& scalar_output,
                                  const std::map<std::string, Tensor>& inputs, double step,
                                  std::size_t probes_per_leaf) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckReport report;
  auto analytic = gradient(scalar_output, inputs);
  for (const auto& [name, grad] : analytic) {
    LeafCheck check;
    check.name = name;
    const std::size_t n = grad.size();
    std::size_t probes = (probes_per_leaf == 0 || probes_per_leaf >= n) ? n : probes_per_leaf;
    Tensor saved = param_value(name);
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t idx = (probes == n) ? p : (p * n) / probes;
      Tensor pert = saved;
      pert[idx] = saved[idx] + step;
      set_param(name, pert);
      const double fp = evaluate_one(scalar_output, inputs)[0];
      pert[idx] = saved[idx] - step;
      set_param(name, pert);
      const double fm = evaluate_one(scalar_output, inputs)[0];
      set_param(name, saved);
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = grad[idx];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        check.nonfinite = true;
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      check.max_rel_err = std::max(check.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, check.max_rel_err);
    report.all_finite = report.all_finite && !check.nonfinite;
    report.leaves.push_back(std::move(check));
  }
  return report;
}

// ---- broadcasting helpers --------------------------------------------------

namespace {

struct Bcast {
  std::size_t rows, cols;      // output
  std::size_t ar, ac, br, bc;  // operand dims (1 where broadcast)
};

std::pair<std::size_t, std::size_t> as_2d(const std::vector<std::size_t>& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  // higher ranks are treated as (1, total)
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return {1, n};
}

Bcast broadcast_dims(const Value& a, const Value& b) {
  auto [ar, ac] = as_2d(a.shape());
  auto [br, bc] = as_2d(b.shape());
  // scalars broadcast everywhere
  if (ar * ac == 1) { ar = 1; ac = 1; }
  if (br * bc == 1) { br = 1; bc = 1; }
  const std::size_t rows = std::max(ar, br);
  const std::size_t cols = std::max(ac, bc);
  auto ok = [&](std::size_t d, std::size_t full) { return d == full || d == 1; };
  if (!ok(ar, rows) || !ok(ac, cols) || !ok(br, rows) || !ok(bc, cols))
    throw std::invalid_argument("elementwise shape mismatch: " +
                                Tensor::zeros(a.shape()).shape_str() + " vs " +
                                Tensor::zeros(b.shape()).shape_str());
  return {rows, cols, ar, ac, br, bc};
}

inline double pick(const Tensor& t, std::size_t i, std::size_t j, std::size_t r, std::size_t c) {
  return t[(r == 1 ? 0 : i) * c + (c == 1 ? 0 : j)];
}

/// Sum grad over the axes an operand was broadcast along.
Tensor reduce_to(const Tensor& grad, std::size_t rows, std::size_t cols,
                 const std::vector<std::size_t>& target_shape, std::size_t tr, std::size_t tc) {
  Tensor out = Tensor::zeros(target_shape);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[(tr == 1 ? 0 : i) * tc + (tc == 1 ? 0 : j)] += grad[i * cols + j];
  return out;
}

Value binary_op(const std::string& name, Value a, Value b,
                std::function<double(double, double)> f,
                std::function<double(double, double)> dfa,
                std::function<double(double, double)> dfb) {
  Bcast bc = broadcast_dims(a, b);
  std::vector<std::size_t> a_shape = a.shape(), b_shape = b.shape();
  std::vector<std::size_t> out_shape;
  if (a_shape == b_shape)
    out_shape = a_shape;
  else if (Tensor::zeros(b_shape).size() == 1)
    out_shape = a_shape;
  else if (Tensor::zeros(a_shape).size() == 1)
    out_shape = b_shape;
  else
    out_shape = {bc.rows, bc.cols};
  return a.graph->op(
      name, {a, b}, out_shape,
      [bc, f, out_shape](const std::vector<const Tensor*>& in) {
        Tensor out(out_shape);
        std::vector<double>& d = out.values();
        for (std::size_t i = 0; i < bc.rows; ++i)
          for (std::size_t j = 0; j < bc.cols; ++j)
            d[i * bc.cols + j] = f(pick(*in[0], i, j, bc.ar, bc.ac), pick(*in[1], i, j, bc.br, bc.bc));
        return out;
      },
      [bc, dfa, dfb, a_shape, b_shape](const std::vector<const Tensor*>& in, const Tensor&,
                                       const Tensor& g) {
        Tensor ga_full({bc.rows, bc.cols}), gb_full({bc.rows, bc.cols});
        for (std::size_t i = 0; i < bc.rows; ++i)
          for (std::size_t j = 0; j < bc.cols; ++j) {
            const double x = pick(*in[0], i, j, bc.ar, bc.ac);
            const double y = pick(*in[1], i, j, bc.br, bc.bc);
            const double go = g[i * bc.cols + j];
            ga_full[i * bc.cols + j] = go * dfa(x, y);
            gb_full[i * bc.cols + j] = go * dfb(x, y);
          }
        return std::vector<Tensor>{reduce_to(ga_full, bc.rows, bc.cols, a_shape, bc.ar, bc.ac),
                                   reduce_to(gb_full, bc.rows, bc.cols, b_shape, bc.br, bc.bc)};
      });
}

Value unary_op(const std::string& name, Value a, std::function<double(double)> f,
               std::function<double(double)> df) {
  return a.graph->op(
      name, {a}, a.shape(),
      [f](const std::vector<const Tensor*>& in) {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f((*in[0])[i]);
        return out;
      },
      [df](const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g) {
        Tensor gx(in[0]->shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * df((*in[0])[i]);
        return std::vector<Tensor>{std::move(gx)};
      });
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Value add(Value a, Value b) {
  return binary_op("add", a, b, [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Value sub(Value a, Value b) {
  return binary_op("sub", a, b, [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Value mul(Value a, Value b) {
  return binary_op("mul", a, b, [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Value divide(Value a, Value b) {
  return binary_op("div", a, b, [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

Value scale(Value a, double c) {
  return unary_op("scale", a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Value add_const(Value a, double c) {
  return unary_op("add_const", a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Value neg(Value a) { return scale(a, -1.0); }

Value exp(Value a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double x) { return std::exp(x); });
}

Value log(Value a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x) { return 1.0 / x; });
}

Value sqrt(Value a) {
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double x) { return 0.5 / std::sqrt(x); });
}

Value abs(Value a) {
  return unary_op("abs", a, [](double x) { return std::abs(x); },
                  [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Value square(Value a) {
  return unary_op("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Value sigmoid(Value a) {
  return unary_op("sigmoid", a,
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double x) {
                    const double s = 1.0 / (1.0 + std::exp(-x));
                    return s * (1.0 - s);
                  });
}

Value gelu(Value a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op("gelu", a,
                  [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                  [=](double x) {
                    return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                           x * inv_sqrt2pi * std::exp(-0.5 * x * x);
                  });
}

// ---- reductions ------------------------------------------------------------

Value sum(Value a) {
  std::vector<std::size_t> in_shape = a.shape();
  return a.graph->op(
      "sum", {a}, {1},
      [](const std::vector<const Tensor*>& in) {
        double s = 0.0;
        for (double v : in[0]->values()) s += v;
        return Tensor::scalar(s);
      },
      [in_shape](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(in_shape, g[0])};
      });
}

Value mean(Value a) {
  std::size_t n = 1;
  for (auto d : a.shape()) n *= d;
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Value row_sum(Value a) {
  if (a.shape().size() != 2) throw std::invalid_argument("row_sum expects rank-2 input");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  return a.graph->op(
      "row_sum", {a}, {r, 1},
      [r, c](const std::vector<const Tensor*>& in) {
        Tensor out({r, 1});
        for (std::size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += (*in[0])[i * c + j];
          out[i] = s;
        }
        return out;
      },
      [r, c](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[i];
        return std::vector<Tensor>{std::move(gx)};
      });
}

Value col_sum(Value a) {
  if (a.shape().size() != 2) throw std::invalid_argument("col_sum expects rank-2 input");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  return a.graph->op(
      "col_sum", {a}, {1, c},
      [r, c](const std::vector<const Tensor*>& in) {
        Tensor out({1, c});
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[j] += (*in[0])[i * c + j];
        return out;
      },
      [r, c](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[j];
        return std::vector<Tensor>{std::move(gx)};
      });
}

// ---- linear ----------------------------------------------------------------

Value matmul(Value a, Value b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul expects rank-2 inputs");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    throw std::invalid_argument("matmul inner-dimension mismatch: " +
                                std::to_string(k) + " vs " + std::to_string(b.shape()[0]));
  const std::size_t n = b.shape()[1];
  return a.graph->op(
      "matmul", {a, b}, {m, n},
      [m, k, n](const std::vector<const Tensor*>& in) {
        Tensor out({m, n});
        kernels::matmul(in[0]->data(), in[1]->data(), out.data(), m, k, n);
        return out;
      },
      [m, k, n](const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g) {
        Tensor ga({m, k}), gb({k, n});
        kernels::matmul_bt(g.data(), in[1]->data(), ga.data(), m, n, k);   // g * B^T
        kernels::matmul_at(in[0]->data(), g.data(), gb.data(), k, m, n);   // A^T * g
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
      });
}

Value transpose(Value a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose expects rank-2 input");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  return a.graph->op(
      "transpose", {a}, {c, r},
      [r, c](const std::vector<const Tensor*>& in) {
        Tensor out({c, r});
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[j * r + i] = (*in[0])[i * c + j];
        return out;
      },
      [r, c](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] = g[j * r + i];
        return std::vector<Tensor>{std::move(gx)};
      });
}

Value reshape(Value a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::size_t m = 1;
  for (auto d : a.shape()) m *= d;
  if (n != m) throw std::invalid_argument("reshape size mismatch");
  std::vector<std::size_t> in_shape = a.shape();
  return a.graph->op(
      "reshape", {a}, shape,
      [shape](const std::vector<const Tensor*>& in) { return Tensor(shape, in[0]->values()); },
      [in_shape](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        return std::vector<Tensor>{Tensor(in_shape, g.values())};
      });
}

Value concat_cols(std::vector<Value> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t r = parts[0].shape()[0];
  std::size_t c = 0;
  std::vector<std::size_t> widths;
  for (const Value& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != r)
      throw std::invalid_argument("concat_cols: row mismatch");
    widths.push_back(p.shape()[1]);
    c += p.shape()[1];
  }
  return parts[0].graph->op(
      "concat_cols", parts, {r, c},
      [r, c, widths](const std::vector<const Tensor*>& in) {
        Tensor out({r, c});
        for (std::size_t i = 0; i < r; ++i) {
          std::size_t off = 0;
          for (std::size_t p = 0; p < in.size(); ++p) {
            const std::size_t w = widths[p];
            std::copy(in[p]->data() + i * w, in[p]->data() + (i + 1) * w,
                      out.data() + i * c + off);
            off += w;
          }
        }
        return out;
      },
      [r, c, widths](const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g) {
        std::vector<Tensor> grads;
        std::size_t off = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          const std::size_t w = widths[p];
          Tensor gp({r, w});
          for (std::size_t i = 0; i < r; ++i)
            std::copy(g.data() + i * c + off, g.data() + i * c + off + w, gp.data() + i * w);
          grads.push_back(std::move(gp));
          off += w;
        }
        return grads;
      });
}

Value concat_rows(std::vector<Value> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t c = parts[0].shape()[1];
  std::size_t r = 0;
  std::vector<std::size_t> heights;
  for (const Value& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != c)
      throw std::invalid_argument("concat_rows: column mismatch");
    heights.push_back(p.shape()[0]);
    r += p.shape()[0];
  }
  return parts[0].graph->op(
      "concat_rows", parts, {r, c},
      [c, heights](const std::vector<const Tensor*>& in) {
        std::size_t r = 0;
        for (auto h : heights) r += h;
        Tensor out({r, c});
        std::size_t off = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          std::copy(in[p]->data(), in[p]->data() + heights[p] * c, out.data() + off);
          off += heights[p] * c;
        }
        return out;
      },
      [c, heights](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        std::vector<Tensor> grads;
        std::size_t off = 0;
        for (auto h : heights) {
          Tensor gp({h, c});
          std::copy(g.data() + off, g.data() + off + h * c, gp.data());
          grads.push_back(std::move(gp));
          off += h * c;
        }
        return grads;
      });
}

Value slice_cols(Value a, std::size_t from, std::size_t count) {
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (from + count > c) throw std::invalid_argument("slice_cols out of range");
  return a.graph->op(
      "slice_cols", {a}, {r, count},
      [r, c, from, count](const std::vector<const Tensor*>& in) {
        Tensor out({r, count});
        for (std::size_t i = 0; i < r; ++i)
          std::copy(in[0]->data() + i * c + from, in[0]->data() + i * c + from + count,
                    out.data() + i * count);
        return out;
      },
      [r, c, from, count](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < r; ++i)
          std::copy(g.data() + i * count, g.data() + (i + 1) * count, gx.data() + i * c + from);
        return std::vector<Tensor>{std::move(gx)};
      });
}

Value slice_rows(Value a, std::size_t from, std::size_t count) {
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (from + count > r) throw std::invalid_argument("slice_rows out of range");
  return a.graph->op(
      "slice_rows", {a}, {count, c},
      [c, from, count](const std::vector<const Tensor*>& in) {
        Tensor out({count, c});
        std::copy(in[0]->data() + from * c, in[0]->data() + (from + count) * c, out.data());
        return out;
      },
      [r, c, from, count](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        Tensor gx({r, c});
        std::copy(g.data(), g.data() + count * c, gx.data() + from * c);
        return std::vector<Tensor>{std::move(gx)};
      });
}

Value gather_rows(Value a, std::vector<std::size_t> indices) {
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  for (auto i : indices)
    if (i >= r) throw std::invalid_argument("gather_rows index out of range");
  const std::size_t k = indices.size();
  return a.graph->op(
      "gather_rows", {a}, {k, c},
      [c, indices](const std::vector<const Tensor*>& in) {
        Tensor out({indices.size(), c});
        for (std::size_t i = 0; i < indices.size(); ++i)
          std::copy(in[0]->data() + indices[i] * c, in[0]->data() + (indices[i] + 1) * c,
                    out.data() + i * c);
        return out;
      },
      [r, c, indices](const std::vector<const Tensor*>&, const Tensor&, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < indices.size(); ++i)
          for (std::size_t j = 0; j < c; ++j) gx[indices[i] * c + j] += g[i * c + j];
        return std::vector<Tensor>{std::move(gx)};
      });
}

// ---- normalizations --------------------------------------------------------

Value softmax_rows(Value a) {
  if (a.shape().size() != 2) throw std::invalid_argument("softmax_rows expects rank-2 input");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  return a.graph->op(
      "softmax_rows", {a}, {r, c},
      [r, c](const std::vector<const Tensor*>& in) {
        Tensor out({r, c});
        kernels::row_softmax(in[0]->data(), out.data(), r, c);
        return out;
      },
      [r, c](const std::vector<const Tensor*>&, const Tensor& y, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
        }
        return std::vector<Tensor>{std::move(gx)};
      });
}

Value normalize_rows(Value a) {
  if (a.shape().size() != 2) throw std::invalid_argument("normalize_rows expects rank-2 input");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  return a.graph->op(
      "normalize_rows", {a}, {r, c},
      [r, c](const std::vector<const Tensor*>& in) {
        Tensor out({r, c});
        for (std::size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += (*in[0])[i * c + j] * (*in[0])[i * c + j];
          const double inv = 1.0 / std::sqrt(s);
          for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (*in[0])[i * c + j] * inv;
        }
        return out;
      },
      [r, c](const std::vector<const Tensor*>& in, const Tensor& y, const Tensor& g) {
        Tensor gx({r, c});
        for (std::size_t i = 0; i < r; ++i) {
          double norm = 0.0, dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            norm += (*in[0])[i * c + j] * (*in[0])[i * c + j];
            dot += g[i * c + j] * y[i * c + j];
          }
          const double inv = 1.0 / std::sqrt(norm);
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] = inv * (g[i * c + j] - y[i * c + j] * dot);
        }
        return std::vector<Tensor>{std::move(gx)};
      });
}

// ---- rotations -------------------------------------------------------------

namespace {

void skew(const double v[3], double k[9]) {
  k[0] = 0;      k[1] = -v[2]; k[2] = v[1];
  k[3] = v[2];   k[4] = 0;     k[5] = -v[0];
  k[6] = -v[1];  k[7] = v[0];  k[8] = 0;
}

void mat3_mul(const double* a, const double* b, double* c) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int l = 0; l < 3; ++l) s += a[i * 3 + l] * b[l * 3 + j];
      c[i * 3 + j] = s;
    }
}

// R = I + A K + B K^2 with A = sin(t)/t, B = (1-cos(t))/t^2.
void rodrigues_fwd(const double v[3], double r[9]) {
  const double t2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
  const double t = std::sqrt(t2);
  double A, B;
  if (t < 1e-8) {
    A = 1.0 - t2 / 6.0;
    B = 0.5 - t2 / 24.0;
  } else {
    A = std::sin(t) / t;
    B = (1.0 - std::cos(t)) / t2;
  }
  double k[9], k2[9];
  skew(v, k);
  mat3_mul(k, k, k2);
  for (int i = 0; i < 9; ++i) r[i] = A * k[i] + B * k2[i];
  r[0] += 1.0; r[4] += 1.0; r[8] += 1.0;
}

}  // namespace

Value rodrigues(Value axis_angle) {
  std::size_t n = 1;
  for (auto d : axis_angle.shape()) n *= d;
  if (n != 3) throw std::invalid_argument("rodrigues expects a 3-vector");
  return axis_angle.graph->op(
      "rodrigues", {axis_angle}, {3, 3},
      [](const std::vector<const Tensor*>& in) {
        Tensor out({3, 3});
        rodrigues_fwd(in[0]->data(), out.data());
        return out;
      },
      [](const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g) {
        const double* v = in[0]->data();
        const double t2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        const double t = std::sqrt(t2);
        // dR/dv_i = v_i (c1 K + c2 K^2) + A E_i + B (E_i K + K E_i)
        // with c1 = A'/t, c2 = B'/t; series below t = 1e-4 avoid cancellation.
        double A, B, c1, c2;
        if (t < 1e-4) {
      A = 1.0 - t2 / 6.0;
      B = 0.5 - t2 / 24.0;
      c1 = -1.0 / 3.0 + t2 / 30.0;
      c2 = -1.0 / 12.0 + t2 / 180.0;
        } else {
          A = std::sin(t) / t;
          B = (1.0 - std::cos(t)) / t2;
          const double Ap = (t * std::cos(t) - std::sin(t)) / t2;
          const double Bp = (t * std::sin(t) - 2.0 * (1.0 - std::cos(t))) / (t2 * t);
          c1 = Ap / t;
          c2 = Bp / t;
        }
        double k[9], k2[9];
        skew(v, k);
        mat3_mul(k, k, k2);
        Tensor gx(std::vector<std::size_t>{3});
        for (int i = 0; i < 3; ++i) {
          double e[3] = {0, 0, 0};
          e[i] = 1.0;
          double ei[9], eik[9], kei[9];
          skew(e, ei);
          mat3_mul(ei, k, eik);
          mat3_mul(k, ei, kei);
          double s = 0.0;
          for (int j = 0; j < 9; ++j) {
            const double dr = v[i] * (c1 * k[j] + c2 * k2[j]) + A * ei[j] + B * (eik[j] + kei[j]);
            s += g[j] * dr;
          }
          gx[i] = s;
        }
        return std::vector<Tensor>{std::move(gx)};
      });
}

}  // namespace animer::ad
