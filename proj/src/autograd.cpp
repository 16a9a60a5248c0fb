#include "stratmed/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stratmed {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
}

// Interprets rank-1 operands so that vector.matrix and matrix.vector work
// without explicit reshapes.
struct MatView {
  std::size_t rows, cols;
  const double* ptr;
};

MatView as_lhs(const Tensor& t) {
  if (t.rank() == 1) return {1, t.shape[0], t.data.data()};
  if (t.rank() == 2) return {t.shape[0], t.shape[1], t.data.data()};
  throw std::invalid_argument("matmul: lhs rank must be 1 or 2, got " + t.shape_str());
}

MatView as_rhs(const Tensor& t) {
  if (t.rank() == 1) return {t.shape[0], 1, t.data.data()};
  if (t.rank() == 2) return {t.shape[0], t.shape[1], t.data.data()};
  throw std::invalid_argument("matmul: rhs rank must be 1 or 2, got " + t.shape_str());
}

}  // namespace

Var Tape::push(Tensor value, std::function<void(Tape&, Node&)> back) {
  if (consumed_) throw std::logic_error("Tape: reuse after backward");
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.idx >= nodes_.size()) throw std::logic_error("Tape: invalid Var handle");
  return nodes_[v.idx];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.idx >= nodes_.size()) throw std::logic_error("Tape: invalid Var handle");
  return nodes_[v.idx];
}

void Tape::require_same_shape(const char* op, Var a, Var b) const {
  if (!node(a).value.same_shape(node(b).value)) shape_error(op, node(a).value, node(b).value);
}

void Tape::check_finite(const char* op, Var v) const {
  if (!node(v).value.all_finite())
    throw std::runtime_error(std::string(op) + ": non-finite output");
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
const Tensor& Tape::grad(Var v) const { return node(v).grad; }

Var Tape::constant(Tensor t) {
  return push(std::move(t), nullptr);
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  Var v = push(p.value, nullptr);
  node(v).bound = &p;
  param_nodes_.emplace(&p, v.idx);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  MatView va = as_lhs(ta);
  MatView vb = as_rhs(tb);
  if (va.cols != vb.rows) shape_error("matmul", ta, tb);

  std::vector<std::size_t> out_shape;
  if (ta.rank() == 2 && tb.rank() == 2) out_shape = {va.rows, vb.cols};
  else if (ta.rank() == 1 && tb.rank() == 2) out_shape = {vb.cols};
  else if (ta.rank() == 2 && tb.rank() == 1) out_shape = {va.rows};
  else out_shape = {1};  // vector . vector -> scalar

  Tensor out(out_shape);
  for (std::size_t i = 0; i < va.rows; ++i)
    for (std::size_t k = 0; k < va.cols; ++k) {
      const double aik = va.ptr[i * va.cols + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < vb.cols; ++j)
        out.data[i * vb.cols + j] += aik * vb.ptr[k * vb.cols + j];
    }

  std::size_t ai = a.idx, bi = b.idx;
  Var r = push(std::move(out), [ai, bi](Tape& t, Node& self) {
    Node& na = t.nodes_[ai];
    Node& nb = t.nodes_[bi];
    MatView va = as_lhs(na.value);
    MatView vb = as_rhs(nb.value);
    const double* g = self.grad.data.data();  // va.rows x vb.cols
    // dA += G . B^T
    for (std::size_t i = 0; i < va.rows; ++i)
      for (std::size_t k = 0; k < va.cols; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < vb.cols; ++j)
          acc += g[i * vb.cols + j] * vb.ptr[k * vb.cols + j];
        na.grad.data[i * va.cols + k] += acc;
      }
    // dB += A^T . G
    for (std::size_t k = 0; k < vb.rows; ++k)
      for (std::size_t j = 0; j < vb.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < va.rows; ++i)
          acc += va.ptr[i * va.cols + k] * g[i * vb.cols + j];
        nb.grad.data[k * vb.cols + j] += acc;
      }
  });
  check_finite("matmul", r);
  return r;
}

Var Tape::add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = node(a).value;
  const Tensor& tb = node(b).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += tb.data[i];
  std::size_t ai = a.idx, bi = b.idx;
  Var r = push(std::move(out), [ai, bi](Tape& t, Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      t.nodes_[ai].grad.data[i] += self.grad.data[i];
      t.nodes_[bi].grad.data[i] += self.grad.data[i];
    }
  });
  check_finite("add", r);
  return r;
}

Var Tape::sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = node(a).value;
  const Tensor& tb = node(b).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= tb.data[i];
  std::size_t ai = a.idx, bi = b.idx;
  Var r = push(std::move(out), [ai, bi](Tape& t, Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      t.nodes_[ai].grad.data[i] += self.grad.data[i];
      t.nodes_[bi].grad.data[i] -= self.grad.data[i];
    }
  });
  check_finite("sub", r);
  return r;
}

Var Tape::mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = node(a).value;
  const Tensor& tb = node(b).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= tb.data[i];
  std::size_t ai = a.idx, bi = b.idx;
  Var r = push(std::move(out), [ai, bi](Tape& t, Node& self) {
    Node& na = t.nodes_[ai];
    Node& nb = t.nodes_[bi];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      na.grad.data[i] += self.grad.data[i] * nb.value.data[i];
      nb.grad.data[i] += self.grad.data[i] * na.value.data[i];
    }
  });
  check_finite("mul", r);
  return r;
}

Var Tape::scale(Var a, double c) {
  Tensor out = node(a).value;
  for (double& v : out.data) v *= c;
  std::size_t ai = a.idx;
  Var r = push(std::move(out), [ai, c](Tape& t, Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      t.nodes_[ai].grad.data[i] += c * self.grad.data[i];
  });
  check_finite("scale", r);
  return r;
}

Var Tape::scale_by(Var a, Var scalar) {
  const Tensor& ts = node(scalar).value;
  if (ts.size() != 1)
    throw std::invalid_argument("scale_by: scalar operand must have size 1, got " +
                                ts.shape_str());
  const double s = ts.data[0];
  Tensor out = node(a).value;
  for (double& v : out.data) v *= s;
  std::size_t ai = a.idx, si = scalar.idx;
  Var r = push(std::move(out), [ai, si](Tape& t, Node& self) {
    Node& na = t.nodes_[ai];
    Node& ns = t.nodes_[si];
    const double s = ns.value.data[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      na.grad.data[i] += s * self.grad.data[i];
      acc += self.grad.data[i] * na.value.data[i];
    }
    ns.grad.data[0] += acc;
  });
  check_finite("scale_by", r);
  return r;
}

Var Tape::gather_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& tt = node(table).value;
  if (tt.rank() != 2)
    throw std::invalid_argument("gather_rows: table must be rank-2, got " + tt.shape_str());
  const std::size_t d = tt.shape[1];
  for (std::size_t id : ids)
    if (id >= tt.shape[0])
      throw std::out_of_range("gather_rows: id " + std::to_string(id) +
                              " out of range for table " + tt.shape_str());
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(tt.data.begin() + ids[r] * d, d, out.data.begin() + r * d);
  std::size_t ti = table.idx;
  Var r = push(std::move(out), [ti, ids = std::move(ids), d](Tape& t, Node& self) {
    Node& nt = t.nodes_[ti];
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < d; ++c)
        nt.grad.data[ids[r] * d + c] += self.grad.data[r * d + c];
  });
  return r;
}

Var Tape::row(Var matrix, std::size_t r) {
  const Tensor& tm = node(matrix).value;
  if (tm.rank() != 2)
    throw std::invalid_argument("row: rank-2 operand required, got " + tm.shape_str());
  if (r >= tm.shape[0])
    throw std::out_of_range("row: index " + std::to_string(r) + " out of " + tm.shape_str());
  const std::size_t d = tm.shape[1];
  Tensor out({d});
  std::copy_n(tm.data.begin() + r * d, d, out.data.begin());
  std::size_t mi = matrix.idx;
  return push(std::move(out), [mi, r, d](Tape& t, Node& self) {
    Node& nm = t.nodes_[mi];
    for (std::size_t c = 0; c < d; ++c) nm.grad.data[r * d + c] += self.grad.data[c];
  });
}

Var Tape::reshape(Var v, std::vector<std::size_t> shape) {
  const Tensor& tv = node(v).value;
  if (shape_size(shape) != tv.size())
    throw std::invalid_argument("reshape: size mismatch " + tv.shape_str() + " -> " +
                                shape_to_string(shape));
  Tensor out;
  out.shape = std::move(shape);
  out.data = tv.data;
  std::size_t vi = v.idx;
  return push(std::move(out), [vi](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (std::size_t i = 0; i < self.grad.size(); ++i) nv.grad.data[i] += self.grad.data[i];
  });
}

Var Tape::concat3(Var a, Var b, Var c) {
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  const Tensor& tc = node(c).value;
  if (ta.rank() != 1 || tb.rank() != 1 || tc.rank() != 1)
    throw std::invalid_argument("concat3: rank-1 operands required");
  Tensor out({ta.size() + tb.size() + tc.size()});
  std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
  std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + ta.size());
  std::copy(tc.data.begin(), tc.data.end(), out.data.begin() + ta.size() + tb.size());
  std::size_t ai = a.idx, bi = b.idx, ci = c.idx;
  std::size_t la = ta.size(), lb = tb.size();
  return push(std::move(out), [ai, bi, ci, la, lb](Tape& t, Node& self) {
    Node& na = t.nodes_[ai];
    Node& nb = t.nodes_[bi];
    Node& nc = t.nodes_[ci];
    for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad.data[i] += self.grad.data[i];
    for (std::size_t i = 0; i < nb.grad.size(); ++i) nb.grad.data[i] += self.grad.data[la + i];
    for (std::size_t i = 0; i < nc.grad.size(); ++i)
      nc.grad.data[i] += self.grad.data[la + lb + i];
  });
}

Var Tape::slice(Var v, std::size_t offset, std::size_t len) {
  const Tensor& tv = node(v).value;
  if (tv.rank() != 1) throw std::invalid_argument("slice: rank-1 operand required");
  if (offset + len > tv.size())
    throw std::out_of_range("slice: [" + std::to_string(offset) + ", " +
                            std::to_string(offset + len) + ") exceeds " + tv.shape_str());
  Tensor out({len});
  std::copy_n(tv.data.begin() + offset, len, out.data.begin());
  std::size_t vi = v.idx;
  return push(std::move(out), [vi, offset, len](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (std::size_t i = 0; i < len; ++i) nv.grad.data[offset + i] += self.grad.data[i];
  });
}

Var Tape::relu(Var v) {
  Tensor out = node(v).value;
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  std::size_t vi = v.idx;
  Var r = push(std::move(out), [vi](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (nv.value.data[i] > 0.0) nv.grad.data[i] += self.grad.data[i];
  });
  check_finite("relu", r);
  return r;
}

Var Tape::sigmoid(Var v) {
  Tensor out = node(v).value;
  for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  std::size_t vi = v.idx;
  Var r = push(std::move(out), [vi](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value.data[i];
      nv.grad.data[i] += self.grad.data[i] * s * (1.0 - s);
    }
  });
  check_finite("sigmoid", r);
  return r;
}

Var Tape::tanh(Var v) {
  Tensor out = node(v).value;
  for (double& x : out.data) x = std::tanh(x);
  std::size_t vi = v.idx;
  Var r = push(std::move(out), [vi](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value.data[i];
      nv.grad.data[i] += self.grad.data[i] * (1.0 - y * y);
    }
  });
  check_finite("tanh", r);
  return r;
}

Var Tape::row_sum(Var m) {
  const Tensor& tm = node(m).value;
  if (tm.rank() != 2) throw std::invalid_argument("row_sum: rank-2 operand required, got " +
                                                  tm.shape_str());
  const std::size_t n = tm.shape[0], d = tm.shape[1];
  Tensor out({d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out.data[c] += tm.data[r * d + c];
  std::size_t mi = m.idx;
  Var res = push(std::move(out), [mi, n, d](Tape& t, Node& self) {
    Node& nm = t.nodes_[mi];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) nm.grad.data[r * d + c] += self.grad.data[c];
  });
  check_finite("row_sum", res);
  return res;
}

Var Tape::row_mean(Var m) {
  const std::size_t n = node(m).value.rank() == 2 ? node(m).value.shape[0] : 0;
  Var s = row_sum(m);
  return n > 0 ? scale(s, 1.0 / static_cast<double>(n)) : s;
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty row list");
  const std::size_t d = node(rows[0]).value.size();
  for (Var r : rows) {
    const Tensor& tr = node(r).value;
    if (tr.rank() != 1 || tr.size() != d)
      throw std::invalid_argument("stack_rows: rows must be rank-1 of equal length");
  }
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(node(rows[r]).value.data.begin(), node(rows[r]).value.data.end(),
              out.data.begin() + r * d);
  std::vector<std::size_t> idxs(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) idxs[r] = rows[r].idx;
  return push(std::move(out), [idxs = std::move(idxs), d](Tape& t, Node& self) {
    for (std::size_t r = 0; r < idxs.size(); ++r) {
      Node& nr = t.nodes_[idxs[r]];
      for (std::size_t c = 0; c < d; ++c) nr.grad.data[c] += self.grad.data[r * d + c];
    }
  });
}

Var Tape::sum(Var v) {
  const Tensor& tv = node(v).value;
  double acc = 0.0;
  for (double x : tv.data) acc += x;
  std::size_t vi = v.idx;
  Var r = push(Tensor::scalar(acc), [vi](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (double& g : nv.grad.data) g += self.grad.data[0];
  });
  check_finite("sum", r);
  return r;
}

Var Tape::dropout(Var v, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return v;  // eval mode is the identity
  const Tensor& tv = node(v).value;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(tv.size());
  for (double& m : mask) m = rng.next_double() >= p ? keep_scale : 0.0;
  Tensor out = tv;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  std::size_t vi = v.idx;
  return push(std::move(out), [vi, mask = std::move(mask)](Tape& t, Node& self) {
    Node& nv = t.nodes_[vi];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      nv.grad.data[i] += self.grad.data[i] * mask[i];
  });
}

Var Tape::bce_loss(Var pred, const Tensor& truth) {
  const Tensor& tp = node(pred).value;
  if (!tp.same_shape(truth)) shape_error("bce_loss", tp, truth);
  constexpr double kClip = 1e-12;
  double loss = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const double p = std::clamp(tp.data[i], kClip, 1.0 - kClip);
    loss -= truth.data[i] * std::log(p) + (1.0 - truth.data[i]) * std::log(1.0 - p);
  }
  std::size_t pi = pred.idx;
  Var r = push(Tensor::scalar(loss), [pi, truth](Tape& t, Node& self) {
    Node& np = t.nodes_[pi];
    const double g = self.grad.data[0];
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const double raw = np.value.data[i];
      if (raw <= kClip || raw >= 1.0 - kClip) continue;  // clamped: flat
      np.grad.data[i] += g * (-truth.data[i] / raw + (1.0 - truth.data[i]) / (1.0 - raw));
    }
  });
  check_finite("bce_loss", r);
  return r;
}

Var Tape::margin_loss(Var pred, const Tensor& truth) {
  const Tensor& tp = node(pred).value;
  if (!tp.same_shape(truth)) shape_error("margin_loss", tp, truth);
  const double inv_m = 1.0 / static_cast<double>(tp.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (truth.data[i] != 1.0) continue;
    for (std::size_t j = 0; j < tp.size(); ++j) {
      if (truth.data[j] != 0.0) continue;
      const double h = 1.0 - (tp.data[i] - tp.data[j]);
      if (h > 0.0) loss += h * inv_m;
    }
  }
  std::size_t pi = pred.idx;
  Var r = push(Tensor::scalar(loss), [pi, truth, inv_m](Tape& t, Node& self) {
    Node& np = t.nodes_[pi];
    const double g = self.grad.data[0];
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth.data[i] != 1.0) continue;
      for (std::size_t j = 0; j < truth.size(); ++j) {
        if (truth.data[j] != 0.0) continue;
        if (1.0 - (np.value.data[i] - np.value.data[j]) > 0.0) {
          np.grad.data[i] -= g * inv_m;
          np.grad.data[j] += g * inv_m;
        }
      }
    }
  });
  check_finite("margin_loss", r);
  return r;
}

Var Tape::ddi_penalty(Var pred, const Tensor& ddi) {
  const Tensor& tp = node(pred).value;
  if (tp.rank() != 1 || ddi.rank() != 2 || ddi.shape[0] != tp.size() ||
      ddi.shape[1] != tp.size())
    shape_error("ddi_penalty", tp, ddi);
  const std::size_t m = tp.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      loss += ddi.data[i * m + j] * tp.data[i] * tp.data[j];
  std::size_t pi = pred.idx;
  Var r = push(Tensor::scalar(loss), [pi, ddi, m](Tape& t, Node& self) {
    Node& np = t.nodes_[pi];
    const double g = self.grad.data[0];
    for (std::size_t k = 0; k < m; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        acc += (ddi.data[k * m + j] + ddi.data[j * m + k]) * np.value.data[j];
      np.grad.data[k] += g * acc;
    }
  });
  check_finite("ddi_penalty", r);
  return r;
}

void Tape::backward(Var loss) {
  if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
  if (node(loss).value.size() != 1)
    throw std::invalid_argument("Tape::backward: loss must be scalar, got " +
                                node(loss).value.shape_str());
  consumed_ = true;
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  node(loss).grad.data[0] = 1.0;
  for (std::size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this, n);
    if (n.bound)
      for (std::size_t k = 0; k < n.grad.size(); ++k)
        n.bound->grad.data[k] += n.grad.data[k];
  }
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state) {
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Parameter* p : params) {
      state.m.push_back(Tensor::zeros(p->value.shape));
      state.v.push_back(Tensor::zeros(p->value.shape));
    }
  }
  if (state.m.size() != params.size())
    throw std::logic_error("adam_step: parameter list changed size");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    if (!m.same_shape(p.value)) throw std::logic_error("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.value.data[i] -= state.lr * state.weight_decay * p.value.data[i];
      const double g = p.grad.data[i];
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g;
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.value.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    p.zero_grad();
  }
}

GradCheckReport grad_check(const std::function<double(bool)>& model_fn,
                           const std::vector<Parameter*>& params, double tolerance,
                           std::size_t max_entries_per_param, std::uint64_t seed,
                           double h) {
  for (Parameter* p : params) p->zero_grad();
  model_fn(true);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> entries;
    if (p.value.size() <= max_entries_per_param) {
      entries.resize(p.value.size());
      for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    } else {
      for (std::size_t k = 0; k < max_entries_per_param; ++k)
        entries.push_back(rng.index(p.value.size()));
    }
    for (std::size_t i : entries) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + h;
      const double lp = model_fn(false);
      p.value.data[i] = saved - h;
      const double lm = model_fn(false);
      p.value.data[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[pi].data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
      report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - an) / denom);
      ++report.entries_checked;
    }
  }
  for (Parameter* p : params) p->zero_grad();
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace stratmed
