#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stratmed/rng.hpp"
#include "stratmed/tensor.hpp"

namespace stratmed {

// Trainable tensor with an accumulating gradient buffer of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() { grad.fill(0.0); }
};

// Handle into one Tape's node list.
struct Var {
  std::size_t idx = static_cast<std::size_t>(-1);
};

// Reverse-mode tape for a single forward pass. Nodes are appended in
// topological order, so backward() is a single reverse sweep. A tape is
// consumed by backward(); reuse is an error. Gradients accumulate (+=)
// into each touched Parameter.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  Var param(Parameter& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var scale_by(Var a, Var scalar);  // scalar has shape [1]
  Var gather_rows(Var table, std::vector<std::size_t> ids);
  Var row(Var matrix, std::size_t r);  // [n,d] -> [d]
  Var reshape(Var v, std::vector<std::size_t> shape);
  Var concat3(Var a, Var b, Var c);
  Var slice(Var v, std::size_t offset, std::size_t len);
  Var relu(Var v);
  Var sigmoid(Var v);
  Var tanh(Var v);
  Var row_sum(Var m);   // [n,d] -> [d]; n = 0 gives zeros
  Var row_mean(Var m);  // [n,d] -> [d]; n = 0 gives zeros
  Var stack_rows(const std::vector<Var>& rows);
  Var sum(Var v);  // -> [1]
  Var dropout(Var v, double p, Rng& rng, bool train);

  // Loss heads with analytic gradients; `truth` entries are 0/1 labels.
  Var bce_loss(Var pred, const Tensor& truth);     // clipped to [1e-12, 1-1e-12]
  Var margin_loss(Var pred, const Tensor& truth);  // pairwise hinge / |pred|
  Var ddi_penalty(Var pred, const Tensor& ddi);    // pred . ddi . pred

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;

  void backward(Var loss);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, Node&)> back;
    Parameter* bound = nullptr;
  };

  Var push(Tensor value, std::function<void(Tape&, Node&)> back);
  Node& node(Var v);
  const Node& node(Var v) const;
  void require_same_shape(const char* op, Var a, Var b) const;
  void check_finite(const char* op, Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool consumed_ = false;
};

// Adam with decoupled weight decay. Decay is applied to the value before
// the moment update; gradients are zeroed after each step.
struct AdamState {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

void adam_step(const std::vector<Parameter*>& params, AdamState& state);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  bool pass = false;
};

// Central finite differences against the analytic gradients produced by
// model_fn(true). model_fn(false) must recompute the loss without touching
// gradients. Relative error uses a unit floor in the denominator.
GradCheckReport grad_check(const std::function<double(bool accumulate_grads)>& model_fn,
                           const std::vector<Parameter*>& params, double tolerance,
                           std::size_t max_entries_per_param = 24,
                           std::uint64_t seed = 0x5eed, double h = 1e-6);

}  // namespace stratmed
