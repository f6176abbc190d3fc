#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rgen/rand.hpp"

namespace rgen {

std::string shape_str(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Dense row-major 64-bit float tensor. Value-semantic handle: copies share
// the underlying node, operations never mutate their inputs.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {}
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  double value() const;  // scalar convenience accessor

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  bool all_finite() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Records one gradient-propagation step per forward operation, in execution
// order (which is topological by construction). backward() replays the steps
// exactly once in reverse. Leaf gradients keep accumulating across calls
// until explicitly zeroed; intermediate gradients are reset per pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<TensorNode> output, std::function<void()> step) {
    outputs_.push_back(std::move(output));
    steps_.push_back(std::move(step));
  }
  void backward(const Tensor& loss);

  std::size_t size() const { return steps_.size(); }
  void clear() {
    steps_.clear();
    outputs_.clear();
  }

  static Tape* active();

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<std::shared_ptr<TensorNode>> outputs_;
};

// RAII guard making a tape the recording target for the current thread.
// No active scope means pure forward evaluation.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// ---- differentiable operations ----

// [.., m, k] x [.., k, n] -> [.., m, n]; leading axes broadcast
Tensor matmul(const Tensor& a, const Tensor& b);

// b must have the same shape as a, or match a trailing suffix of a's shape
Tensor add(const Tensor& a, const Tensor& b);

Tensor multiply(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double c);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// mean over non-pad positions of -log softmax(logits)[target];
// targets laid out row-major to match the leading axes of logits
Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& targets,
                                 int pad_id);

Tensor relu(const Tensor& x);

// train mode: Bernoulli keep-mask scaled by 1/(1-p); eval mode: identity
Tensor dropout(const Tensor& x, double p, bool train_mode, Rng& rng);

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape);
Tensor transpose_last_two(const Tensor& x);

// gather rows of table [V, D] -> [ids.size(), D]; gradient scatter-adds
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor concat_last_axis(const std::vector<Tensor>& parts);
std::vector<Tensor> split_last_axis(const Tensor& x, std::size_t parts);

Tensor sum(const Tensor& x);  // -> scalar [1]

}  // namespace rgen
