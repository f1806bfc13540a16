#pragma once

// Small reverse-mode autodiff engine over dense float32 tensors.
//
// A Tape records every primitive applied to its variables. Calling
// backward() on a scalar variable walks the records in reverse exactly once
// and leaves d(root)/d(node) in each node's gradient buffer. Accumulation
// order inside every kernel is fixed, so identical inputs give bit-identical
// values and gradients.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fuselab {

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> data);

  const std::vector<int> &shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float &operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Scalar value of a single-element tensor.
  float item() const;
  void fill(float v);
  bool all_finite() const;

  bool operator==(const Tensor &o) const = default;

private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::string shape_str(const std::vector<int> &shape);
std::size_t shape_numel(const std::vector<int> &shape);

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape *tape = nullptr;
  int id = -1;

  const Tensor &value() const;
  const Tensor &grad() const;
  const std::vector<int> &shape() const { return value().shape(); }
};

class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  // Leaf variable. Only leaves created with requires_grad receive gradients,
  // along with everything computed from them.
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Seeds d(root)/d(root) = 1 and back-propagates. Gradient buffers of
  // every requires-grad node are allocated (zero) even when the node does
  // not contribute to root.
  void backward(Var root);

  const Tensor &value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const Tensor &grad(int id) const;
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by primitives.
  using BackwardFn = std::function<void(Tape &, const Tensor &out_grad)>;
  Var record(const char *op, Tensor value, std::vector<int> inputs, BackwardFn fn);
  Tensor &grad_buffer(int id);

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const char *op = "leaf";
    std::vector<int> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- primitives ------------------------------------------------------------

// x: Cin×H×W, weight: Cout×Cin×k×k (k ∈ {1,3}), bias: Cout. Zero padding k/2.
Var conv2d(Var x, Var weight, Var bias, int stride);
Var leaky_relu(Var x, float slope = 0.1f);
Var sigmoid(Var x);
Var add(Var a, Var b);
Var scale(Var x, float s);
Var sum(Var x);
// Concatenate C×H×W tensors along the channel axis.
Var concat_channels(std::span<const Var> xs);
Var concat_channels(Var a, Var b);
// Channels [begin, end) of a C×H×W tensor.
Var slice_channels(Var x, int begin, int end);

// Σ_i w_i · BCE(sigmoid(logit_i), target_i). Targets and weights are data.
Var bce_with_logits(Var logits, const Tensor &targets, const Tensor &weights);
// Σ_i w_i · smooth_l1(pred_i − target_i), beta = 1.
Var smooth_l1(Var pred, const Tensor &targets, const Tensor &weights);
// logits: K×H×W; per cell (h,w) with weight w>0 adds w · CE(softmax over K, label).
Var softmax_cross_entropy(Var logits, std::span<const int> labels, const Tensor &weights);

// ---- parameters ------------------------------------------------------------

class ParamStore {
public:
  void add(const std::string &name, Tensor value);
  bool contains(const std::string &name) const { return index_.count(name) != 0; }

  Tensor &value(const std::string &name);
  const Tensor &value(const std::string &name) const;
  Tensor &grad(const std::string &name);
  const Tensor &grad(const std::string &name) const;

  // Insertion order.
  const std::vector<std::string> &names() const { return names_; }
  std::size_t count() const;

  void zero_grad();
  // p ← p − lr·g for every parameter, then zero gradients.
  void sgd_step(float lr);

  // Registers every parameter as a leaf on `tape`.
  std::map<std::string, Var> bind(Tape &tape, bool requires_grad = true) const;
  // grad += scale · tape gradient for every bound parameter.
  void accumulate(const std::map<std::string, Var> &bound, float scale = 1.0f);

  bool operator==(const ParamStore &o) const;

private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
};

// Checkpoint format: "FUSELAB1" then, until EOF, one record per parameter:
// u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 payload (all LE).
void save_checkpoint(const ParamStore &params, const std::filesystem::path &path);
ParamStore load_checkpoint(const std::filesystem::path &path);
std::vector<std::uint8_t> serialize_params(const ParamStore &params);
ParamStore deserialize_params(std::span<const std::uint8_t> bytes);

// He-uniform: U(−√(6/fan_in), √(6/fan_in)).
Tensor he_uniform(std::vector<int> shape, int fan_in, std::uint64_t seed, const std::string &stream);

} // namespace fuselab
