#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pfv {

// Shapes are small, so a plain int vector is enough; element counts use i64.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// One node of the autodiff graph. `parents` keeps inputs alive so backward
// lambdas can read their data through the node passed in (never by capturing
// shared_ptrs, which would create reference cycles).
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
};

// When false, new ops record no graph (inference mode). Saves memory and time
// in eval loops; restored by NoGradGuard.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Shared handle to a TensorNode; copies alias the same storage and graph.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value);
  static Tensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value);
  static Tensor wrap(std::shared_ptr<TensorNode<T>> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return (int)node_->shape.size(); }
  int dim(int i) const { return node_->shape[(size_t)i]; }
  int64_t numel() const { return (int64_t)node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  T item() const;

  // Copies values into a fresh graph-free tensor.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar root. Grad buffers of every reachable
  // grad-requiring node are zero-initialized if absent; existing buffers
  // (parameters zeroed by the optimizer) are accumulated into.
  void backward();

  void zero_grad();

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

// Named parameter registry used by optimizers, checkpointing and gradcheck.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

}  // namespace pfv
