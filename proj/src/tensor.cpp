#include "pfv/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

namespace pfv {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = shape;
  n->data.assign((size_t)shape_numel(shape), T(0));
  n->requires_grad = requires_grad;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = shape;
  n->data.assign((size_t)shape_numel(shape), value);
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(const Shape& shape, std::vector<T> data, bool requires_grad) {
  if ((int64_t)data.size() != shape_numel(shape))
    throw std::runtime_error("from_data: " + std::to_string(data.size()) +
                             " values for shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = shape;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_data({1}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<TensorNode<T>> node) {
  return Tensor<T>(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::runtime_error("item: tensor has shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor<T>(std::move(n));
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
void Tensor<T>::backward() {
  if (numel() != 1)
    throw std::runtime_error("backward: root must be scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS. Parents are visited in their stored order, so
  // the resulting schedule (and thus every floating-point accumulation order)
  // is a pure function of graph structure.
  std::vector<TensorNode<T>*> topo;
  std::unordered_set<TensorNode<T>*> visited;
  struct Frame {
    TensorNode<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<T>* p = f.node->parents[f.next_parent].get();
      ++f.next_parent;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});  // invalidates f; loop re-reads back()
      }
      continue;
    }
    topo.push_back(f.node);
    stack.pop_back();
  }

  for (TensorNode<T>* n : topo) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), T(0));
  }
  node_->grad[0] += T(1);

  // topo is post-order (root last); walking it backwards runs every consumer
  // before its producers.
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pfv
