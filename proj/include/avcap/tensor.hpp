#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "avcap/errors.hpp"

namespace avcap {

// Thread-local gradient mode. Ops record backward closures only while enabled.
inline thread_local bool g_grad_enabled = true;

inline bool grad_enabled() { return g_grad_enabled; }
inline void set_grad_enabled(bool on) { g_grad_enabled = on; }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
struct TensorT;

// Operation record: keeps the producing op's inputs alive for the traversal
// and a closure that scatters the output gradient into them.
template <typename S>
struct NodeT {
  std::vector<TensorT<S>> parents;
  std::function<void()> backprop;
};

// Dense row-major tensor handle. Copies share storage; `grad` is allocated
// iff requires_grad and accumulates additively until reset.
template <typename S>
struct TensorT {
  using value_type = S;

  std::vector<std::size_t> dims;
  std::shared_ptr<std::vector<S>> data;
  std::shared_ptr<std::vector<S>> grad;
  bool requires_grad = false;
  std::shared_ptr<NodeT<S>> node;

  TensorT() = default;

  static TensorT zeros(std::vector<std::size_t> d, bool rg = false) {
    TensorT t;
    t.dims = std::move(d);
    std::size_t n = 1;
    for (std::size_t e : t.dims) n *= e;
    t.data = std::make_shared<std::vector<S>>(n, S(0));
    t.requires_grad = rg;
    if (rg) t.grad = std::make_shared<std::vector<S>>(n, S(0));
    return t;
  }

  static TensorT from(std::vector<std::size_t> d, std::vector<S> values, bool rg = false) {
    TensorT t = zeros(std::move(d), rg);
    if (values.size() != t.data->size())
      throw ShapeError("tensor: value count " + std::to_string(values.size()) +
                       " does not match dims product " + std::to_string(t.data->size()));
    *t.data = std::move(values);
    return t;
  }

  static TensorT scalar(S v, bool rg = false) { return from({1}, {v}, rg); }

  std::size_t numel() const { return data ? data->size() : 0; }
  std::size_t rank() const { return dims.size(); }

  std::size_t rows() const {
    if (dims.size() != 2) throw ShapeError("tensor: rank-2 expected, got rank " + std::to_string(dims.size()));
    return dims[0];
  }
  std::size_t cols() const {
    if (dims.size() != 2) throw ShapeError("tensor: rank-2 expected, got rank " + std::to_string(dims.size()));
    return dims[1];
  }

  S& at(std::size_t i) { return (*data)[i]; }
  S at(std::size_t i) const { return (*data)[i]; }
  S& at(std::size_t r, std::size_t c) { return (*data)[r * dims[1] + c]; }
  S at(std::size_t r, std::size_t c) const { return (*data)[r * dims[1] + c]; }

  bool same_shape(const TensorT& o) const { return dims == o.dims; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << "]";
    return os.str();
  }

  void zero_grad() {
    if (grad)
      for (S& g : *grad) g = S(0);
  }

  bool all_finite() const {
    for (S v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

namespace detail {

// Post-order over the op graph, iterative to keep deep chains safe.
template <typename S>
void topo_collect(const TensorT<S>& root, std::vector<NodeT<S>*>& order) {
  std::unordered_set<NodeT<S>*> seen;
  struct Frame {
    NodeT<S>* n;
    std::size_t next_child;
  };
  if (!root.node) return;
  std::vector<Frame> stack;
  if (seen.insert(root.node.get()).second) stack.push_back({root.node.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      NodeT<S>* child = f.n->parents[f.next_child].node.get();
      ++f.next_child;
      if (child && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
// every requires_grad tensor reachable from `loss`; call zero_grad between
// steps to reset.
template <typename S>
void backward(TensorT<S>& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + loss.shape_str());
  if (!loss.requires_grad || !loss.grad)
    throw ContractError("backward: loss does not require gradients (graph not recorded?)");
  (*loss.grad)[0] += S(1);
  std::vector<NodeT<S>*> order;
  detail::topo_collect(loss, order);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace avcap
