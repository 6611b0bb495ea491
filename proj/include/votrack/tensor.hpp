#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "votrack/common.hpp"
#include "votrack/rng.hpp"

namespace votrack {

// Dense row-major tensor of scalar S with an optional autodiff record.
// Values are immutable after creation; building a new tensor is the only way
// to "modify" data. When any input of an op requires gradients, the op links
// the output node to its parents and stores a backward closure; those links
// form the tape that backward() later walks.
template <class S>
class TensorT {
 public:
  using Data = std::vector<S>;
  struct Node;
  // Accumulates d(out)/d(parent) into pgrads; a null slot means that parent
  // does not need gradients.
  using BackwardFn = std::function<void(const Data& gout, std::vector<Data*>& pgrads)>;

  struct Node {
    Shape shape;
    Data data;
    bool requires_grad = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;  // empty for leaves
  };

  TensorT() = default;

  TensorT(Shape shape, Data data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != votrack::numel(shape))
      throw contract_error("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    n_ = std::make_shared<Node>();
    n_->shape = std::move(shape);
    n_->data = std::move(data);
    n_->requires_grad = requires_grad;
    n_->id = next_id();
    check_finite_or_throw("leaf");
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    Data d(static_cast<std::size_t>(votrack::numel(shape)), S(0));
    return TensorT(std::move(shape), std::move(d), requires_grad);
  }

  static TensorT full(Shape shape, S value, bool requires_grad = false) {
    Data d(static_cast<std::size_t>(votrack::numel(shape)), value);
    return TensorT(std::move(shape), std::move(d), requires_grad);
  }

  static TensorT scalar(S value, bool requires_grad = false) {
    return TensorT(Shape{1}, Data{value}, requires_grad);
  }

  static TensorT randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
    Data d(static_cast<std::size_t>(votrack::numel(shape)));
    for (auto& v : d) v = static_cast<S>(rng.normal()) * stddev;
    return TensorT(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  const Data& data() const { return n_->data; }
  std::int64_t numel() const { return static_cast<std::int64_t>(n_->data.size()); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  std::uint64_t id() const { return n_->id; }
  const char* op_name() const { return n_->op; }

  int dim(int i) const { return n_->shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(n_->shape.size()); }

  S value() const {
    require(numel() == 1, "value() needs a one-element tensor, got " + shape_str(shape()));
    return n_->data[0];
  }

  // Same values, no gradient history. Parameters are detached once per
  // inference run so the forward pass records nothing.
  TensorT detached() const {
    return TensorT(n_->shape, n_->data, false);
  }

  // Internal: op constructors and the tape need node access.
  const std::shared_ptr<Node>& node() const { return n_; }

  static TensorT from_node(std::shared_ptr<Node> n) {
    TensorT t;
    t.n_ = std::move(n);
    return t;
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  void check_finite_or_throw(const char* where) const {
    for (const S v : n_->data) {
      if (!std::isfinite(static_cast<double>(v)))
        throw numeric_fault(std::string("non-finite value produced by ") + where);
    }
  }

 private:
  std::shared_ptr<Node> n_;
};

// Gradients of one backward pass, keyed by tensor id.
template <class S>
class GradMapT {
 public:
  using Data = std::vector<S>;

  void add(std::uint64_t id, Data g) { g_.emplace(id, std::move(g)); }

  const Data* find(const TensorT<S>& t) const {
    auto it = g_.find(t.id());
    return it == g_.end() ? nullptr : &it->second;
  }

  // Unreached parameters get a zero gradient of the parameter's shape.
  TensorT<S> at_or_zero(const TensorT<S>& t) const {
    if (const Data* g = find(t)) return TensorT<S>(t.shape(), *g);
    return TensorT<S>::zeros(t.shape());
  }

  std::size_t size() const { return g_.size(); }

 private:
  std::unordered_map<std::uint64_t, Data> g_;
};

// Reverse-mode tape: the gradient-requiring subgraph reachable from a root,
// captured in topological order. backward() sweeps it exactly once in reverse.
template <class S>
class TapeT {
 public:
  using Node = typename TensorT<S>::Node;
  using Data = typename TensorT<S>::Data;

  explicit TapeT(const TensorT<S>& root) : root_(root) {
    if (!root.requires_grad()) return;
    // Iterative post-order DFS: parents appear before their consumers.
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.push_back({root.node(), 0});
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        auto p = node->parents[next++];
        if (p->requires_grad && !visited.count(p.get())) {
          visited.insert(p.get());
          stack.push_back({std::move(p), 0});
        }
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  // Number of op records (non-leaf nodes) on the tape.
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& node : order_)
      if (node->backward) ++n;
    return n;
  }

  GradMapT<S> backward() const {
    require(root_.numel() == 1,
            "backward needs a scalar loss, got " + shape_str(root_.shape()));
    GradMapT<S> out;
    if (!root_.requires_grad()) return out;

    std::unordered_map<const Node*, Data> accum;
    accum[root_.node().get()] = Data{S(1)};

    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const Node* node = it->get();
      auto found = accum.find(node);
      if (found == accum.end()) continue;  // not on any path from the root
      Data gout = std::move(found->second);
      accum.erase(found);
      if (!node->backward) {
        out.add(node->id, std::move(gout));
        continue;
      }
      std::vector<Data*> pgrads(node->parents.size(), nullptr);
      for (std::size_t i = 0; i < node->parents.size(); ++i) {
        const auto& p = node->parents[i];
        if (!p->requires_grad) continue;
        auto [slot, inserted] = accum.try_emplace(p.get());
        if (inserted) slot->second.assign(p->data.size(), S(0));
        pgrads[i] = &slot->second;
      }
      node->backward(gout, pgrads);
    }
    return out;
  }

 private:
  TensorT<S> root_;
  std::vector<std::shared_ptr<Node>> order_;
};

template <class S>
GradMapT<S> backward(const TensorT<S>& loss) {
  return TapeT<S>(loss).backward();
}

}  // namespace votrack
