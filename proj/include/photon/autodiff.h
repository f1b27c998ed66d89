#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every op result in creation order, which is a topological
// order of the computation graph; backward() replays it in reverse. Parameters
// are long-lived leaf nodes that are not owned by any tape, so their gradients
// accumulate across backward passes until the optimizer clears them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "photon/tensor.h"

namespace photon::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  // Zero-initialised gradient buffer shaped like `value`.
  Tensor& grad_buffer();
  void accumulate(std::span<const real> g);
  bool has_grad() const { return !grad.empty(); }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Wraps a tensor as a value that never receives gradient.
Var constant(Tensor value);

// A trainable leaf. Copies share the same storage.
class Param {
 public:
  Param() = default;
  explicit Param(Tensor init);

  Var var() const { return Var(node_); }
  Tensor& value() { return node_->value; }
  const Tensor& value() const { return node_->value; }
  Tensor& grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad();
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }

 private:
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  // A non-recording tape evaluates values only; use it for inference.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Registers an op result. `fn` receives the result node and pushes
  // gradient into its parents; it is dropped when no parent needs gradient.
  Var record(Tensor value, std::vector<Var> parents, std::function<void(const Node&)> fn);

  // Seeds d(out)/d(out) = 1 and propagates to every reachable node.
  // `out` must hold exactly one scalar.
  void backward(const Var& out);

 private:
  bool record_;
  std::vector<std::shared_ptr<Node>> nodes_;
};

// Attention mask over the last two axes of a [..., S, K] score tensor:
// query i may attend key k iff k <= i + offset. `prefix_len` marks how many
// leading key positions are conditioning rows rather than generated rows;
// it does not change the predicate, only how attention is accounted.
struct CausalMask {
  std::ptrdiff_t offset = 0;
  std::size_t prefix_len = 0;

  bool allowed(std::size_t q, std::size_t k) const {
    return static_cast<std::ptrdiff_t>(k) <= static_cast<std::ptrdiff_t>(q) + offset;
  }
};

// Elementwise ops. `b` may match `a` exactly or equal a trailing suffix of
// a's shape, in which case it is repeated across a's leading dimensions.
Var add(Tape& t, const Var& a, const Var& b);
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);
Var scale(Tape& t, const Var& a, real s);
Var silu(Tape& t, const Var& a);

// a: [..., m, k]; b: [k, n] (shared across a's batch) or [..., k, n] with the
// same leading dimensions as a.
Var matmul(Tape& t, const Var& a, const Var& b);
// Swaps the last two axes.
Var transpose(Tape& t, const Var& a);

Var softmax_rows(Tape& t, const Var& x, std::optional<CausalMask> mask = std::nullopt);

inline constexpr real kRmsEps = 1e-6;
Var rmsnorm(Tape& t, const Var& x, const Var& gain, real eps = kRmsEps);

// Gathers rows of `table` [V, D] -> [ids.size(), D].
Var embedding(Tape& t, const Var& table, std::span<const std::uint32_t> ids);

// Sum over rows of weight_i * -log softmax(logits_i)[target_i]. Returns a scalar.
Var cross_entropy(Tape& t, const Var& logits, std::span<const std::uint32_t> targets,
                  std::span<const real> weights);

Var concat(Tape& t, const std::vector<Var>& parts);  // along the last axis
std::vector<Var> split(Tape& t, const Var& a, const std::vector<std::size_t>& sizes);  // last axis
Var slice_last(Tape& t, const Var& a, std::size_t offset, std::size_t length);
Var reshape(Tape& t, const Var& a, Shape shape);
Var sum(Tape& t, const Var& a);
// Same value, no gradient path.
Var stop_gradient(const Var& a);

}  // namespace photon::ad
