#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fidgp/matrix.hpp"

namespace fidgp::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {
struct TensorRecorder;
}

/// Value handle for reverse-mode differentiation. A Tensor is either a
/// constant (no tape) or refers to a node recorded on a Tape. Values are
/// immutable once created and cheap to copy (shared buffer).
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, Vector data);
    explicit Tensor(double scalar_value);
    explicit Tensor(const Matrix& m);
    explicit Tensor(const Vector& v);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    const Vector& value() const { return *data_; }
    double scalar() const;
    Matrix matrix() const;  // requires rank 2

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

  private:
    friend class Tape;
    friend struct detail::TensorRecorder;
    Shape shape_;
    std::shared_ptr<const Vector> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

/// Eager Wengert list. Nodes are recorded in execution order (parents
/// first); one backward pass per tape.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record a differentiable leaf (a parameter).
    Tensor leaf(const Tensor& value);
    Tensor leaf(const Matrix& m) { return leaf(Tensor(m)); }
    Tensor leaf(const Vector& v) { return leaf(Tensor(v)); }
    Tensor leaf(double s) { return leaf(Tensor(s)); }

    /// Reverse sweep from a scalar loss. Throws NotScalar / TapeConsumed.
    void backward(const Tensor& loss);

    /// Gradient of the last backward() with respect to a recorded tensor;
    /// zeros for leaves the loss does not depend on.
    Vector grad(const Tensor& t) const;
    Tensor grad_tensor(const Tensor& t) const;

    bool consumed() const { return consumed_; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // -- used by op implementations --
    using BackwardFn = std::function<void(Tape&, const Vector& upstream)>;
    int record(std::size_t size, BackwardFn fn);
    void accumulate(int node, const Vector& contribution);
    void accumulate_scaled(int node, const Vector& contribution, double scale);
    Vector& grad_buffer(int node, std::size_t size);

  private:
    struct Node {
        std::size_t size;
        Vector grad;  // allocated lazily during backward
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// ---- primitive operations ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, broadcasting
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t start, std::size_t len);  // rank 1
Tensor concat(const Tensor& a, const Tensor& b);                    // rank 1
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor clamp_max(const Tensor& a, double cap);  // min(a, cap); zero grad where clamped
Tensor clamp_min(const Tensor& a, double lo);   // max(a, lo); zero grad where clamped
Tensor reciprocal(const Tensor& a);
Tensor row_sum(const Tensor& a);                // {r,c} -> {r,1}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }
Tensor sigmoid(const Tensor& a);  // composed from softplus/exp

/// Row-wise max of a rank-2 tensor as an off-tape constant {r,1}; the
/// shift trick for stable log-sum-exp (its gradient contribution cancels).
Tensor row_max_detached(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);  // {r,c} -> {r,1}

// ---- optimizer -----------------------------------------------------------

struct AdamState {
    Vector m;
    Vector v;
    long t = 0;
};

/// One bias-corrected Adam update, in place.
void adam_step(Vector& params, const Vector& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct SgdMomentumState {
    Vector velocity;
};

void sgd_momentum_step(Vector& params, const Vector& grads, SgdMomentumState& state, double lr,
                       double momentum = 0.9);

}  // namespace fidgp::ad
