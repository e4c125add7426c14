#include "fidgp/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fidgp/errors.hpp"

namespace fidgp::ad {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

Tensor::Tensor(Shape shape, Vector data) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != data.size()) {
        throw ShapeMismatch("Tensor: shape " + shape_str(shape_) + " vs data length " +
                            std::to_string(data.size()));
    }
    data_ = std::make_shared<const Vector>(std::move(data));
}

Tensor::Tensor(double scalar_value) : Tensor(Shape{}, Vector{scalar_value}) {}

Tensor::Tensor(const Matrix& m) : Tensor(Shape{m.rows, m.cols}, m.data) {}

Tensor::Tensor(const Vector& v) : Tensor(Shape{v.size()}, v) {}

double Tensor::scalar() const {
    if (numel() != 1) throw NotScalar("Tensor::scalar on shape " + shape_str(shape_));
    return (*data_)[0];
}

Matrix Tensor::matrix() const {
    if (shape_.size() != 2) throw ShapeMismatch("Tensor::matrix on shape " + shape_str(shape_));
    return Matrix(shape_[0], shape_[1], *data_);
}

int Tape::record(std::size_t size, BackwardFn fn) {
    nodes_.push_back(Node{size, {}, std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

Vector& Tape::grad_buffer(int node, std::size_t size) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.empty()) n.grad.assign(size, 0.0);
    return n.grad;
}

void Tape::accumulate(int node, const Vector& contribution) {
    Vector& g = grad_buffer(node, contribution.size());
    for (std::size_t i = 0; i < contribution.size(); ++i) g[i] += contribution[i];
}

void Tape::accumulate_scaled(int node, const Vector& contribution, double scale) {
    Vector& g = grad_buffer(node, contribution.size());
    for (std::size_t i = 0; i < contribution.size(); ++i) g[i] += scale * contribution[i];
}

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value;
    t.tape_ = this;
    t.node_ = record(t.numel(), nullptr);
    return t;
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw TapeConsumed("Tape::backward called twice");
    if (loss.numel() != 1) {
        throw NotScalar("Tape::backward: loss has shape " + shape_str(loss.shape()));
    }
    consumed_ = true;
    if (!loss.on_tape()) return;  // constant loss: all gradients stay zero
    if (loss.tape() != this) throw TapeConsumed("Tape::backward: loss from another tape");
    grad_buffer(loss.node(), 1)[0] += 1.0;
    for (int id = loss.node(); id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, n.grad);
    }
}

Vector Tape::grad(const Tensor& t) const {
    if (!t.on_tape() || t.tape() != this) {
        throw TapeConsumed("Tape::grad: tensor not recorded on this tape");
    }
    const Node& n = nodes_[static_cast<std::size_t>(t.node())];
    if (n.grad.empty()) return Vector(t.numel(), 0.0);
    return n.grad;
}

Tensor Tape::grad_tensor(const Tensor& t) const { return Tensor(t.shape(), grad(t)); }

namespace {

struct Dim2 {
    std::size_t r, c;
};

Dim2 as2d(const Shape& s, const char* op) {
    if (s.size() > 2) throw ShapeMismatch(std::string(op) + ": rank > 2 " + shape_str(s));
    if (s.size() == 2) return {s[0], s[1]};
    if (s.size() == 1) return {1, s[0]};
    return {1, 1};
}

Tape* common_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.on_tape() && b.on_tape() && a.tape() != b.tape()) {
        throw TapeConsumed(std::string(op) + ": operands recorded on different tapes");
    }
    return a.on_tape() ? a.tape() : b.tape();
}

}  // namespace

namespace detail {
struct TensorRecorder {
    static Tensor record(Tape* tape, Shape shape, Vector data, Tape::BackwardFn fn) {
        Tensor out(std::move(shape), std::move(data));
        if (tape) {
            out.tape_ = tape;
            out.node_ = tape->record(out.numel(), std::move(fn));
        }
        return out;
    }
};
}  // namespace detail

namespace {

Tensor recorded(Tape* tape, Shape shape, Vector data, Tape::BackwardFn fn) {
    return detail::TensorRecorder::record(tape, std::move(shape), std::move(data), std::move(fn));
}

// Broadcasted elementwise binary op with trailing-dimension alignment.
template <class Fwd, class BwdA, class BwdB>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BwdA dfa,
                        BwdB dfb) {
    const Dim2 da = as2d(a.shape(), name);
    const Dim2 db = as2d(b.shape(), name);
    const std::size_t rr = std::max(da.r, db.r);
    const std::size_t rc = std::max(da.c, db.c);
    const bool ok = (da.r == rr || da.r == 1) && (db.r == rr || db.r == 1) &&
                    (da.c == rc || da.c == 1) && (db.c == rc || db.c == 1);
    if (!ok) {
        throw ShapeMismatch(std::string(name) + ": " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
    Shape out_shape = a.shape().size() >= b.shape().size() ? a.shape() : b.shape();
    if (shape_numel(out_shape) != rr * rc) out_shape = Shape{rr, rc};

    const Vector& av = a.value();
    const Vector& bv = b.value();
    Vector out(rr * rc);
    for (std::size_t i = 0; i < rr; ++i) {
        const std::size_t ia = (da.r == 1 ? 0 : i);
        const std::size_t ib = (db.r == 1 ? 0 : i);
        for (std::size_t j = 0; j < rc; ++j) {
            const std::size_t ja = (da.c == 1 ? 0 : j);
            const std::size_t jb = (db.c == 1 ? 0 : j);
            out[i * rc + j] = fwd(av[ia * da.c + ja], bv[ib * db.c + jb]);
        }
    }

    Tape* tape = common_tape(a, b, name);
    if (!tape) return Tensor(std::move(out_shape), std::move(out));

    const int na = a.on_tape() ? a.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    auto pa = std::make_shared<Vector>(av);
    auto pb = std::make_shared<Vector>(bv);
    auto bw = [=](Tape& t, const Vector& up) {
        if (na >= 0) {
            Vector& ga = t.grad_buffer(na, pa->size());
            for (std::size_t i = 0; i < rr; ++i) {
                const std::size_t ia = (da.r == 1 ? 0 : i);
                for (std::size_t j = 0; j < rc; ++j) {
                    const std::size_t ja = (da.c == 1 ? 0 : j);
                    const std::size_t ib = (db.r == 1 ? 0 : i);
                    const std::size_t jb = (db.c == 1 ? 0 : j);
                    ga[ia * da.c + ja] +=
                        up[i * rc + j] * dfa((*pa)[ia * da.c + ja], (*pb)[ib * db.c + jb]);
                }
            }
        }
        if (nb >= 0) {
            Vector& gb = t.grad_buffer(nb, pb->size());
            for (std::size_t i = 0; i < rr; ++i) {
                const std::size_t ib = (db.r == 1 ? 0 : i);
                for (std::size_t j = 0; j < rc; ++j) {
                    const std::size_t jb = (db.c == 1 ? 0 : j);
                    const std::size_t ia = (da.r == 1 ? 0 : i);
                    const std::size_t ja = (da.c == 1 ? 0 : j);
                    gb[ib * db.c + jb] +=
                        up[i * rc + j] * dfb((*pa)[ia * da.c + ja], (*pb)[ib * db.c + jb]);
                }
            }
        }
    };
    return recorded(tape, std::move(out_shape), std::move(out), std::move(bw));
}

template <class Fwd, class Deriv>
Tensor unary_elementwise(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
    (void)name;
    const Vector& av = a.value();
    Vector out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    if (!a.on_tape()) return Tensor(a.shape(), std::move(out));
    const int na = a.node();
    auto pa = std::make_shared<Vector>(av);
    auto pout = std::make_shared<Vector>(out);
    auto bw = [=](Tape& t, const Vector& up) {
        Vector& ga = t.grad_buffer(na, pa->size());
        for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * deriv((*pa)[i], (*pout)[i]);
    };
    return recorded(a.tape(), a.shape(), std::move(out), std::move(bw));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_broadcast(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_broadcast(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_broadcast(
        a, b, "elementwise_mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    const Vector& av = a.value();
    const Vector& bv = b.value();
    Vector out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = av[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = &bv[kk * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    Tape* tape = common_tape(a, b, "matmul");
    if (!tape) return Tensor(Shape{m, n}, std::move(out));
    const int na = a.on_tape() ? a.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    auto pa = std::make_shared<Vector>(av);
    auto pb = std::make_shared<Vector>(bv);
    auto bw = [=](Tape& t, const Vector& up) {
        if (na >= 0) {  // dA = up * B^T
            Vector& ga = t.grad_buffer(na, m * k);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double u = up[i * n + j];
                    if (u == 0.0) continue;
                    const double* brow = &(*pb)[0] + j;  // column j of B
                    for (std::size_t kk = 0; kk < k; ++kk) ga[i * k + kk] += u * brow[kk * n];
                }
        }
        if (nb >= 0) {  // dB = A^T * up
            Vector& gb = t.grad_buffer(nb, k * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double aik = (*pa)[i * k + kk];
                    if (aik == 0.0) continue;
                    const double* urow = &up[i * n];
                    double* grow = &gb[kk * n];
                    for (std::size_t j = 0; j < n; ++j) grow[j] += aik * urow[j];
                }
        }
    };
    return recorded(tape, Shape{m, n}, std::move(out), std::move(bw));
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) throw ShapeMismatch("transpose: rank != 2 " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    const Vector& av = a.value();
    Vector out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    if (!a.on_tape()) return Tensor(Shape{c, r}, std::move(out));
    const int na = a.node();
    auto bw = [=](Tape& t, const Vector& up) {
        Vector& ga = t.grad_buffer(na, r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += up[j * r + i];
    };
    return recorded(a.tape(), Shape{c, r}, std::move(out), std::move(bw));
}

Tensor tanh(const Tensor& a) {
    return unary_elementwise(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
    // log(1 + e^x), computed on the stable branch
    return unary_elementwise(
        a, "softplus",
        [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor exp(const Tensor& a) {
    return unary_elementwise(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_elementwise(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary_elementwise(
        a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
    const Vector& av = a.value();
    double acc = 0.0;
    for (double v : av) acc += v;
    if (!a.on_tape()) return Tensor(acc);
    const int na = a.node();
    const std::size_t n = av.size();
    auto bw = [=](Tape& t, const Vector& up) {
        Vector& ga = t.grad_buffer(na, n);
        for (double& g : ga) g += up[0];
    };
    return recorded(a.tape(), Shape{}, Vector{acc}, std::move(bw));
}

Tensor mean(const Tensor& a) {
    const std::size_t n = a.numel();
    if (n == 0) throw ShapeMismatch("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor slice(const Tensor& a, std::size_t start, std::size_t len) {
    if (a.shape().size() != 1) throw ShapeMismatch("slice: rank != 1 " + shape_str(a.shape()));
    if (start + len > a.numel()) {
        throw ShapeMismatch("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                            ") out of " + shape_str(a.shape()));
    }
    const Vector& av = a.value();
    Vector out(av.begin() + static_cast<long>(start), av.begin() + static_cast<long>(start + len));
    if (!a.on_tape()) return Tensor(Shape{len}, std::move(out));
    const int na = a.node();
    const std::size_t n = av.size();
    auto bw = [=](Tape& t, const Vector& up) {
        Vector& ga = t.grad_buffer(na, n);
        for (std::size_t i = 0; i < len; ++i) ga[start + i] += up[i];
    };
    return recorded(a.tape(), Shape{len}, std::move(out), std::move(bw));
}

Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 1 || b.shape().size() != 1) {
        throw ShapeMismatch("concat: ranks " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()));
    }
    Vector out = a.value();
    out.insert(out.end(), b.value().begin(), b.value().end());
    Tape* tape = common_tape(a, b, "concat");
    const std::size_t la = a.numel(), lb = b.numel();
    if (!tape) return Tensor(Shape{la + lb}, std::move(out));
    const int na = a.on_tape() ? a.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    auto bw = [=](Tape& t, const Vector& up) {
        if (na >= 0) {
            Vector& ga = t.grad_buffer(na, la);
            for (std::size_t i = 0; i < la; ++i) ga[i] += up[i];
        }
        if (nb >= 0) {
            Vector& gb = t.grad_buffer(nb, lb);
            for (std::size_t i = 0; i < lb; ++i) gb[i] += up[la + i];
        }
    };
    return recorded(tape, Shape{la + lb}, std::move(out), std::move(bw));
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    Tensor zeros(shape, Vector(shape_numel(shape), 0.0));
    return add(a, zeros);
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    if (!a.on_tape()) return Tensor(shape, a.value());
    const int na = a.node();
    auto bw = [=](Tape& t, const Vector& up) { t.accumulate(na, up); };
    return recorded(a.tape(), shape, a.value(), std::move(bw));
}

Tensor scale(const Tensor& a, double s) {
    return unary_elementwise(
        a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_const(const Tensor& a, double c) {
    return unary_elementwise(
        a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor clamp_max(const Tensor& a, double cap) {
    return unary_elementwise(
        a, "clamp_max", [cap](double x) { return std::min(x, cap); },
        [cap](double x, double) { return x < cap ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor& a, double lo) {
    return unary_elementwise(
        a, "clamp_min", [lo](double x) { return std::max(x, lo); },
        [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor reciprocal(const Tensor& a) {
    return unary_elementwise(
        a, "reciprocal", [](double x) { return 1.0 / x; },
        [](double, double y) { return -y * y; });
}

Tensor row_sum(const Tensor& a) {
    if (a.shape().size() != 2) throw ShapeMismatch("row_sum: rank != 2 " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    const Vector& av = a.value();
    Vector out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += av[i * c + j];
    if (!a.on_tape()) return Tensor(Shape{r, 1}, std::move(out));
    const int na = a.node();
    auto bw = [=](Tape& t, const Vector& up) {
        Vector& ga = t.grad_buffer(na, r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += up[i];
    };
    return recorded(a.tape(), Shape{r, 1}, std::move(out), std::move(bw));
}

Tensor sigmoid(const Tensor& a) {
    // sigma(x) = exp(-softplus(-x))
    return exp(neg(softplus(neg(a))));
}

Tensor row_max_detached(const Tensor& a) {
    if (a.shape().size() != 2) {
        throw ShapeMismatch("row_max_detached: rank != 2 " + shape_str(a.shape()));
    }
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    const Vector& av = a.value();
    Vector out(r);
    for (std::size_t i = 0; i < r; ++i) {
        double m = av[i * c];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, av[i * c + j]);
        out[i] = m;
    }
    return Tensor(Shape{r, 1}, std::move(out));
}

Tensor logsumexp_rows(const Tensor& a) {
    const Tensor m = row_max_detached(a);
    return add(log(row_sum(exp(sub(a, m)))), m);
}

void adam_step(Vector& params, const Vector& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    if (params.size() != grads.size()) {
        throw ShapeMismatch("adam_step: params " + std::to_string(params.size()) + " vs grads " +
                            std::to_string(grads.size()));
    }
    if (state.m.empty()) state.m.assign(params.size(), 0.0);
    if (state.v.empty()) state.v.assign(params.size(), 0.0);
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeMismatch("adam_step: state size mismatch");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void sgd_momentum_step(Vector& params, const Vector& grads, SgdMomentumState& state, double lr,
                       double momentum) {
    if (params.size() != grads.size()) {
        throw ShapeMismatch("sgd_momentum_step: params " + std::to_string(params.size()) +
                            " vs grads " + std::to_string(grads.size()));
    }
    if (state.velocity.empty()) state.velocity.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.velocity[i] = momentum * state.velocity[i] + grads[i];
        params[i] -= lr * state.velocity[i];
    }
}

}  // namespace fidgp::ad
