#include "fam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace fam {

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str());
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

void axpy(Tensor& y, double a, const Tensor& x) {
    if (!y.same_shape(x)) throw ShapeError("axpy shape mismatch: " + y.shape_str() + " vs " + x.shape_str());
    double* yd = y.data();
    const double* xd = x.data();
    for (std::int64_t i = 0; i < y.size(); ++i) yd[i] += a * xd[i];
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax_rows expects a 2-D tensor, got " + logits.shape_str());
    const int m = logits.dim(0), n = logits.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, logits.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            out.at(i, j) = std::exp(logits.at(i, j) - mx);
            sum += out.at(i, j);
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= sum;
    }
    return out;
}

int argmax_row(const Tensor& t, int r) {
    int best = 0;
    for (int j = 1; j < t.dim(1); ++j) {
        if (t.at(r, j) > t.at(r, best)) best = j;
    }
    return best;
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

void GradTape::BackwardPass::add(GradTape& t, Var parent, Var contrib) {
    int& slot = grad_of[static_cast<std::size_t>(parent.id)];
    slot = (slot < 0) ? contrib.id : t.add(Var{slot}, contrib).id;
}

Var GradTape::push(Tensor value, bool needs_grad, std::function<void(GradTape&, BackwardPass&, Var, Var)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const GradTape::Node& GradTape::node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw ContractViolation("stale Var handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var GradTape::leaf(Tensor value) { return push(std::move(value), true, nullptr); }

Var GradTape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

const Tensor& GradTape::value(Var v) const { return node(v).value; }

bool GradTape::requires_grad(Var v) const { return node(v).needs_grad; }

bool GradTape::any_needs_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars) {
        if (node(v).needs_grad) return true;
    }
    return false;
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
}
}  // namespace

Var GradTape::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_shape(A, B, "add");
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
    return push(std::move(out), any_needs_grad({a, b}), [a, b](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, g);
        if (t.requires_grad(b)) bp.add(t, b, g);
    });
}

Var GradTape::sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_shape(A, B, "sub");
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
    return push(std::move(out), any_needs_grad({a, b}), [a, b](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, g);
        if (t.requires_grad(b)) bp.add(t, b, t.scale(g, -1.0));
    });
}

Var GradTape::mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_shape(A, B, "mul");
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
    return push(std::move(out), any_needs_grad({a, b}), [a, b](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.mul(g, b));
        if (t.requires_grad(b)) bp.add(t, b, t.mul(g, a));
    });
}

Var GradTape::div(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_shape(A, B, "div");
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] / B[i];
    return push(std::move(out), any_needs_grad({a, b}), [a, b](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.div(g, b));
        if (t.requires_grad(b)) {
            // d/dB (A/B) = -A/B^2
            bp.add(t, b, t.scale(t.div(t.mul(g, a), t.mul(b, b)), -1.0));
        }
    });
}

Var GradTape::scale(Var a, double c) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] * c;
    return push(std::move(out), any_needs_grad({a}), [a, c](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.scale(g, c));
    });
}

Var GradTape::exp(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = std::exp(A[i]);
    return push(std::move(out), any_needs_grad({a}), [a](GradTape& t, BackwardPass& bp, Var self, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.mul(g, self));
    });
}

Var GradTape::log(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = std::log(A[i]);
    return push(std::move(out), any_needs_grad({a}), [a](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.div(g, a));
    });
}

Var GradTape::relu(Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
    return push(std::move(out), any_needs_grad({a}), [a](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (!t.requires_grad(a)) return;
        // The 0/1 activation pattern is a constant of differentiation.
        const Tensor& X = t.value(a);
        Tensor step(X.shape());
        for (std::int64_t i = 0; i < X.size(); ++i) step[i] = X[i] > 0.0 ? 1.0 : 0.0;
        bp.add(t, a, t.mul(g, t.constant(std::move(step))));
    });
}

Var GradTape::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
        throw ShapeError("matmul shape mismatch: " + A.shape_str() + " x " + B.shape_str());
    }
    const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = A.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
        }
    }
    return push(std::move(out), any_needs_grad({a, b}), [a, b](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.matmul(g, t.transpose(b)));
        if (t.requires_grad(b)) bp.add(t, b, t.matmul(t.transpose(a), g));
    });
}

Var GradTape::transpose(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 2) throw ShapeError("transpose expects a 2-D tensor, got " + A.shape_str());
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
    return push(std::move(out), any_needs_grad({a}), [a](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(a)) bp.add(t, a, t.transpose(g));
    });
}

Var GradTape::add_rowvec(Var x, Var bias) {
    const Tensor& X = value(x);
    const Tensor& B = value(bias);
    if (X.rank() != 2 || B.rank() != 1 || B.dim(0) != X.dim(1)) {
        throw ShapeError("add_rowvec shape mismatch: " + X.shape_str() + " + " + B.shape_str());
    }
    const int m = X.dim(0), n = X.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = X.at(i, j) + B[j];
    return push(std::move(out), any_needs_grad({x, bias}), [x, bias](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, g);
        if (t.requires_grad(bias)) bp.add(t, bias, t.col_sums(g));
    });
}

Var GradTape::reshape(Var x, std::vector<int> shape) {
    const Tensor& X = value(x);
    if (shape_size(shape) != X.size()) {
        throw ShapeError("reshape size mismatch: " + X.shape_str() + " has " + std::to_string(X.size()) + " elements");
    }
    Tensor out(shape, std::vector<double>(X.data(), X.data() + X.size()));
    std::vector<int> old_shape = X.shape();
    return push(std::move(out), any_needs_grad({x}), [x, old_shape](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, t.reshape(g, old_shape));
    });
}

namespace {
// [C,H,W] -> (1,C,H*W); [N,C,H,W] -> (N,C,H*W)
void chan_dims(const Tensor& x, int& batch, int& ch, std::int64_t& plane) {
    if (x.rank() == 3) {
        batch = 1;
        ch = x.dim(0);
        plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
    } else if (x.rank() == 4) {
        batch = x.dim(0);
        ch = x.dim(1);
        plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    } else {
        throw ShapeError("expected [C,H,W] or [N,C,H,W], got " + x.shape_str());
    }
}
}  // namespace

Var GradTape::add_chan_bias(Var x, Var bias) {
    const Tensor& X = value(x);
    const Tensor& B = value(bias);
    int batch, ch;
    std::int64_t plane;
    chan_dims(X, batch, ch, plane);
    if (B.rank() != 1 || B.dim(0) != ch) {
        throw ShapeError("add_chan_bias shape mismatch: " + X.shape_str() + " + " + B.shape_str());
    }
    Tensor out(X.shape());
    for (int nb = 0; nb < batch; ++nb)
        for (int c = 0; c < ch; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(nb) * ch + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) out[base + i] = X[base + i] + B[c];
        }
    return push(std::move(out), any_needs_grad({x, bias}), [x, bias](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, g);
        if (t.requires_grad(bias)) bp.add(t, bias, t.chan_sums(g));
    });
}

Var GradTape::chan_sums(Var x) {
    const Tensor& X = value(x);
    int batch, ch;
    std::int64_t plane;
    chan_dims(X, batch, ch, plane);
    Tensor out({ch});
    for (int nb = 0; nb < batch; ++nb)
        for (int c = 0; c < ch; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(nb) * ch + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) out[c] += X[base + i];
        }
    std::vector<int> shape = X.shape();
    return push(std::move(out), any_needs_grad({x}), [x, shape](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, t.expand_chan(g, shape));
    });
}

Var GradTape::expand_chan(Var v, std::vector<int> shape) {
    const Tensor& V = value(v);
    Tensor out(shape);
    int batch, ch;
    std::int64_t plane;
    chan_dims(out, batch, ch, plane);
    if (V.rank() != 1 || V.dim(0) != ch) {
        throw ShapeError("expand_chan shape mismatch: " + V.shape_str() + " -> " + out.shape_str());
    }
    for (int nb = 0; nb < batch; ++nb)
        for (int c = 0; c < ch; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(nb) * ch + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) out[base + i] = V[c];
        }
    return push(std::move(out), any_needs_grad({v}), [v](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(v)) bp.add(t, v, t.chan_sums(g));
    });
}

Var GradTape::col_sums(Var x) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw ShapeError("col_sums expects a 2-D tensor, got " + X.shape_str());
    const int m = X.dim(0), n = X.dim(1);
    Tensor out({n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += X.at(i, j);
    return push(std::move(out), any_needs_grad({x}), [x, m](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, t.expand_rows(g, m));
    });
}

Var GradTape::expand_rows(Var v, int rows) {
    const Tensor& V = value(v);
    if (V.rank() != 1) throw ShapeError("expand_rows expects a 1-D tensor, got " + V.shape_str());
    const int n = V.dim(0);
    Tensor out({rows, n});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = V[j];
    return push(std::move(out), any_needs_grad({v}), [v](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(v)) bp.add(t, v, t.col_sums(g));
    });
}

Var GradTape::row_sums(Var x) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw ShapeError("row_sums expects a 2-D tensor, got " + X.shape_str());
    const int m = X.dim(0), n = X.dim(1);
    Tensor out({m, 1});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i] += X.at(i, j);
    return push(std::move(out), any_needs_grad({x}), [x, n](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, t.expand_cols(g, n));
    });
}

Var GradTape::expand_cols(Var v, int cols) {
    const Tensor& V = value(v);
    if (V.rank() != 2 || V.dim(1) != 1) throw ShapeError("expand_cols expects [m,1], got " + V.shape_str());
    const int m = V.dim(0);
    Tensor out({m, cols});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cols; ++j) out.at(i, j) = V[i];
    return push(std::move(out), any_needs_grad({v}), [v](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(v)) bp.add(t, v, t.row_sums(g));
    });
}

Var GradTape::sum_all(Var x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (std::int64_t i = 0; i < X.size(); ++i) s += X[i];
    std::vector<int> shape = X.shape();
    return push(Tensor::scalar(s), any_needs_grad({x}), [x, shape](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(x)) bp.add(t, x, t.expand_full(g, shape));
    });
}

Var GradTape::expand_full(Var s, std::vector<int> shape) {
    const Tensor& S = value(s);
    if (S.size() != 1) throw ShapeError("expand_full expects a scalar, got " + S.shape_str());
    Tensor out = Tensor::full(shape, S[0]);
    return push(std::move(out), any_needs_grad({s}), [s](GradTape& t, BackwardPass& bp, Var, Var g) {
        if (t.requires_grad(s)) bp.add(t, s, t.sum_all(g));
    });
}

Var GradTape::pick_rows(Var x, std::vector<int> labels) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw ShapeError("pick_rows expects a 2-D tensor, got " + X.shape_str());
    const int m = X.dim(0), n = X.dim(1);
    if (static_cast<int>(labels.size()) != m) {
        throw ShapeError("pick_rows: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) + " rows");
    }
    Tensor out({m, 1});
    for (int i = 0; i < m; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= n) throw InputError("label " + std::to_string(y) + " out of range [0," + std::to_string(n) + ")");
        out[i] = X.at(i, y);
    }
    return push(std::move(out), any_needs_grad({x}),
                [x, labels = std::move(labels), n](GradTape& t, BackwardPass& bp, Var, Var g) {
                    if (t.requires_grad(x)) bp.add(t, x, t.pick_scatter(g, labels, n));
                });
}

Var GradTape::pick_scatter(Var p, std::vector<int> labels, int cols) {
    const Tensor& P = value(p);
    if (P.rank() != 2 || P.dim(1) != 1) throw ShapeError("pick_scatter expects [m,1], got " + P.shape_str());
    const int m = P.dim(0);
    Tensor out({m, cols});
    for (int i = 0; i < m; ++i) out.at(i, labels[static_cast<std::size_t>(i)]) = P[i];
    return push(std::move(out), any_needs_grad({p}),
                [p, labels = std::move(labels)](GradTape& t, BackwardPass& bp, Var, Var g) {
                    if (t.requires_grad(p)) bp.add(t, p, t.pick_rows(g, labels));
                });
}

Var GradTape::rowmax_detached(Var x) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw ShapeError("rowmax_detached expects a 2-D tensor, got " + X.shape_str());
    const int m = X.dim(0), n = X.dim(1);
    Tensor out({m, 1});
    for (int i = 0; i < m; ++i) {
        double mx = X.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, X.at(i, j));
        out[i] = mx;
    }
    return constant(std::move(out));
}

// ---------------------------------------------------------------------------
// Convolution family. <conv(X,K), G> is trilinear in (X, K, G); the three
// operations below are its partial contractions and are mutually adjoint,
// which closes the family under repeated differentiation.
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int batch, in_ch, h, w, filters;
    bool batched;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels) {
    if (kernels.rank() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3) {
        throw ShapeError("conv2d kernels must be [F,C,3,3], got " + kernels.shape_str());
    }
    ConvDims d{};
    d.filters = kernels.dim(0);
    if (input.rank() == 3) {
        d.batched = false;
        d.batch = 1;
        d.in_ch = input.dim(0);
        d.h = input.dim(1);
        d.w = input.dim(2);
    } else if (input.rank() == 4) {
        d.batched = true;
        d.batch = input.dim(0);
        d.in_ch = input.dim(1);
        d.h = input.dim(2);
        d.w = input.dim(3);
    } else {
        throw ShapeError("conv2d input must be [C,H,W] or [N,C,H,W], got " + input.shape_str());
    }
    if (d.in_ch != kernels.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + input.shape_str() + " vs kernels " + kernels.shape_str());
    }
    return d;
}

// out[n,f,y,x] += sum_{c,dy,dx} in[n,c,y+dy-1,x+dx-1] * ker[f,c,dy,dx]
void conv_forward(const Tensor& in, const Tensor& ker, Tensor& out, const ConvDims& d) {
    const int H = d.h, W = d.w;
    for (int nb = 0; nb < d.batch; ++nb) {
        const double* inb = in.data() + static_cast<std::int64_t>(nb) * d.in_ch * H * W;
        double* outb = out.data() + static_cast<std::int64_t>(nb) * d.filters * H * W;
        for (int f = 0; f < d.filters; ++f) {
            for (int c = 0; c < d.in_ch; ++c) {
                const double* plane = inb + static_cast<std::int64_t>(c) * H * W;
                const double* k = ker.data() + (static_cast<std::int64_t>(f) * d.in_ch + c) * 9;
                double* o = outb + static_cast<std::int64_t>(f) * H * W;
                for (int y = 0; y < H; ++y) {
                    for (int dy = 0; dy < 3; ++dy) {
                        const int sy = y + dy - 1;
                        if (sy < 0 || sy >= H) continue;
                        const double* row = plane + static_cast<std::int64_t>(sy) * W;
                        for (int dx = 0; dx < 3; ++dx) {
                            const double kv = k[dy * 3 + dx];
                            if (kv == 0.0) continue;
                            const int x0 = std::max(0, 1 - dx);
                            const int x1 = std::min(W, W + 1 - dx);
                            double* orow = o + static_cast<std::int64_t>(y) * W;
                            for (int x = x0; x < x1; ++x) orow[x] += kv * row[x + dx - 1];
                        }
                    }
                }
            }
        }
    }
}

// in_grad[n,c,sy,sx] += sum_{f,dy,dx} g[n,f,sy-dy+1,sx-dx+1] * ker[f,c,dy,dx]
void conv_grad_input(const Tensor& g, const Tensor& ker, Tensor& in_grad, const ConvDims& d) {
    const int H = d.h, W = d.w;
    for (int nb = 0; nb < d.batch; ++nb) {
        const double* gb = g.data() + static_cast<std::int64_t>(nb) * d.filters * H * W;
        double* ib = in_grad.data() + static_cast<std::int64_t>(nb) * d.in_ch * H * W;
        for (int f = 0; f < d.filters; ++f) {
            const double* gp = gb + static_cast<std::int64_t>(f) * H * W;
            for (int c = 0; c < d.in_ch; ++c) {
                const double* k = ker.data() + (static_cast<std::int64_t>(f) * d.in_ch + c) * 9;
                double* ip = ib + static_cast<std::int64_t>(c) * H * W;
                for (int y = 0; y < H; ++y) {
                    for (int dy = 0; dy < 3; ++dy) {
                        const int sy = y + dy - 1;
                        if (sy < 0 || sy >= H) continue;
                        for (int dx = 0; dx < 3; ++dx) {
                            const double kv = k[dy * 3 + dx];
                            if (kv == 0.0) continue;
                            const int x0 = std::max(0, 1 - dx);
                            const int x1 = std::min(W, W + 1 - dx);
                            const double* grow = gp + static_cast<std::int64_t>(y) * W;
                            double* irow = ip + static_cast<std::int64_t>(sy) * W;
                            for (int x = x0; x < x1; ++x) irow[x + dx - 1] += kv * grow[x];
                        }
                    }
                }
            }
        }
    }
}

// ker_grad[f,c,dy,dx] += sum_{n,y,x} g[n,f,y,x] * in[n,c,y+dy-1,x+dx-1]
void conv_grad_kernels(const Tensor& g, const Tensor& in, Tensor& ker_grad, const ConvDims& d) {
    const int H = d.h, W = d.w;
    for (int nb = 0; nb < d.batch; ++nb) {
        const double* gb = g.data() + static_cast<std::int64_t>(nb) * d.filters * H * W;
        const double* inb = in.data() + static_cast<std::int64_t>(nb) * d.in_ch * H * W;
        for (int f = 0; f < d.filters; ++f) {
            const double* gp = gb + static_cast<std::int64_t>(f) * H * W;
            for (int c = 0; c < d.in_ch; ++c) {
                const double* plane = inb + static_cast<std::int64_t>(c) * H * W;
                double* k = ker_grad.data() + (static_cast<std::int64_t>(f) * d.in_ch + c) * 9;
                for (int dy = 0; dy < 3; ++dy) {
                    for (int dx = 0; dx < 3; ++dx) {
                        double acc = 0.0;
                        for (int y = 0; y < H; ++y) {
                            const int sy = y + dy - 1;
                            if (sy < 0 || sy >= H) continue;
                            const int x0 = std::max(0, 1 - dx);
                            const int x1 = std::min(W, W + 1 - dx);
                            const double* grow = gp + static_cast<std::int64_t>(y) * W;
                            const double* irow = plane + static_cast<std::int64_t>(sy) * W;
                            for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x + dx - 1];
                        }
                        k[dy * 3 + dx] += acc;
                    }
                }
            }
        }
    }
}

}  // namespace

Var GradTape::conv2d(Var input, Var kernels) {
    const Tensor& X = value(input);
    const Tensor& K = value(kernels);
    const ConvDims d = conv_dims(X, K);
    std::vector<int> out_shape = d.batched ? std::vector<int>{d.batch, d.filters, d.h, d.w}
                                           : std::vector<int>{d.filters, d.h, d.w};
    Tensor out(out_shape);
    conv_forward(X, K, out, d);
    std::vector<int> in_shape = X.shape();
    std::vector<int> k_shape = K.shape();
    return push(std::move(out), any_needs_grad({input, kernels}),
                [input, kernels, in_shape, k_shape](GradTape& t, BackwardPass& bp, Var, Var g) {
                    if (t.requires_grad(input)) bp.add(t, input, t.conv2d_grad_input(g, kernels, in_shape));
                    if (t.requires_grad(kernels)) bp.add(t, kernels, t.conv2d_grad_kernels(g, input, k_shape));
                });
}

Var GradTape::conv2d_grad_input(Var grad_out, Var kernels, std::vector<int> input_shape) {
    const Tensor& G = value(grad_out);
    const Tensor& K = value(kernels);
    Tensor out(input_shape);
    const ConvDims d = conv_dims(out, K);
    conv_grad_input(G, K, out, d);
    std::vector<int> k_shape = K.shape();
    return push(std::move(out), any_needs_grad({grad_out, kernels}),
                [grad_out, kernels, k_shape](GradTape& t, BackwardPass& bp, Var self, Var g) {
                    if (t.requires_grad(grad_out)) bp.add(t, grad_out, t.conv2d(g, kernels));
                    if (t.requires_grad(kernels)) bp.add(t, kernels, t.conv2d_grad_kernels(grad_out, g, k_shape));
                    (void)self;
                });
}

Var GradTape::conv2d_grad_kernels(Var grad_out, Var input, std::vector<int> kernel_shape) {
    const Tensor& G = value(grad_out);
    const Tensor& X = value(input);
    Tensor out(kernel_shape);
    const ConvDims d = conv_dims(X, out);
    conv_grad_kernels(G, X, out, d);
    std::vector<int> in_shape = X.shape();
    return push(std::move(out), any_needs_grad({grad_out, input}),
                [grad_out, input, in_shape](GradTape& t, BackwardPass& bp, Var, Var g) {
                    if (t.requires_grad(grad_out)) bp.add(t, grad_out, t.conv2d(input, g));
                    if (t.requires_grad(input)) bp.add(t, input, t.conv2d_grad_input(grad_out, g, in_shape));
                });
}

// ---------------------------------------------------------------------------
// Max pooling via the take/unpool adjoint pair.
// ---------------------------------------------------------------------------

Var GradTape::take(Var src, std::shared_ptr<const std::vector<std::int64_t>> idx, std::vector<int> out_shape) {
    const Tensor& S = value(src);
    Tensor out(out_shape);
    for (std::size_t o = 0; o < idx->size(); ++o) out[static_cast<std::int64_t>(o)] = S[(*idx)[o]];
    std::vector<int> in_shape = S.shape();
    return push(std::move(out), any_needs_grad({src}),
                [src, idx, in_shape](GradTape& t, BackwardPass& bp, Var, Var g) {
                    if (t.requires_grad(src)) bp.add(t, src, t.unpool(g, idx, in_shape));
                });
}

Var GradTape::unpool(Var g, std::shared_ptr<const std::vector<std::int64_t>> idx, std::vector<int> out_shape) {
    const Tensor& G = value(g);
    Tensor out(out_shape);
    for (std::size_t o = 0; o < idx->size(); ++o) out[(*idx)[o]] += G[static_cast<std::int64_t>(o)];
    std::vector<int> g_shape = G.shape();
    return push(std::move(out), any_needs_grad({g}), [g, idx, g_shape](GradTape& t, BackwardPass& bp, Var, Var gg) {
        if (t.requires_grad(g)) bp.add(t, g, t.take(gg, idx, g_shape));
    });
}

Var GradTape::max_pool_2x2(Var input) {
    const Tensor& X = value(input);
    int batch = 1, ch, h, w;
    bool batched;
    if (X.rank() == 3) {
        batched = false;
        ch = X.dim(0);
        h = X.dim(1);
        w = X.dim(2);
    } else if (X.rank() == 4) {
        batched = true;
        batch = X.dim(0);
        ch = X.dim(1);
        h = X.dim(2);
        w = X.dim(3);
    } else {
        throw ShapeError("max_pool_2x2 input must be [C,H,W] or [N,C,H,W], got " + X.shape_str());
    }
    const int oh = std::max(1, h / 2), ow = std::max(1, w / 2);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(batch) * ch * oh * ow);
    for (int nb = 0; nb < batch; ++nb) {
        for (int c = 0; c < ch; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(nb) * ch + c) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const int y0 = 2 * oy, x0 = 2 * ox;
                    std::int64_t best = base + static_cast<std::int64_t>(y0) * w + x0;
                    double bv = X[best];
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int y = y0 + dy, x = x0 + dx;
                            if (y >= h || x >= w) continue;
                            const std::int64_t pos = base + static_cast<std::int64_t>(y) * w + x;
                            if (X[pos] > bv) {
                                bv = X[pos];
                                best = pos;
                            }
                        }
                    }
                    idx->push_back(best);
                }
            }
        }
    }
    std::vector<int> out_shape = batched ? std::vector<int>{batch, ch, oh, ow} : std::vector<int>{ch, oh, ow};
    return take(input, std::move(idx), std::move(out_shape));
}

Var GradTape::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    const Tensor& L = value(logits);
    if (L.rank() != 2) throw ShapeError("softmax_cross_entropy expects 2-D logits, got " + L.shape_str());
    const int m = L.dim(0), n = L.dim(1);
    if (static_cast<int>(labels.size()) != m) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
    }
    // Stable logsumexp: the row max enters as a detached constant, which
    // leaves the analytic gradient unchanged.
    Var mx = rowmax_detached(logits);
    Var shifted = sub(logits, expand_cols(mx, n));
    Var lse = add(log(row_sums(exp(shifted))), mx);
    Var picked = pick_rows(logits, labels);
    return scale(sum_all(sub(lse, picked)), 1.0 / m);
}

Gradients GradTape::backward(Var loss) {
    if (value(loss).size() != 1) {
        throw ContractViolation("backward: loss must be scalar, got shape " + value(loss).shape_str());
    }
    BackwardPass bp;
    bp.grad_of.assign(static_cast<std::size_t>(loss.id) + 1, -1);
    bp.grad_of[static_cast<std::size_t>(loss.id)] = constant(Tensor::scalar(1.0)).id;
    for (int id = loss.id; id >= 0; --id) {
        const int gid = bp.grad_of[static_cast<std::size_t>(id)];
        if (gid < 0) continue;
        const Node& nd = nodes_[static_cast<std::size_t>(id)];
        if (!nd.needs_grad || !nd.backprop) continue;
        nd.backprop(*this, bp, Var{id}, Var{gid});
    }
    return Gradients(std::move(bp.grad_of));
}

std::optional<Var> Gradients::at(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(grad_ids_.size())) return std::nullopt;
    const int gid = grad_ids_[static_cast<std::size_t>(v.id)];
    if (gid < 0) return std::nullopt;
    return Var{gid};
}

Tensor Gradients::value_or_zero(const GradTape& tape, Var v) const {
    if (auto g = at(v)) return tape.value(*g);
    return Tensor::zeros(tape.value(v).shape());
}

}  // namespace fam
