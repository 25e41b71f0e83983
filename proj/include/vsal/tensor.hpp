#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vsal {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or channel-count mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid model/pipeline configuration (e.g. input side not divisible by 8).
struct ConfigError : Error {
    using Error::Error;
};

/// A map is constant where a non-zero variance is required.
struct DegenerateMapError : Error {
    using Error::Error;
};

/// A fixation map with no fixations was passed where at least one is required.
struct NoFixationsError : Error {
    using Error::Error;
};

/// Malformed or inconsistent input data (files, CSV rows, manifests).
struct DataError : Error {
    using Error::Error;
};

/// Non-finite values where finite math is required (NaN gradients, divergence).
struct NumericalError : Error {
    using Error::Error;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> data;   // row-major
    bool requires_grad = false;
    std::vector<double> grad;   // same length as data iff requires_grad
};

}  // namespace detail

/// Dense row-major tensor handle with shared storage. Copying a Tensor
/// aliases the same buffer; use deep_copy() for an independent snapshot.
/// Gradients live beside the data and are accumulated by GradTape::backward.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>()) {
        std::size_t n = shape_numel(shape);
        d_->shape = std::move(shape);
        d_->data.assign(n, 0.0);
        d_->requires_grad = requires_grad;
        if (requires_grad) d_->grad.assign(n, 0.0);
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>()) {
        std::size_t n = shape_numel(shape);
        if (values.size() != n)
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->data = std::move(values);
        d_->requires_grad = requires_grad;
        if (requires_grad) d_->grad.assign(n, 0.0);
    }

    // Braced value lists would otherwise prefer the (Shape, bool) overload.
    Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
        : Tensor(std::move(shape), std::vector<double>(values), requires_grad) {}

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, std::vector<double>{v}, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (double& x : t.data()) x = v;
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->data.size(); }
    int dim(std::size_t i) const { return d_->shape.at(i); }
    int ndim() const { return static_cast<int>(d_->shape.size()); }

    std::vector<double>& data() { return d_->data; }
    const std::vector<double>& data() const { return d_->data; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool on) {
        d_->requires_grad = on;
        if (on)
            d_->grad.assign(d_->data.size(), 0.0);
        else
            d_->grad.clear();
    }

    std::vector<double>& grad() {
        if (!d_->requires_grad) throw Error("tensor has no gradient accumulator");
        return d_->grad;
    }
    const std::vector<double>& grad() const {
        if (!d_->requires_grad) throw Error("tensor has no gradient accumulator");
        return d_->grad;
    }

    void zero_grad() {
        if (d_->requires_grad) d_->grad.assign(d_->data.size(), 0.0);
    }

    double value() const {
        if (numel() != 1) throw DimensionError("value() requires a scalar tensor");
        return d_->data[0];
    }

    /// Independent copy of shape + data (gradient buffer reset to zero).
    Tensor deep_copy() const {
        Tensor t(d_->shape, d_->data, d_->requires_grad);
        return t;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    // Row-major accessors for the layouts used throughout: [H,W], [H,W,C]
    // and conv kernels [k,k,Cin,Cout].
    double& at(int r, int c) {
        return d_->data[static_cast<std::size_t>(r) * dim(1) + c];
    }
    double at(int r, int c) const {
        return d_->data[static_cast<std::size_t>(r) * dim(1) + c];
    }
    double& at(int r, int c, int ch) {
        return d_->data[(static_cast<std::size_t>(r) * dim(1) + c) * dim(2) + ch];
    }
    double at(int r, int c, int ch) const {
        return d_->data[(static_cast<std::size_t>(r) * dim(1) + c) * dim(2) + ch];
    }
    double& at(int a, int b, int c, int d) {
        return d_->data[((static_cast<std::size_t>(a) * dim(1) + b) * dim(2) + c) * dim(3) + d];
    }
    double at(int a, int b, int c, int d) const {
        return d_->data[((static_cast<std::size_t>(a) * dim(1) + b) * dim(2) + c) * dim(3) + d];
    }

    bool all_finite() const {
        for (double v : d_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<detail::TensorData> impl() const { return d_; }

private:
    std::shared_ptr<detail::TensorData> d_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape();
}

/// Ordered record of executed differentiable operations. Ops append their
/// backward closures in execution order; backward() replays the record in
/// reverse, so every node runs exactly once and only after all its consumers.
///
/// At most one tape is active per thread. Ops record onto the active tape
/// when at least one input requires a gradient; with no active tape the
/// forward pass runs grad-free.
class GradTape {
public:
    GradTape() {
        prev_ = active_;
        active_ = this;
    }
    ~GradTape() {
        if (active_ == this) active_ = prev_;
        // A tape destroyed out of LIFO order just unhooks itself.
        else if (prev_ == this) prev_ = nullptr;
    }
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active() { return active_; }

    void record(Tensor output, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(output), std::move(backward)});
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Accumulates d(loss)/d(x) into the grad buffer of every tensor with
    /// requires_grad that participated in producing `loss`. Repeated calls
    /// keep accumulating until grads are cleared.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw DimensionError("backward requires a scalar loss, got shape " +
                                 shape_str(loss.shape()));
        bool recorded = false;
        for (const Node& n : nodes_) {
            if (n.output.same_storage(loss)) {
                recorded = true;
                break;
            }
        }
        if (!recorded)
            throw Error("loss was not produced through operations recorded on this tape");
        // Intermediate grads are scratch space per pass; leaf grads accumulate.
        for (Node& n : nodes_) std::fill(n.output.impl()->grad.begin(), n.output.impl()->grad.end(), 0.0);
        loss.impl()->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    }

private:
    struct Node {
        Tensor output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    GradTape* prev_ = nullptr;
    inline static thread_local GradTape* active_ = nullptr;
};

namespace detail {

// An op output tracks gradients only while a tape is listening.
inline bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (GradTape::active() == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

}  // namespace vsal
