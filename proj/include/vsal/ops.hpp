#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "vsal/tensor.hpp"

namespace vsal {

enum class Activation { Sigmoid, Tanh, Relu };

namespace detail {

inline Tensor make_output(Shape shape, bool traced) {
    return Tensor(std::move(shape), traced);
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// lerp keeps results inside [min(a,b), max(a,b)], which upsampling relies on.
inline double lerp(double a, double b, double t) {
    return a + t * (b - a);
}

}  // namespace detail

/// 2-D convolution over a [H,W,Cin] input with a [k,k,Cin,Cout] kernel,
/// zero padding and square stride. Output is [H',W',Cout] with
/// H' = floor((H + 2*padding - k)/stride) + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int stride = 1, int padding = 0) {
    if (input.ndim() != 3)
        throw DimensionError("conv2d input must be [H,W,Cin], got " + shape_str(input.shape()));
    if (kernel.ndim() != 4 || kernel.dim(0) != kernel.dim(1))
        throw DimensionError("conv2d kernel must be [k,k,Cin,Cout], got " + shape_str(kernel.shape()));
    const int H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
    const int k = kernel.dim(0), Cout = kernel.dim(3);
    if (kernel.dim(2) != Cin)
        throw DimensionError("conv2d kernel expects " + std::to_string(kernel.dim(2)) +
                             " input channels, input has " + std::to_string(Cin));
    if (bias.ndim() != 1 || bias.dim(0) != Cout)
        throw DimensionError("conv2d bias must be [Cout]");
    if (stride < 1) throw DimensionError("conv2d stride must be positive");
    if (padding < 0) throw DimensionError("conv2d padding must be non-negative");
    if (k > H + 2 * padding || k > W + 2 * padding)
        throw DimensionError("conv2d kernel larger than padded input");

    const int OH = (H + 2 * padding - k) / stride + 1;
    const int OW = (W + 2 * padding - k) / stride + 1;
    const bool traced = detail::tracing({&input, &kernel, &bias});
    Tensor out = detail::make_output({OH, OW, Cout}, traced);

    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    double* o = out.data().data();
    for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
            double* opx = o + (static_cast<std::size_t>(oy) * OW + ox) * Cout;
            for (int c = 0; c < Cout; ++c) opx[c] = bias.data()[c];
            const int by = oy * stride - padding, bx = ox * stride - padding;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = by + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = bx + kx;
                    if (ix < 0 || ix >= W) continue;
                    const double* ipx = in + (static_cast<std::size_t>(iy) * W + ix) * Cin;
                    const double* kpx = ker + (static_cast<std::size_t>(ky) * k + kx) * Cin * Cout;
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = ipx[ci];
                        const double* kr = kpx + static_cast<std::size_t>(ci) * Cout;
                        for (int c = 0; c < Cout; ++c) opx[c] += v * kr[c];
                    }
                }
            }
        }
    }

    if (traced) {
        GradTape::active()->record(out, [input, kernel, bias, out, stride, padding]() {
            const int H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
            const int k = kernel.dim(0), Cout = kernel.dim(3);
            const int OH = out.dim(0), OW = out.dim(1);
            const double* go = out.grad().data();
            const double* in = input.data().data();
            const double* ker = kernel.data().data();
            const bool gi = input.requires_grad(), gk = kernel.requires_grad(), gb = bias.requires_grad();
            double* din = gi ? input.impl()->grad.data() : nullptr;
            double* dker = gk ? kernel.impl()->grad.data() : nullptr;
            double* dbias = gb ? bias.impl()->grad.data() : nullptr;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    const double* gpx = go + (static_cast<std::size_t>(oy) * OW + ox) * Cout;
                    if (gb)
                        for (int c = 0; c < Cout; ++c) dbias[c] += gpx[c];
                    if (!gi && !gk) continue;
                    const int by = oy * stride - padding, bx = ox * stride - padding;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = by + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = bx + kx;
                            if (ix < 0 || ix >= W) continue;
                            const std::size_t ioff = (static_cast<std::size_t>(iy) * W + ix) * Cin;
                            const std::size_t koff = (static_cast<std::size_t>(ky) * k + kx) * Cin * Cout;
                            for (int ci = 0; ci < Cin; ++ci) {
                                const double* kr = ker + koff + static_cast<std::size_t>(ci) * Cout;
                                double acc = 0.0;
                                if (gk) {
                                    const double v = in[ioff + ci];
                                    double* dkr = dker + koff + static_cast<std::size_t>(ci) * Cout;
                                    for (int c = 0; c < Cout; ++c) {
                                        const double g = gpx[c];
                                        acc += g * kr[c];
                                        dkr[c] += v * g;
                                    }
                                } else {
                                    for (int c = 0; c < Cout; ++c) acc += gpx[c] * kr[c];
                                }
                                if (gi) din[ioff + ci] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Max pooling over [H,W,C]; gradient goes to the first (row-major) maximal
/// element of each window.
inline Tensor max_pool2d(const Tensor& input, int window, int stride) {
    if (input.ndim() != 3)
        throw DimensionError("max_pool2d input must be [H,W,C]");
    const int H = input.dim(0), W = input.dim(1), C = input.dim(2);
    if (window < 1 || stride < 1)
        throw DimensionError("max_pool2d window and stride must be positive");
    if (window > H || window > W)
        throw DimensionError("max_pool2d window exceeds spatial extent");

    const int OH = (H - window) / stride + 1;
    const int OW = (W - window) / stride + 1;
    const bool traced = detail::tracing({&input});
    Tensor out = detail::make_output({OH, OW, C}, traced);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());

    const double* in = input.data().data();
    double* o = out.data().data();
    for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
            for (int c = 0; c < C; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (int ky = 0; ky < window; ++ky) {
                    for (int kx = 0; kx < window; ++kx) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(oy * stride + ky) * W + (ox * stride + kx)) * C + c;
                        if (in[idx] > best) {
                            best = in[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t oidx = (static_cast<std::size_t>(oy) * OW + ox) * C + c;
                o[oidx] = best;
                (*argmax)[oidx] = best_idx;
            }
        }
    }

    if (traced) {
        GradTape::active()->record(out, [input, out, argmax]() {
            if (!input.requires_grad()) return;
            double* din = input.impl()->grad.data();
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < out.numel(); ++i) din[(*argmax)[i]] += go[i];
        });
    }
    return out;
}

/// Corner-aligned bilinear upsampling of [H,W,C] by an integer factor.
/// Factor 1 is a bitwise identity.
inline Tensor upsample_bilinear(const Tensor& input, int factor) {
    if (input.ndim() != 3)
        throw DimensionError("upsample_bilinear input must be [H,W,C]");
    if (factor < 1) throw DimensionError("upsample factor must be >= 1");
    const int H = input.dim(0), W = input.dim(1), C = input.dim(2);
    const int OH = H * factor, OW = W * factor;

    struct Axis {
        int lo, hi;
        double w;
    };
    auto make_axis = [](int in_n, int out_n) {
        std::vector<Axis> ax(out_n);
        for (int i = 0; i < out_n; ++i) {
            double src = (out_n > 1 && in_n > 1)
                             ? static_cast<double>(i) * (in_n - 1) / (out_n - 1)
                             : 0.0;
            int lo = static_cast<int>(std::floor(src));
            if (lo > in_n - 1) lo = in_n - 1;
            int hi = std::min(lo + 1, in_n - 1);
            ax[i] = {lo, hi, src - lo};
        }
        return ax;
    };
    const auto ys = make_axis(H, OH), xs = make_axis(W, OW);

    const bool traced = detail::tracing({&input});
    Tensor out = detail::make_output({OH, OW, C}, traced);
    const double* in = input.data().data();
    double* o = out.data().data();
    for (int oy = 0; oy < OH; ++oy) {
        const Axis& ay = ys[oy];
        for (int ox = 0; ox < OW; ++ox) {
            const Axis& axx = xs[ox];
            for (int c = 0; c < C; ++c) {
                const double v00 = in[(static_cast<std::size_t>(ay.lo) * W + axx.lo) * C + c];
                const double v01 = in[(static_cast<std::size_t>(ay.lo) * W + axx.hi) * C + c];
                const double v10 = in[(static_cast<std::size_t>(ay.hi) * W + axx.lo) * C + c];
                const double v11 = in[(static_cast<std::size_t>(ay.hi) * W + axx.hi) * C + c];
                o[(static_cast<std::size_t>(oy) * OW + ox) * C + c] =
                    detail::lerp(detail::lerp(v00, v01, axx.w), detail::lerp(v10, v11, axx.w), ay.w);
            }
        }
    }

    if (traced) {
        GradTape::active()->record(out, [input, out, ys, xs]() {
            if (!input.requires_grad()) return;
            const int W = input.dim(1), C = input.dim(2);
            const int OH = out.dim(0), OW = out.dim(1);
            double* din = input.impl()->grad.data();
            const double* go = out.grad().data();
            for (int oy = 0; oy < OH; ++oy) {
                const Axis& ay = ys[oy];
                for (int ox = 0; ox < OW; ++ox) {
                    const Axis& axx = xs[ox];
                    for (int c = 0; c < C; ++c) {
                        const double g = go[(static_cast<std::size_t>(oy) * OW + ox) * C + c];
                        din[(static_cast<std::size_t>(ay.lo) * W + axx.lo) * C + c] += (1 - ay.w) * (1 - axx.w) * g;
                        din[(static_cast<std::size_t>(ay.lo) * W + axx.hi) * C + c] += (1 - ay.w) * axx.w * g;
                        din[(static_cast<std::size_t>(ay.hi) * W + axx.lo) * C + c] += ay.w * (1 - axx.w) * g;
                        din[(static_cast<std::size_t>(ay.hi) * W + axx.hi) * C + c] += ay.w * axx.w * g;
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor apply_activation(const Tensor& input, Activation kind) {
    const bool traced = detail::tracing({&input});
    Tensor out = detail::make_output(input.shape(), traced);
    const double* in = input.data().data();
    double* o = out.data().data();
    const std::size_t n = input.numel();
    switch (kind) {
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < n; ++i) o[i] = detail::stable_sigmoid(in[i]);
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < n; ++i) o[i] = std::tanh(in[i]);
            break;
        case Activation::Relu:
            for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
            break;
    }
    if (traced) {
        GradTape::active()->record(out, [input, out, kind]() {
            if (!input.requires_grad()) return;
            double* din = input.impl()->grad.data();
            const double* o = out.data().data();
            const double* go = out.grad().data();
            const std::size_t n = out.numel();
            switch (kind) {
                case Activation::Sigmoid:
                    for (std::size_t i = 0; i < n; ++i) din[i] += go[i] * o[i] * (1.0 - o[i]);
                    break;
                case Activation::Tanh:
                    for (std::size_t i = 0; i < n; ++i) din[i] += go[i] * (1.0 - o[i] * o[i]);
                    break;
                case Activation::Relu:
                    for (std::size_t i = 0; i < n; ++i) din[i] += o[i] > 0.0 ? go[i] : 0.0;
                    break;
            }
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& t) { return apply_activation(t, Activation::Sigmoid); }
inline Tensor tanh_op(const Tensor& t) { return apply_activation(t, Activation::Tanh); }
inline Tensor relu(const Tensor& t) { return apply_activation(t, Activation::Relu); }

namespace detail {

// b broadcasts over a's channel axis iff b is [H,W] or [H,W,1] and a is [H,W,C].
inline bool channel_broadcast(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3) return false;
    if (b.ndim() == 2) return b.dim(0) == a.dim(0) && b.dim(1) == a.dim(1);
    if (b.ndim() == 3) return b.dim(0) == a.dim(0) && b.dim(1) == a.dim(1) && b.dim(2) == 1;
    return false;
}

}  // namespace detail

/// Elementwise product. `b` may also be a single-channel map broadcast
/// across the channels of a [H,W,C] tensor.
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    const bool traced = detail::tracing({&a, &b});
    if (same_shape(a, b)) {
        Tensor out = detail::make_output(a.shape(), traced);
        const std::size_t n = a.numel();
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
        if (traced) {
            GradTape::active()->record(out, [a, b, out]() {
                const std::size_t n = out.numel();
                const double* go = out.grad().data();
                if (a.requires_grad()) {
                    double* da = a.impl()->grad.data();
                    for (std::size_t i = 0; i < n; ++i) da[i] += go[i] * b.data()[i];
                }
                if (b.requires_grad()) {
                    double* db = b.impl()->grad.data();
                    for (std::size_t i = 0; i < n; ++i) db[i] += go[i] * a.data()[i];
                }
            });
        }
        return out;
    }
    if (detail::channel_broadcast(a, b)) {
        const int H = a.dim(0), W = a.dim(1), C = a.dim(2);
        Tensor out = detail::make_output(a.shape(), traced);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double m = b.data()[static_cast<std::size_t>(y) * W + x];
                for (int c = 0; c < C; ++c) out.at(y, x, c) = a.at(y, x, c) * m;
            }
        if (traced) {
            GradTape::active()->record(out, [a, b, out]() {
                const int H = a.dim(0), W = a.dim(1), C = a.dim(2);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const std::size_t bi = static_cast<std::size_t>(y) * W + x;
                        const double m = b.data()[bi];
                        double acc = 0.0;
                        for (int c = 0; c < C; ++c) {
                            const double g = out.grad()[(bi * C) + c];
                            if (a.requires_grad()) a.impl()->grad[bi * C + c] += g * m;
                            acc += g * a.data()[bi * C + c];
                        }
                        if (b.requires_grad()) b.impl()->grad[bi] += acc;
                    }
            });
        }
        return out;
    }
    throw DimensionError("hadamard shapes incompatible: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

namespace detail {

enum class BinOp { Add, Sub, Div };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op) {
    const bool traced = tracing({&a, &b});
    const bool scalar_rhs = b.numel() == 1 && !same_shape(a, b);
    if (!scalar_rhs && !same_shape(a, b))
        throw DimensionError("operand shapes differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor out = make_output(a.shape(), traced);
    const std::size_t n = a.numel();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* o = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double bv = scalar_rhs ? pb[0] : pb[i];
        switch (op) {
            case BinOp::Add: o[i] = pa[i] + bv; break;
            case BinOp::Sub: o[i] = pa[i] - bv; break;
            case BinOp::Div: o[i] = pa[i] / bv; break;
        }
    }
    if (traced) {
        GradTape::active()->record(out, [a, b, out, op, scalar_rhs]() {
            const std::size_t n = out.numel();
            const double* go = out.grad().data();
            const double* pa = a.data().data();
            const double* pb = b.data().data();
            double* da = a.requires_grad() ? a.impl()->grad.data() : nullptr;
            double* db = b.requires_grad() ? b.impl()->grad.data() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                const double bv = scalar_rhs ? pb[0] : pb[i];
                const std::size_t bi = scalar_rhs ? 0 : i;
                switch (op) {
                    case BinOp::Add:
                        if (da) da[i] += go[i];
                        if (db) db[bi] += go[i];
                        break;
                    case BinOp::Sub:
                        if (da) da[i] += go[i];
                        if (db) db[bi] -= go[i];
                        break;
                    case BinOp::Div:
                        if (da) da[i] += go[i] / bv;
                        if (db) db[bi] -= go[i] * pa[i] / (bv * bv);
                        break;
                }
            }
        });
    }
    return out;
}

}  // namespace detail

/// add/sub/div are elementwise; a scalar ([1]) right operand broadcasts.
inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinOp::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinOp::Sub); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinOp::Div); }

inline Tensor add_const(const Tensor& a, double c) {
    const bool traced = detail::tracing({&a});
    Tensor out = detail::make_output(a.shape(), traced);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + c;
    if (traced) {
        GradTape::active()->record(out, [a, out]() {
            if (!a.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i) a.impl()->grad[i] += out.grad()[i];
        });
    }
    return out;
}

inline Tensor mul_const(const Tensor& a, double c) {
    const bool traced = detail::tracing({&a});
    Tensor out = detail::make_output(a.shape(), traced);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
    if (traced) {
        GradTape::active()->record(out, [a, out, c]() {
            if (!a.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i) a.impl()->grad[i] += out.grad()[i] * c;
        });
    }
    return out;
}

inline Tensor log_op(const Tensor& a) {
    const bool traced = detail::tracing({&a});
    Tensor out = detail::make_output(a.shape(), traced);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::log(a.data()[i]);
    if (traced) {
        GradTape::active()->record(out, [a, out]() {
            if (!a.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i)
                a.impl()->grad[i] += out.grad()[i] / a.data()[i];
        });
    }
    return out;
}

inline Tensor sqrt_op(const Tensor& a) {
    const bool traced = detail::tracing({&a});
    Tensor out = detail::make_output(a.shape(), traced);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::sqrt(a.data()[i]);
    if (traced) {
        GradTape::active()->record(out, [a, out]() {
            if (!a.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i)
                a.impl()->grad[i] += out.grad()[i] / (2.0 * out.data()[i]);
        });
    }
    return out;
}

inline Tensor clamp_min(const Tensor& a, double lo) {
    const bool traced = detail::tracing({&a});
    Tensor out = detail::make_output(a.shape(), traced);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::max(a.data()[i], lo);
    if (traced) {
        GradTape::active()->record(out, [a, out, lo]() {
            if (!a.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i)
                if (a.data()[i] > lo) a.impl()->grad[i] += out.grad()[i];
        });
    }
    return out;
}

/// Full reduction to a [1] scalar tensor.
inline Tensor sum(const Tensor& a) {
    const bool traced = detail::tracing({&a});
    Tensor out = detail::make_output({1}, traced);
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    out.data()[0] = acc;
    if (traced) {
        GradTape::active()->record(out, [a, out]() {
            if (!a.requires_grad()) return;
            const double g = out.grad()[0];
            for (std::size_t i = 0; i < a.numel(); ++i) a.impl()->grad[i] += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    return mul_const(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// View with a new shape (data copied; gradient flows through unchanged).
inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape cannot change element count");
    const bool traced = detail::tracing({&a});
    Tensor out(std::move(shape), a.data(), traced);
    if (traced) {
        GradTape::active()->record(out, [a, out]() {
            if (!a.requires_grad()) return;
            for (std::size_t i = 0; i < out.numel(); ++i) a.impl()->grad[i] += out.grad()[i];
        });
    }
    return out;
}

}  // namespace vsal
