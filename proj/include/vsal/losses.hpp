#pragma once

#include <string>
#include <vector>

#include "vsal/ops.hpp"

namespace vsal {

struct LossWeights {
    double alpha1 = 0.1;
    double alpha2 = 0.1;
    double eps = 1e-8;
};

namespace detail {

inline void check_map_pair(const Tensor& a, const Tensor& b, const char* op) {
    if (a.ndim() != 2 || b.ndim() != 2 || !same_shape(a, b))
        throw DimensionError(std::string(op) + " expects two equal 2-D maps, got " +
                             shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

inline bool is_constant(const Tensor& t) {
    const auto& d = t.data();
    for (double v : d)
        if (v != d[0]) return false;
    return true;
}

inline std::size_t fixation_count(const Tensor& P) {
    std::size_t n = 0;
    for (double v : P.data()) {
        if (v != 0.0 && v != 1.0)
            throw DataError("fixation map must be binary, found value " + std::to_string(v));
        if (v == 1.0) ++n;
    }
    return n;
}

// Population standard deviation with the eps floor applied under the root,
// so gradients stay finite while non-degenerate maps are untouched.
inline Tensor std_floor(const Tensor& centered, double eps) {
    Tensor var = mean(hadamard(centered, centered));
    return sqrt_op(clamp_min(var, eps * eps));
}

}  // namespace detail

/// KL divergence between ground truth Q and prediction Y, both shifted by eps
/// and renormalized to unit sum first.
inline Tensor kl_div(const Tensor& Y, const Tensor& Q, double eps = 1e-8) {
    detail::check_map_pair(Y, Q, "kl_div");
    bool any_mass = false;
    for (double v : Q.data())
        if (v != 0.0) any_mass = true;
    if (!any_mass) throw DegenerateMapError("kl_div: ground-truth map has no mass");
    Tensor Yc = add_const(Y, eps);
    Tensor Qc = add_const(Q, eps);
    Tensor Yn = div(Yc, sum(Yc));
    Tensor Qn = div(Qc, sum(Qc));
    return sum(hadamard(Qn, log_op(div(Qn, Yn))));
}

/// Negated Pearson correlation: -cov(Y,Q) / (rho(Y) * rho(Q)).
inline Tensor cc_loss(const Tensor& Y, const Tensor& Q, double eps = 1e-8) {
    detail::check_map_pair(Y, Q, "cc_loss");
    if (detail::is_constant(Y)) throw DegenerateMapError("cc_loss: constant prediction");
    if (detail::is_constant(Q)) throw DegenerateMapError("cc_loss: constant ground truth");
    Tensor dY = sub(Y, mean(Y));
    Tensor dQ = sub(Q, mean(Q));
    Tensor cov = mean(hadamard(dY, dQ));
    Tensor denom = clamp_min(hadamard(detail::std_floor(dY, eps), detail::std_floor(dQ, eps)), eps);
    return mul_const(div(cov, denom), -1.0);
}

/// Negated mean standardized saliency at fixated cells.
inline Tensor nss_loss(const Tensor& Y, const Tensor& P, double eps = 1e-8) {
    detail::check_map_pair(Y, P, "nss_loss");
    const std::size_t n = detail::fixation_count(P);
    if (n == 0) throw NoFixationsError("nss_loss: no fixated cells");
    if (detail::is_constant(Y)) throw DegenerateMapError("nss_loss: constant prediction");
    Tensor dY = sub(Y, mean(Y));
    Tensor standardized = div(dY, detail::std_floor(dY, eps));
    return mul_const(sum(hadamard(P, standardized)), -1.0 / static_cast<double>(n));
}

/// L = L_KL + alpha1 * L_CC + alpha2 * L_NSS.
inline Tensor combined_loss(const Tensor& Y, const Tensor& P, const Tensor& Q,
                            const LossWeights& w = {}) {
    Tensor total = kl_div(Y, Q, w.eps);
    total = add(total, mul_const(cc_loss(Y, Q, w.eps), w.alpha1));
    total = add(total, mul_const(nss_loss(Y, P, w.eps), w.alpha2));
    return total;
}

/// Sum of per-frame composite losses; frames without fixations contribute
/// KL and CC terms only.
inline Tensor video_loss(const std::vector<Tensor>& Y_list, const std::vector<Tensor>& P_list,
                         const std::vector<Tensor>& Q_list, const LossWeights& w = {}) {
    if (Y_list.empty()) throw DimensionError("video_loss: empty sequence");
    if (Y_list.size() != P_list.size() || Y_list.size() != Q_list.size())
        throw DimensionError("video_loss: sequence lengths differ (" +
                             std::to_string(Y_list.size()) + ", " +
                             std::to_string(P_list.size()) + ", " +
                             std::to_string(Q_list.size()) + ")");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < Y_list.size(); ++t) {
        Tensor term = kl_div(Y_list[t], Q_list[t], w.eps);
        term = add(term, mul_const(cc_loss(Y_list[t], Q_list[t], w.eps), w.alpha1));
        if (detail::fixation_count(P_list[t]) > 0)
            term = add(term, mul_const(nss_loss(Y_list[t], P_list[t], w.eps), w.alpha2));
        total = add(total, term);
    }
    return total;
}

/// Static-image objective: the composite loss applied to the attention map.
inline Tensor image_loss(const Tensor& M, const Tensor& Ps, const Tensor& Qs,
                         const LossWeights& w = {}) {
    return combined_loss(M, Ps, Qs, w);
}

}  // namespace vsal
