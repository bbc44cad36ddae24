#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "riginv/model.hpp"

namespace riginv {

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

namespace detail {
// The absolute floor keeps finite-difference cancellation noise (~1e-12 for
// O(1) losses on a double tape) from dominating when the true gradient is
// ~zero, e.g. the attention key bias, which softmax shift-invariance cancels
// exactly.
inline double rel_err(double fd, double analytic, double floor = 1e-6) {
    const double denom = std::max({std::abs(fd), std::abs(analytic), floor});
    return std::abs(fd - analytic) / denom;
}
}  // namespace detail

// Central finite differences over every element of the given leaves.
// `build` must reconstruct the scalar graph from the leaves' current values.
inline GradcheckReport gradcheck_leaves(const std::function<Var<double>()>& build,
                                        std::vector<Var<double>> leaves, double h = 1e-6) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    backward(build());
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad().data);

    GradcheckReport rep;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].value().data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double w = data[i];
            data[i] = w + h;
            const double fp = build().value().data[0];
            data[i] = w - h;
            const double fm = build().value().data[0];
            data[i] = w;
            const double fd = (fp - fm) / (2.0 * h);
            rep.max_rel_err = std::max(rep.max_rel_err, detail::rel_err(fd, analytic[li][i]));
            ++rep.checked;
        }
    }
    return rep;
}

// Full-network check: mean of the 102 outputs against central differences on
// randomly sampled weights. All groups are unfrozen and every parameter gets
// a small jitter first (the zero-initialized head would otherwise kill the
// gradient path).
template <class T>
GradcheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                std::size_t num_weights) {
    auto model = DualBranchRegressor<T>::create(cfg, seed);
    model.set_frozen({});
    Rng rng(seed + 1);
    for (auto& e : model.registry().entries())
        for (auto& v : e.var.value().data) v += static_cast<T>(rng.normal(0.0, 0.02));

    const std::size_t npix = 3 * static_cast<std::size_t>(cfg.resolution) *
                             static_cast<std::size_t>(cfg.resolution);
    Tensor<T> ia({npix}), in({npix});
    for (auto& v : ia.data) v = static_cast<T>(rng.normal(0.0, 1.0));
    for (auto& v : in.data) v = static_cast<T>(rng.normal(0.0, 1.0));

    auto eval_loss = [&]() { return ad::mean_all(model.forward(ia, in)); };

    model.registry().zero_grad();
    backward(eval_loss());

    // Step size and noise floor scale with tape precision: a float tape loses
    // ~7 digits to cancellation in the central difference, a double tape ~12.
    const bool single = sizeof(T) == 4;
    const double h_frac = single ? 1e-2 : 1e-4;
    const double floor = single ? 1e-2 : 1e-6;

    GradcheckReport rep;
    auto& entries = model.registry().entries();
    for (std::size_t k = 0; k < num_weights; ++k) {
        const std::size_t pi = rng.below(entries.size());
        auto& data = entries[pi].var.value().data;
        const std::size_t ei = rng.below(data.size());
        const double analytic = static_cast<double>(entries[pi].var.grad().data[ei]);
        const double w = static_cast<double>(data[ei]);
        const double h = h_frac * std::max(std::abs(w), 0.1);
        data[ei] = static_cast<T>(w + h);
        const double fp = static_cast<double>(eval_loss().value().data[0]);
        data[ei] = static_cast<T>(w - h);
        const double fm = static_cast<double>(eval_loss().value().data[0]);
        data[ei] = static_cast<T>(w);
        const double fd = (fp - fm) / (2.0 * h);
        rep.max_rel_err = std::max(rep.max_rel_err, detail::rel_err(fd, analytic, floor));
        ++rep.checked;
    }
    return rep;
}

}  // namespace riginv
