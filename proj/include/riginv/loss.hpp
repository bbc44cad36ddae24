#pragma once

#include <cmath>

#include "riginv/autodiff.hpp"
#include "riginv/rig.hpp"

namespace riginv {

struct LossConfig {
    double lambda_mesh = 1.0;

    void validate() const {
        require(std::isfinite(lambda_mesh) && lambda_mesh >= 0.0,
                "LossConfig: lambda_mesh must be finite and >= 0");
    }
};

// Rig flattened for the differentiable path: delta basis as a [102, 3V]
// matrix, neutral as a [1, 3V] row. mesh(p) = p * delta_matrix + neutral.
template <class T>
struct RigTensors {
    Tensor<T> delta_matrix;  // [controls, 3V]
    Tensor<T> neutral_row;   // [1, 3V]

    static RigTensors from(const BlendRig& rig) {
        rig.validate();
        const std::size_t nc = rig.num_controls();
        const std::size_t nv = rig.num_vertices();
        RigTensors rt;
        rt.delta_matrix = Tensor<T>({nc, 3 * nv});
        rt.neutral_row = Tensor<T>({std::size_t(1), 3 * nv});
        for (std::size_t v = 0; v < nv; ++v) {
            rt.neutral_row.data[3 * v] = static_cast<T>(rig.neutral.positions[v].x);
            rt.neutral_row.data[3 * v + 1] = static_cast<T>(rig.neutral.positions[v].y);
            rt.neutral_row.data[3 * v + 2] = static_cast<T>(rig.neutral.positions[v].z);
            for (std::size_t c = 0; c < nc; ++c) {
                rt.delta_matrix.data[c * 3 * nv + 3 * v] = static_cast<T>(rig.deltas[c][v].x);
                rt.delta_matrix.data[c * 3 * nv + 3 * v + 1] = static_cast<T>(rig.deltas[c][v].y);
                rt.delta_matrix.data[c * 3 * nv + 3 * v + 2] = static_cast<T>(rig.deltas[c][v].z);
            }
        }
        return rt;
    }

    // Differentiable decode of a [1, controls] prediction to flat positions.
    Var<T> decode(const Var<T>& p_hat) const {
        return ad::add_rowvec(ad::matmul(p_hat, Var<T>::constant(delta_matrix)),
                              Var<T>::constant(neutral_row));
    }
};

template <class T>
struct LossParts {
    Var<T> total, mse, mesh;
};

// L = (1/102) sum (p_hat - p)^2 + lambda * (1/(3V)) sum |mesh(p_hat) - mesh(p)|.
// Both terms are per-coordinate means; the mesh L1 subgradient at zero is 0.
template <class T>
LossParts<T> rig_loss(const Var<T>& p_hat, const RigParams& p, const RigTensors<T>& rig,
                      const LossConfig& cfg) {
    cfg.validate();
    const std::size_t nc = rig.delta_matrix.shape[0];
    require(p_hat.value().size() == nc, "rig_loss: prediction length mismatch");
    p.validate(nc);
    for (T v : p_hat.value().data) require(std::isfinite(static_cast<double>(v)),
                                           "rig_loss: non-finite prediction");

    Tensor<T> target({std::size_t(1), nc});
    for (std::size_t i = 0; i < nc; ++i) target.data[i] = static_cast<T>(p.values[i]);

    LossParts<T> parts;
    parts.mse = ad::mse_to(p_hat, std::move(target));

    // Ground-truth mesh, computed outside the tape.
    Tensor<T> mesh_target = rig.neutral_row;
    for (std::size_t c = 0; c < nc; ++c) {
        const T w = static_cast<T>(p.values[c]);
        if (w == T(0)) continue;
        const T* drow = rig.delta_matrix.data.data() + c * mesh_target.size();
        for (std::size_t i = 0; i < mesh_target.size(); ++i) mesh_target.data[i] += w * drow[i];
    }
    parts.mesh = ad::l1_to(rig.decode(p_hat), std::move(mesh_target));
    parts.total = ad::add(parts.mse, ad::scale(parts.mesh, static_cast<T>(cfg.lambda_mesh)));
    return parts;
}

}  // namespace riginv
