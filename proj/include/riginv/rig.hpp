#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "riginv/geometry.hpp"
#include "riginv/rng.hpp"

namespace riginv {

inline constexpr std::size_t kNumControls = 102;

// Control vector p. Nominal per-entry range is [0,1]; the decoder itself
// never clamps, so unconstrained network outputs stay differentiable.
struct RigParams {
    std::vector<double> values;

    RigParams() : values(kNumControls, 0.0) {}
    explicit RigParams(std::vector<double> v) : values(std::move(v)) {}

    static RigParams zeros(std::size_t n = kNumControls) {
        return RigParams(std::vector<double>(n, 0.0));
    }
    static RigParams one_hot(std::size_t i, std::size_t n = kNumControls) {
        RigParams p = zeros(n);
        p.values[i] = 1.0;
        return p;
    }

    std::size_t size() const { return values.size(); }

    void validate(std::size_t expected = kNumControls) const {
        require(values.size() == expected, "RigParams: wrong length");
        for (double v : values) require(std::isfinite(v), "RigParams: non-finite entry");
    }
};

// Neutral vertex set plus one displacement field per control.
// Strictly linear: no corrective or combination shapes.
struct BlendRig {
    TriMesh neutral;
    std::vector<std::vector<Vec3>> deltas;  // one V-sized field per control
    std::vector<std::string> names;

    std::size_t num_controls() const { return deltas.size(); }
    std::size_t num_vertices() const { return neutral.positions.size(); }

    void validate() const {
        neutral.validate();
        require(deltas.size() == names.size(), "BlendRig: names/deltas count mismatch");
        for (const auto& d : deltas)
            require(d.size() == neutral.positions.size(), "BlendRig: delta vertex count mismatch");
        std::unordered_set<std::string> seen;
        for (const auto& n : names)
            require(seen.insert(n).second, "BlendRig: duplicate control name '" + n + "'");
    }
};

struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;

    static RigidTransform identity() { return {}; }

    void validate() const {
        require(is_rotation(rotation), "RigidTransform: rotation not orthonormal");
        require(finite(translation), "RigidTransform: non-finite translation");
    }
};

// positions = neutral + sum_i p[i] * deltas[i]; faces and uvs pass through.
inline TriMesh rig_forward(const BlendRig& rig, const RigParams& p) {
    p.validate(rig.num_controls());
    TriMesh out;
    out.positions = rig.neutral.positions;
    out.faces = rig.neutral.faces;
    out.uvs = rig.neutral.uvs;
    for (std::size_t i = 0; i < rig.num_controls(); ++i) {
        const double w = p.values[i];
        if (w == 0.0) continue;
        const auto& d = rig.deltas[i];
        for (std::size_t v = 0; v < out.positions.size(); ++v) out.positions[v] += d[v] * w;
    }
    return out;
}

// d positions / d p[i]. The rig is linear, so this is just the delta basis,
// constant in p.
inline const std::vector<std::vector<Vec3>>& rig_jacobian(const BlendRig& rig) {
    rig.validate();
    return rig.deltas;
}

inline TriMesh apply_rigid(const TriMesh& mesh, const RigidTransform& xf) {
    xf.validate();
    TriMesh out;
    out.faces = mesh.faces;
    out.uvs = mesh.uvs;
    out.positions.reserve(mesh.positions.size());
    for (const auto& p : mesh.positions) out.positions.push_back(xf.rotation * p + xf.translation);
    return out;
}

struct RigidSampleConfig {
    double rotation_bound_deg = 5.0;    // per-axis Euler bound
    double translation_bound_frac = 0.02;  // fraction of bbox diagonal
};

// Euler angles uniform in +-bound per axis (applied Z*Y*X), translation
// components uniform in +-frac*diag.
inline RigidTransform sample_rigid(Rng& rng, const RigidSampleConfig& cfg, double bbox_diagonal) {
    require(cfg.rotation_bound_deg >= 0.0, "sample_rigid: negative rotation bound");
    require(cfg.translation_bound_frac >= 0.0, "sample_rigid: negative translation bound");
    const double b = cfg.rotation_bound_deg * std::numbers::pi / 180.0;
    const double ax = rng.uniform(-b, b);
    const double ay = rng.uniform(-b, b);
    const double az = rng.uniform(-b, b);
    const double t = cfg.translation_bound_frac * bbox_diagonal;
    RigidTransform xf;
    xf.rotation = rotation_z(az) * rotation_y(ay) * rotation_x(ax);
    xf.translation = {rng.uniform(-t, t), rng.uniform(-t, t), rng.uniform(-t, t)};
    return xf;
}

}  // namespace riginv
