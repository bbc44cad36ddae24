#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "riginv/geometry.hpp"
#include "riginv/image.hpp"

namespace riginv {

// Area-weighted vertex normals (the cross product carries the area weight).
// Vertices with zero accumulation get (0,0,1).
inline std::vector<Vec3> compute_vertex_normals(const TriMesh& mesh) {
    mesh.validate();
    std::vector<Vec3> acc(mesh.positions.size());
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.positions[static_cast<std::size_t>(f.v[0])];
        const Vec3& b = mesh.positions[static_cast<std::size_t>(f.v[1])];
        const Vec3& c = mesh.positions[static_cast<std::size_t>(f.v[2])];
        const Vec3 fn = cross(b - a, c - a);
        for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(f.v[static_cast<std::size_t>(k)])] += fn;
    }
    for (auto& n : acc) {
        const double len = norm(n);
        n = (len > 0.0) ? n * (1.0 / len) : Vec3{0.0, 0.0, 1.0};
    }
    return acc;
}

struct TangentFrame {
    Vec3 t, b, n;
};

// Per-vertex orthonormal (T, B, N) frames from UV partial derivatives.
// Triangles with degenerate UV area are skipped in the accumulation;
// T is Gram-Schmidt orthogonalized against N and B = N x T.
inline std::vector<TangentFrame> compute_tangent_frames(const TriMesh& mesh) {
    require(mesh.has_uvs(), "compute_tangent_frames: mesh has no UVs (no tangent space)");
    const std::vector<Vec3> normals = compute_vertex_normals(mesh);
    std::vector<Vec3> tacc(mesh.positions.size());
    for (const auto& f : mesh.faces) {
        const auto i0 = static_cast<std::size_t>(f.v[0]);
        const auto i1 = static_cast<std::size_t>(f.v[1]);
        const auto i2 = static_cast<std::size_t>(f.v[2]);
        const Vec3 e1 = mesh.positions[i1] - mesh.positions[i0];
        const Vec3 e2 = mesh.positions[i2] - mesh.positions[i0];
        const double du1 = mesh.uvs[i1].u - mesh.uvs[i0].u;
        const double dv1 = mesh.uvs[i1].v - mesh.uvs[i0].v;
        const double du2 = mesh.uvs[i2].u - mesh.uvs[i0].u;
        const double dv2 = mesh.uvs[i2].v - mesh.uvs[i0].v;
        const double det = du1 * dv2 - du2 * dv1;
        if (std::abs(det) < 1e-12) continue;  // degenerate UV triangle
        const double r = 1.0 / det;
        const Vec3 t = (e1 * dv2 - e2 * dv1) * r;
        tacc[i0] += t;
        tacc[i1] += t;
        tacc[i2] += t;
    }
    std::vector<TangentFrame> frames(mesh.positions.size());
    for (std::size_t v = 0; v < frames.size(); ++v) {
        const Vec3 n = normals[v];
        Vec3 t = tacc[v] - n * dot(n, tacc[v]);
        if (norm(t) < 1e-12) {
            // No usable UV tangent; pick any direction perpendicular to n.
            const Vec3 seed = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
            t = seed - n * dot(n, seed);
        }
        t = normalized(t);
        frames[v] = {t, cross(n, t), n};
    }
    return frames;
}

// [-1,1] -> [0,255], round half up so 0 -> 128 and (0,0,1) -> (128,128,255).
inline std::array<std::uint8_t, 3> encode_normal(const Vec3& n) {
    require(std::abs(norm(n) - 1.0) <= 1e-3, "encode_normal: input not unit length");
    auto enc = [](double c) {
        const double v = std::floor((c + 1.0) * 0.5 * 255.0 + 0.5);
        return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    };
    return {enc(n.x), enc(n.y), enc(n.z)};
}

// Inverse map; deliberately not renormalized.
inline Vec3 decode_normal(const std::array<std::uint8_t, 3>& c) {
    auto dec = [](std::uint8_t v) { return static_cast<double>(v) / 255.0 * 2.0 - 1.0; };
    return {dec(c[0]), dec(c[1]), dec(c[2])};
}

}  // namespace riginv
