#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "riginv/error.hpp"

namespace riginv {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    return n > 0.0 ? v * (1.0 / n) : Vec3{0.0, 0.0, 0.0};
}
inline bool finite(const Vec3& v) {
    return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

struct Vec2 {
    double u = 0.0, v = 0.0;
};

struct Mat3 {
    // Row-major.
    std::array<double, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

inline Mat3 rotation_x(double rad) {
    Mat3 r;
    const double c = std::cos(rad), s = std::sin(rad);
    r(1, 1) = c; r(1, 2) = -s; r(2, 1) = s; r(2, 2) = c;
    return r;
}
inline Mat3 rotation_y(double rad) {
    Mat3 r;
    const double c = std::cos(rad), s = std::sin(rad);
    r(0, 0) = c; r(0, 2) = s; r(2, 0) = -s; r(2, 2) = c;
    return r;
}
inline Mat3 rotation_z(double rad) {
    Mat3 r;
    const double c = std::cos(rad), s = std::sin(rad);
    r(0, 0) = c; r(0, 1) = -s; r(1, 0) = s; r(1, 1) = c;
    return r;
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
    const Mat3 rtr = r.transposed() * r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double expect = (i == j) ? 1.0 : 0.0;
            if (std::abs(rtr(i, j) - expect) > tol) return false;
        }
    return std::abs(r.det() - 1.0) <= tol;
}

struct Face {
    std::array<int, 3> v;
};

struct TriMesh {
    std::vector<Vec3> positions;
    std::vector<Face> faces;
    std::vector<Vec2> uvs;  // empty or one per vertex

    bool has_uvs() const { return !uvs.empty(); }

    void validate() const {
        const int v = static_cast<int>(positions.size());
        for (const auto& p : positions)
            require(finite(p), "TriMesh: non-finite position");
        for (const auto& f : faces) {
            for (int k = 0; k < 3; ++k)
                require(f.v[static_cast<std::size_t>(k)] >= 0 &&
                            f.v[static_cast<std::size_t>(k)] < v,
                        "TriMesh: face index out of range");
            require(f.v[0] != f.v[1] && f.v[1] != f.v[2] && f.v[0] != f.v[2],
                    "TriMesh: degenerate face");
        }
        if (!uvs.empty())
            require(uvs.size() == positions.size(), "TriMesh: uv count mismatch");
    }
};

struct Bounds {
    Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
            std::numeric_limits<double>::max()};
    Vec3 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
            std::numeric_limits<double>::lowest()};

    void extend(const Vec3& p) {
        lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
    }
    Vec3 center() const { return (lo + hi) * 0.5; }
    Vec3 extent() const { return hi - lo; }
    double diagonal() const { return norm(hi - lo); }
};

inline Bounds bounds_of(const TriMesh& mesh) {
    require(!mesh.positions.empty(), "bounds_of: empty mesh");
    Bounds b;
    for (const auto& p : mesh.positions) b.extend(p);
    return b;
}

}  // namespace riginv
