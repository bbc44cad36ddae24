#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "riginv/geometry.hpp"
#include "riginv/image.hpp"
#include "riginv/normals.hpp"

namespace riginv {

// Orthographic only, looking down -Z. Square frame fitted to axis-aligned
// bounds plus a margin fraction.
struct CameraConfig {
    int resolution = 512;
    double margin_frac = 0.05;

    void validate() const {
        require(resolution >= 16 && resolution % 2 == 0,
                "CameraConfig: resolution must be >= 16 and even");
        require(margin_frac >= 0.0, "CameraConfig: negative margin");
    }
};

// Frozen projection. Fitted once (to the neutral mesh) and reused for every
// expression so all renders share identical parameters.
struct FittedCamera {
    double center_x = 0.0;
    double center_y = 0.0;
    double half_extent = 1.0;
    int resolution = 512;

    // Screen coords: x right, y down, pixel centers at integer + 0.5.
    // Depth is world z; larger z is closer to the camera.
    double screen_x(double wx) const {
        return (wx - center_x) / half_extent * (resolution * 0.5) + resolution * 0.5;
    }
    double screen_y(double wy) const {
        return resolution * 0.5 - (wy - center_y) / half_extent * (resolution * 0.5);
    }
};

inline FittedCamera fit_camera(const TriMesh& neutral, const CameraConfig& cfg) {
    cfg.validate();
    const Bounds b = bounds_of(neutral);
    const Vec3 c = b.center();
    const Vec3 e = b.extent();
    double half = 0.5 * std::max(e.x, e.y) * (1.0 + cfg.margin_frac);
    if (half <= 0.0) half = 1.0;
    return {c.x, c.y, half, cfg.resolution};
}

struct DirectionalLight {
    Vec3 direction;  // propagation direction, unit length
    double intensity = 1.0;
    Vec3 color{1.0, 1.0, 1.0};
};

struct LightRig {
    std::array<DirectionalLight, 3> lights;  // key, fill, rim
    double albedo = 0.75;

    void validate() const {
        for (const auto& l : lights) {
            require(std::abs(norm(l.direction) - 1.0) <= 1e-6, "LightRig: direction not unit");
            require(l.intensity >= 0.0, "LightRig: negative intensity");
            for (double c : {l.color.x, l.color.y, l.color.z})
                require(c >= 0.0 && c <= 1.0, "LightRig: color out of range");
        }
    }

    static LightRig default_rig() {
        LightRig r;
        r.lights[0] = {normalized({-0.5, -0.5, -1.0}), 1.0, {1, 1, 1}};  // key
        r.lights[1] = {normalized({0.7, -0.2, -1.0}), 0.4, {1, 1, 1}};   // fill
        r.lights[2] = {normalized({0.0, 0.8, 0.5}), 0.3, {1, 1, 1}};     // rim
        return r;
    }
};

enum class RenderMode { appearance, normal_map };
enum class NormalSpace { tangent, camera };

namespace detail {

inline double orient2d(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Top-left fill rule in y-down screen coordinates (area oriented positive).
inline bool edge_owns_boundary(double ax, double ay, double bx, double by) {
    const double dx = bx - ax;
    const double dy = by - ay;
    return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

inline std::uint8_t shade_to_byte(double c) {
    const double g = std::pow(std::clamp(c, 0.0, 1.0), 1.0 / 2.2);
    return static_cast<std::uint8_t>(std::clamp(std::floor(g * 255.0 + 0.5), 0.0, 255.0));
}

}  // namespace detail

// Z-buffered triangle rasterization, no AA, fully deterministic.
// appearance: Lambertian, uniform albedo, three lights, gamma 1/2.2, black bg.
// normal_map: interpolated shading normal in the interpolated tangent frame,
// bg (128,128,255). Without UVs the normals stay in camera space (callers
// record NormalSpace::camera in their manifests).
inline ImageRGB8 rasterize(const TriMesh& mesh, const FittedCamera& cam, const LightRig& lights,
                           RenderMode mode) {
    lights.validate();
    const bool normal_mode = mode == RenderMode::normal_map;
    ImageRGB8 img = normal_mode ? ImageRGB8(cam.resolution, cam.resolution, 128, 128, 255)
                                : ImageRGB8(cam.resolution, cam.resolution, 0, 0, 0);
    if (mesh.positions.empty()) return img;
    mesh.validate();

    const std::vector<Vec3> vnormals = compute_vertex_normals(mesh);
    std::vector<TangentFrame> frames;
    const bool tangent_space = normal_mode && mesh.has_uvs();
    if (tangent_space) frames = compute_tangent_frames(mesh);

    std::vector<double> zbuf(static_cast<std::size_t>(cam.resolution) *
                                 static_cast<std::size_t>(cam.resolution),
                             -std::numeric_limits<double>::infinity());

    for (const auto& face : mesh.faces) {
        std::array<std::size_t, 3> idx = {static_cast<std::size_t>(face.v[0]),
                                          static_cast<std::size_t>(face.v[1]),
                                          static_cast<std::size_t>(face.v[2])};
        std::array<double, 3> sx, sy;
        for (int k = 0; k < 3; ++k) {
            const Vec3& p = mesh.positions[idx[static_cast<std::size_t>(k)]];
            sx[static_cast<std::size_t>(k)] = cam.screen_x(p.x);
            sy[static_cast<std::size_t>(k)] = cam.screen_y(p.y);
        }
        double area2 = detail::orient2d(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
        if (area2 == 0.0) continue;
        if (area2 < 0.0) {  // orient positive; shading is winding-independent
            std::swap(idx[1], idx[2]);
            std::swap(sx[1], sx[2]);
            std::swap(sy[1], sy[2]);
            area2 = -area2;
        }

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({sx[0], sx[1], sx[2]}) - 0.5)));
        const int x1 = std::min(cam.resolution - 1,
                                static_cast<int>(std::ceil(std::max({sx[0], sx[1], sx[2]}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({sy[0], sy[1], sy[2]}) - 0.5)));
        const int y1 = std::min(cam.resolution - 1,
                                static_cast<int>(std::ceil(std::max({sy[0], sy[1], sy[2]}))));

        const bool own01 = detail::edge_owns_boundary(sx[0], sy[0], sx[1], sy[1]);
        const bool own12 = detail::edge_owns_boundary(sx[1], sy[1], sx[2], sy[2]);
        const bool own20 = detail::edge_owns_boundary(sx[2], sy[2], sx[0], sy[0]);

        for (int py = y0; py <= y1; ++py) {
            const double cy = py + 0.5;
            for (int px = x0; px <= x1; ++px) {
                const double cx = px + 0.5;
                const double w0 = detail::orient2d(sx[1], sy[1], sx[2], sy[2], cx, cy);
                const double w1 = detail::orient2d(sx[2], sy[2], sx[0], sy[0], cx, cy);
                const double w2 = detail::orient2d(sx[0], sy[0], sx[1], sy[1], cx, cy);
                const bool in = (w0 > 0.0 || (w0 == 0.0 && own12)) &&
                                (w1 > 0.0 || (w1 == 0.0 && own20)) &&
                                (w2 > 0.0 || (w2 == 0.0 && own01));
                if (!in) continue;
                const double b0 = w0 / area2, b1 = w1 / area2, b2 = w2 / area2;
                const double depth = b0 * mesh.positions[idx[0]].z +
                                     b1 * mesh.positions[idx[1]].z +
                                     b2 * mesh.positions[idx[2]].z;
                const std::size_t pix = static_cast<std::size_t>(py) *
                                            static_cast<std::size_t>(cam.resolution) +
                                        static_cast<std::size_t>(px);
                if (depth <= zbuf[pix]) continue;
                zbuf[pix] = depth;

                Vec3 n = normalized(vnormals[idx[0]] * b0 + vnormals[idx[1]] * b1 +
                                    vnormals[idx[2]] * b2);
                std::uint8_t* out = img.pixel(px, py);
                if (normal_mode) {
                    Vec3 enc_n = n;
                    if (tangent_space) {
                        const TangentFrame& f0 = frames[idx[0]];
                        const TangentFrame& f1 = frames[idx[1]];
                        const TangentFrame& f2 = frames[idx[2]];
                        const Vec3 t = f0.t * b0 + f1.t * b1 + f2.t * b2;
                        const Vec3 b = f0.b * b0 + f1.b * b1 + f2.b * b2;
                        const Vec3 nn = f0.n * b0 + f1.n * b1 + f2.n * b2;
                        enc_n = normalized({dot(n, t), dot(n, b), dot(n, nn)});
                    }
                    const auto rgb = encode_normal(enc_n);
                    out[0] = rgb[0];
                    out[1] = rgb[1];
                    out[2] = rgb[2];
                } else {
                    // Shade with the normal facing the camera.
                    if (n.z < 0.0) n = n * -1.0;
                    Vec3 c{0, 0, 0};
                    for (const auto& l : lights.lights) {
                        const double lambert = std::max(0.0, dot(n, l.direction * -1.0));
                        const double s = lambert * l.intensity;
                        c += Vec3{l.color.x * s, l.color.y * s, l.color.z * s};
                    }
                    out[0] = detail::shade_to_byte(lights.albedo * c.x);
                    out[1] = detail::shade_to_byte(lights.albedo * c.y);
                    out[2] = detail::shade_to_byte(lights.albedo * c.z);
                }
            }
        }
    }
    return img;
}

}  // namespace riginv
