#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "riginv/geometry.hpp"

namespace riginv {

// Minimal OBJ support: v, vt, f records, 1-based indices, triangles only.
// UVs, when present, must be vertex-order-aligned (one vt per v).

inline TriMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_obj: cannot open " + path);
    TriMesh mesh;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 p;
            ss >> p.x >> p.y >> p.z;
            if (!ss) throw IoError("read_obj: malformed vertex in " + path);
            mesh.positions.push_back(p);
        } else if (tag == "vt") {
            Vec2 t;
            ss >> t.u >> t.v;
            if (!ss) throw IoError("read_obj: malformed uv in " + path);
            mesh.uvs.push_back(t);
        } else if (tag == "f") {
            Face f{};
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                ss >> tok;
                if (tok.empty()) throw IoError("read_obj: malformed face in " + path);
                // "v", "v/vt" or "v/vt/vn"; only the vertex index matters here.
                const long idx = std::strtol(tok.c_str(), nullptr, 10);
                if (idx < 1) throw IoError("read_obj: face index must be positive in " + path);
                f.v[static_cast<std::size_t>(k)] = static_cast<int>(idx - 1);
            }
            std::string extra;
            if (ss >> extra) throw IoError("read_obj: non-triangle face in " + path);
            mesh.faces.push_back(f);
        }
    }
    if (!mesh.uvs.empty() && mesh.uvs.size() != mesh.positions.size())
        throw IoError("read_obj: uv records not vertex-aligned in " + path);
    mesh.validate();
    return mesh;
}

inline void write_obj(const std::string& path, const TriMesh& mesh) {
    mesh.validate();
    std::ofstream out(path);
    if (!out) throw IoError("write_obj: cannot open " + path);
    char buf[160];
    for (const auto& p : mesh.positions) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", p.x, p.y, p.z);
        out << buf;
    }
    for (const auto& t : mesh.uvs) {
        std::snprintf(buf, sizeof(buf), "vt %.17g %.17g\n", t.u, t.v);
        out << buf;
    }
    const bool with_uv = mesh.has_uvs();
    for (const auto& f : mesh.faces) {
        if (with_uv)
            std::snprintf(buf, sizeof(buf), "f %d/%d %d/%d %d/%d\n", f.v[0] + 1, f.v[0] + 1,
                          f.v[1] + 1, f.v[1] + 1, f.v[2] + 1, f.v[2] + 1);
        else
            std::snprintf(buf, sizeof(buf), "f %d %d %d\n", f.v[0] + 1, f.v[1] + 1, f.v[2] + 1);
        out << buf;
    }
    if (!out) throw IoError("write_obj: write failure on " + path);
}

}  // namespace riginv
