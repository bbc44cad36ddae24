#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "riginv/obj_io.hpp"
#include "riginv/rig.hpp"

namespace riginv {

// Rig manifest: {"neutral": "neutral.obj", "targets": [{"name": ..., "path": ...}, ...]}.
// Targets store absolute shapes; deltas are computed here as target - neutral,
// relying on shared vertex order.
inline BlendRig load_rig(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("load_rig: cannot open " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_rig: bad JSON in " + manifest_path + ": " + e.what());
    }
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    auto resolve = [&dir](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (dir / fp).string();
    };

    BlendRig rig;
    rig.neutral = read_obj(resolve(j.at("neutral").get<std::string>()));
    for (const auto& t : j.at("targets")) {
        rig.names.push_back(t.at("name").get<std::string>());
        const TriMesh target = read_obj(resolve(t.at("path").get<std::string>()));
        if (target.positions.size() != rig.neutral.positions.size())
            throw IoError("load_rig: target '" + rig.names.back() +
                          "' vertex count differs from neutral");
        std::vector<Vec3> delta(target.positions.size());
        for (std::size_t v = 0; v < delta.size(); ++v)
            delta[v] = target.positions[v] - rig.neutral.positions[v];
        rig.deltas.push_back(std::move(delta));
    }
    rig.validate();
    return rig;
}

inline void save_rig(const std::string& dir, const BlendRig& rig,
                     const std::string& manifest_name = "rig.json") {
    rig.validate();
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    write_obj((base / "neutral.obj").string(), rig.neutral);
    nlohmann::json j;
    j["neutral"] = "neutral.obj";
    j["targets"] = nlohmann::json::array();
    for (std::size_t i = 0; i < rig.num_controls(); ++i) {
        const std::string fname = "target_" + std::to_string(i) + ".obj";
        TriMesh target = rig.neutral;
        for (std::size_t v = 0; v < target.positions.size(); ++v)
            target.positions[v] += rig.deltas[i][v];
        write_obj((base / fname).string(), target);
        j["targets"].push_back({{"name", rig.names[i]}, {"path", fname}});
    }
    std::ofstream out(base / manifest_name);
    if (!out) throw IoError("save_rig: cannot open manifest");
    out << j.dump(2) << "\n";
}

}  // namespace riginv
