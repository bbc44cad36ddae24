#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "riginv/png_io.hpp"
#include "riginv/raster.hpp"
#include "riginv/rig.hpp"
#include "riginv/rng.hpp"

namespace riginv {

struct PerturbConfig {
    double p_drop = 0.2;
    double p_add = 0.1;
    int add_cap = 3;
    double p_replace = 0.1;
    double intensity_mean = 0.6;
    double intensity_std = 0.25;
    double intensity_lo = 0.05;
    double intensity_hi = 1.0;

    void validate() const {
        for (double p : {p_drop, p_add, p_replace})
            require(p >= 0.0 && p <= 1.0, "PerturbConfig: probability out of [0,1]");
        require(intensity_std >= 0.0, "PerturbConfig: negative std");
        require(intensity_lo < intensity_hi && intensity_lo >= 0.0 && intensity_hi <= 1.0,
                "PerturbConfig: bad intensity clamp");
        require(add_cap >= 0, "PerturbConfig: negative add_cap");
    }
};

struct DatasetConfig {
    std::size_t total_samples = 22575;
    int resolution = 512;
    RigidSampleConfig rigid;
    std::uint64_t master_seed = 0;
    std::string canonical_path;  // empty -> no canonical combinations
    std::string output_dir;
};

struct NamedParams {
    std::string name;
    RigParams params;
};

// [{"name": ..., "weights": [[index, value], ...]}, ...]
inline std::vector<NamedParams> load_canonical_expressions(const std::string& path,
                                                           std::size_t num_controls) {
    std::ifstream in(path);
    if (!in) throw IoError("load_canonical_expressions: cannot open " + path);
    nlohmann::json j;
    in >> j;
    std::vector<NamedParams> out;
    for (const auto& e : j) {
        NamedParams np;
        np.name = e.at("name").get<std::string>();
        np.params = RigParams::zeros(num_controls);
        for (const auto& w : e.at("weights")) {
            const auto idx = w.at(0).get<std::size_t>();
            require(idx < num_controls, "canonical expression index out of range");
            np.params.values[idx] = w.at(1).get<double>();
        }
        out.push_back(std::move(np));
    }
    return out;
}

// One one-hot set per control, then the canonical combinations, in stable order.
inline std::vector<RigParams> base_param_sets(const BlendRig& rig,
                                              const std::vector<NamedParams>& canonical) {
    const std::size_t n = rig.num_controls();
    std::vector<RigParams> sets;
    sets.reserve(n + canonical.size());
    for (std::size_t i = 0; i < n; ++i) sets.push_back(RigParams::one_hot(i, n));
    for (const auto& c : canonical) {
        c.params.validate(n);
        sets.push_back(c.params);
    }
    return sets;
}

// Drop / replace / add edits on the active set, then fresh clamped normal
// intensities for everything still active. RNG draw order is fixed by
// ascending index so results are reproducible.
inline RigParams perturb_params(const RigParams& p, const PerturbConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = p.size();
    std::vector<bool> active(n);
    for (std::size_t i = 0; i < n; ++i) active[i] = p.values[i] > 0.0;

    for (std::size_t i = 0; i < n; ++i)
        if (active[i] && rng.uniform() < cfg.p_drop) active[i] = false;

    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i] || rng.uniform() >= cfg.p_replace) continue;
        std::vector<std::size_t> inactive;
        for (std::size_t k = 0; k < n; ++k)
            if (!active[k]) inactive.push_back(k);
        if (inactive.empty()) continue;
        active[i] = false;
        active[inactive[rng.below(inactive.size())]] = true;
    }

    int added = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (active[i] || rng.uniform() >= cfg.p_add) continue;
        if (added >= cfg.add_cap) continue;  // excess additions discarded in index order
        active[i] = true;
        ++added;
    }

    RigParams out = RigParams::zeros(n);
    for (std::size_t i = 0; i < n; ++i)
        if (active[i])
            out.values[i] = std::clamp(rng.normal(cfg.intensity_mean, cfg.intensity_std),
                                       cfg.intensity_lo, cfg.intensity_hi);
    return out;
}

namespace detail {

inline std::string sample_dir_name(std::size_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu", id);
    return buf;
}

inline nlohmann::json rigid_to_json(const RigidTransform& xf) {
    nlohmann::json j;
    j["rotation"] = xf.rotation.m;
    j["translation"] = {xf.translation.x, xf.translation.y, xf.translation.z};
    return j;
}

}  // namespace detail

// Cycles over the base sets until total_samples are produced; the first pass
// over each base set is emitted unperturbed. Every sample draws its own RNG
// stream from (master_seed, index), so the output bytes depend only on the
// rig, the configs and the seed.
inline nlohmann::json synthesize_dataset(const BlendRig& rig, const DatasetConfig& cfg,
                                         const PerturbConfig& perturb, bool perturb_enabled = true) {
    rig.validate();
    perturb.validate();
    std::vector<NamedParams> canonical;
    if (!cfg.canonical_path.empty())
        canonical = load_canonical_expressions(cfg.canonical_path, rig.num_controls());
    const std::vector<RigParams> bases = base_param_sets(rig, canonical);
    require(cfg.total_samples >= bases.size(),
            "synthesize_dataset: total_samples below base set count");

    const CameraConfig cam_cfg{cfg.resolution, 0.05};
    const FittedCamera cam = fit_camera(rig.neutral, cam_cfg);
    const LightRig lights = LightRig::default_rig();
    const double diag = bounds_of(rig.neutral).diagonal();
    const NormalSpace nspace =
        rig.neutral.has_uvs() ? NormalSpace::tangent : NormalSpace::camera;

    const std::filesystem::path out_root(cfg.output_dir);
    std::filesystem::create_directories(out_root);

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = cfg.master_seed;
    manifest["resolution"] = cfg.resolution;
    manifest["normal_space"] = nspace == NormalSpace::tangent ? "tangent" : "camera";
    manifest["num_base_sets"] = bases.size();
    manifest["perturb"] = {{"enabled", perturb_enabled},
                           {"p_drop", perturb.p_drop},
                           {"p_add", perturb.p_add},
                           {"add_cap", perturb.add_cap},
                           {"p_replace", perturb.p_replace},
                           {"intensity_mean", perturb.intensity_mean},
                           {"intensity_std", perturb.intensity_std},
                           {"intensity_clamp", {perturb.intensity_lo, perturb.intensity_hi}}};
    manifest["rigid"] = {{"rotation_bound_deg", cfg.rigid.rotation_bound_deg},
                         {"translation_bound_frac", cfg.rigid.translation_bound_frac}};
    manifest["samples"] = nlohmann::json::array();

    try {
        for (std::size_t i = 0; i < cfg.total_samples; ++i) {
            Rng rng = Rng::stream(cfg.master_seed, i);
            const std::size_t base = i % bases.size();
            const bool pristine = i < bases.size();
            RigParams params = bases[base];
            if (!pristine && perturb_enabled) params = perturb_params(params, perturb, rng);
            const RigidTransform xf = sample_rigid(rng, cfg.rigid, diag);

            const TriMesh mesh = apply_rigid(rig_forward(rig, params), xf);
            const ImageRGB8 appearance = rasterize(mesh, cam, lights, RenderMode::appearance);
            const ImageRGB8 normal_map = rasterize(mesh, cam, lights, RenderMode::normal_map);

            const std::string dir_name = detail::sample_dir_name(i);
            const auto sample_dir = out_root / dir_name;
            std::filesystem::create_directories(sample_dir);
            write_png((sample_dir / "appearance.png").string(), appearance);
            write_png((sample_dir / "normal.png").string(), normal_map);
            {
                std::ofstream pj(sample_dir / "params.json");
                if (!pj) throw IoError("synthesize_dataset: cannot write params.json");
                nlohmann::json jp;
                jp["values"] = params.values;
                pj << jp.dump() << "\n";
            }
            manifest["samples"].push_back({{"id", i},
                                           {"dir", dir_name},
                                           {"base_index", base},
                                           {"pristine", pristine},
                                           {"rigid", detail::rigid_to_json(xf)}});
        }
    } catch (...) {
        // Leave no partial manifest behind.
        std::error_code ec;
        std::filesystem::remove(out_root / "manifest.json", ec);
        throw;
    }

    std::ofstream mf(out_root / "manifest.json");
    if (!mf) throw IoError("synthesize_dataset: cannot write manifest.json");
    mf << manifest.dump(2) << "\n";
    return manifest;
}

}  // namespace riginv
