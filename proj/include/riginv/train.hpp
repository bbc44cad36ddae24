#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "riginv/datagen.hpp"
#include "riginv/loss.hpp"
#include "riginv/model.hpp"
#include "riginv/optim.hpp"
#include "riginv/preprocess.hpp"
#include "riginv/raster.hpp"

namespace riginv {

// Final partial batch is kept (ceil): 22575 / 32 -> 706.
inline std::size_t iterations_per_epoch(std::size_t num_samples, std::size_t batch) {
    require(batch >= 1, "iterations_per_epoch: batch must be >= 1");
    return (num_samples + batch - 1) / batch;
}

template <class T>
struct TrainSample {
    Tensor<T> appearance;  // flat C*H*W, preprocessed
    Tensor<T> normal_map;
    RigParams params;
    std::string dir;  // sample directory inside the dataset, for eval renders
};

template <class T>
std::vector<TrainSample<T>> load_dataset(const std::string& dataset_dir, int resolution,
                                         std::size_t limit = 0) {
    const std::filesystem::path root(dataset_dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw IoError("load_dataset: cannot open manifest in " + dataset_dir);
    nlohmann::json manifest;
    mf >> manifest;
    std::vector<TrainSample<T>> samples;
    for (const auto& rec : manifest.at("samples")) {
        if (limit > 0 && samples.size() >= limit) break;
        const auto dir = root / rec.at("dir").get<std::string>();
        TrainSample<T> s;
        s.dir = dir.string();
        s.appearance = Tensor<double>(
                           {static_cast<std::size_t>(3) * resolution * resolution},
                           preprocess_image(read_png((dir / "appearance.png").string()), resolution))
                           .template cast<T>();
        s.normal_map = Tensor<double>(
                           {static_cast<std::size_t>(3) * resolution * resolution},
                           preprocess_image(read_png((dir / "normal.png").string()), resolution))
                           .template cast<T>();
        std::ifstream pj(dir / "params.json");
        if (!pj) throw IoError("load_dataset: missing params.json in " + dir.string());
        nlohmann::json jp;
        pj >> jp;
        s.params = RigParams(jp.at("values").get<std::vector<double>>());
        samples.push_back(std::move(s));
    }
    require(!samples.empty(), "load_dataset: empty dataset");
    return samples;
}

struct LossRow {
    std::size_t step, epoch;
    double mse_term, mesh_term, total;
};

namespace detail {

template <class T>
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace detail

// Seeded shuffle per epoch, ceil-division batching, forward -> loss ->
// backward -> AdamW. Writes loss.csv and periodic checkpoints under out_dir.
// With resume_dir set, picks up model/optimizer/epoch state from a previous
// checkpoint and continues to the configured end.
template <class T>
std::vector<LossRow> train_loop(const std::vector<TrainSample<T>>& samples,
                                DualBranchRegressor<T>& model, const BlendRig& rig,
                                const TrainConfig& tcfg, const LossConfig& lcfg,
                                const std::string& out_dir,
                                const std::string& resume_dir = "") {
    tcfg.validate();
    lcfg.validate();
    require(!samples.empty(), "train_loop: empty dataset");
    const std::size_t batch = static_cast<std::size_t>(tcfg.batch);
    const std::size_t iters = iterations_per_epoch(samples.size(), batch);

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);

    AdamW<T> opt(tcfg);
    int start_epoch = 0;
    std::size_t step = 0;
    if (!resume_dir.empty()) {
        model = DualBranchRegressor<T>::load(resume_dir);
        opt.load(resume_dir);
        std::ifstream sf(std::filesystem::path(resume_dir) / "progress.json");
        if (!sf) throw IoError("train_loop: checkpoint missing progress.json");
        nlohmann::json js;
        sf >> js;
        start_epoch = js.at("epoch").get<int>();
        step = js.at("step").get<std::size_t>();
    }

    const RigTensors<T> rt = RigTensors<T>::from(rig);
    std::ofstream csv(out / "loss.csv", resume_dir.empty() ? std::ios::out : std::ios::app);
    if (!csv) throw IoError("train_loop: cannot open loss.csv");
    if (resume_dir.empty()) csv << "step,epoch,mse_term,mesh_term,total\n";

    auto save_checkpoint = [&](int epoch_done, const std::string& name) {
        const std::string ckpt = (out / name).string();
        model.save(ckpt);
        opt.save(ckpt);
        std::ofstream sf(std::filesystem::path(ckpt) / "progress.json");
        sf << nlohmann::json{{"epoch", epoch_done}, {"step", step}}.dump() << "\n";
    };

    std::vector<LossRow> rows;
    std::vector<std::size_t> order(samples.size());
    bool stop = false;
    int epochs_done = start_epoch;
    for (int epoch = start_epoch; epoch < tcfg.epochs && !stop; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(tcfg.seed + static_cast<std::uint64_t>(epoch) + 1);
        detail::shuffle_indices<T>(order, shuffle_rng);

        for (std::size_t it = 0; it < iters && !stop; ++it) {
            const std::size_t lo = it * batch;
            const std::size_t hi = std::min(lo + batch, samples.size());
            const T inv_b = T(1) / static_cast<T>(hi - lo);

            model.registry().zero_grad();
            double mse_sum = 0, mesh_sum = 0, total_sum = 0;
            for (std::size_t k = lo; k < hi; ++k) {
                const auto& s = samples[order[k]];
                const Var<T> pred = model.forward(s.appearance, s.normal_map);
                const LossParts<T> parts = rig_loss(pred, s.params, rt, lcfg);
                mse_sum += static_cast<double>(parts.mse.value().data[0]);
                mesh_sum += static_cast<double>(parts.mesh.value().data[0]);
                total_sum += static_cast<double>(parts.total.value().data[0]);
                backward(ad::scale(parts.total, inv_b));
            }
            opt.step(model.registry());
            ++step;

            const double nb = static_cast<double>(hi - lo);
            LossRow row{step, static_cast<std::size_t>(epoch), mse_sum / nb, mesh_sum / nb,
                        total_sum / nb};
            rows.push_back(row);
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.10g,%.10g,%.10g\n", row.step, row.epoch,
                          row.mse_term, row.mesh_term, row.total);
            csv << buf;
            if (tcfg.max_steps > 0 && step >= tcfg.max_steps) stop = true;
        }
        if (!stop) epochs_done = epoch + 1;
        if (tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0)
            save_checkpoint(epoch + 1, "ckpt_epoch" + std::to_string(epoch + 1));
    }
    csv.flush();
    save_checkpoint(epochs_done, "ckpt_final");
    return rows;
}

struct SampleMetrics {
    std::size_t index = 0;
    double param_mse = 0;
    double vertex_l1 = 0;  // mean |diff| over all coordinates
    double vertex_l2 = 0;  // mean Euclidean distance over vertices
    std::string render_path;
};

struct EvalReport {
    std::vector<SampleMetrics> samples;
    double mean_param_mse = 0, mean_vertex_l1 = 0, mean_vertex_l2 = 0;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["aggregate"] = {{"param_mse", r.mean_param_mse},
                      {"vertex_l1", r.mean_vertex_l1},
                      {"vertex_l2", r.mean_vertex_l2}};
    j["samples"] = nlohmann::json::array();
    for (const auto& s : r.samples)
        j["samples"].push_back({{"index", s.index},
                                {"param_mse", s.param_mse},
                                {"vertex_l1", s.vertex_l1},
                                {"vertex_l2", s.vertex_l2},
                                {"render", s.render_path}});
    return j;
}

// Metrics plus side-by-side renders (input appearance | reconstruction).
// `predict` maps a sample index to predicted params, so the same path serves
// the trained model and oracle injections.
template <class T>
EvalReport evaluate_with(const std::vector<TrainSample<T>>& samples, const BlendRig& rig,
                         const std::function<RigParams(std::size_t)>& predict,
                         const std::string& out_dir, int render_resolution = 256) {
    require(!samples.empty(), "evaluate_with: empty dataset");
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);
    const FittedCamera cam = fit_camera(rig.neutral, CameraConfig{render_resolution, 0.05});
    const LightRig lights = LightRig::default_rig();

    EvalReport report;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const RigParams pred = predict(i);
        const TriMesh recon = rig_forward(rig, pred);
        const TriMesh truth = rig_forward(rig, samples[i].params);

        SampleMetrics m;
        m.index = i;
        for (std::size_t c = 0; c < pred.size(); ++c) {
            const double d = pred.values[c] - samples[i].params.values[c];
            m.param_mse += d * d;
        }
        m.param_mse /= static_cast<double>(pred.size());
        for (std::size_t v = 0; v < recon.positions.size(); ++v) {
            const Vec3 d = recon.positions[v] - truth.positions[v];
            m.vertex_l1 += (std::abs(d.x) + std::abs(d.y) + std::abs(d.z));
            m.vertex_l2 += norm(d);
        }
        m.vertex_l1 /= 3.0 * static_cast<double>(recon.positions.size());
        m.vertex_l2 /= static_cast<double>(recon.positions.size());

        // Side-by-side: stored input appearance | reconstruction render.
        const ImageRGB8 input_img =
            read_png((std::filesystem::path(samples[i].dir) / "appearance.png").string());
        const ImageRGB8 recon_img = rasterize(recon, cam, lights, RenderMode::appearance);
        const ImageRGB8 input_rs = detail::resize_bilinear(input_img, recon_img.width, recon_img.height);
        ImageRGB8 side(recon_img.width * 2, recon_img.height);
        for (int y = 0; y < recon_img.height; ++y) {
            std::copy(input_rs.pixel(0, y), input_rs.pixel(0, y) + input_rs.width * 3,
                      side.pixel(0, y));
            std::copy(recon_img.pixel(0, y), recon_img.pixel(0, y) + recon_img.width * 3,
                      side.pixel(input_rs.width, y));
        }
        char name[48];
        std::snprintf(name, sizeof(name), "eval_%06zu.png", i);
        m.render_path = (out / name).string();
        write_png(m.render_path, side);

        report.mean_param_mse += m.param_mse;
        report.mean_vertex_l1 += m.vertex_l1;
        report.mean_vertex_l2 += m.vertex_l2;
        report.samples.push_back(std::move(m));
    }
    const double n = static_cast<double>(report.samples.size());
    report.mean_param_mse /= n;
    report.mean_vertex_l1 /= n;
    report.mean_vertex_l2 /= n;

    std::ofstream jf(out / "eval_report.json");
    if (!jf) throw IoError("evaluate_with: cannot write report");
    jf << eval_report_to_json(report).dump(2) << "\n";
    return report;
}

template <class T>
EvalReport evaluate(const DualBranchRegressor<T>& model, const std::vector<TrainSample<T>>& samples,
                    const BlendRig& rig, const std::string& out_dir) {
    return evaluate_with<T>(
        samples, rig,
        [&](std::size_t i) {
            const Var<T> pred = model.forward(samples[i].appearance, samples[i].normal_map);
            RigParams p(std::vector<double>(pred.value().data.begin(), pred.value().data.end()));
            return p;
        },
        out_dir);
}

// Gradient-descent baseline straight through the rig, no network. Minimizes
// mean squared per-vertex error from p = 0 with Adam and returns the best
// iterate. Convex quadratic, so a full-rank basis recovers the generator.
inline RigParams direct_fit(const BlendRig& rig, const TriMesh& target, int steps = 500,
                            double lr = 0.05) {
    rig.validate();
    require(target.positions.size() == rig.num_vertices(), "direct_fit: vertex count mismatch");
    require(steps >= 0, "direct_fit: negative steps");

    const RigTensors<double> rt = RigTensors<double>::from(rig);
    Tensor<double> target_flat({std::size_t(1), 3 * rig.num_vertices()});
    for (std::size_t v = 0; v < target.positions.size(); ++v) {
        target_flat.data[3 * v] = target.positions[v].x;
        target_flat.data[3 * v + 1] = target.positions[v].y;
        target_flat.data[3 * v + 2] = target.positions[v].z;
    }

    Var<double> p = Var<double>::leaf(Tensor<double>({std::size_t(1), rig.num_controls()}), true);
    std::vector<double> m(rig.num_controls(), 0.0), v(rig.num_controls(), 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    RigParams best(std::vector<double>(p.value().data));
    double best_obj = std::numeric_limits<double>::infinity();
    for (int t = 1; t <= steps; ++t) {
        p.zero_grad();
        const Var<double> obj = ad::mse_to(rt.decode(p), target_flat);
        if (obj.value().data[0] < best_obj) {
            best_obj = obj.value().data[0];
            best.values = p.value().data;
        }
        backward(obj);
        for (std::size_t i = 0; i < p.value().size(); ++i) {
            const double g = p.grad().data[i];
            m[i] = b1 * m[i] + (1 - b1) * g;
            v[i] = b2 * v[i] + (1 - b2) * g * g;
            const double mhat = m[i] / (1 - std::pow(b1, t));
            const double vhat = v[i] / (1 - std::pow(b2, t));
            p.value().data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    if (steps > 0) {
        const Var<double> obj = ad::mse_to(rt.decode(p), target_flat);
        if (obj.value().data[0] < best_obj) best.values = p.value().data;
    }
    return best;
}

}  // namespace riginv
