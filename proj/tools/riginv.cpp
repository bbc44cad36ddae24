// riginv: dataset synthesis, training, inference, evaluation, rendering,
// gradient checks and a direct-fit baseline for the blendshape rig
// inversion pipeline.
//
// Exit codes: 0 ok, 1 usage, 2 data/config error, 3 numeric-check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "riginv/datagen.hpp"
#include "riginv/gradcheck.hpp"
#include "riginv/rig_io.hpp"
#include "riginv/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

nlohmann::json load_config_file(const std::string& explicit_path) {
    std::string path = explicit_path;
    if (path.empty()) {
        if (const char* env = std::getenv("RIGINV_CONFIG")) path = env;
    }
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw riginv::IoError("cannot open config file " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

// Precedence: flag > config file > built-in default. Echo entries are
// {"value", "provenance"} pairs; reading back an echo as a config works
// because the wrapped form is unwrapped here.
template <class V>
void merge_opt(const CLI::Option* opt, const nlohmann::json& section, const std::string& key,
               V& value, nlohmann::json& echo) {
    std::string prov = "default";
    if (opt != nullptr && opt->count() > 0) {
        prov = "flag";
    } else if (section.contains(key)) {
        const auto& entry = section.at(key);
        if (entry.is_object() && entry.contains("value"))
            value = entry.at("value").get<V>();
        else
            value = entry.get<V>();
        prov = "config";
    }
    echo[key] = {{"value", value}, {"provenance", prov}};
}

void write_echo(const std::string& path, const std::string& command, const nlohmann::json& echo) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["command"] = command;
    j[command] = echo;
    std::ofstream out(path);
    if (!out) throw riginv::IoError("cannot write config echo " + path);
    out << j.dump(2) << "\n";
}

riginv::RigParams read_params_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw riginv::IoError("cannot open params file " + path);
    nlohmann::json j;
    in >> j;
    return riginv::RigParams(j.at("values").get<std::vector<double>>());
}

void write_params_json(const std::string& path, const riginv::RigParams& p) {
    std::ofstream out(path);
    if (!out) throw riginv::IoError("cannot write params file " + path);
    out << nlohmann::json{{"values", p.values}}.dump() << "\n";
}

using ModelT = float;  // training precision; gradcheck switches to double

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Facial rig inversion pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    int threads = 1;
    bool deterministic = false;
    app.add_option("--config", config_path, "JSON config file (env RIGINV_CONFIG)");
    app.add_option("--threads", threads, "Worker cap (1 = serial reference mode)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic, "Force fully serial, bit-reproducible runs");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Synthesize the training corpus");
    std::string gd_rig, gd_out, gd_canonical;
    std::size_t gd_samples = 22575;
    std::uint64_t gd_seed = 0;
    int gd_res = 512;
    bool gd_no_perturb = false;
    double gd_rigid_deg = 5.0, gd_rigid_trans = 0.02;
    riginv::PerturbConfig gd_perturb;
    auto* gd_rig_o = gen->add_option("--rig", gd_rig, "Rig manifest JSON");
    auto* gd_out_o = gen->add_option("--out", gd_out, "Output directory");
    auto* gd_samples_o = gen->add_option("--samples", gd_samples, "Total sample count");
    auto* gd_seed_o = gen->add_option("--seed", gd_seed, "Master seed")->required();
    auto* gd_res_o = gen->add_option("--res", gd_res, "Render resolution");
    auto* gd_canon_o = gen->add_option("--canonical", gd_canonical, "Canonical expressions JSON");
    auto* gd_nopert_o = gen->add_flag("--no-perturb", gd_no_perturb, "Emit base sets unperturbed");
    auto* gd_rigid_o = gen->add_option("--rigid", gd_rigid_deg, "Rigid rotation bound (deg)");
    auto* gd_rigidt_o =
        gen->add_option("--rigid-trans", gd_rigid_trans, "Rigid translation bound (bbox frac)");
    auto* gd_pdrop_o = gen->add_option("--p-drop", gd_perturb.p_drop, "Drop probability");
    auto* gd_padd_o = gen->add_option("--p-add", gd_perturb.p_add, "Add probability");
    auto* gd_prep_o = gen->add_option("--p-replace", gd_perturb.p_replace, "Replace probability");

    // train
    auto* train = app.add_subcommand("train", "Train the dual-branch regressor");
    std::string tr_data, tr_out, tr_rig, tr_resume;
    std::uint64_t tr_seed = 0;
    riginv::TrainConfig tr_cfg;
    riginv::LossConfig tr_loss;
    int tr_res = 64;
    std::size_t tr_limit = 0;
    std::string tr_freeze = "default";
    auto* tr_data_o = train->add_option("--data", tr_data, "Dataset directory");
    auto* tr_out_o = train->add_option("--out", tr_out, "Run output directory");
    auto* tr_rig_o = train->add_option("--rig", tr_rig, "Rig manifest JSON (mesh loss)");
    auto* tr_seed_o = train->add_option("--seed", tr_seed, "Training seed")->required();
    auto* tr_epochs_o = train->add_option("--epochs", tr_cfg.epochs, "Epochs");
    auto* tr_batch_o = train->add_option("--batch", tr_cfg.batch, "Batch size");
    auto* tr_lr_o = train->add_option("--lr", tr_cfg.lr, "Learning rate");
    auto* tr_wd_o = train->add_option("--weight-decay", tr_cfg.weight_decay, "Weight decay");
    auto* tr_lambda_o = train->add_option("--lambda", tr_loss.lambda_mesh, "Mesh loss weight");
    auto* tr_res_o = train->add_option("--model-res", tr_res, "Model input resolution");
    auto* tr_limit_o = train->add_option("--limit", tr_limit, "Use only the first N samples");
    auto* tr_maxsteps_o = train->add_option("--max-steps", tr_cfg.max_steps, "Stop after N steps");
    auto* tr_ckpt_o =
        train->add_option("--checkpoint-every", tr_cfg.checkpoint_every, "Checkpoint cadence (epochs)");
    auto* tr_freeze_o =
        train->add_option("--freeze", tr_freeze, "Freeze set: default | none")
            ->check(CLI::IsMember({"default", "none"}));
    auto* tr_resume_o = train->add_option("--resume", tr_resume, "Checkpoint directory to resume");

    // infer
    auto* infer = app.add_subcommand("infer", "Predict rig parameters from an image pair");
    std::string in_app, in_norm, in_ckpt, in_out = "params_pred.json";
    infer->add_option("--appearance", in_app, "Appearance image (PNG)")->required();
    infer->add_option("--normal", in_norm, "Normal map image (PNG)")->required();
    infer->add_option("--checkpoint", in_ckpt, "Checkpoint directory")->required();
    infer->add_option("--out", in_out, "Output params JSON");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string ev_data, ev_ckpt, ev_rig, ev_out;
    std::size_t ev_limit = 0;
    auto* ev_data_o = eval->add_option("--data", ev_data, "Dataset directory");
    auto* ev_ckpt_o = eval->add_option("--checkpoint", ev_ckpt, "Checkpoint directory");
    auto* ev_rig_o = eval->add_option("--rig", ev_rig, "Rig manifest JSON");
    auto* ev_out_o = eval->add_option("--out", ev_out, "Report output directory");
    auto* ev_limit_o = eval->add_option("--limit", ev_limit, "Evaluate only the first N samples");

    // render
    auto* render = app.add_subcommand("render", "Render a params vector through the rig");
    std::string rd_rig, rd_params, rd_out;
    int rd_res = 512;
    auto* rd_rig_o = render->add_option("--rig", rd_rig, "Rig manifest JSON");
    auto* rd_params_o = render->add_option("--params", rd_params, "Params JSON");
    auto* rd_out_o = render->add_option("--out", rd_out, "Output directory");
    auto* rd_res_o = render->add_option("--res", rd_res, "Resolution");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the network");
    bool gc_double = false;
    std::size_t gc_weights = 100;
    std::uint64_t gc_seed = 1;
    gradcheck->add_flag("--double", gc_double, "Run the tape in double precision");
    gradcheck->add_option("--weights", gc_weights, "Number of sampled weights");
    gradcheck->add_option("--seed", gc_seed, "Seed");

    // direct-fit
    auto* dfit = app.add_subcommand("direct-fit", "Fit rig parameters to a target mesh");
    std::string df_rig, df_target, df_params, df_out = "params_fit.json";
    int df_steps = 500;
    double df_lr = 0.05;
    auto* df_rig_o = dfit->add_option("--rig", df_rig, "Rig manifest JSON");
    auto* df_target_o = dfit->add_option("--target", df_target, "Target mesh OBJ");
    auto* df_params_o =
        dfit->add_option("--params", df_params, "Ground-truth params JSON (synthesizes the target)");
    auto* df_out_o = dfit->add_option("--out", df_out, "Output params JSON");
    auto* df_steps_o = dfit->add_option("--steps", df_steps, "Optimizer steps");
    auto* df_lr_o = dfit->add_option("--lr", df_lr, "Learning rate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        const nlohmann::json config = load_config_file(config_path);

        if (gen->parsed()) {
            const nlohmann::json sec = config.value("gen-data", nlohmann::json::object());
            nlohmann::json echo;
            merge_opt(gd_rig_o, sec, "rig", gd_rig, echo);
            merge_opt(gd_out_o, sec, "out", gd_out, echo);
            merge_opt(gd_samples_o, sec, "samples", gd_samples, echo);
            merge_opt(gd_seed_o, sec, "seed", gd_seed, echo);
            merge_opt(gd_res_o, sec, "res", gd_res, echo);
            merge_opt(gd_canon_o, sec, "canonical", gd_canonical, echo);
            merge_opt(gd_nopert_o, sec, "no-perturb", gd_no_perturb, echo);
            merge_opt(gd_rigid_o, sec, "rigid", gd_rigid_deg, echo);
            merge_opt(gd_rigidt_o, sec, "rigid-trans", gd_rigid_trans, echo);
            merge_opt(gd_pdrop_o, sec, "p-drop", gd_perturb.p_drop, echo);
            merge_opt(gd_padd_o, sec, "p-add", gd_perturb.p_add, echo);
            merge_opt(gd_prep_o, sec, "p-replace", gd_perturb.p_replace, echo);
            if (gd_rig.empty() || gd_out.empty())
                throw riginv::ContractError("gen-data: --rig and --out are required");

            const riginv::BlendRig rig = riginv::load_rig(gd_rig);
            riginv::DatasetConfig dcfg;
            dcfg.total_samples = gd_samples;
            dcfg.resolution = gd_res;
            dcfg.master_seed = gd_seed;
            dcfg.canonical_path = gd_canonical;
            dcfg.output_dir = gd_out;
            dcfg.rigid.rotation_bound_deg = gd_rigid_deg;
            if (gd_rigid_o->count() > 0 && gd_rigid_deg == 0.0) gd_rigid_trans = 0.0;
            dcfg.rigid.translation_bound_frac = gd_rigid_trans;
            const nlohmann::json manifest =
                riginv::synthesize_dataset(rig, dcfg, gd_perturb, !gd_no_perturb);
            write_echo((std::filesystem::path(gd_out) / "config_echo.json").string(), "gen-data",
                       echo);
            std::cout << "wrote " << manifest.at("samples").size() << " samples to " << gd_out
                      << "\n";
            return kExitOk;
        }

        if (train->parsed()) {
            const nlohmann::json sec = config.value("train", nlohmann::json::object());
            nlohmann::json echo;
            merge_opt(tr_data_o, sec, "data", tr_data, echo);
            merge_opt(tr_out_o, sec, "out", tr_out, echo);
            merge_opt(tr_rig_o, sec, "rig", tr_rig, echo);
            merge_opt(tr_seed_o, sec, "seed", tr_seed, echo);
            merge_opt(tr_epochs_o, sec, "epochs", tr_cfg.epochs, echo);
            merge_opt(tr_batch_o, sec, "batch", tr_cfg.batch, echo);
            merge_opt(tr_lr_o, sec, "lr", tr_cfg.lr, echo);
            merge_opt(tr_wd_o, sec, "weight-decay", tr_cfg.weight_decay, echo);
            merge_opt(tr_lambda_o, sec, "lambda", tr_loss.lambda_mesh, echo);
            merge_opt(tr_res_o, sec, "model-res", tr_res, echo);
            merge_opt(tr_limit_o, sec, "limit", tr_limit, echo);
            merge_opt(tr_maxsteps_o, sec, "max-steps", tr_cfg.max_steps, echo);
            merge_opt(tr_ckpt_o, sec, "checkpoint-every", tr_cfg.checkpoint_every, echo);
            merge_opt(tr_freeze_o, sec, "freeze", tr_freeze, echo);
            merge_opt(tr_resume_o, sec, "resume", tr_resume, echo);
            if (tr_data.empty() || tr_out.empty() || tr_rig.empty())
                throw riginv::ContractError("train: --data, --out and --rig are required");
            tr_cfg.seed = tr_seed;

            const riginv::BlendRig rig = riginv::load_rig(tr_rig);
            riginv::ModelConfig mcfg;
            mcfg.resolution = tr_res;
            if (tr_freeze == "none") mcfg.frozen_groups.clear();
            auto model = riginv::DualBranchRegressor<ModelT>::create(mcfg, tr_seed);
            const auto samples = riginv::load_dataset<ModelT>(tr_data, tr_res, tr_limit);

            std::filesystem::create_directories(tr_out);
            write_echo((std::filesystem::path(tr_out) / "config_echo.json").string(), "train",
                       echo);
            std::cout << "training on " << samples.size() << " samples, "
                      << riginv::iterations_per_epoch(samples.size(),
                                                      static_cast<std::size_t>(tr_cfg.batch))
                      << " iterations/epoch\n";
            std::cout << "frozen groups:";
            if (tr_freeze == "default")
                for (const auto& g : riginv::ModelConfig::default_frozen_groups())
                    std::cout << " " << g;
            else
                std::cout << " (none)";
            std::cout << "\n";
            const auto rows =
                riginv::train_loop(samples, model, rig, tr_cfg, tr_loss, tr_out, tr_resume);
            if (!rows.empty())
                std::cout << "final loss " << rows.back().total << " after " << rows.back().step
                          << " steps\n";
            return kExitOk;
        }

        if (infer->parsed()) {
            auto model = riginv::DualBranchRegressor<ModelT>::load(in_ckpt);
            const int res = model.config().resolution;
            const auto ia = riginv::Tensor<double>(
                                {static_cast<std::size_t>(3) * res * res},
                                riginv::preprocess_image(riginv::read_png(in_app), res))
                                .cast<ModelT>();
            const auto in_ = riginv::Tensor<double>(
                                 {static_cast<std::size_t>(3) * res * res},
                                 riginv::preprocess_image(riginv::read_png(in_norm), res))
                                 .cast<ModelT>();
            const auto pred = model.forward(ia, in_);
            riginv::RigParams p(
                std::vector<double>(pred.value().data.begin(), pred.value().data.end()));
            write_params_json(in_out, p);
            std::cout << "wrote " << p.size() << " parameters to " << in_out << "\n";
            return kExitOk;
        }

        if (eval->parsed()) {
            const nlohmann::json sec = config.value("eval", nlohmann::json::object());
            nlohmann::json echo;
            merge_opt(ev_data_o, sec, "data", ev_data, echo);
            merge_opt(ev_ckpt_o, sec, "checkpoint", ev_ckpt, echo);
            merge_opt(ev_rig_o, sec, "rig", ev_rig, echo);
            merge_opt(ev_out_o, sec, "out", ev_out, echo);
            merge_opt(ev_limit_o, sec, "limit", ev_limit, echo);
            if (ev_data.empty() || ev_ckpt.empty() || ev_rig.empty() || ev_out.empty())
                throw riginv::ContractError(
                    "eval: --data, --checkpoint, --rig and --out are required");

            const riginv::BlendRig rig = riginv::load_rig(ev_rig);
            auto model = riginv::DualBranchRegressor<ModelT>::load(ev_ckpt);
            const auto samples =
                riginv::load_dataset<ModelT>(ev_data, model.config().resolution, ev_limit);
            const auto report = riginv::evaluate(model, samples, rig, ev_out);
            write_echo((std::filesystem::path(ev_out) / "config_echo.json").string(), "eval", echo);
            std::cout << "evaluated " << report.samples.size() << " samples: param MSE "
                      << report.mean_param_mse << ", vertex L1 " << report.mean_vertex_l1
                      << ", vertex L2 " << report.mean_vertex_l2 << "\n";
            return kExitOk;
        }

        if (render->parsed()) {
            const nlohmann::json sec = config.value("render", nlohmann::json::object());
            nlohmann::json echo;
            merge_opt(rd_rig_o, sec, "rig", rd_rig, echo);
            merge_opt(rd_params_o, sec, "params", rd_params, echo);
            merge_opt(rd_out_o, sec, "out", rd_out, echo);
            merge_opt(rd_res_o, sec, "res", rd_res, echo);
            if (rd_rig.empty() || rd_params.empty() || rd_out.empty())
                throw riginv::ContractError("render: --rig, --params and --out are required");

            const riginv::BlendRig rig = riginv::load_rig(rd_rig);
            riginv::RigParams p = read_params_json(rd_params);
            const riginv::TriMesh mesh = riginv::rig_forward(rig, p);
            const auto cam = riginv::fit_camera(rig.neutral, riginv::CameraConfig{rd_res, 0.05});
            const auto lights = riginv::LightRig::default_rig();
            std::filesystem::create_directories(rd_out);
            const std::filesystem::path out(rd_out);
            riginv::write_png((out / "appearance.png").string(),
                              riginv::rasterize(mesh, cam, lights, riginv::RenderMode::appearance));
            riginv::write_png((out / "normal.png").string(),
                              riginv::rasterize(mesh, cam, lights, riginv::RenderMode::normal_map));
            write_echo((out / "config_echo.json").string(), "render", echo);
            std::cout << "wrote appearance.png and normal.png to " << rd_out << "\n";
            return kExitOk;
        }

        if (gradcheck->parsed()) {
            riginv::ModelConfig cfg;  // toy default
            const double tol = gc_double ? 1e-5 : 1e-3;
            riginv::GradcheckReport rep;
            if (gc_double)
                rep = riginv::gradcheck_model<double>(cfg, gc_seed, gc_weights);
            else
                rep = riginv::gradcheck_model<float>(cfg, gc_seed, gc_weights);
            std::cout << "gradcheck: max relative error " << rep.max_rel_err << " over "
                      << rep.checked << " weights (tolerance " << tol << ")\n";
            return rep.max_rel_err <= tol ? kExitOk : kExitNumeric;
        }

        if (dfit->parsed()) {
            const nlohmann::json sec = config.value("direct-fit", nlohmann::json::object());
            nlohmann::json echo;
            merge_opt(df_rig_o, sec, "rig", df_rig, echo);
            merge_opt(df_target_o, sec, "target", df_target, echo);
            merge_opt(df_params_o, sec, "params", df_params, echo);
            merge_opt(df_out_o, sec, "out", df_out, echo);
            merge_opt(df_steps_o, sec, "steps", df_steps, echo);
            merge_opt(df_lr_o, sec, "lr", df_lr, echo);
            if (df_rig.empty() || (df_target.empty() && df_params.empty()))
                throw riginv::ContractError(
                    "direct-fit: --rig plus either --target or --params is required");

            const riginv::BlendRig rig = riginv::load_rig(df_rig);
            riginv::TriMesh target;
            bool have_truth = false;
            riginv::RigParams truth;
            if (!df_params.empty()) {
                truth = read_params_json(df_params);
                target = riginv::rig_forward(rig, truth);
                have_truth = true;
            } else {
                target = riginv::read_obj(df_target);
            }
            const riginv::RigParams fitted = riginv::direct_fit(rig, target, df_steps, df_lr);
            write_params_json(df_out, fitted);
            write_echo(df_out + ".echo.json", "direct-fit", echo);
            if (have_truth) {
                double linf = 0;
                for (std::size_t i = 0; i < fitted.size(); ++i)
                    linf = std::max(linf, std::abs(fitted.values[i] - truth.values[i]));
                std::cout << "recovery Linf error " << linf << "\n";
                if (linf > 1e-3) return kExitNumeric;
            }
            std::cout << "wrote fitted parameters to " << df_out << "\n";
            return kExitOk;
        }
    } catch (const riginv::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const riginv::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
