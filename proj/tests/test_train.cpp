#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "riginv/gradcheck.hpp"
#include "riginv/loss.hpp"
#include "riginv/optim.hpp"
#include "riginv/train.hpp"
#include "test_support.hpp"

using namespace riginv;
using riginv::testing::make_random_rig;
using riginv::testing::make_render_rig;
using riginv::testing::random_params;
using riginv::testing::temp_dir;

namespace {

// Small model over 32x32 inputs; dataset rigs still need the full control count.
ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.resolution = 32;
    cfg.patch = 4;
    cfg.dims = {8, 16, 32, 64};
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {1, 2, 2, 4};
    cfg.head_hidden = 32;
    return cfg;
}

// Shared tiny dataset on disk: 102-control bump rig, one-hot renders at 32px.
struct SmallCorpus {
    BlendRig rig;
    std::string dir;

    SmallCorpus() {
        Rng rng(404);
        rig = make_render_rig(8, kNumControls, rng);
        dir = temp_dir("corpus");
        DatasetConfig cfg;
        cfg.total_samples = kNumControls;
        cfg.resolution = 32;
        cfg.rigid = {0.0, 0.0};
        cfg.master_seed = 31;
        cfg.output_dir = dir;
        synthesize_dataset(rig, cfg, PerturbConfig{}, /*perturb_enabled=*/false);
    }
    ~SmallCorpus() { std::filesystem::remove_all(dir); }
};

const SmallCorpus& corpus() {
    static SmallCorpus c;
    return c;
}

}  // namespace

TEST_CASE("rig_loss matches an explicit double-loop oracle") {
    Rng rng(1);
    const BlendRig rig = make_random_rig(20, 7, rng);
    const RigTensors<double> rt = RigTensors<double>::from(rig);
    const RigParams p = random_params(7, rng);
    Tensor<double> pred({std::size_t(1), 7});
    for (auto& v : pred.data) v = rng.uniform(-0.5, 1.5);
    LossConfig cfg;
    cfg.lambda_mesh = 0.7;

    const auto parts =
        rig_loss(Var<double>::constant(pred), p, rt, cfg);

    double mse = 0;
    for (std::size_t i = 0; i < 7; ++i) {
        const double d = pred.data[i] - p.values[i];
        mse += d * d;
    }
    mse /= 7.0;

    // Mesh term: decode both through the raw rig definition.
    const TriMesh truth = rig_forward(rig, p);
    double l1 = 0;
    for (std::size_t v = 0; v < 20; ++v) {
        Vec3 pos = rig.neutral.positions[v];
        for (std::size_t c = 0; c < 7; ++c) pos += rig.deltas[c][v] * pred.data[c];
        const Vec3 d = pos - truth.positions[v];
        l1 += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
    }
    l1 /= 3.0 * 20.0;

    CHECK(parts.mse.value().data[0] == Catch::Approx(mse).margin(1e-10));
    CHECK(parts.mesh.value().data[0] == Catch::Approx(l1).margin(1e-10));
    CHECK(parts.total.value().data[0] == Catch::Approx(mse + 0.7 * l1).margin(1e-10));
}

TEST_CASE("rig_loss vanishes at the ground truth and degrades gracefully") {
    Rng rng(2);
    const BlendRig rig = make_random_rig(15, 5, rng);
    const RigTensors<double> rt = RigTensors<double>::from(rig);
    const RigParams p = random_params(5, rng);

    Tensor<double> exact({std::size_t(1), 5});
    for (std::size_t i = 0; i < 5; ++i) exact.data[i] = p.values[i];
    const auto zero = rig_loss(Var<double>::constant(exact), p, rt, LossConfig{});
    CHECK(zero.total.value().data[0] == Catch::Approx(0.0).margin(1e-12));

    // lambda = 0 leaves only the parameter term.
    Tensor<double> off = exact;
    off.data[2] += 0.3;
    LossConfig no_mesh;
    no_mesh.lambda_mesh = 0.0;
    const auto parts = rig_loss(Var<double>::constant(off), p, rt, no_mesh);
    CHECK(parts.total.value().data[0] ==
          Catch::Approx(parts.mse.value().data[0]).margin(1e-15));
    CHECK(parts.mse.value().data[0] == Catch::Approx(0.3 * 0.3 / 5.0).margin(1e-12));
}

TEST_CASE("rig_loss rejects bad inputs") {
    Rng rng(3);
    const BlendRig rig = make_random_rig(10, 4, rng);
    const RigTensors<double> rt = RigTensors<double>::from(rig);
    const RigParams p = random_params(4, rng);

    Tensor<double> nan_pred({std::size_t(1), 4});
    nan_pred.data[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(rig_loss(Var<double>::constant(nan_pred), p, rt, LossConfig{}), ContractError);

    Tensor<double> short_pred({std::size_t(1), 3});
    CHECK_THROWS_AS(rig_loss(Var<double>::constant(short_pred), p, rt, LossConfig{}),
                    ContractError);

    LossConfig bad;
    bad.lambda_mesh = -1.0;
    Tensor<double> ok({std::size_t(1), 4});
    CHECK_THROWS_AS(rig_loss(Var<double>::constant(ok), p, rt, bad), ContractError);
}

TEST_CASE("rig_loss gradient survives a finite-difference check") {
    Rng rng(4);
    const BlendRig rig = make_random_rig(12, 6, rng);
    const RigTensors<double> rt = RigTensors<double>::from(rig);
    const RigParams p = random_params(6, rng);

    Tensor<double> init({std::size_t(1), 6});
    for (auto& v : init.data) v = rng.uniform(-0.4, 1.4);
    Var<double> pred = Var<double>::leaf(std::move(init), true);
    LossConfig cfg;
    cfg.lambda_mesh = 0.5;
    const auto rep =
        gradcheck_leaves([&] { return rig_loss(pred, p, rt, cfg).total; }, {pred});
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("AdamW single step matches the hand-evaluated update") {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    ParamRegistry<double> reg;
    Var<double> w = reg.add("g", "w", Tensor<double>({std::size_t(2)}, {1.0, -2.0}));
    w.grad().data = {0.5, -1.5};

    AdamW<double> opt(cfg);
    opt.step(reg);

    for (std::size_t i = 0; i < 2; ++i) {
        const double w0 = (i == 0 ? 1.0 : -2.0);
        const double g = (i == 0 ? 0.5 : -1.5);
        double expect = w0 - cfg.lr * cfg.weight_decay * w0;
        const double m = (1 - cfg.beta1) * g;
        const double v = (1 - cfg.beta2) * g * g;
        const double mhat = m / (1 - cfg.beta1);
        const double vhat = v / (1 - cfg.beta2);
        expect -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        CHECK(w.value().data[i] == Catch::Approx(expect).margin(1e-9));
    }
}

TEST_CASE("AdamW leaves weights alone when grad and decay are both zero") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    ParamRegistry<double> reg;
    Var<double> w = reg.add("g", "w", Tensor<double>({std::size_t(3)}, {0.3, -0.7, 2.0}));
    AdamW<double> opt(cfg);
    opt.step(reg);
    opt.step(reg);
    CHECK(w.value().data == std::vector<double>{0.3, -0.7, 2.0});
}

TEST_CASE("AdamW is deterministic and its state round-trips through disk") {
    auto run = [](int presteps, const std::string& ckpt) {
        TrainConfig cfg;
        cfg.lr = 0.05;
        ParamRegistry<double> reg;
        Var<double> w = reg.add("g", "w", Tensor<double>({std::size_t(4)}, {1, 2, 3, 4}));
        AdamW<double> opt(cfg);
        Rng rng(55);
        for (int s = 0; s < presteps; ++s) {
            for (auto& g : w.grad().data) g = rng.normal(0, 1);
            opt.step(reg);
        }
        if (!ckpt.empty()) opt.save(ckpt);
        return std::pair{w.value().data, std::move(opt)};
    };

    auto [wa, _] = run(6, "");
    auto [wb, __] = run(6, "");
    CHECK(wa == wb);

    // Save after 3 steps, reload, run 3 more with the same grads as a straight
    // 6-step run.
    const std::string ckpt = temp_dir("adamw");
    TrainConfig cfg;
    cfg.lr = 0.05;
    ParamRegistry<double> reg;
    Var<double> w = reg.add("g", "w", Tensor<double>({std::size_t(4)}, {1, 2, 3, 4}));
    AdamW<double> opt(cfg);
    Rng rng(55);
    for (int s = 0; s < 3; ++s) {
        for (auto& g : w.grad().data) g = rng.normal(0, 1);
        opt.step(reg);
    }
    opt.save(ckpt);
    AdamW<double> opt2(cfg);
    opt2.load(ckpt);
    CHECK(opt2.step_count() == 3);
    for (int s = 0; s < 3; ++s) {
        for (auto& g : w.grad().data) g = rng.normal(0, 1);
        opt2.step(reg);
    }
    CHECK(w.value().data == wa);
    std::filesystem::remove_all(ckpt);
}

TEST_CASE("train_loop runs the ceil-batch schedule and logs every step") {
    const auto& c = corpus();
    auto samples = load_dataset<float>(c.dir, 32, 6);
    auto model = DualBranchRegressor<float>::create(tiny_model(), 7);

    TrainConfig tcfg;
    tcfg.lr = 1e-3;
    tcfg.batch = 4;
    tcfg.epochs = 2;
    tcfg.seed = 9;
    tcfg.checkpoint_every = 1;
    const std::string out = temp_dir("train_sched");
    const auto rows = train_loop<float>(samples, model, c.rig, tcfg, LossConfig{}, out);

    REQUIRE(rows.size() == 4);  // ceil(6/4) = 2 iters x 2 epochs
    CHECK(rows.front().step == 1);
    CHECK(rows.back().step == 4);
    CHECK(rows.back().epoch == 1);
    for (const auto& r : rows) {
        CHECK(std::isfinite(r.total));
        CHECK(r.total >= 0.0);
        CHECK(r.total == Catch::Approx(r.mse_term + r.mesh_term).margin(1e-6));
    }

    std::ifstream csv(std::filesystem::path(out) / "loss.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,epoch,mse_term,mesh_term,total");
    int data_lines = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++data_lines;
    CHECK(data_lines == 4);
    CHECK(std::filesystem::exists(std::filesystem::path(out) / "ckpt_epoch2" / "model.json"));
    CHECK(std::filesystem::exists(std::filesystem::path(out) / "ckpt_final" / "progress.json"));
    std::filesystem::remove_all(out);
}

TEST_CASE("train_loop keeps frozen groups bitwise fixed") {
    const auto& c = corpus();
    auto samples = load_dataset<float>(c.dir, 32, 4);
    auto model = DualBranchRegressor<float>::create(tiny_model(), 13);

    std::vector<std::vector<float>> frozen_before;
    for (const auto& e : model.registry().entries())
        if (!e.trainable) frozen_before.push_back(e.var.value().data);

    TrainConfig tcfg;
    tcfg.lr = 1e-3;
    tcfg.batch = 2;
    tcfg.epochs = 1;
    tcfg.checkpoint_every = 0;
    const std::string out = temp_dir("train_freeze");
    train_loop<float>(samples, model, c.rig, tcfg, LossConfig{}, out);

    std::size_t fi = 0;
    for (const auto& e : model.registry().entries())
        if (!e.trainable) {
            CHECK(e.var.value().data == frozen_before[fi]);
            ++fi;
        }
    CHECK(fi == frozen_before.size());
    std::filesystem::remove_all(out);
}

TEST_CASE("resumed training continues the uninterrupted trajectory") {
    const auto& c = corpus();
    auto samples = load_dataset<float>(c.dir, 32, 4);

    TrainConfig tcfg;
    tcfg.lr = 1e-3;
    tcfg.batch = 2;
    tcfg.epochs = 2;
    tcfg.seed = 21;
    tcfg.checkpoint_every = 1;

    const std::string out_full = temp_dir("train_full");
    auto model_full = DualBranchRegressor<float>::create(tiny_model(), 3);
    const auto rows_full = train_loop<float>(samples, model_full, c.rig, tcfg, LossConfig{}, out_full);

    const std::string out_half = temp_dir("train_half");
    auto model_half = DualBranchRegressor<float>::create(tiny_model(), 3);
    TrainConfig half = tcfg;
    half.epochs = 1;
    train_loop<float>(samples, model_half, c.rig, half, LossConfig{}, out_half);

    const std::string out_resume = temp_dir("train_resume");
    auto model_resume = DualBranchRegressor<float>::create(tiny_model(), 3);
    const auto rows_resume =
        train_loop<float>(samples, model_resume, c.rig, tcfg, LossConfig{}, out_resume,
                          (std::filesystem::path(out_half) / "ckpt_epoch1").string());

    REQUIRE(rows_full.size() == 4);
    REQUIRE(rows_resume.size() == 2);  // epoch 2 only
    CHECK(rows_resume.front().step == 3);
    CHECK(rows_resume.front().total ==
          Catch::Approx(rows_full[2].total).margin(1e-6));
    CHECK(rows_resume.back().total == Catch::Approx(rows_full[3].total).margin(1e-6));

    std::filesystem::remove_all(out_full);
    std::filesystem::remove_all(out_half);
    std::filesystem::remove_all(out_resume);
}

TEST_CASE("max_steps halts mid-epoch and records honest progress") {
    const auto& c = corpus();
    auto samples = load_dataset<float>(c.dir, 32, 6);
    auto model = DualBranchRegressor<float>::create(tiny_model(), 5);
    TrainConfig tcfg;
    tcfg.batch = 2;
    tcfg.epochs = 5;
    tcfg.max_steps = 4;  // 3 iters/epoch: stops inside epoch 2
    tcfg.checkpoint_every = 0;
    const std::string out = temp_dir("train_maxstep");
    const auto rows = train_loop<float>(samples, model, c.rig, tcfg, LossConfig{}, out);
    REQUIRE(rows.size() == 4);

    std::ifstream pf(std::filesystem::path(out) / "ckpt_final" / "progress.json");
    nlohmann::json j;
    pf >> j;
    CHECK(j.at("epoch").get<int>() == 1);  // only epoch 0 finished cleanly
    CHECK(j.at("step").get<std::size_t>() == 4);
    std::filesystem::remove_all(out);
}

TEST_CASE("evaluate_with: exact predictions give zero error and renders per sample") {
    const auto& c = corpus();
    auto samples = load_dataset<float>(c.dir, 32, 5);
    const std::string out = temp_dir("eval_zero");
    const EvalReport rep = evaluate_with<float>(
        samples, c.rig, [&](std::size_t i) { return samples[i].params; }, out, 64);
    REQUIRE(rep.samples.size() == 5);
    CHECK(rep.mean_param_mse == 0.0);
    CHECK(rep.mean_vertex_l1 == 0.0);
    CHECK(rep.mean_vertex_l2 == 0.0);
    for (const auto& s : rep.samples) CHECK(std::filesystem::exists(s.render_path));
    CHECK(std::filesystem::exists(std::filesystem::path(out) / "eval_report.json"));
    std::filesystem::remove_all(out);
}

TEST_CASE("evaluate_with metrics match a hand computation for a biased predictor") {
    const auto& c = corpus();
    auto samples = load_dataset<float>(c.dir, 32, 2);
    const std::string out = temp_dir("eval_bias");
    const double bias = 0.25;
    const EvalReport rep = evaluate_with<float>(
        samples, c.rig,
        [&](std::size_t i) {
            RigParams p = samples[i].params;
            p.values[0] += bias;
            return p;
        },
        out, 64);

    // Param MSE: one coordinate off by `bias`.
    CHECK(rep.mean_param_mse ==
          Catch::Approx(bias * bias / static_cast<double>(kNumControls)).margin(1e-12));

    // Vertex error oracle: the difference is exactly bias * delta[0].
    double l1 = 0, l2 = 0;
    const std::size_t nv = c.rig.num_vertices();
    for (std::size_t v = 0; v < nv; ++v) {
        const Vec3 d = c.rig.deltas[0][v] * bias;
        l1 += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
        l2 += norm(d);
    }
    l1 /= 3.0 * static_cast<double>(nv);
    l2 /= static_cast<double>(nv);
    CHECK(rep.mean_vertex_l1 == Catch::Approx(l1).margin(1e-9));
    CHECK(rep.mean_vertex_l2 == Catch::Approx(l2).margin(1e-9));
    std::filesystem::remove_all(out);
}

TEST_CASE("direct_fit recovers the generating parameters of a full-rank rig") {
    Rng rng(61);
    const BlendRig rig = make_random_rig(60, 8, rng, 0.3);
    const RigParams truth = random_params(8, rng);
    const TriMesh target = rig_forward(rig, truth);
    const RigParams fit = direct_fit(rig, target);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(std::abs(fit.values[i] - truth.values[i]) < 1e-3);
}

TEST_CASE("direct_fit on the neutral mesh stays near zero") {
    Rng rng(62);
    const BlendRig rig = make_random_rig(40, 5, rng, 0.3);
    const RigParams fit = direct_fit(rig, rig.neutral);
    for (double v : fit.values) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("direct_fit with zero steps returns the zero initializer") {
    Rng rng(63);
    const BlendRig rig = make_random_rig(20, 4, rng);
    const RigParams fit = direct_fit(rig, rig.neutral, 0);
    for (double v : fit.values) CHECK(v == 0.0);

    TriMesh bad = rig.neutral;
    bad.positions.pop_back();
    CHECK_THROWS_AS(direct_fit(rig, bad), ContractError);
}
