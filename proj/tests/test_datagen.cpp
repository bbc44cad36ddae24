#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "riginv/datagen.hpp"
#include "riginv/preprocess.hpp"
#include "riginv/train.hpp"
#include "test_support.hpp"

using namespace riginv;
using riginv::testing::make_render_rig;
using riginv::testing::temp_dir;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("base_param_sets: one-hots then canonical combinations") {
    Rng rng(1);
    const BlendRig rig = make_render_rig(6, 10, rng);

    const auto sets = base_param_sets(rig, {});
    REQUIRE(sets.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = 0; j < 10; ++j)
            CHECK(sets[i].values[j] == (i == j ? 1.0 : 0.0));
    }

    std::vector<NamedParams> canonical(3);
    for (auto& c : canonical) c.params = RigParams::zeros(10);
    canonical[0].params.values[2] = 0.7;
    const auto with = base_param_sets(rig, canonical);
    CHECK(with.size() == 13);
    CHECK(with[10].values[2] == 0.7);

    NamedParams bad;
    bad.params = RigParams::zeros(9);
    CHECK_THROWS_AS(base_param_sets(rig, {bad}), ContractError);

    // Stable ordering across invocations.
    const auto again = base_param_sets(rig, canonical);
    for (std::size_t i = 0; i < with.size(); ++i) CHECK(with[i].values == again[i].values);
}

TEST_CASE("perturb_params degenerate configurations") {
    RigParams p = RigParams::zeros(10);
    p.values[1] = 0.5;
    p.values[4] = 0.9;

    SECTION("drop everything") {
        PerturbConfig cfg;
        cfg.p_drop = 1.0;
        cfg.p_add = 0.0;
        cfg.p_replace = 0.0;
        Rng rng(5);
        const RigParams out = perturb_params(p, cfg, rng);
        for (double v : out.values) CHECK(v == 0.0);
    }

    SECTION("identity edits with degenerate intensity distribution") {
        PerturbConfig cfg;
        cfg.p_drop = 0.0;
        cfg.p_add = 0.0;
        cfg.p_replace = 0.0;
        cfg.intensity_mean = 0.6;
        cfg.intensity_std = 0.0;
        Rng rng(5);
        const RigParams out = perturb_params(p, cfg, rng);
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(out.values[i] == (p.values[i] > 0.0 ? 0.6 : 0.0));
    }

    SECTION("invalid probabilities rejected") {
        PerturbConfig cfg;
        cfg.p_drop = 1.5;
        Rng rng(5);
        CHECK_THROWS_AS(perturb_params(p, cfg, rng), ContractError);
    }
}

TEST_CASE("perturb_params drop rate matches binomial expectation") {
    PerturbConfig cfg;
    cfg.p_drop = 0.5;
    cfg.p_add = 0.0;
    cfg.p_replace = 0.0;
    RigParams p = RigParams::zeros(20);
    for (int i = 0; i < 10; ++i) p.values[i] = 0.5;

    Rng rng(99);
    double retained = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        const RigParams out = perturb_params(p, cfg, rng);
        int active = 0;
        for (double v : out.values)
            if (v > 0) ++active;
        retained += active / 10.0;
    }
    retained /= trials;
    CHECK(retained > 0.48);
    CHECK(retained < 0.52);
}

TEST_CASE("perturb_params conservation: active values clamped, rest zero") {
    PerturbConfig cfg;  // defaults
    Rng master(7);
    for (int t = 0; t < 200; ++t) {
        RigParams p = RigParams::zeros(30);
        for (int i = 0; i < 8; ++i) p.values[master.below(30)] = master.uniform(0.1, 1.0);
        Rng rng(1000 + t);
        const RigParams out = perturb_params(p, cfg, rng);
        for (double v : out.values) {
            if (v != 0.0) {
                CHECK(v >= cfg.intensity_lo);
                CHECK(v <= cfg.intensity_hi);
            }
        }
    }
}

TEST_CASE("perturb_params add_cap bounds additions") {
    PerturbConfig cfg;
    cfg.p_drop = 0.0;
    cfg.p_replace = 0.0;
    cfg.p_add = 1.0;
    cfg.add_cap = 3;
    RigParams p = RigParams::zeros(10);
    p.values[0] = 1.0;
    Rng rng(3);
    const RigParams out = perturb_params(p, cfg, rng);
    int active = 0;
    for (double v : out.values)
        if (v > 0) ++active;
    CHECK(active == 4);  // the original plus exactly add_cap additions
    // With p_add = 1 the first add_cap inactive indices in order are taken.
    CHECK(out.values[1] > 0);
    CHECK(out.values[2] > 0);
    CHECK(out.values[3] > 0);
}

TEST_CASE("synthesize_dataset pristine base sets when perturbation is off") {
    Rng rng(2);
    const BlendRig rig = make_render_rig(8, 5, rng);
    DatasetConfig cfg;
    cfg.total_samples = 5;
    cfg.resolution = 32;
    cfg.rigid = {0.0, 0.0};
    cfg.master_seed = 11;
    cfg.output_dir = temp_dir("pristine");

    const auto manifest = synthesize_dataset(rig, cfg, PerturbConfig{}, /*perturb_enabled=*/false);
    REQUIRE(manifest.at("samples").size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        std::ifstream pj(std::filesystem::path(cfg.output_dir) / detail::sample_dir_name(i) /
                         "params.json");
        nlohmann::json j;
        pj >> j;
        const auto vals = j.at("values").get<std::vector<double>>();
        for (std::size_t k = 0; k < 5; ++k) CHECK(vals[k] == (k == i ? 1.0 : 0.0));
    }
    std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("synthesize_dataset is byte-identical under the same seed") {
    Rng rng(4);
    const BlendRig rig = make_render_rig(8, 4, rng);
    DatasetConfig cfg;
    cfg.total_samples = 8;
    cfg.resolution = 32;
    cfg.master_seed = 77;

    cfg.output_dir = temp_dir("det_a");
    synthesize_dataset(rig, cfg, PerturbConfig{});
    const std::string dir_a = cfg.output_dir;
    cfg.output_dir = temp_dir("det_b");
    synthesize_dataset(rig, cfg, PerturbConfig{});

    for (std::size_t i = 0; i < 8; ++i) {
        const std::string rel = detail::sample_dir_name(i);
        for (const char* f : {"appearance.png", "normal.png", "params.json"}) {
            const auto a = slurp(dir_a + "/" + rel + "/" + f);
            const auto b = slurp(cfg.output_dir + "/" + rel + "/" + f);
            REQUIRE(a == b);
        }
    }
    CHECK(slurp(dir_a + "/manifest.json") == slurp(cfg.output_dir + "/manifest.json"));
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("synthesize_dataset label integrity: stored params reproduce stored images") {
    Rng rng(6);
    const BlendRig rig = make_render_rig(8, 4, rng);
    DatasetConfig cfg;
    cfg.total_samples = 6;
    cfg.resolution = 32;
    cfg.master_seed = 5;
    cfg.output_dir = temp_dir("integrity");
    const auto manifest = synthesize_dataset(rig, cfg, PerturbConfig{});

    const FittedCamera cam = fit_camera(rig.neutral, CameraConfig{32, 0.05});
    const LightRig lights = LightRig::default_rig();
    for (const auto& rec : manifest.at("samples")) {
        const auto dir =
            std::filesystem::path(cfg.output_dir) / rec.at("dir").get<std::string>();
        std::ifstream pj(dir / "params.json");
        nlohmann::json j;
        pj >> j;
        const RigParams p(j.at("values").get<std::vector<double>>());
        RigidTransform xf;
        xf.rotation.m = rec.at("rigid").at("rotation").get<std::array<double, 9>>();
        const auto t = rec.at("rigid").at("translation").get<std::array<double, 3>>();
        xf.translation = {t[0], t[1], t[2]};

        const TriMesh mesh = apply_rigid(rig_forward(rig, p), xf);
        const ImageRGB8 a = rasterize(mesh, cam, lights, RenderMode::appearance);
        const ImageRGB8 stored = read_png((dir / "appearance.png").string());
        REQUIRE(a.data == stored.data);
    }
    std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("synthesize_dataset rejects too-small sample budgets") {
    Rng rng(8);
    const BlendRig rig = make_render_rig(6, 5, rng);
    DatasetConfig cfg;
    cfg.total_samples = 4;  // below the 5 base sets
    cfg.resolution = 32;
    cfg.output_dir = temp_dir("reject");
    CHECK_THROWS_AS(synthesize_dataset(rig, cfg, PerturbConfig{}), ContractError);
    std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("preprocess_image normalization identity at the channel means") {
    ImageRGB8 img(16, 16);
    const std::uint8_t mean_px[3] = {
        static_cast<std::uint8_t>(std::lround(0.485 * 255)),
        static_cast<std::uint8_t>(std::lround(0.456 * 255)),
        static_cast<std::uint8_t>(std::lround(0.406 * 255))};
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) img.pixel(x, y)[c] = mean_px[c];

    const auto out = preprocess_image(img, 16);
    REQUIRE(out.size() == 3u * 16 * 16);
    for (double v : out) CHECK(std::abs(v) <= 1.0 / 255.0 / 0.229 + 1e-12);
}

TEST_CASE("preprocess_image leaves square target-size input unresampled") {
    ImageRGB8 img(8, 8);
    Rng rng(12);
    for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
    const auto out = preprocess_image(img, 8);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 64; ++i) {
            const double raw = img.data[static_cast<std::size_t>(i) * 3 + c] / 255.0;
            const double expect = (raw - kImagenetMean[c]) / kImagenetStd[c];
            CHECK(out[static_cast<std::size_t>(c) * 64 + i] == Catch::Approx(expect));
        }
}

TEST_CASE("preprocess_image center crop takes the centered columns") {
    // 24x16 -> shorter side already 16: crop is columns [4, 20).
    ImageRGB8 img(24, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 24; ++x)
            img.pixel(x, y)[0] = static_cast<std::uint8_t>(x * 10);
    const auto out = preprocess_image(img, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const double raw = (x + 4) * 10 / 255.0;
            const double expect = (raw - kImagenetMean[0]) / kImagenetStd[0];
            CHECK(out[static_cast<std::size_t>(y) * 16 + x] == Catch::Approx(expect).margin(1e-12));
        }
}

TEST_CASE("epoch arithmetic matches the training schedule") {
    CHECK(iterations_per_epoch(22575, 32) == 706);
    CHECK(iterations_per_epoch(64, 32) == 2);
    // Exhaustive ceil check for small sizes.
    for (std::size_t n = 1; n <= 100; ++n)
        for (std::size_t b = 1; b <= 8; ++b) {
            std::size_t expect = n / b + (n % b ? 1 : 0);
            CHECK(iterations_per_epoch(n, b) == expect);
        }
}
