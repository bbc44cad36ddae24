#include <catch2/catch_amalgamated.hpp>

#include "riginv/autodiff.hpp"
#include "riginv/gradcheck.hpp"

using namespace riginv;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Weight the op output with a fixed random tensor so every element's gradient
// path is exercised, then reduce to a scalar.
Var<double> weighted_mean(const Var<double>& y, const Tensor<double>& weights) {
    return ad::mean_all(ad::mul(y, Var<double>::constant(weights)));
}

}  // namespace

TEST_CASE("backward of sum of squares is exactly 2w") {
    Rng rng(1);
    Var<double> w = Var<double>::leaf(random_tensor({7}, rng), true);
    backward(ad::scale(ad::mean_all(ad::mul(w, w)), 7.0));  // sum = mean * n
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(w.grad().data[i] == Catch::Approx(2.0 * w.value().data[i]).epsilon(1e-14));
}

TEST_CASE("repeated backward without reset accumulates into leaves") {
    Rng rng(2);
    Var<double> w = Var<double>::leaf(random_tensor({4}, rng), true);
    const Var<double> loss = ad::mean_all(ad::mul(w, w));
    backward(loss);
    const std::vector<double> once = w.grad().data;
    backward(loss);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(w.grad().data[i] == Catch::Approx(2.0 * once[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar losses") {
    Rng rng(3);
    Var<double> w = Var<double>::leaf(random_tensor({3}, rng), true);
    CHECK_THROWS_AS(backward(ad::mul(w, w)), ContractError);
}

TEST_CASE("diamond-shaped graphs accumulate both paths") {
    // y = w*w + w*w reuses the same intermediate twice.
    Rng rng(4);
    Var<double> w = Var<double>::leaf(random_tensor({5}, rng), true);
    const Var<double> sq = ad::mul(w, w);
    backward(ad::scale(ad::mean_all(ad::add(sq, sq)), 5.0));
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(w.grad().data[i] == Catch::Approx(4.0 * w.value().data[i]).epsilon(1e-13));
}

TEST_CASE("per-primitive gradchecks against central differences") {
    Rng rng(42);
    constexpr double kTol = 1e-7;

    SECTION("matmul") {
        Var<double> a = Var<double>::leaf(random_tensor({3, 4}, rng), true);
        Var<double> b = Var<double>::leaf(random_tensor({4, 5}, rng), true);
        const Tensor<double> w = random_tensor({3, 5}, rng);
        const auto rep =
            gradcheck_leaves([&] { return weighted_mean(ad::matmul(a, b), w); }, {a, b});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("matmul_nt") {
        Var<double> a = Var<double>::leaf(random_tensor({3, 4}, rng), true);
        Var<double> b = Var<double>::leaf(random_tensor({5, 4}, rng), true);
        const Tensor<double> w = random_tensor({3, 5}, rng);
        const auto rep =
            gradcheck_leaves([&] { return weighted_mean(ad::matmul_nt(a, b), w); }, {a, b});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("add / sub / mul / scale / add_rowvec") {
        Var<double> a = Var<double>::leaf(random_tensor({4, 3}, rng), true);
        Var<double> b = Var<double>::leaf(random_tensor({4, 3}, rng), true);
        Var<double> r = Var<double>::leaf(random_tensor({3}, rng), true);
        const Tensor<double> w = random_tensor({4, 3}, rng);
        const auto rep = gradcheck_leaves(
            [&] {
                const Var<double> x =
                    ad::add_rowvec(ad::scale(ad::mul(ad::sub(a, b), ad::add(a, b)), 0.7), r);
                return weighted_mean(x, w);
            },
            {a, b, r});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("gelu") {
        Var<double> x = Var<double>::leaf(random_tensor({4, 4}, rng), true);
        const Tensor<double> w = random_tensor({4, 4}, rng);
        const auto rep = gradcheck_leaves([&] { return weighted_mean(ad::gelu(x), w); }, {x});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("softmax_rows") {
        Var<double> x = Var<double>::leaf(random_tensor({3, 6}, rng), true);
        const Tensor<double> w = random_tensor({3, 6}, rng);
        const auto rep =
            gradcheck_leaves([&] { return weighted_mean(ad::softmax_rows(x), w); }, {x});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("layernorm_rows") {
        Var<double> x = Var<double>::leaf(random_tensor({3, 8}, rng), true);
        Var<double> g = Var<double>::leaf(random_tensor({8}, rng, 0.3), true);
        Var<double> b = Var<double>::leaf(random_tensor({8}, rng, 0.3), true);
        const Tensor<double> w = random_tensor({3, 8}, rng);
        // h one notch larger: the smallest gamma gradients are noise-limited
        // at 1e-6.
        const auto rep = gradcheck_leaves(
            [&] { return weighted_mean(ad::layernorm_rows(x, g, b), w); }, {x, g, b}, 1e-5);
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("pool_max_2x2") {
        Var<double> x = Var<double>::leaf(random_tensor({16, 3}, rng), true);
        const Tensor<double> w = random_tensor({4, 3}, rng);
        const auto rep =
            gradcheck_leaves([&] { return weighted_mean(ad::pool_max_2x2(x, 4, 4), w); }, {x});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("mean_rows / col_slice / concat_cols") {
        Var<double> a = Var<double>::leaf(random_tensor({4, 6}, rng), true);
        Var<double> b = Var<double>::leaf(random_tensor({4, 2}, rng), true);
        const Tensor<double> w = random_tensor({1, 5}, rng);
        const auto rep = gradcheck_leaves(
            [&] {
                const Var<double> s = ad::col_slice(a, 1, 4);
                const Var<double> c = ad::concat_cols<double>({s, b});
                return weighted_mean(ad::mean_rows(c), w);
            },
            {a, b});
        CHECK(rep.max_rel_err < kTol);
    }
    SECTION("mse_to and l1_to") {
        Var<double> x = Var<double>::leaf(random_tensor({1, 9}, rng), true);
        const Tensor<double> target = random_tensor({1, 9}, rng);
        const auto rep_mse =
            gradcheck_leaves([&] { return ad::mse_to(x, target); }, {x});
        CHECK(rep_mse.max_rel_err < kTol);
        const auto rep_l1 = gradcheck_leaves([&] { return ad::l1_to(x, target); }, {x});
        CHECK(rep_l1.max_rel_err < kTol);
    }
    SECTION("gather") {
        Var<double> x = Var<double>::leaf(random_tensor({6}, rng), true);
        auto idx = std::make_shared<const std::vector<std::size_t>>(
            std::vector<std::size_t>{0, 2, 2, 5, 1, 3});
        const Tensor<double> w = random_tensor({6}, rng);
        const auto rep = gradcheck_leaves(
            [&] { return weighted_mean(ad::gather(x, idx, {std::size_t(6)}), w); }, {x});
        CHECK(rep.max_rel_err < kTol);
    }
}

TEST_CASE("three-layer MLP gradcheck") {
    Rng rng(7);
    Var<double> w1 = Var<double>::leaf(random_tensor({6, 8}, rng, 0.4), true);
    Var<double> b1 = Var<double>::leaf(random_tensor({8}, rng, 0.1), true);
    Var<double> w2 = Var<double>::leaf(random_tensor({8, 8}, rng, 0.4), true);
    Var<double> b2 = Var<double>::leaf(random_tensor({8}, rng, 0.1), true);
    Var<double> w3 = Var<double>::leaf(random_tensor({8, 3}, rng, 0.4), true);
    Var<double> b3 = Var<double>::leaf(random_tensor({3}, rng, 0.1), true);
    const Tensor<double> input = random_tensor({2, 6}, rng);
    const Tensor<double> target = random_tensor({2, 3}, rng);

    auto build = [&] {
        Var<double> h = ad::gelu(ad::add_rowvec(ad::matmul(Var<double>::constant(input), w1), b1));
        h = ad::gelu(ad::add_rowvec(ad::matmul(h, w2), b2));
        return ad::mse_to(ad::add_rowvec(ad::matmul(h, w3), b3), target);
    };
    const auto rep = gradcheck_leaves(build, {w1, b1, w2, b2, w3, b3});
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(8);
    const Var<double> x = Var<double>::constant(random_tensor({5, 7}, rng, 3.0));
    const Var<double> y = ad::softmax_rows(x);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 7; ++j) s += y.value()(i, j);
        CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("frozen leaves receive no gradient") {
    Rng rng(9);
    Var<double> a = Var<double>::leaf(random_tensor({4}, rng), true);
    Var<double> b = Var<double>::leaf(random_tensor({4}, rng), false);
    backward(ad::mean_all(ad::mul(a, b)));
    CHECK(a.grad().size() == 4);
    CHECK(b.grad().size() == 0);  // never allocated
}
