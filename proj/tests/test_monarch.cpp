#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "enclab/gradcheck.hpp"
#include "enclab/monarch.hpp"
#include "enclab/rng.hpp"

using namespace enclab;

namespace {

std::vector<double> dense_matvec(const std::vector<double>& D, const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> y(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) y[i] += D[static_cast<std::size_t>(i) * n + j] * x[j];
    return y;
}

void set_identity_blocks(MonarchMatrix& m) {
    const int b = m.b;
    auto fill = [&](DiffArray a) {
        auto& v = a.values();
        std::fill(v.begin(), v.end(), 0.0);
        for (int blk = 0; blk < b; ++blk)
            for (int r = 0; r < b; ++r) v[static_cast<std::size_t>(blk) * b * b + r * b + r] = 1.0;
    };
    fill(m.left);
    fill(m.right);
}

double operator_norm(const std::vector<double>& D, int n, Rng& rng) {
    // power iteration on DᵀD
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    for (int iter = 0; iter < 60; ++iter) {
        std::vector<double> Dv(n, 0.0), DtDv(n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) Dv[i] += D[static_cast<std::size_t>(i) * n + j] * v[j];
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) DtDv[j] += D[static_cast<std::size_t>(i) * n + j] * Dv[i];
        double norm = 0.0;
        for (double x : DtDv) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        for (int i = 0; i < n; ++i) v[i] = DtDv[i] / norm;
    }
    std::vector<double> Dv(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Dv[i] += D[static_cast<std::size_t>(i) * n + j] * v[j];
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        num += Dv[i] * Dv[i];
        den += v[i] * v[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("identity blocks give the identity operator") {
    Graph g;
    Rng rng(1);
    MonarchMatrix m = monarch_init(g, 4, 0.5, rng);
    set_identity_blocks(m);
    DiffArray x = g.leaf({16}, false);
    for (int i = 0; i < 16; ++i) x.values()[i] = i + 1;
    auto y = monarch_apply(m, x).values();
    for (int i = 0; i < 16; ++i) CHECK(y[i] == Catch::Approx(x.values()[i]).margin(1e-14));

    auto D = monarch_dense(g, m).values();
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j)
            CHECK(D[i * 16 + j] == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-14));
}

TEST_CASE("b=2 hand instance matches the dense oracle") {
    Graph g;
    Rng rng(2);
    MonarchMatrix m = monarch_init(g, 2, 0.0, rng);
    // right blocks: identity, identity; left blocks: swap, identity
    m.right.values() = {1, 0, 0, 1, 1, 0, 0, 1};
    m.left.values() = {0, 1, 1, 0, 1, 0, 0, 1};
    DiffArray x = g.constant({4}, {1, 2, 3, 4});
    auto fast = monarch_apply(m, x).values();
    auto want = dense_matvec(monarch_dense(g, m).values(), x.values());
    for (int i = 0; i < 4; ++i) CHECK(fast[i] == Catch::Approx(want[i]).margin(1e-14));
}

TEST_CASE("zero input maps to zero") {
    Graph g;
    Rng rng(3);
    MonarchMatrix m = monarch_init(g, 4, 0.7, rng);
    DiffArray x = g.leaf({16}, false);
    for (double v : monarch_apply(m, x).values()) CHECK(v == 0.0);
}

TEST_CASE("apply agrees with dense materialization over random instances") {
    Rng rng(42);
    for (int b : {2, 4, 8}) {
        for (int trial = 0; trial < 100; ++trial) {
            Graph g;
            MonarchMatrix m = monarch_init(g, b, 0.9, rng);
            const int n = b * b;
            DiffArray x = g.leaf({n}, false);
            for (auto& v : x.values()) v = rng.uniform(-2, 2);
            auto fast = monarch_apply(m, x).values();
            auto want = dense_matvec(monarch_dense(g, m).values(), x.values());
            double max_err = 0.0;
            for (int i = 0; i < n; ++i) max_err = std::max(max_err, std::abs(fast[i] - want[i]));
            REQUIRE(max_err < 1e-10);
        }
    }
}

TEST_CASE("scaling right blocks scales the dense operator") {
    Graph g;
    Rng rng(7);
    MonarchMatrix m = monarch_init(g, 2, 1.0, rng);
    auto before = monarch_dense(g, m).values();
    for (auto& v : m.right.values()) v *= 3.0;
    auto after = monarch_dense(g, m).values();
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(after[i] == Catch::Approx(3.0 * before[i]).margin(1e-12));
}

TEST_CASE("monarch_init determinism and edge cases") {
    SECTION("same seed twice") {
        Graph g1, g2;
        Rng r1(1234), r2(1234);
        MonarchMatrix a = monarch_init(g1, 4, 0.3, r1);
        MonarchMatrix b = monarch_init(g2, 4, 0.3, r2);
        CHECK(a.left.values() == b.left.values());
        CHECK(a.right.values() == b.right.values());
    }
    SECTION("scale zero gives the zero matrix") {
        Graph g;
        Rng rng(5);
        MonarchMatrix m = monarch_init(g, 2, 0.0, rng);
        for (double v : monarch_dense(g, m).values()) CHECK(v == 0.0);
    }
    SECTION("non-power-of-two block count rejected") {
        Graph g;
        Rng rng(5);
        CHECK_THROWS_AS(monarch_init(g, 3, 0.5, rng), ConfigError);
        CHECK_THROWS_AS(monarch_init(g, 0, 0.5, rng), ConfigError);
    }
    SECTION("default scale keeps the operator norm small") {
        Rng rng(2024);
        const int b = 4, n = 16;
        for (int seed = 0; seed < 100; ++seed) {
            Graph g;
            Rng init_rng(Rng::derive_seed(9000, seed));
            MonarchMatrix m = monarch_init(g, b, monarch_default_scale(b), init_rng);
            auto D = monarch_dense(g, m).values();
            REQUIRE(operator_norm(D, n, rng) < 4.0);
        }
    }
}

TEST_CASE("monarch apply gradients pass finite differences") {
    Rng rng(77);
    Graph g;
    MonarchMatrix m = monarch_init(g, 4, 0.6, rng);
    DiffArray x = g.leaf({16}, true);
    for (auto& v : x.values()) v = rng.uniform(-1, 1);
    g.freeze_leaves();
    auto loss = [&] {
        DiffArray y = monarch_apply(m, x);
        return dot(y, y);
    };
    CHECK(grad_check(g, loss, {m.left, m.right, x}).max_rel_err < 1e-5);
}

TEST_CASE("row-wise apply matches vector apply and differentiates") {
    Rng rng(78);
    Graph g;
    MonarchMatrix m = monarch_init(g, 2, 0.8, rng);
    DiffArray X = g.leaf({3, 4}, true);
    for (auto& v : X.values()) v = rng.uniform(-1, 1);
    g.freeze_leaves();

    DiffArray Y = monarch_apply_rows(m, X);
    for (int r = 0; r < 3; ++r) {
        DiffArray row = g.constant({4}, {X.values()[r * 4], X.values()[r * 4 + 1],
                                         X.values()[r * 4 + 2], X.values()[r * 4 + 3]});
        auto y = monarch_apply(m, row).values();
        for (int c = 0; c < 4; ++c)
            CHECK(Y.values()[r * 4 + c] == Catch::Approx(y[c]).margin(1e-13));
    }
    g.reset();

    auto loss = [&] {
        DiffArray y = monarch_apply_rows(m, X);
        DiffArray mrow = mean_rows(y, {1, 1, 1});
        return dot(mrow, mrow);
    };
    CHECK(grad_check(g, loss, {m.left, m.right, X}).max_rel_err < 1e-5);
}

TEST_CASE("multiplication counter reports exactly 2b^3 per apply") {
    for (int b : {2, 4, 8}) {
        Graph g;
        Rng rng(b);
        MonarchMatrix m = monarch_init(g, b, 0.5, rng);
        DiffArray x = g.leaf({b * b}, false);
        for (auto& v : x.values()) v = rng.uniform(-1, 1);
        monarch_mult_count = 0;
        monarch_apply(m, x);
        CHECK(monarch_mult_count == 2ull * b * b * b);
    }
}
