#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "enclab/losses.hpp"
#include "enclab/mixture.hpp"
#include "enclab/optimizer.hpp"
#include "enclab/train.hpp"

using namespace enclab;

namespace {

EncoderConfig mini_config(int S = 64, std::uint64_t seed = 21) {
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.monarch_b = 4;
    cfg.n_layers = 1;
    cfg.max_seq_len = S;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("mixture draws match the default cell weights") {
    auto corpora = default_desk_corpora(300);
    MixtureStream stream(corpora, MixtureSpec::defaults(), 128, 555);
    const int draws = 10000;
    std::vector<int> counts(stream.cell_count(), 0);
    for (int i = 0; i < draws; ++i) ++counts[stream.next().cell];
    const std::vector<double> want = {0.10, 0.10, 0.10, 0.24, 0.23, 0.23};
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const double freq = static_cast<double>(counts[c]) / draws;
        INFO("cell " << c << " freq " << freq << " want " << want[c]);
        CHECK(std::abs(freq - want[c]) < 0.01);
    }
}

TEST_CASE("single-cell spec draws only that cell") {
    auto corpora = default_desk_corpora(300);
    MixtureSpec spec;
    spec.cells = {{1, LengthType::maximum, 1.0}};
    MixtureStream stream(corpora, spec, 64, 9);
    for (int i = 0; i < 200; ++i) CHECK(stream.next().cell == 0);
}

TEST_CASE("maximum-type examples are exactly S tokens") {
    auto corpora = default_desk_corpora(300);
    MixtureStream stream(corpora, MixtureSpec::long_only(), 256, 3);
    for (int i = 0; i < 100; ++i) {
        auto ex = stream.next();
        REQUIRE(ex.ids.size() == 256);
    }
}

TEST_CASE("variable-type examples stay within S") {
    auto corpora = default_desk_corpora(300);
    MixtureStream stream(corpora, MixtureSpec::short_only(), 128, 4);
    for (int i = 0; i < 200; ++i) {
        auto ex = stream.next();
        REQUIRE(ex.ids.size() <= 128);
        REQUIRE(!ex.ids.empty());
    }
}

TEST_CASE("mixture stream is deterministic per seed") {
    auto corpora = default_desk_corpora(300);
    MixtureStream a(corpora, MixtureSpec::defaults(), 64, 1212);
    MixtureStream b(corpora, MixtureSpec::defaults(), 64, 1212);
    for (int i = 0; i < 50; ++i) {
        auto ea = a.next();
        auto eb = b.next();
        CHECK(ea.ids == eb.ids);
        CHECK(ea.cell == eb.cell);
    }
}

TEST_CASE("mixture weight validation") {
    auto corpora = default_desk_corpora(50);
    MixtureSpec bad;
    bad.cells = {{0, LengthType::variable, 0.5}, {1, LengthType::maximum, 0.6}};
    CHECK_THROWS_AS(MixtureStream(corpora, bad, 64, 1), ConfigError);
    TextCorpus empty{"empty", {}};
    CHECK_THROWS_AS(MixtureStream({empty}, MixtureSpec{{{0, LengthType::variable, 1.0}}}, 64, 1),
                    DataError);
}

TEST_CASE("mask_tokens") {
    SECTION("vanishing probability selects nothing") {
        Rng rng(8);
        std::vector<int> ids(128, 65);
        long selected = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            auto masked = mask_tokens(ids, 1e-9, rng);
            for (int lab : masked.labels) selected += (lab != kIgnoreLabel) ? 1 : 0;
        }
        CHECK(selected <= 1);
    }
    SECTION("selection rate approaches p") {
        Rng rng(9);
        std::vector<int> ids(1000, 100);
        long selected = 0, total = 0;
        for (int trial = 0; trial < 100; ++trial) {
            auto masked = mask_tokens(ids, 0.3, rng);
            for (int lab : masked.labels) selected += (lab != kIgnoreLabel) ? 1 : 0;
            total += 1000;
        }
        const double rate = static_cast<double>(selected) / total;
        CHECK(std::abs(rate - 0.3) < 0.01);
    }
    SECTION("unselected labels are the ignore marker and specials are untouched") {
        Rng rng(10);
        std::vector<int> ids = {tok::CLS, 65, 66, tok::SEP, tok::PAD, tok::PAD};
        for (int trial = 0; trial < 500; ++trial) {
            auto masked = mask_tokens(ids, 0.5, rng);
            CHECK(masked.labels[0] == kIgnoreLabel);
            CHECK(masked.labels[3] == kIgnoreLabel);
            CHECK(masked.labels[4] == kIgnoreLabel);
            CHECK(masked.ids[0] == tok::CLS);
            CHECK(masked.ids[3] == tok::SEP);
            CHECK(masked.ids[4] == tok::PAD);
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (masked.labels[i] == kIgnoreLabel && !tok::is_special(ids[i]))
                    CHECK(masked.ids[i] == ids[i]);
        }
    }
    SECTION("80/10/10 action split among selected") {
        Rng rng(11);
        std::vector<int> ids(1000, 70);
        long to_mask = 0, kept = 0, randomized = 0, selected = 0;
        for (int trial = 0; trial < 200; ++trial) {
            auto masked = mask_tokens(ids, 0.3, rng);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (masked.labels[i] == kIgnoreLabel) continue;
                ++selected;
                if (masked.ids[i] == tok::MASK)
                    ++to_mask;
                else if (masked.ids[i] == ids[i])
                    ++kept;
                else
                    ++randomized;
            }
        }
        // "random byte" can coincide with the original, so kept sits a
        // little above 0.1 and randomized a little below.
        CHECK(std::abs(static_cast<double>(to_mask) / selected - 0.8) < 0.01);
        CHECK(std::abs(static_cast<double>(kept) / selected - 0.1) < 0.015);
        CHECK(std::abs(static_cast<double>(randomized) / selected - 0.1) < 0.015);
    }
    SECTION("deterministic given seed") {
        std::vector<int> ids(50, 80);
        auto a = mask_tokens(ids, 0.3, std::uint64_t{77});
        auto b = mask_tokens(ids, 0.3, std::uint64_t{77});
        CHECK(a.ids == b.ids);
        CHECK(a.labels == b.labels);
    }
}

TEST_CASE("schedule shape") {
    LinearWarmupDecay sched{1000, 0.06, 5e-4};
    CHECK(sched.lr_at(0) == 0.0);
    CHECK(sched.lr_at(60) == Catch::Approx(5e-4).margin(1e-18));
    CHECK(sched.lr_at(1000) == 0.0);
    SECTION("piecewise linear") {
        CHECK(sched.lr_at(30) == Catch::Approx(2.5e-4).margin(1e-18));
        CHECK(sched.lr_at(530) == Catch::Approx(5e-4 * 0.5).margin(1e-12));
    }
    SECTION("monotone up then down") {
        for (long t = 1; t <= 60; ++t) CHECK(sched.lr_at(t) >= sched.lr_at(t - 1));
        for (long t = 61; t <= 1000; ++t) CHECK(sched.lr_at(t) <= sched.lr_at(t - 1));
    }
}

TEST_CASE("optimizer with zero gradient applies only weight decay") {
    Graph g;
    DiffArray p = g.leaf({3}, true);
    p.values() = {1.0, -2.0, 0.5};
    g.freeze_leaves();
    AdamWConfig cfg;
    cfg.weight_decay = 1e-2;
    AdamW opt({p}, cfg);
    const double lr = 0.1;
    std::vector<double> want = p.values();
    for (double& w : want) w -= lr * cfg.weight_decay * w;
    opt.step(lr);
    for (int i = 0; i < 3; ++i) CHECK(p.values()[i] == Catch::Approx(want[i]).margin(1e-15));
}

TEST_CASE("gradient clipping rescales to the threshold") {
    Graph g;
    DiffArray p = g.leaf({2}, true);
    g.freeze_leaves();
    p.grad() = {6.0, 8.0};  // norm 10
    std::vector<DiffArray> params = {p};
    const double before = clip_grad_norm(params, 1.0);
    CHECK(before == Catch::Approx(10.0));
    double norm = 0.0;
    for (double v : p.grad()) norm += v * v;
    CHECK(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("sample_negatives") {
    SECTION("own positive never appears") {
        Rng rng(15);
        for (int trial = 0; trial < 10000; ++trial) {
            auto sample = sample_negatives(12, 5, 3, rng);
            for (int ix : sample) REQUIRE(ix != 5);
        }
    }
    SECTION("k = n-1 returns all other documents") {
        Rng rng(16);
        auto sample = sample_negatives(6, 2, 5, rng);
        std::vector<int> sorted(sample);
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::vector<int>{0, 1, 3, 4, 5});
    }
    SECTION("k >= n rejected") {
        Rng rng(17);
        CHECK_THROWS_AS(sample_negatives(6, 0, 6, rng), ConfigError);
        CHECK_THROWS_AS(sample_negatives(6, 0, 7, rng), ConfigError);
    }
    SECTION("uniform over candidates") {
        Rng rng(18);
        const int n = 11, k = 3, trials = 100000;
        std::vector<long> counts(n, 0);
        for (int t = 0; t < trials; ++t)
            for (int ix : sample_negatives(n, 4, k, rng)) ++counts[ix];
        const double p = static_cast<double>(k) / (n - 1);
        const double sigma = std::sqrt(trials * p * (1.0 - p));
        for (int i = 0; i < n; ++i) {
            if (i == 4) {
                CHECK(counts[i] == 0);
                continue;
            }
            CHECK(std::abs(counts[i] - trials * p) < 3.0 * sigma);
        }
    }
}

TEST_CASE("pretraining reduces the loss and is reproducible") {
    auto corpora = default_desk_corpora(100);
    PretrainConfig cfg;
    cfg.steps = 200;
    cfg.batch_size = 2;
    cfg.peak_lr = 2e-3;
    cfg.seed = 42;

    EncoderModel model(mini_config());
    MixtureStream stream(corpora, MixtureSpec::defaults(), 64, 42);
    auto result = pretrain(model, stream, cfg);
    REQUIRE(result.curve.size() == 200);
    CHECK(result.curve.back().loss < result.curve.front().loss);

    EncoderModel model2(mini_config());
    MixtureStream stream2(corpora, MixtureSpec::defaults(), 64, 42);
    auto result2 = pretrain(model2, stream2, cfg);
    for (std::size_t i = 0; i < result.curve.size(); ++i) {
        CHECK(result.curve[i].loss == result2.curve[i].loss);  // bitwise
        CHECK(result.curve[i].mlm_accuracy == result2.curve[i].mlm_accuracy);
    }
}

TEST_CASE("pretraining reports divergence with the step index") {
    auto corpora = default_desk_corpora(50);
    EncoderModel model(mini_config());
    for (auto& [name, arr] : model.named_params())
        if (name == "mlm_head.b") arr.values()[0] = std::numeric_limits<double>::quiet_NaN();
    MixtureStream stream(corpora, MixtureSpec::defaults(), 64, 1);
    PretrainConfig cfg;
    cfg.steps = 5;
    cfg.batch_size = 1;
    try {
        pretrain(model, stream, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(e.step == 1);
    }
}

TEST_CASE("finetune contracts") {
    std::vector<TextPair> pairs = {{"q1", "doc one"}, {"q2", "doc two"}};
    EncoderModel model(mini_config());
    SECTION("mnrl with batch one is rejected") {
        FinetuneConfig cfg;
        cfg.loss = LossKind::mnrl;
        cfg.batch_size = 1;
        CHECK_THROWS_AS(finetune(model, pairs, cfg), ConfigError);
    }
    SECTION("pl without teacher is rejected") {
        FinetuneConfig cfg;
        cfg.loss = LossKind::pl;
        CHECK_THROWS_AS(finetune(model, pairs, cfg), ConfigError);
    }
    SECTION("empty pair list is rejected") {
        FinetuneConfig cfg;
        CHECK_THROWS_AS(finetune(model, {}, cfg), DataError);
    }
}

TEST_CASE("gradient accumulation equals a joint batch") {
    // 8 micro-steps at window 8 must match one tape holding the mean of
    // the same 8 losses.
    std::vector<TextPair> pairs;
    for (int i = 0; i < 8; ++i)
        pairs.push_back({"query " + std::to_string(i), "document " + std::to_string(i)});

    // Route A: accumulation via the finetune loop (opl, positives only).
    EncoderModel a(mini_config(64, 77));
    {
        FinetuneConfig cfg;
        cfg.loss = LossKind::opl;
        cfg.negatives_per_pair = 0;
        cfg.batch_size = 8;
        cfg.lr = 1e-3;
        cfg.max_grad_norm = 1e9;  // keep clipping out of the comparison
        cfg.seed = 5;
        finetune(a, pairs, cfg);
    }

    // Route B: the same pairs in one tape, mean loss, single step.
    EncoderModel b(mini_config(64, 77));
    {
        Graph& g = b.graph();
        auto params = b.params();
        AdamW opt(params, AdamWConfig{});
        Rng order_rng(Rng::derive_seed(5, 0x66696e65ULL));
        std::vector<int> order(pairs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        order_rng.shuffle(order);

        DiffArray total;
        for (int ix : order) {
            DiffArray q = b.embed_tokens(tok::encode(pairs[ix].query, 64));
            DiffArray d = b.embed_tokens(tok::encode(pairs[ix].positive, 64));
            DiffArray term = scale(opl(q, d, 1.0), 1.0 / 8.0);
            total = total.valid() ? add(total, term) : term;
        }
        opt.zero_grad();
        g.backward(total);
        g.reset();
        opt.step(1e-3);
    }

    auto pa = a.params();
    auto pb = b.params();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto& va = pa[i].values();
        const auto& vb = pb[i].values();
        for (std::size_t j = 0; j < va.size(); ++j)
            REQUIRE(va[j] == Catch::Approx(vb[j]).margin(1e-10));
    }
}

TEST_CASE("metrics TSV is written with one row per step") {
    namespace fs = std::filesystem;
    auto corpora = default_desk_corpora(50);
    EncoderModel model(mini_config());
    MixtureStream stream(corpora, MixtureSpec::defaults(), 64, 2);
    PretrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 1;
    auto result = pretrain(model, stream, cfg);
    const auto path = (fs::temp_directory_path() / "enclab_metrics_test.tsv").string();
    write_metrics_tsv(result.curve, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step\tlr\tloss\tmlm_accuracy");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
    fs::remove(path);
}
