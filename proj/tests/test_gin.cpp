#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "sbd/gin.hpp"
#include "sbd/motif_gen.hpp"
#include "testutil.hpp"

using namespace sbd;
using testutil::rel_err_scalar;

namespace {

ModelConfig tiny_cfg(int classes = 3, int fdim = 2, int hidden = 6) {
    ModelConfig cfg;
    cfg.layers = 3;
    cfg.hidden = hidden;
    cfg.dropout = 0.0;
    cfg.num_classes = classes;
    cfg.feature_dim = fdim;
    return cfg;
}

DenseGraph random_graph(Rng& rng, int n, int d) {
    DenseGraph g;
    g.n = n;
    g.adjacency = testutil::random_adjacency(rng, n, false);
    g.features = testutil::random_matrix(rng, n, d);
    g.label = 0;
    return g;
}

} // namespace

TEST_CASE("init_params is deterministic with zero biases inside the bound", "[gin]") {
    ModelConfig cfg = tiny_cfg();
    GinParams a = init_params(cfg, 42);
    GinParams b = init_params(cfg, 42);
    GinParams c = init_params(cfg, 43);
    REQUIRE(a.tensors.size() == b.tensors.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        identical &= std::memcmp(a.tensors[i].data().data(), b.tensors[i].data().data(),
                                 a.tensors[i].size() * sizeof(double)) == 0;
    CHECK(identical);
    bool differs = false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        for (std::size_t k = 0; k < a.tensors[i].size(); ++k)
            differs |= a.tensors[i][k] != c.tensors[i][k];
    CHECK(differs);

    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const Tensor& w = a.tensors[i];
        if (a.names[i].find(".b") != std::string::npos) {
            for (std::size_t k = 0; k < w.size(); ++k) CHECK(w[k] == 0.0);
        } else {
            double bound = std::sqrt(6.0 / (w.rows() + w.cols()));
            for (std::size_t k = 0; k < w.size(); ++k) {
                CHECK(w[k] <= bound);
                CHECK(w[k] >= -bound);
            }
        }
    }
}

TEST_CASE("zero parameters give a uniform prediction", "[gin]") {
    ModelConfig cfg = tiny_cfg();
    GinParams p = init_params(cfg, 1);
    for (Tensor& t : p.tensors)
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = 0.0;
    Rng rng(5);
    DenseGraph g = random_graph(rng, 4, cfg.feature_dim);
    Tensor logits = gin_logits(p, g);
    REQUIRE(logits.cols() == cfg.num_classes);
    for (std::size_t k = 1; k < logits.size(); ++k) CHECK(logits[k] == logits[0]);

    Tape t;
    Value ce = cross_entropy(t, t.constant(logits), 1);
    CHECK(rel_err_scalar(ce.item(), std::log(3.0)) < 1e-12);
}

TEST_CASE("with a zero adjacency the output depends only on features", "[gin]") {
    ModelConfig cfg = tiny_cfg(2, 3, 5);
    GinParams p = init_params(cfg, 9);

    // identical feature rows + no edges: mean pooling reduces to one row,
    // so a 5-node edgeless graph must match the 1-node graph
    Rng row_rng(17);
    Tensor row = testutil::random_matrix(row_rng, 1, 3);
    DenseGraph big;
    big.n = 5;
    big.adjacency = Tensor(5, 5);
    big.features = Tensor(5, 3);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) big.features(i, j) = row(0, j);
    DenseGraph one;
    one.n = 1;
    one.adjacency = Tensor(1, 1);
    one.features = row;

    Tensor lb = gin_logits(p, big);
    Tensor lo = gin_logits(p, one);
    for (std::size_t k = 0; k < lb.size(); ++k) CHECK(std::fabs(lb[k] - lo[k]) < 1e-12);
}

TEST_CASE("cross entropy stability and bounds", "[gin]") {
    Tape t;
    SECTION("huge logit gap does not overflow") {
        Tensor l(1, 3);
        l(0, 0) = 1000.0;
        Value ce = cross_entropy(t, t.constant(l), 0);
        CHECK(ce.item() >= 0.0);
        CHECK(ce.item() < 1e-12);
    }
    SECTION("loss is non-negative on random logits") {
        Rng rng(71);
        for (int i = 0; i < 50; ++i) {
            Tensor l = testutil::random_matrix(rng, 1, 4, 5.0);
            int label = rng.uniform_int(0, 3);
            CHECK(cross_entropy(t, t.constant(l), label).item() >= 0.0);
        }
    }
    SECTION("label out of range") {
        Tensor l(1, 3);
        CHECK_THROWS_AS(cross_entropy(t, t.constant(l), 3), invalid_input);
        CHECK_THROWS_AS(cross_entropy(t, t.constant(l), -1), invalid_input);
    }
}

TEST_CASE("predict argmax with lowest-index ties", "[gin]") {
    {
        Tensor l(1, 2);
        l(0, 0) = 0.1;
        l(0, 1) = 0.9;
        CHECK(predict(l) == 1);
    }
    {
        Tensor l(1, 2, 0.5);
        CHECK(predict(l) == 0);
    }
    {
        Rng rng(83);
        for (int i = 0; i < 100; ++i) {
            Tensor l = testutil::random_matrix(rng, 1, rng.uniform_int(1, 6));
            int got = predict(l);
            // brute-force scan oracle
            int best = 0;
            for (int k = 0; k < l.cols(); ++k)
                if (l(0, k) > l(0, best)) best = k;
            CHECK(got == best);
        }
    }
}

TEST_CASE("gradients of CE o GIN match finite differences", "[gin]") {
    ModelConfig cfg = tiny_cfg(3, 2, 4);
    GinParams p0 = init_params(cfg, 21);
    Rng rng(23);
    DenseGraph g = random_graph(rng, 5, cfg.feature_dim);
    const int label = 2;

    SECTION("w.r.t. adjacency entries") {
        Tape t;
        GinVars vars = lift_params(t, p0);
        Value a = t.leaf(g.adjacency);
        Value logits = gin_forward(t, vars, a, t.constant(g.features), false, nullptr);
        Value loss = cross_entropy(t, logits, label);
        t.backward(loss);
        Tensor ga = t.grad(a);

        auto f = [&](const std::vector<double>& v) {
            Tensor at(5, 5);
            for (std::size_t k = 0; k < at.size(); ++k) at[k] = v[k];
            Tape tt;
            GinVars vv = lift_params(tt, p0);
            Value l = gin_forward(tt, vv, tt.leaf(at), tt.constant(g.features), false, nullptr);
            return cross_entropy(tt, l, label).item();
        };
        CHECK(testutil::fd_check(f, g.adjacency.data(), ga.data()) < 1e-4);
    }

    SECTION("w.r.t. every parameter group") {
        Tape t;
        GinVars vars = lift_params(t, p0);
        Value logits =
            gin_forward(t, vars, t.constant(g.adjacency), t.constant(g.features), false, nullptr);
        Value loss = cross_entropy(t, logits, label);
        t.backward(loss);

        for (std::size_t pi = 0; pi < p0.tensors.size(); ++pi) {
            INFO("param " << p0.names[pi]);
            Tensor analytic = t.grad(vars.v[pi]);
            auto f = [&](const std::vector<double>& v) {
                GinParams pp = p0;
                for (std::size_t k = 0; k < v.size(); ++k) pp.tensors[pi][k] = v[k];
                Tape tt;
                GinVars vv = lift_params(tt, pp);
                Value l = gin_forward(tt, vv, tt.constant(g.adjacency), tt.constant(g.features),
                                      false, nullptr);
                return cross_entropy(tt, l, label).item();
            };
            CHECK(testutil::fd_check(f, p0.tensors[pi].data(), analytic.data()) < 1e-4);
        }
    }
}

TEST_CASE("graph-level output is node-permutation invariant in eval mode", "[gin]") {
    ModelConfig cfg = tiny_cfg(3, 2, 8);
    GinParams p = init_params(cfg, 31);
    Rng rng(37);
    DenseGraph g = random_graph(rng, 7, cfg.feature_dim);
    Tensor base = gin_logits(p, g);
    for (int i = 0; i < 20; ++i) {
        std::vector<int> perm = rng.permutation(7);
        DenseGraph pg;
        pg.n = 7;
        pg.adjacency = testutil::permute_sym(g.adjacency, perm);
        pg.features = testutil::permute_rows(g.features, perm);
        Tensor lp = gin_logits(p, pg);
        for (std::size_t k = 0; k < lp.size(); ++k) CHECK(std::fabs(lp[k] - base[k]) < 1e-8);
    }
}

TEST_CASE("eval mode is deterministic; train mode is seeded", "[gin]") {
    ModelConfig cfg = tiny_cfg();
    cfg.dropout = 0.2;
    GinParams p = init_params(cfg, 41);
    Rng rng(43);
    DenseGraph g = random_graph(rng, 6, cfg.feature_dim);

    Tensor e1 = gin_logits(p, g);
    Tensor e2 = gin_logits(p, g);
    CHECK(std::memcmp(e1.data().data(), e2.data().data(), e1.size() * sizeof(double)) == 0);

    auto train_logits = [&](std::uint64_t seed) {
        Tape t;
        GinVars vars = lift_params(t, p);
        Rng drop(seed);
        return gin_forward(t, vars, t.constant(g.adjacency), t.constant(g.features), true, &drop)
            .val();
    };
    Tensor t1 = train_logits(7);
    Tensor t2 = train_logits(7);
    Tensor t3 = train_logits(8);
    CHECK(std::memcmp(t1.data().data(), t2.data().data(), t1.size() * sizeof(double)) == 0);
    bool differs = false;
    for (std::size_t k = 0; k < t3.size(); ++k) differs |= t3[k] != t1[k];
    CHECK(differs);
}

TEST_CASE("parameter checkpoints round-trip", "[gin]") {
    auto dir = testutil::make_temp_dir("gin_ckpt");
    ModelConfig cfg = tiny_cfg(2, 1, 4);
    GinParams p = init_params(cfg, 51);
    auto path = (dir / "model.json").string();
    save_params(p, path);
    GinParams back = load_params(path);
    REQUIRE(back.tensors.size() == p.tensors.size());
    for (std::size_t i = 0; i < p.tensors.size(); ++i)
        CHECK(std::memcmp(p.tensors[i].data().data(), back.tensors[i].data().data(),
                          p.tensors[i].size() * sizeof(double)) == 0);
    CHECK(back.cfg == p.cfg);

    testutil::write_file(dir / "trunc.json", testutil::read_file(path).substr(0, 40));
    CHECK_THROWS_AS(load_params((dir / "trunc.json").string()), invalid_input);
}
