#include <catch_amalgamated.hpp>

#include <cstring>
#include <functional>
#include <vector>

#include "sbd/autodiff.hpp"
#include "sbd/rng.hpp"
#include "sbd/tensor.hpp"
#include "testutil.hpp"

using namespace sbd;
using testutil::fd_check;
using testutil::rel_err_scalar;

namespace {

enum class Domain { Any, Positive, AwayFromZero };

struct OpCase {
    std::string name;
    std::vector<std::pair<int, int>> shapes;
    std::vector<Domain> domains;
    // Builds a scalar root from the leaves (scalarize non-scalar outputs
    // with a fixed random weighting so asymmetric gradient bugs show up).
    std::function<Value(Tape&, const std::vector<Value>&, Rng&)> build;
    double tol = 1e-4;
};

double sample_entry(Rng& rng, Domain d) {
    switch (d) {
    case Domain::Positive:
        return rng.uniform(0.5, 2.0);
    case Domain::AwayFromZero: {
        double v = rng.normal();
        return v >= 0.0 ? v + 0.2 : v - 0.2;
    }
    case Domain::Any:
    default:
        return rng.normal();
    }
}

Value scalarize(Tape& t, Value out, Rng& rng) {
    if (out.val().is_scalar()) return out;
    Tensor w(out.rows(), out.cols());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-1.0, 1.0);
    return sum(mul(out, t.constant(w)));
}

// Evaluates the case at a flat parameter vector; optionally returns the
// analytic gradient from Tape::backward.
double eval_case(const OpCase& oc, const std::vector<double>& flat, std::uint64_t scal_seed,
                 std::vector<double>* analytic_out) {
    Tape t;
    Rng scal_rng(scal_seed);
    std::vector<Value> leaves;
    std::size_t off = 0;
    for (auto [r, c] : oc.shapes) {
        Tensor x(r, c);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = flat[off++];
        leaves.push_back(t.leaf(std::move(x)));
    }
    Value root = oc.build(t, leaves, scal_rng);
    if (analytic_out) {
        t.backward(root);
        analytic_out->clear();
        for (const Value& l : leaves) {
            Tensor g = t.grad(l);
            analytic_out->insert(analytic_out->end(), g.data().begin(), g.data().end());
        }
    }
    return root.item();
}

std::vector<OpCase> op_cases() {
    auto unary = [](std::string name, std::function<Value(Value)> op, Domain dom,
                    double tol = 1e-4) {
        OpCase oc;
        oc.name = std::move(name);
        oc.shapes = {{3, 4}};
        oc.domains = {dom};
        oc.build = [op](Tape& t, const std::vector<Value>& l, Rng& rng) {
            return scalarize(t, op(l[0]), rng);
        };
        oc.tol = tol;
        return oc;
    };

    std::vector<OpCase> cases;
    cases.push_back({"add",
                     {{3, 4}, {3, 4}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, add(l[0], l[1]), rng);
                     }});
    cases.push_back({"sub",
                     {{3, 4}, {3, 4}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, sub(l[0], l[1]), rng);
                     }});
    cases.push_back({"mul",
                     {{3, 4}, {3, 4}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, mul(l[0], l[1]), rng);
                     }});
    cases.push_back({"smul",
                     {{1, 1}, {3, 4}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, smul(l[0], l[1]), rng);
                     }});
    cases.push_back(unary("affine", [](Value x) { return affine(x, 1.7, -0.3); }, Domain::Any));
    cases.push_back({"matmul",
                     {{3, 4}, {4, 2}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, matmul(l[0], l[1]), rng);
                     }});
    cases.push_back(unary("transpose", [](Value x) { return transpose(x); }, Domain::Any));
    cases.push_back(unary("sigmoid", [](Value x) { return sigmoid(x); }, Domain::Any));
    cases.push_back(unary("relu", [](Value x) { return relu(x); }, Domain::AwayFromZero));
    cases.push_back(unary("log", [](Value x) { return log(x); }, Domain::Positive));
    cases.push_back(unary("exp", [](Value x) { return exp(x); }, Domain::Any));
    cases.push_back(unary("square", [](Value x) { return square(x); }, Domain::Any));
    cases.push_back(unary("sqrt", [](Value x) { return sqrt(x); }, Domain::Positive));
    cases.push_back(unary("rsqrt0", [](Value x) { return rsqrt0(x); }, Domain::Positive));
    cases.push_back(unary("reciprocal", [](Value x) { return reciprocal(x); }, Domain::Positive));
    cases.push_back({"sum",
                     {{3, 4}},
                     {Domain::Any},
                     [](Tape&, const std::vector<Value>& l, Rng&) { return sum(l[0]); }});
    cases.push_back(unary("row_sum", [](Value x) { return row_sum(x); }, Domain::Any));
    cases.push_back({"add_rowvec",
                     {{3, 4}, {1, 4}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, add_rowvec(l[0], l[1]), rng);
                     }});
    cases.push_back({"scale_rows",
                     {{3, 4}, {3, 1}},
                     {Domain::Any, Domain::Any},
                     [](Tape& t, const std::vector<Value>& l, Rng& rng) {
                         return scalarize(t, scale_rows(l[0], l[1]), rng);
                     }});
    cases.push_back({"trace_pow3",
                     {{4, 4}},
                     {Domain::Any},
                     [](Tape&, const std::vector<Value>& l, Rng&) { return trace_pow3(l[0]); },
                     1e-4});
    return cases;
}

} // namespace

TEST_CASE("matmul forward: identity, annihilator, shape check", "[autodiff]") {
    Tape t;
    Rng rng(7);
    Tensor m = testutil::random_matrix(rng, 3, 3);
    Value vm = t.leaf(m);
    Value id = t.constant(Tensor::identity(3));
    Tensor prod = matmul(id, vm).val();
    for (std::size_t k = 0; k < m.size(); ++k) CHECK(prod[k] == m[k]);

    Value z = t.constant(Tensor(2, 2));
    Value m2 = t.constant(testutil::random_matrix(rng, 2, 2));
    Tensor zp = matmul(z, m2).val();
    for (std::size_t k = 0; k < zp.size(); ++k) CHECK(zp[k] == 0.0);

    Value bad = t.constant(Tensor(2, 3));
    CHECK_THROWS_AS(matmul(vm, bad), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum(a*b) matches finite differences", "[autodiff]") {
    Rng rng(11);
    Tensor a0 = testutil::random_matrix(rng, 4, 4);
    Tensor b0 = testutil::random_matrix(rng, 4, 4);

    Tape t;
    Value a = t.leaf(a0), b = t.leaf(b0);
    Value root = sum(matmul(a, b));
    t.backward(root);
    Tensor ga = t.grad(a);

    // d sum(a.b) / d a_ij = sum_k b_jk: column sums of b, broadcast.
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double colsum = 0.0;
            for (int k = 0; k < 4; ++k) colsum += b0(j, k);
            CHECK(rel_err_scalar(ga(i, j), colsum) < 1e-12);
        }
    }

    auto f = [&](const std::vector<double>& x) {
        Tape tt;
        Tensor at(4, 4);
        for (std::size_t k = 0; k < at.size(); ++k) at[k] = x[k];
        return sum(matmul(tt.leaf(at), tt.constant(b0))).item();
    };
    CHECK(fd_check(f, a0.data(), ga.data()) < 1e-6);
}

TEST_CASE("sigmoid and relu point values and derivatives", "[autodiff]") {
    {
        Tape t;
        Value x = t.leaf(Tensor::scalar(0.0));
        Value y = sigmoid(x);
        CHECK(y.item() == 0.5);
        t.backward(y);
        CHECK(t.grad(x).item() == 0.25);
    }
    {
        Tape t;
        Value x = t.leaf(Tensor::scalar(-1.0));
        Value y = relu(x);
        CHECK(y.item() == 0.0);
        t.backward(y);
        CHECK(t.grad(x).item() == 0.0);
    }
    {
        // d sigmoid / dx at x = 2 against finite differences
        Tape t;
        Value x = t.leaf(Tensor::scalar(2.0));
        Value y = sigmoid(x);
        t.backward(y);
        double analytic = t.grad(x).item();
        auto f = [](const std::vector<double>& v) {
            Tape tt;
            return sigmoid(tt.leaf(Tensor::scalar(v[0]))).item();
        };
        auto fd = testutil::finite_diff(f, {2.0});
        CHECK(rel_err_scalar(analytic, fd[0]) < 1e-6);
    }
    {
        // stable in the far tails
        Tape t;
        Value a = sigmoid(t.leaf(Tensor::scalar(800.0)));
        Value b = sigmoid(t.leaf(Tensor::scalar(-800.0)));
        CHECK(a.item() == 1.0);
        CHECK(b.item() >= 0.0);
        CHECK(b.item() < 1e-300);
    }
}

TEST_CASE("log rejects non-positive entries", "[autodiff]") {
    Tape t;
    Value x = t.leaf(Tensor::scalar(-0.5));
    CHECK_THROWS_AS(log(x), std::domain_error);
    Value z = t.leaf(Tensor::scalar(0.0));
    CHECK_THROWS_AS(log(z), std::domain_error);
}

TEST_CASE("trace_pow3: triangle count, zeros, gradient, square check", "[autodiff]") {
    {
        // 3-cycle: Tr(A^3) = 6 = 6 x one triangle (brute-force oracle)
        Tensor a(3, 3);
        a(0, 1) = a(1, 0) = 1.0;
        a(1, 2) = a(2, 1) = 1.0;
        a(0, 2) = a(2, 0) = 1.0;
        Tape t;
        Value v = trace_pow3(t.leaf(a));
        CHECK(v.item() == 6.0);
        CHECK(static_cast<double>(6 * testutil::count_triangles(a)) == v.item());
    }
    {
        Tape t;
        CHECK(trace_pow3(t.leaf(Tensor(5, 5))).item() == 0.0);
    }
    {
        Tape t;
        CHECK_THROWS_AS(trace_pow3(t.leaf(Tensor(3, 4))), std::invalid_argument);
    }
    {
        // gradient on a random symmetric 5x5
        Rng rng(23);
        Tensor a0 = testutil::random_adjacency(rng, 5, false);
        Tape t;
        Value a = t.leaf(a0);
        Value root = trace_pow3(a);
        t.backward(root);
        auto f = [&](const std::vector<double>& x) {
            Tape tt;
            Tensor at(5, 5);
            for (std::size_t k = 0; k < at.size(); ++k) at[k] = x[k];
            return trace_pow3(tt.leaf(at)).item();
        };
        CHECK(fd_check(f, a0.data(), t.grad(a).data()) < 1e-5);
    }
}

TEST_CASE("backward basics: constant root, sum-of-leaf, contract", "[autodiff]") {
    {
        Tape t;
        Value leafv = t.leaf(Tensor(2, 2, 3.0));
        Value c = t.constant(Tensor::scalar(5.0));
        t.backward(c);
        Tensor g = t.grad(leafv);
        for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == 0.0);
    }
    {
        Tape t;
        Value leafv = t.leaf(Tensor(3, 2, 1.5));
        Value root = sum(leafv);
        t.backward(root);
        Tensor g = t.grad(leafv);
        for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == 1.0);
    }
    {
        Tape t;
        Value leafv = t.leaf(Tensor(2, 2, 1.0));
        CHECK_THROWS_AS(t.backward(leafv), std::invalid_argument);
    }
}

TEST_CASE("backward twice from the same root yields identical gradients", "[autodiff]") {
    Rng rng(31);
    Tape t;
    Value a = t.leaf(testutil::random_matrix(rng, 4, 4));
    Value b = t.leaf(testutil::random_matrix(rng, 4, 4));
    Value root = sum(mul(sigmoid(matmul(a, b)), square(sub(a, b))));
    t.backward(root);
    Tensor ga1 = t.grad(a), gb1 = t.grad(b);
    t.backward(root);
    Tensor ga2 = t.grad(a), gb2 = t.grad(b);
    CHECK(std::memcmp(ga1.data().data(), ga2.data().data(), ga1.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(gb1.data().data(), gb2.data().data(), gb1.size() * sizeof(double)) == 0);
}

TEST_CASE("backward is bit-deterministic across identical tape rebuilds", "[autodiff]") {
    auto run = [](std::vector<double>* out) {
        Rng rng(47);
        Tape t;
        Value a = t.leaf(testutil::random_matrix(rng, 5, 3));
        Value b = t.leaf(testutil::random_matrix(rng, 3, 5));
        Value root = sum(relu(matmul(a, b)));
        t.backward(root);
        Tensor g = t.grad(a);
        out->assign(g.data().begin(), g.data().end());
    };
    std::vector<double> g1, g2;
    run(&g1);
    run(&g2);
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("every op matches central finite differences on random instances", "[autodiff]") {
    for (const OpCase& oc : op_cases()) {
        INFO("op: " << oc.name);
        for (int inst = 0; inst < 20; ++inst) {
            Rng rng(1000 + 17 * inst);
            std::size_t total = 0;
            for (auto [r, c] : oc.shapes) total += static_cast<std::size_t>(r) * c;
            std::vector<double> flat(total);
            {
                std::size_t off = 0;
                for (std::size_t s = 0; s < oc.shapes.size(); ++s) {
                    auto [r, c] = oc.shapes[s];
                    for (int k = 0; k < r * c; ++k) flat[off++] = sample_entry(rng, oc.domains[s]);
                }
            }
            const std::uint64_t scal_seed = 555 + inst;
            std::vector<double> analytic;
            eval_case(oc, flat, scal_seed, &analytic);
            auto f = [&](const std::vector<double>& x) {
                return eval_case(oc, x, scal_seed, nullptr);
            };
            double err = fd_check(f, flat, analytic);
            INFO("instance " << inst << " rel err " << err);
            CHECK(err < oc.tol);
        }
    }
}

TEST_CASE("symbolic gradients agree with numeric backward", "[autodiff]") {
    Rng rng(61);
    Tape t;
    Value a = t.leaf(testutil::random_matrix(rng, 4, 3));
    Value b = t.leaf(testutil::random_matrix(rng, 3, 4));
    Value root = sum(sigmoid(matmul(a, b)));
    root = add(root, trace_pow3(matmul(a, b)));

    std::vector<Value> wrt{a, b};
    std::vector<Value> sym = t.grad_nodes(root, wrt);
    t.backward(root);
    for (int i = 0; i < 2; ++i) {
        Tensor num = t.grad(wrt[i]);
        const Tensor& s = sym[i].val();
        REQUIRE(num.same_shape(s));
        for (std::size_t k = 0; k < num.size(); ++k)
            CHECK(rel_err_scalar(num[k], s[k]) < 1e-12);
    }
}

TEST_CASE("symbolic gradients support a second derivative", "[autodiff]") {
    // y = x^3 (built from mul): dy/dx = 3x^2, d2y/dx2 = 6x.
    Tape t;
    Value x = t.leaf(Tensor::scalar(2.0));
    Value y = mul(mul(x, x), x);
    std::vector<Value> wrt{x};
    std::vector<Value> g = t.grad_nodes(y, wrt);
    CHECK(rel_err_scalar(g[0].item(), 12.0) < 1e-12);
    t.backward(g[0]);
    CHECK(rel_err_scalar(t.grad(x).item(), 12.0) < 1e-12);
}

TEST_CASE("gradient of an unreached leaf is zeros", "[autodiff]") {
    Tape t;
    Value used = t.leaf(Tensor::scalar(1.0));
    Value unused = t.leaf(Tensor(2, 3, 4.0));
    Value root = square(used);
    std::vector<Value> wrt{unused};
    std::vector<Value> g = t.grad_nodes(root, wrt);
    REQUIRE(g[0].rows() == 2);
    REQUIRE(g[0].cols() == 3);
    for (std::size_t k = 0; k < g[0].val().size(); ++k) CHECK(g[0].val()[k] == 0.0);
}

TEST_CASE("elementwise ops reject shape mismatches", "[autodiff]") {
    Tape t;
    Value a = t.leaf(Tensor(2, 3));
    Value b = t.leaf(Tensor(3, 2));
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(add_rowvec(a, b), std::invalid_argument);
    CHECK_THROWS_AS(scale_rows(a, b), std::invalid_argument);
}
