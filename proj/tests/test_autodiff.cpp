#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fitq/autodiff_check.hpp"
#include "fitq/tape.hpp"
#include "op_gradcheck.hpp"

using namespace fitq;

namespace {

// tiny MLP: 2 -> 4 -> 3 -> 1, relu between, all-params-as-inputs
ScalarFn mlp_loss(const Tensor& x_data) {
    return [x_data](Tape& t, const std::vector<Var>& p) {
        Var x = t.leaf(x_data, false);
        Var h1 = t.relu(t.add(t.matmul(x, p[0]), t.tile_rows(p[1], x_data.dim(0))));
        Var h2 = t.relu(t.add(t.matmul(h1, p[2]), t.tile_rows(p[3], x_data.dim(0))));
        Var y = t.add(t.matmul(h2, p[4]), t.tile_rows(p[5], x_data.dim(0)));
        return t.sum_all(t.mul(y, y));
    };
}

std::vector<Tensor> mlp_params(uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> p;
    p.push_back(random_normal({2, 4}, rng, 0.8));
    p.push_back(random_normal({4}, rng, 0.3));
    p.push_back(random_normal({4, 3}, rng, 0.8));
    p.push_back(random_normal({3}, rng, 0.3));
    p.push_back(random_normal({3, 1}, rng, 0.8));
    p.push_back(random_normal({1}, rng, 0.3));
    return p;
}

// minimum |pre-activation| across both relu layers, to stay off the kink
double min_preact(const std::vector<Tensor>& p, const Tensor& x_data) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& q : p) leaves.push_back(t.leaf(q, false));
    Var x = t.leaf(x_data, false);
    Var z1 = t.add(t.matmul(x, leaves[0]), t.tile_rows(leaves[1], x_data.dim(0)));
    Var h1 = t.relu(z1);
    Var z2 = t.add(t.matmul(h1, leaves[2]), t.tile_rows(leaves[3], x_data.dim(0)));
    double m = 1e300;
    for (const Tensor* z : {&t.value(z1), &t.value(z2)})
        for (int64_t i = 0; i < z->size(); ++i) m = std::min(m, std::fabs((*z)[i]));
    return m;
}

}  // namespace

TEST_CASE("forward: square, identity, 1x1 conv") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0), true);
    Var y = t.mul(x, x);
    CHECK(t.value(y).item() == doctest::Approx(9.0));

    Tape t2;
    Tensor any({2, 2}, {1.5, -2.0, 0.25, 7.0});
    Var id_in = t2.leaf(any, false);
    Var id_out = t2.reshape(id_in, any.shape());
    for (int64_t i = 0; i < any.size(); ++i) CHECK(t2.value(id_out)[i] == any[i]);

    Tape t3;
    Var img = t3.leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), false);
    Var ker = t3.leaf(Tensor({1, 1, 1, 1}, {2}), false);
    Var out = t3.conv2d(img, ker, 1, 0);
    const Tensor& o = t3.value(out);
    REQUIRE(o.shape() == Shape{1, 1, 2, 2});
    CHECK(o[0] == 2.0);
    CHECK(o[1] == 4.0);
    CHECK(o[2] == 6.0);
    CHECK(o[3] == 8.0);
}

TEST_CASE("backward: square, constant, softmax-CE") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0), true);
    Var y = t.mul(x, x);
    auto g = t.grad(y, std::vector<Var>{x});
    CHECK(t.value(g[0]).item() == doctest::Approx(6.0));

    // constant graph: output does not depend on the requested leaf
    Tape t2;
    Var a = t2.leaf(Tensor::scalar(5.0), true);
    Var c = t2.leaf(Tensor::scalar(2.0), false);
    Var out = t2.mul(c, c);
    auto g2 = t2.grad(out, std::vector<Var>{a});
    CHECK(t2.value(g2[0]).item() == 0.0);

    Tape t3;
    Var logits = t3.leaf(Tensor({1, 2}, {0.0, 0.0}), true);
    Var loss = softmax_cross_entropy(t3, logits, {0});
    auto g3 = t3.grad(loss, std::vector<Var>{logits});
    CHECK(t3.value(g3[0])[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(t3.value(g3[0])[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward error: stale tape after rebind") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(2.0), true);
    Var y = t.mul(x, x);
    t.rebind_leaf(x, Tensor::scalar(4.0));
    CHECK_THROWS_AS((void)t.grad(y, std::vector<Var>{x}), ValidationError);
    t.forward();
    CHECK(t.value(y).item() == doctest::Approx(16.0));
    auto g = t.grad(y, std::vector<Var>{x});
    CHECK(t.value(g[0]).item() == doctest::Approx(8.0));
}

TEST_CASE("shape errors carry the offending node id") {
    Tape t;
    Var a = t.leaf(Tensor({2, 3}), false);
    Var b = t.leaf(Tensor({3, 3}), false);
    CHECK_THROWS_WITH_AS((void)t.add(a, b), doctest::Contains("node 2"), ValidationError);
    Var c = t.leaf(Tensor({4, 2}), false);
    CHECK_THROWS_WITH_AS((void)t.matmul(a, c), doctest::Contains("inner dims"), ValidationError);
}

TEST_CASE("grad_check: square, linear, MLP off the kink") {
    ScalarFn square = [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[0]); };
    CHECK(grad_check(square, {Tensor::scalar(3.0)}, 1e-5) <= 1e-6);

    ScalarFn linear = [](Tape& t, const std::vector<Var>& in) { return t.scale(t.sum_all(in[0]), 2.5); };
    CHECK(grad_check(linear, {Tensor({4}, {1, 2, 3, 4})}, 1e-5) <= 1e-9);

    Tensor x({3, 2}, {0.7, -0.4, 1.1, 0.2, -0.8, 0.5});
    uint64_t seed = 1;
    std::vector<Tensor> p = mlp_params(seed);
    while (min_preact(p, x) < 1e-3) p = mlp_params(++seed);
    CHECK(grad_check(mlp_loss(x), p, 1e-5) <= 1e-4);
}

TEST_CASE("grad_check input validation") {
    ScalarFn square = [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[0]); };
    CHECK_THROWS_AS((void)grad_check(square, {Tensor::scalar(1.0)}, 0.0), ValidationError);
    CHECK_THROWS_AS((void)grad_check(square, {Tensor::scalar(1.0)}, 0.1), ValidationError);
    CHECK_THROWS_AS((void)grad_check(square, {Tensor::scalar(std::nan(""))}, 1e-5), ValidationError);
}

TEST_CASE("hvp: quadratic form and zero vector") {
    // f = 1/2 x^T A x, A = [[2,1],[1,3]]
    Tensor A({2, 2}, {2, 1, 1, 3});
    ScalarFn f = [A](Tape& t, const std::vector<Var>& p) {
        Var row = t.reshape(p[0], Shape{1, 2});
        Var Av = t.matmul(row, t.leaf(A, false));
        return t.scale(t.sum_all(t.mul(Av, row)), 0.5);
    };
    Tensor x({2}, {0.3, -1.2});
    Tensor v({2}, {1.0, 0.0});
    Tensor hv = hessian_vector_product(f, {x}, v);
    CHECK(hv[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(hv[1] == doctest::Approx(1.0).epsilon(1e-12));

    Tensor zero({2}, {0.0, 0.0});
    Tensor hz = hessian_vector_product(f, {x}, zero);
    CHECK(hz[0] == 0.0);
    CHECK(hz[1] == 0.0);
}

TEST_CASE("hvp rejects non-scalar loss and bad v") {
    ScalarFn vec = [](Tape& t, const std::vector<Var>& p) { return t.mul(p[0], p[0]); };
    Tensor x({2}, {1.0, 2.0});
    CHECK_THROWS_AS((void)hessian_vector_product(vec, {x}, x), ValidationError);
    ScalarFn sq = [](Tape& t, const std::vector<Var>& p) { return t.sum_all(t.mul(p[0], p[0])); };
    CHECK_THROWS_AS((void)hessian_vector_product(sq, {x}, Tensor({3})), ValidationError);
}

TEST_CASE("hvp matches finite differences of gradients on MLP") {
    Tensor x({3, 2}, {0.7, -0.4, 1.1, 0.2, -0.8, 0.5});
    uint64_t seed = 11;
    std::vector<Tensor> p = mlp_params(seed);
    while (min_preact(p, x) < 1e-3) p = mlp_params(++seed);
    ScalarFn f = mlp_loss(x);

    int64_t n = 0;
    std::vector<Shape> shapes;
    for (const auto& q : p) {
        n += q.size();
        shapes.push_back(q.shape());
    }
    Rng rng(99);
    Tensor v = random_normal({n}, rng);
    Tensor hv = hessian_vector_product(f, p, v);

    auto grad_at = [&](const std::vector<Tensor>& params) {
        Tape t;
        std::vector<Var> leaves;
        for (const auto& q : params) leaves.push_back(t.leaf(q, true));
        Var loss = f(t, leaves);
        return flatten_all(t.values(t.grad(loss, leaves)));
    };
    const double h = 1e-6;
    Tensor flat = flatten_all(p);
    Tensor plus(flat.shape()), minus(flat.shape());
    for (int64_t i = 0; i < n; ++i) {
        plus[i] = flat[i] + h * v[i];
        minus[i] = flat[i] - h * v[i];
    }
    Tensor gp = grad_at(unflatten_all(plus, shapes));
    Tensor gm = grad_at(unflatten_all(minus, shapes));
    double num = 0.0, den = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double fd = (gp[i] - gm[i]) / (2.0 * h);
        num += (hv[i] - fd) * (hv[i] - fd);
        den += fd * fd;
    }
    CHECK(std::sqrt(num) / std::max(1.0, std::sqrt(den)) <= 1e-4);
}

TEST_CASE("hvp linearity") {
    Tensor x({3, 2}, {0.7, -0.4, 1.1, 0.2, -0.8, 0.5});
    std::vector<Tensor> p = mlp_params(3);
    ScalarFn f = mlp_loss(x);
    int64_t n = 0;
    for (const auto& q : p) n += q.size();
    Rng rng(5);
    Tensor u = random_normal({n}, rng), v = random_normal({n}, rng);
    const double alpha = 0.37, beta = -1.21;
    Tensor uv({n});
    for (int64_t i = 0; i < n; ++i) uv[i] = alpha * u[i] + beta * v[i];
    Tensor h_uv = hessian_vector_product(f, p, uv);
    Tensor hu = hessian_vector_product(f, p, u);
    Tensor hv = hessian_vector_product(f, p, v);
    double scale = 0.0;
    for (int64_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(h_uv[i]));
    for (int64_t i = 0; i < n; ++i)
        CHECK(std::fabs(h_uv[i] - (alpha * hu[i] + beta * hv[i])) <= 1e-10 * std::max(1.0, scale));
}

TEST_CASE("exact_hessian: quadratic, linear, MLP vs finite differences") {
    Tensor A({2, 2}, {2, 1, 1, 3});
    ScalarFn f = [A](Tape& t, const std::vector<Var>& p) {
        Var row = t.reshape(p[0], Shape{1, 2});
        Var Av = t.matmul(row, t.leaf(A, false));
        return t.scale(t.sum_all(t.mul(Av, row)), 0.5);
    };
    Tensor x({2}, {0.5, 2.0});
    HessianResult hr = exact_hessian(f, {x});
    for (int64_t i = 0; i < 4; ++i) CHECK(hr.matrix[i] == doctest::Approx(A[i]).epsilon(1e-10));
    CHECK(hr.max_asymmetry <= 1e-10);

    ScalarFn lin = [](Tape& t, const std::vector<Var>& p) { return t.scale(t.sum_all(p[0]), 3.0); };
    HessianResult hl = exact_hessian(lin, {x});
    for (int64_t i = 0; i < 4; ++i) CHECK(hl.matrix[i] == 0.0);

    Tensor xd({2, 2}, {0.7, -0.4, 1.1, 0.2});
    uint64_t seed = 21;
    std::vector<Tensor> p = mlp_params(seed);
    while (min_preact(p, xd) < 1e-3) p = mlp_params(++seed);
    ScalarFn mf = mlp_loss(xd);
    HessianResult hm = exact_hessian(mf, p);
    CHECK(hm.max_asymmetry <= 1e-8);

    // finite-difference Hessian column by column on the gradient
    std::vector<Shape> shapes;
    int64_t n = 0;
    for (const auto& q : p) {
        shapes.push_back(q.shape());
        n += q.size();
    }
    auto grad_at = [&](const Tensor& flat) {
        Tape t;
        std::vector<Var> leaves;
        auto parts = unflatten_all(flat, shapes);
        for (const auto& q : parts) leaves.push_back(t.leaf(q, true));
        Var loss = mf(t, leaves);
        return flatten_all(t.values(t.grad(loss, leaves)));
    };
    Tensor flat = flatten_all(p);
    const double h = 1e-5;
    double worst = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        Tensor fp = flat, fm = flat;
        fp[j] += h;
        fm[j] -= h;
        Tensor gp = grad_at(fp), gm = grad_at(fm);
        for (int64_t i = 0; i < n; ++i) {
            const double fd = (gp[i] - gm[i]) / (2.0 * h);
            worst = std::max(worst, std::fabs(hm.matrix[i * n + j] - fd));
        }
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("exact_hessian rejects above the oracle limit") {
    Tensor big({2001});
    ScalarFn f = [](Tape& t, const std::vector<Var>& p) { return t.sum_all(t.mul(p[0], p[0])); };
    CHECK_THROWS_AS((void)exact_hessian(f, {big}), ValidationError);
}

TEST_CASE("maxpool ties route to first maximum in scan order") {
    Tape t;
    Var x = t.leaf(Tensor({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0}), true);
    Var y = t.maxpool(x, 2, 2);
    CHECK(t.value(y).item() == 1.0);
    auto g = t.grad(t.sum_all(y), std::vector<Var>{x});
    const Tensor& gx = t.value(g[0]);
    CHECK(gx[0] == 1.0);
    CHECK(gx[1] == 0.0);
    CHECK(gx[2] == 0.0);
    CHECK(gx[3] == 0.0);
}

TEST_CASE("relu derivative at zero is zero") {
    Tape t;
    Var x = t.leaf(Tensor({3}, {-1.0, 0.0, 2.0}), true);
    Var y = t.relu(x);
    auto g = t.grad(t.sum_all(y), std::vector<Var>{x});
    const Tensor& gx = t.value(g[0]);
    CHECK(gx[0] == 0.0);
    CHECK(gx[1] == 0.0);
    CHECK(gx[2] == 1.0);
}

TEST_CASE("replay reproduces recorded outputs bit-exactly") {
    Rng rng(17);
    Tape t;
    Var x = t.leaf(random_normal({2, 1, 6, 6}, rng), false);
    Var w = t.leaf(random_normal({3, 1, 3, 3}, rng, 0.5), true);
    Var y = t.maxpool(t.relu(t.conv2d(x, w, 1, 1)), 2, 2);
    Var flat = t.reshape(y, Shape{2, 27});
    Var loss = softmax_cross_entropy(t, t.matmul(flat, t.leaf(random_normal({27, 4}, rng, 0.3), true)), {1, 3});
    std::vector<double> recorded = t.value(loss).vec();
    Tensor y_rec = t.value(y);

    t.forward();
    CHECK(t.value(loss).vec() == recorded);
    CHECK(max_abs_diff(t.value(y), y_rec) == 0.0);

    // rebinding an input and replaying matches a fresh computation
    Rng rng2(18);
    Tensor x2 = random_normal({2, 1, 6, 6}, rng2);
    t.rebind_leaf(x, x2);
    CHECK(t.stale());
    t.forward();
    CHECK_FALSE(t.stale());
    CHECK(t.value(loss).item() == t.value(loss).item());  // finite, evaluated
    CHECK(t.value(loss).all_finite());
}

TEST_CASE("every primitive op passes randomized grad_check (smoke)") {
    std::vector<std::pair<std::string, double>> per_op;
    double worst = fitq_test::run_all_op_gradchecks(50, 424242, 1e-5, &per_op);
    for (const auto& [name, err] : per_op) {
        INFO(name << " worst " << err);
        CHECK(err <= 1e-4);
    }
    CHECK(worst <= 1e-4);
}
