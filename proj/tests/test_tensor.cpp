#include <gtest/gtest.h>

#include <cmath>

#include "kcd/ops.hpp"
#include "kcd/optim.hpp"
#include "testing.hpp"

using namespace kcd;
using kcd::testing::check_gradients;
using kcd::testing::max_error;
using kcd::testing::random_matrix;

namespace {

Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Index>(v.size()));
    Index j = 0;
    for (double x : v) m(0, j++) = x;
    return m;
}

// Contracts an op's output with a fixed random matrix so every output
// entry influences the scalar.
ad::Var project(ad::Tape& t, ad::Var out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return ad::sum(ad::mul(out, t.constant(random_matrix(out.rows(), out.cols(), rng))));
}

struct OpCase {
    const char* name;
    std::function<ad::Var(ad::Tape&, ad::Var, ad::Var)> op;
    Index ar, ac, br, bc;
};

} // namespace

TEST(Softmax, Examples) {
    ad::Tape t;
    Matrix s = ad::row_softmax(t.constant(row({0, 0}))).value();
    EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
    Matrix s2 = ad::row_softmax(t.constant(row({1, 0}))).value();
    EXPECT_NEAR(s2(0, 0), 0.73106, 1e-5);
    EXPECT_NEAR(s2(0, 1), 0.26894, 1e-5);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    std::mt19937_64 rng(3);
    Matrix x = random_matrix(5, 7, rng, 10.0);
    ad::Tape t;
    Matrix a = ad::row_softmax(t.constant(x)).value();
    Matrix b = ad::row_softmax(t.constant((x.array() + 123.0).matrix())).value();
    for (Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Activations, LeakyRelu) {
    ad::Tape t;
    Matrix y = ad::leaky_relu(t.constant(row({-1, 2})), 0.01).value();
    EXPECT_DOUBLE_EQ(y(0, 0), -0.01);
    EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(Backward, SquareGradient) {
    Parameter x("x", row({3}));
    ad::Tape t;
    ad::Var v = t.param(x);
    t.backward(ad::sum(ad::mul(v, v)));
    EXPECT_DOUBLE_EQ(x.grad(0, 0), 6.0);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
    Parameter x("x", row({1, 2}));
    Parameter unused("u", row({5}));
    ad::Tape t;
    t.param(x);
    t.param(unused);
    ad::Var c = t.constant(row({4}));
    t.backward(c);
    EXPECT_EQ(x.grad.norm(), 0.0);
    EXPECT_EQ(unused.grad.norm(), 0.0);
}

TEST(Backward, UnreachedParameterGetsZero) {
    Parameter x("x", row({1, 2})), y("y", row({3, 4}));
    ad::Tape t;
    ad::Var vx = t.param(x);
    t.param(y);
    t.backward(ad::sum(ad::mul(vx, vx)));
    EXPECT_EQ(y.grad.norm(), 0.0);
    EXPECT_DOUBLE_EQ(x.grad(0, 1), 4.0);
}

TEST(Backward, NonScalarLossRejected) {
    ad::Tape t;
    Parameter x("x", row({1, 2}));
    EXPECT_THROW(t.backward(t.param(x)), ShapeError);
}

TEST(Backward, SecondBackwardIsAnError) {
    Parameter x("x", row({2}));
    ad::Tape t;
    ad::Var l = ad::sum(ad::mul(t.param(x), t.param(x)));
    t.backward(l);
    EXPECT_THROW(t.backward(l), Error);
}

TEST(Backward, TwoLayerCompositionMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    Parameter w1("w1", random_matrix(6, 8, rng, 0.5)), b1("b1", random_matrix(1, 8, rng, 0.1));
    Parameter w2("w2", random_matrix(8, 3, rng, 0.5)), b2("b2", random_matrix(1, 3, rng, 0.1));
    Matrix x = random_matrix(4, 6, rng);
    std::vector<int> labels{0, 2, 1, 2};
    auto f = [&](ad::Tape& t) {
        ad::Var h = ad::tanh(ad::add_row(ad::matmul(t.constant(x), t.param(w1)), t.param(b1)));
        ad::Var z = ad::add_row(ad::matmul(h, t.param(w2)), t.param(b2));
        return ad::cross_entropy_logits(z, labels);
    };
    auto checks = check_gradients(f, {&w1, &b1, &w2, &b2});
    for (const auto& c : checks) EXPECT_LT(c.rel_error, 1e-4) << c.name;
}

TEST(Ops, ShapeErrorNamesOpAndShapes) {
    ad::Tape t;
    try {
        ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
        FAIL();
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("matmul"), std::string::npos);
        EXPECT_NE(msg.find("2x3"), std::string::npos);
    }
    EXPECT_THROW(ad::add(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(3, 2))), ShapeError);
    EXPECT_THROW(ad::add_row(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(1, 2))), ShapeError);
}

TEST(Ops, NonFiniteValuesRejected) {
    ad::Tape t;
    Matrix m = Matrix::Constant(1, 1, 1e308);
    EXPECT_THROW(ad::scale(t.constant(m), 10.0), NumericError);
    Matrix bad(1, 1);
    bad(0, 0) = std::nan("");
    EXPECT_THROW(t.constant(bad), NumericError);
}

TEST(Ops, DropoutUsesExplicitMask) {
    ad::Tape t;
    Matrix mask = row({0, 2});
    Matrix y = ad::dropout(t.constant(row({3, 4})), mask).value();
    EXPECT_EQ(y(0, 0), 0.0);
    EXPECT_EQ(y(0, 1), 8.0);
    std::mt19937_64 r1(5), r2(5);
    EXPECT_EQ(ad::dropout_mask(4, 4, 0.6, r1), ad::dropout_mask(4, 4, 0.6, r2));
}

TEST(Ops, MeanRowsAndSegments) {
    ad::Tape t;
    Matrix x(3, 2);
    x << 1, 2, 3, 4, 5, 6;
    std::vector<int> rows{0, 2};
    Matrix m = ad::mean_rows(t.constant(x), rows).value();
    EXPECT_DOUBLE_EQ(m(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(m(0, 1), 4.0);
    std::vector<int> seg{0, 1, 0};
    Matrix mx = ad::segment_max(t.constant(x), seg, 2).value();
    EXPECT_DOUBLE_EQ(mx(0, 0), 5.0);
    EXPECT_DOUBLE_EQ(mx(1, 1), 4.0);
    Matrix col(3, 1);
    col << 0, 1, 0;
    Matrix w = ad::segment_softmax(t.constant(col), seg).value();
    EXPECT_DOUBLE_EQ(w(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(w(1, 0), 1.0);
}

TEST(Ops, CrossEntropyAndL2) {
    ad::Tape t;
    std::vector<int> y{0};
    EXPECT_NEAR(ad::cross_entropy_logits(t.constant(row({0, 0})), y).value()(0, 0), std::log(2.0), 1e-15);
    EXPECT_LT(ad::cross_entropy_logits(t.constant(row({50, 0})), y).value()(0, 0), 1e-20);
    EXPECT_DOUBLE_EQ(ad::l2_squared(t.constant(row({3, 4}))).value()(0, 0), 25.0);
}

// Every differentiable op against central differences.
TEST(GradientCheck, EveryOp) {
    std::vector<int> groups{0, 0, 1, 1, 1};
    std::vector<int> segs{0, 1, 0, 2, 1};
    std::vector<int> subset{1, 3, 4};
    std::vector<int> labels{1, 0, 2, 2, 0};
    SparseMatrix sp(3, 5);
    sp.insert(0, 1) = 0.5;
    sp.insert(0, 4) = -1.5;
    sp.insert(2, 0) = 2.0;
    Matrix mask = (Matrix(5, 4) << 0, 2, 2, 0, 2, 2, 0, 2, 0, 0, 2, 2, 2, 0, 2, 0, 2, 2, 2, 2).finished();

    std::vector<OpCase> cases{
        {"matmul", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::matmul(a, b); }, 5, 4, 4, 3},
        {"matmul_nt", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::matmul_nt(a, b); }, 5, 4, 3, 4},
        {"add", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::add(a, b); }, 5, 4, 5, 4},
        {"sub", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::sub(a, b); }, 5, 4, 5, 4},
        {"add_row", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::add_row(a, b); }, 5, 4, 1, 4},
        {"mul", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::mul(a, b); }, 5, 4, 5, 4},
        {"scale", [](ad::Tape&, ad::Var a, ad::Var) { return ad::scale(a, -1.7); }, 5, 4, 1, 1},
        {"concat_rows", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::concat_rows({a, b, a}); }, 5, 4, 2, 4},
        {"concat_cols", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::concat_cols({b, a}); }, 5, 4, 5, 2},
        {"col_slice", [](ad::Tape&, ad::Var a, ad::Var) { return ad::col_slice(a, 1, 2); }, 5, 4, 1, 1},
        {"spmm", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::spmm(sp, a); }, 5, 4, 1, 1},
        {"mean_rows", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::mean_rows(a, subset); }, 5, 4, 1, 1},
        {"row_sum", [](ad::Tape&, ad::Var a, ad::Var) { return ad::row_sum(a); }, 5, 4, 1, 1},
        {"sum", [](ad::Tape&, ad::Var a, ad::Var) { return ad::sum(a); }, 5, 4, 1, 1},
        {"scale_rows", [](ad::Tape&, ad::Var a, ad::Var b) { return ad::scale_rows(a, b); }, 5, 4, 5, 1},
        {"row_softmax", [](ad::Tape&, ad::Var a, ad::Var) { return ad::row_softmax(a); }, 5, 4, 1, 1},
        {"row_softmax_grouped", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::row_softmax_grouped(a, groups); }, 5, 5, 1, 1},
        {"segment_softmax", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::segment_softmax(a, segs); }, 5, 1, 1, 1},
        {"segment_max", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::segment_max(a, segs, 3); }, 5, 4, 1, 1},
        {"leaky_relu", [](ad::Tape&, ad::Var a, ad::Var) { return ad::leaky_relu(a, 0.01); }, 5, 4, 1, 1},
        {"tanh", [](ad::Tape&, ad::Var a, ad::Var) { return ad::tanh(a); }, 5, 4, 1, 1},
        {"sigmoid", [](ad::Tape&, ad::Var a, ad::Var) { return ad::sigmoid(a); }, 5, 4, 1, 1},
        {"dropout", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::dropout(a, mask); }, 5, 4, 1, 1},
        {"cross_entropy_logits", [&](ad::Tape&, ad::Var a, ad::Var) { return ad::cross_entropy_logits(a, labels); }, 5, 3, 1, 1},
        {"l2_squared", [](ad::Tape&, ad::Var a, ad::Var) { return ad::l2_squared(a); }, 5, 4, 1, 1},
    };
    std::mt19937_64 rng(2024);
    for (const auto& c : cases) {
        Parameter a("a", random_matrix(c.ar, c.ac, rng)), b("b", random_matrix(c.br, c.bc, rng));
        auto f = [&](ad::Tape& t) { return project(t, c.op(t, t.param(a), t.param(b))); };
        auto checks = check_gradients(f, {&a, &b});
        EXPECT_LT(max_error(checks), 1e-4) << c.name;
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Parameter p("p", row({1, -2, 3}));
    Matrix before = p.value;
    std::vector<Parameter*> ps{&p};
    AdamState s;
    adam_step(ps, s, {});
    EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Parameter p("p", row({1, -2}));
    p.grad = row({0.3, -5.0});
    std::vector<Parameter*> ps{&p};
    AdamState s;
    AdamOptions o;
    o.lr = 0.01;
    adam_step(ps, s, o);
    // Bias correction makes the first update g/|g|·lr up to eps.
    EXPECT_NEAR(p.value(0, 0), 1.0 - 0.01, 1e-7);
    EXPECT_NEAR(p.value(0, 1), -2.0 + 0.01, 1e-7);
}

TEST(Adam, DeterministicAndRejectsBadLr) {
    auto run = [] {
        std::mt19937_64 rng(1);
        Parameter p("p", random_matrix(3, 3, rng));
        std::vector<Parameter*> ps{&p};
        AdamState s;
        for (int i = 0; i < 10; ++i) {
            p.grad = random_matrix(3, 3, rng);
            adam_step(ps, s, {});
        }
        return p.value;
    };
    EXPECT_EQ(run(), run());
    Parameter p("p", row({1}));
    std::vector<Parameter*> ps{&p};
    AdamState s;
    AdamOptions o;
    o.lr = 0.0;
    EXPECT_THROW(adam_step(ps, s, o), ConfigError);
}
