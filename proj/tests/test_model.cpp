#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "idm/dataset.hpp"
#include "idm/errors.hpp"
#include "idm/model.hpp"
#include "idm/rng.hpp"
#include "idm/stats.hpp"
#include "oracles.hpp"

using namespace idm;

namespace {

Dataset three_rows() {
    Dataset d;
    d.x.resize(3, 1);
    d.x << 1.0, 2.0, -0.5;
    d.y.resize(3);
    d.y << 0.2, -0.3, 0.55;
    return d;
}

LikelihoodModel linear_model(Family::Name name, double sigma2 = 1.0, int n_classes = 2) {
    LikelihoodModel m;
    m.predictor.kind = PredictorSpec::Kind::Linear;
    m.family.name = name;
    m.family.sigma2 = sigma2;
    m.family.n_classes = n_classes;
    m.predictor.output_dim = m.family.output_dim();
    return m;
}

// Deterministic nonzero parameter fill used by the hand-value checks.
ParamVec alternating(Eigen::Index count) {
    ParamVec p(count);
    for (Eigen::Index i = 0; i < count; ++i)
        p(i) = 0.1 * static_cast<double>(i + 1) * (i % 2 == 0 ? 1.0 : -1.0);
    return p;
}

}  // namespace

TEST_CASE("linear predictor layout: intercept first, then weights") {
    const auto m = linear_model(Family::Name::GaussianKnownVar);
    ParamVec theta(2);
    theta << 0.3, -0.2;
    Eigen::VectorXd x(1);
    x << 2.0;
    CHECK(predict(m, theta, x)(0) == doctest::Approx(0.3 - 0.4).epsilon(1e-15));
}

TEST_CASE("mlp forward matches an independently computed value") {
    LikelihoodModel m;
    m.predictor.kind = PredictorSpec::Kind::Mlp;
    m.predictor.hidden = {3};
    m.family.name = Family::Name::GaussianKnownVar;
    REQUIRE(m.param_count(1) == 10);
    const ParamVec theta = alternating(10);
    Eigen::VectorXd x(1);
    x << 0.25;
    CHECK(predict(m, theta, x)(0) == doctest::Approx(-2.0217642015734336).epsilon(1e-13));
}

TEST_CASE("family log-likelihood hand values") {
    const Dataset d = three_rows();
    ParamVec theta(2);
    theta << 0.3, -0.2;

    SUBCASE("gaussian known variance") {
        const auto m = linear_model(Family::Name::GaussianKnownVar, 0.5);
        CHECK(log_likelihood(m, theta, d) ==
              doctest::Approx(-1.7895948287741001).epsilon(1e-14));
    }
    SUBCASE("gaussian sse objective is -1/2 SSE") {
        const auto m = linear_model(Family::Name::GaussianSse);
        CHECK(log_likelihood(m, theta, d) ==
              doctest::Approx(-0.036249999999999998).epsilon(1e-14));
        CHECK(sigma2_hat(m, theta, d) ==
              doctest::Approx(0.024166666666666666).epsilon(1e-14));
    }
    SUBCASE("bernoulli logit") {
        const auto m = linear_model(Family::Name::BernoulliLogit);
        Dataset b;
        b.x.resize(1, 1);
        b.x << 1.5;
        b.y.resize(1);
        b.y << 1.0;
        ParamVec t(2);
        t << 0.2, -0.5;
        CHECK(log_likelihood(m, t, b) == doctest::Approx(-1.0054924814633377).epsilon(1e-14));
    }
    SUBCASE("poisson log link") {
        const auto m = linear_model(Family::Name::PoissonLog);
        Dataset p;
        p.x.resize(1, 1);
        p.x << 0.5;
        p.y.resize(1);
        p.y << 3.0;
        ParamVec t(2);
        t << 0.1, 0.4;
        CHECK(log_likelihood(m, t, p) == doctest::Approx(-2.2416182768040578).epsilon(1e-14));
    }
    SUBCASE("categorical softmax") {
        auto m = linear_model(Family::Name::CategoricalSoftmax, 1.0, 3);
        Dataset c;
        c.x.resize(1, 1);
        c.x << 0.5;
        c.y.resize(1);
        c.y << 2.0;
        ParamVec t(6);
        t << 0.1, 0.2, -0.3, 0.4, 0.0, -0.1;
        CHECK(log_likelihood(m, t, c) == doctest::Approx(-1.1741077011062688).epsilon(1e-14));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    SplitMix64 rng(2024);
    Dataset d;
    const Eigen::Index n = 12, p = 3;
    d.x.resize(n, p);
    d.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) d.x(i, j) = rng.gaussian();
        d.y(i) = rng.gaussian();
    }
    Dataset counts = d;
    for (Eigen::Index i = 0; i < n; ++i) counts.y(i) = std::floor(3.0 * rng.next_double());
    Dataset labels = counts;  // {0, 1, 2} responses

    auto check_grad = [&](const LikelihoodModel& m, const Dataset& data) {
        const ParamVec theta = 0.3 * init_params(m, p, 77).array() + 0.01;
        const Eigen::VectorXd g = grad_log_likelihood(m, theta, data);
        const Eigen::VectorXd fd = oracle::fd_gradient(
            [&](const Eigen::VectorXd& t) { return log_likelihood(m, t, data); }, theta);
        REQUIRE(g.allFinite());
        CHECK((g - fd).norm() <= 1e-6 * (1.0 + fd.norm()));
    };

    SUBCASE("gaussian known var, linear") { check_grad(linear_model(Family::Name::GaussianKnownVar, 0.7), d); }
    SUBCASE("gaussian sse, linear") { check_grad(linear_model(Family::Name::GaussianSse), d); }
    SUBCASE("bernoulli, linear") {
        Dataset b = d;
        for (Eigen::Index i = 0; i < n; ++i) b.y(i) = (i % 2 == 0) ? 1.0 : 0.0;
        check_grad(linear_model(Family::Name::BernoulliLogit), b);
    }
    SUBCASE("poisson, linear") { check_grad(linear_model(Family::Name::PoissonLog), counts); }
    SUBCASE("categorical, linear") {
        check_grad(linear_model(Family::Name::CategoricalSoftmax, 1.0, 3), labels);
    }
    SUBCASE("gaussian sse, mlp") {
        LikelihoodModel m;
        m.predictor.kind = PredictorSpec::Kind::Mlp;
        m.predictor.hidden = {4, 3};
        m.family.name = Family::Name::GaussianSse;
        check_grad(m, d);
    }
    SUBCASE("categorical, mlp") {
        LikelihoodModel m;
        m.predictor.kind = PredictorSpec::Kind::Mlp;
        m.predictor.hidden = {4};
        m.predictor.output_dim = 3;
        m.family.name = Family::Name::CategoricalSoftmax;
        m.family.n_classes = 3;
        check_grad(m, labels);
    }
}

TEST_CASE("hessian is symmetric and differentiates the gradient") {
    const auto m = linear_model(Family::Name::BernoulliLogit);
    SplitMix64 rng(5);
    Dataset d;
    d.x.resize(30, 2);
    d.y.resize(30);
    for (Eigen::Index i = 0; i < 30; ++i) {
        d.x(i, 0) = rng.gaussian();
        d.x(i, 1) = rng.gaussian();
        d.y(i) = rng.next_double() < 0.5 ? 0.0 : 1.0;
    }
    ParamVec theta(3);
    theta << 0.1, -0.3, 0.2;
    const Eigen::MatrixXd h = hessian_log_likelihood(m, theta, d);
    CHECK((h - h.transpose()).norm() == 0.0);

    // column k of H vs finite difference of the gradient
    for (Eigen::Index k = 0; k < 3; ++k) {
        const double step = 1e-6;
        ParamVec tp = theta, tm = theta;
        tp(k) += step;
        tm(k) -= step;
        const Eigen::VectorXd col =
            (grad_log_likelihood(m, tp, d) - grad_log_likelihood(m, tm, d)) / (2.0 * step);
        CHECK((h.col(k) - col).norm() <= 1e-5 * (1.0 + col.norm()));
    }

    SUBCASE("dimension cap rejects oversized problems") {
        CHECK_THROWS_AS(hessian_log_likelihood(m, theta, d, 2), CapabilityError);
    }
}

TEST_CASE("serial reference kernels agree with the blocked parallel ones") {
    const auto m = linear_model(Family::Name::CategoricalSoftmax, 1.0, 4);
    SplitMix64 rng(99);
    auto make = [&](Eigen::Index n) {
        Dataset d;
        d.x.resize(n, 3);
        d.y.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < 3; ++j) d.x(i, j) = rng.gaussian();
            d.y(i) = std::floor(4.0 * rng.next_double());
        }
        return d;
    };
    ParamVec theta(16);
    for (Eigen::Index i = 0; i < 16; ++i) theta(i) = 0.05 * static_cast<double>(i - 8);

    SUBCASE("single block: identical summation order, bit-equal") {
        const Dataset d = make(1000);
        CHECK(log_likelihood(m, theta, d) == serial::log_likelihood(m, theta, d));
        CHECK((grad_log_likelihood(m, theta, d) - serial::grad_log_likelihood(m, theta, d))
                  .norm() == 0.0);
    }
    SUBCASE("multiple blocks: summation tree differs only in rounding") {
        const Dataset d = make(5000);
        const double a = log_likelihood(m, theta, d);
        const double b = serial::log_likelihood(m, theta, d);
        CHECK(std::abs(a - b) <= 1e-11 * (1.0 + std::abs(b)));
        const Eigen::VectorXd g = grad_log_likelihood(m, theta, d);
        const Eigen::VectorXd gs = serial::grad_log_likelihood(m, theta, d);
        CHECK((g - gs).norm() <= 1e-11 * (1.0 + gs.norm()));
    }
}

TEST_CASE("model json round trip") {
    LikelihoodModel m;
    m.predictor.kind = PredictorSpec::Kind::Mlp;
    m.predictor.hidden = {50};
    m.family.name = Family::Name::GaussianSse;
    const LikelihoodModel back = model_from_json(model_to_json(m));
    CHECK(back.predictor.kind == m.predictor.kind);
    CHECK(back.predictor.hidden == m.predictor.hidden);
    CHECK(back.family.name == m.family.name);

    auto c = linear_model(Family::Name::CategoricalSoftmax, 1.0, 7);
    const LikelihoodModel cback = model_from_json(model_to_json(c));
    CHECK(cback.family.n_classes == 7);
    CHECK(cback.predictor.output_dim == 7);
}

TEST_CASE("dataset csv round trip preserves doubles exactly") {
    SplitMix64 rng(31);
    Dataset d;
    d.x.resize(17, 2);
    d.y.resize(17);
    for (Eigen::Index i = 0; i < 17; ++i) {
        d.x(i, 0) = rng.gaussian() * 1e-7;
        d.x(i, 1) = rng.gaussian() * 1e9;
        d.y(i) = rng.gaussian();
    }
    const std::string path = "roundtrip_test.csv";
    write_csv(d, path);
    const Dataset back = load_csv(path);
    std::remove(path.c_str());
    REQUIRE(back.n() == d.n());
    REQUIRE(back.feature_dim() == d.feature_dim());
    CHECK((back.x - d.x).norm() == 0.0);
    CHECK((back.y - d.y).norm() == 0.0);
}

TEST_CASE("init_params: zeros for linear, bounded uniform for mlp, seeded") {
    const auto lin = linear_model(Family::Name::GaussianKnownVar);
    CHECK(init_params(lin, 4, 7).isZero(0.0));

    LikelihoodModel m;
    m.predictor.kind = PredictorSpec::Kind::Mlp;
    m.predictor.hidden = {8};
    m.family.name = Family::Name::GaussianSse;
    const ParamVec a = init_params(m, 2, 42);
    const ParamVec b = init_params(m, 2, 42);
    const ParamVec c = init_params(m, 2, 43);
    CHECK((a - b).norm() == 0.0);
    CHECK((a - c).norm() != 0.0);
    CHECK(a.minCoeff() >= -0.1);
    CHECK(a.maxCoeff() <= 0.1);
    CHECK(a.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("normal quantile and cdf reference points") {
    CHECK(normal_quantile(0.975) == doctest::Approx(1.9599639845400536).epsilon(1e-12));
    CHECK(normal_quantile(0.75) == doctest::Approx(0.67448975019608171).epsilon(1e-12));
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(normal_cdf(normal_quantile(0.31)) == doctest::Approx(0.31).epsilon(1e-12));
    CHECK_THROWS_AS(normal_quantile(0.0), InvalidArgumentError);
    CHECK_THROWS_AS(normal_quantile(1.0), InvalidArgumentError);
}

TEST_CASE("rng streams are deterministic and decorrelated") {
    SplitMix64 a(1), b(1), c(2);
    for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() != c.next_u64());
    CHECK(derive_seed(9, 0) != derive_seed(9, 1));
    CHECK(derive_seed(9, 0) == derive_seed(9, 0));

    SplitMix64 g(123);
    for (int i = 0; i < 1000; ++i) {
        const double u = g.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    // gaussian moments, loose sanity band
    SplitMix64 h(7);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = h.gaussian();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}
