#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <memory>

#include "doctest.h"
#include "idm/errors.hpp"
#include "idm/fdidm.hpp"
#include "idm/rng.hpp"
#include "idm/stats.hpp"
#include "idm/synthdata.hpp"
#include "oracles.hpp"

using namespace idm;

namespace {

// Gaussian mean problem: intercept-only model on featureless rows.  The
// shifted optimum has the closed form theta_hat(lambda) = ybar + lambda
// sigma2 / n, so the finite difference of psi(theta) = theta recovers
// sigma2 / n without discretization error.
struct MeanProblem {
    LikelihoodModel model;
    Dataset data;
    EvalFn psi;
    OptimizerConfig opt;
    FitResult mle;
    double sigma2;
    double ybar;

    MeanProblem(Eigen::Index n, double sigma2_in, uint64_t seed, double tol = 1e-12) {
        sigma2 = sigma2_in;
        model.family.name = Family::Name::GaussianKnownVar;
        model.family.sigma2 = sigma2;
        data.x.resize(n, 0);
        data.y.resize(n);
        SplitMix64 rng(seed);
        for (Eigen::Index i = 0; i < n; ++i) data.y(i) = 0.3 + std::sqrt(sigma2) * rng.gaussian();
        ybar = data.y.mean();
        psi = EvalFn::scalar([](const ParamVec& t) { return t(0); },
                             [](const ParamVec& t) { return Eigen::VectorXd::Ones(t.size()); });
        opt.rate = 0.01;
        opt.tol = tol;
        mle = fit_mle(model, data, ParamVec::Zero(1), opt);
    }
};

LikelihoodModel linear_gaussian(double sigma2) {
    LikelihoodModel m;
    m.family.name = Family::Name::GaussianKnownVar;
    m.family.sigma2 = sigma2;
    return m;
}

Dataset random_regression(Eigen::Index n, Eigen::Index p, uint64_t seed, double noise) {
    SplitMix64 rng(seed);
    Dataset d;
    d.x.resize(n, p);
    d.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double h = 0.4;
        for (Eigen::Index j = 0; j < p; ++j) {
            d.x(i, j) = rng.gaussian();
            h += (j % 2 == 0 ? 0.8 : -0.5) * d.x(i, j);
        }
        d.y(i) = h + noise * rng.gaussian();
    }
    return d;
}

}  // namespace

TEST_CASE("finite difference recovers the exact variance on the mean problem") {
    MeanProblem mp(100, 0.28, 21);
    REQUIRE(mp.mle.converged);
    CHECK(std::abs(mp.mle.theta(0) - mp.ybar) <= 1e-12);

    const double truth = mp.sigma2 / 100.0;
    for (double lambda : {0.01, 0.1, 1.0}) {
        const VarEstimate v = fdidm(mp.model, mp.data, mp.psi, lambda, mp.mle, mp.opt);
        CHECK(std::abs(v.value - truth) <= 1e-8 * truth);
        CHECK(v.lambda_used == lambda);
        CHECK_FALSE(v.raw_negative);
        CHECK(v.raw_negative == (v.value < 0.0));
        // the optimum moves by exactly lambda sigma2 / n
        CHECK(v.displacement == doctest::Approx(lambda * truth).epsilon(1e-6));
    }
}

TEST_CASE("central differencing doubles the effective step") {
    MeanProblem mp(64, 0.5, 3);
    const VarEstimate v = fdidm(mp.model, mp.data, mp.psi, 0.2, mp.mle, mp.opt, true);
    CHECK(v.central_diff);
    CHECK(v.lambda_used == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(std::abs(v.value - mp.sigma2 / 64.0) <= 1e-8 * mp.sigma2 / 64.0);
}

TEST_CASE("estimates are deterministic for identical inputs") {
    MeanProblem mp(50, 1.0, 8);
    const VarEstimate a = fdidm(mp.model, mp.data, mp.psi, 0.05, mp.mle, mp.opt);
    const VarEstimate b = fdidm(mp.model, mp.data, mp.psi, 0.05, mp.mle, mp.opt);
    CHECK(a.value == b.value);
    CHECK(a.psi_reg == b.psi_reg);
}

TEST_CASE("input validation: arity, lambda sign, warm dimension") {
    MeanProblem mp(20, 1.0, 4);
    CHECK_THROWS_AS(fdidm(mp.model, mp.data, mp.psi, 0.0, mp.mle, mp.opt), InvalidArgumentError);
    FitResult bad = mp.mle;
    bad.theta = ParamVec::Zero(3);
    CHECK_THROWS_AS(fdidm(mp.model, mp.data, mp.psi, 0.1, bad, mp.opt), InvalidArgumentError);

    EvalFn two;
    two.components = {mp.psi.components[0], mp.psi.components[0]};
    CHECK_THROWS_AS(fdidm(mp.model, mp.data, two, 0.1, mp.mle, mp.opt), InvalidArgumentError);
}

TEST_CASE("fit_regularized: zero weight is the warm fit, negative rejected") {
    MeanProblem mp(30, 1.0, 6);
    const FitResult same = fit_regularized(mp.model, mp.data, mp.psi, 0.0, mp.mle, mp.opt);
    CHECK((same.theta - mp.mle.theta).norm() == 0.0);
    CHECK(same.objective_value == mp.mle.objective_value);
    CHECK_THROWS_AS(fit_regularized(mp.model, mp.data, mp.psi, -0.5, mp.mle, mp.opt),
                    InvalidArgumentError);
}

TEST_CASE("warm starts pay fewer iterations than cold regularized fits") {
    MeanProblem mp(200, 0.7, 13);
    const FitResult warm = fit_regularized(mp.model, mp.data, mp.psi, 0.1, mp.mle, mp.opt);
    FitResult cold_base = mp.mle;
    cold_base.theta = ParamVec::Zero(1);
    const FitResult cold = fit_regularized(mp.model, mp.data, mp.psi, 0.1, cold_base, mp.opt);
    CHECK(warm.converged);
    CHECK(cold.converged);
    CHECK(warm.iterations <= cold.iterations);
    CHECK((warm.theta - cold.theta).norm() <= 1e-10);
}

TEST_CASE("refit overrides cap the perturbed fits without touching the base fit") {
    MeanProblem mp(80, 0.4, 17);
    OptimizerConfig capped = mp.opt;
    capped.refit_max_iters = 3;
    capped.refit_rate = 0.002;
    const FitResult reg = fit_regularized(mp.model, mp.data, mp.psi, 0.5, mp.mle, capped);
    CHECK(reg.iterations <= 3);
    CHECK_FALSE(reg.converged);

    // a matched-budget central pair spends the cap on each side
    const VarEstimate v = fdidm(mp.model, mp.data, mp.psi, 0.5, mp.mle, capped, true);
    CHECK(v.fit_iterations <= 6);

    OptimizerConfig neg = mp.opt;
    neg.refit_max_iters = -1;
    CHECK_THROWS_AS(neg.validate(), InvalidArgumentError);
}

TEST_CASE("sse family is refused by the likelihood-scale entry points") {
    LikelihoodModel sse;
    sse.family.name = Family::Name::GaussianSse;
    Dataset d = random_regression(40, 1, 10, 0.1);
    OptimizerConfig opt;
    opt.tol = 1e-10;
    const FitResult fit = fit_mle(sse, d, ParamVec::Zero(2), opt);
    const EvalFn psi = make_point_prediction(sse, Eigen::VectorXd::Constant(1, 0.5));

    CHECK_THROWS_AS(fdidm(sse, d, psi, 0.1, fit, opt), WrongFamilyError);
    CHECK_THROWS_AS(mv_fdidm(sse, d, psi, 0.1, fit, opt), WrongFamilyError);
    CHECK_THROWS_AS(fisher_inverse_idm(sse, d, fit, 0.1, opt), WrongFamilyError);
    // and the sse-specific route refuses everything else
    LikelihoodModel known = linear_gaussian(1.0);
    CHECK_THROWS_AS(fdidm_sse(known, d, psi, 0.1, fit, opt), WrongFamilyError);
}

TEST_CASE("sse route equals the known-variance route at the plug-in variance") {
    // same least-squares fit under both objectives, so the variance
    // estimates must agree once sigma2_hat rescales the tilt
    Dataset d = random_regression(120, 1, 31, 0.3);
    OptimizerConfig opt;
    opt.tol = 1e-12;
    opt.rate = 0.002;

    LikelihoodModel sse;
    sse.family.name = Family::Name::GaussianSse;
    const FitResult fit_s = fit_mle(sse, d, ParamVec::Zero(2), opt);
    const double s2 = sigma2_hat(sse, fit_s.theta, d);

    LikelihoodModel known = linear_gaussian(s2);
    const FitResult fit_k = fit_mle(known, d, ParamVec::Zero(2), opt);
    CHECK((fit_s.theta - fit_k.theta).norm() <= 1e-8);

    const EvalFn psi = make_point_prediction(sse, Eigen::VectorXd::Constant(1, 0.5));
    const VarEstimate vs = fdidm_sse(sse, d, psi, 0.5, fit_s, opt);
    const VarEstimate vk = fdidm(known, d, psi, 0.5, fit_k, opt);
    CHECK(std::abs(vs.value - vk.value) <= 1e-6 * vk.value);

    // both agree with the closed-form prediction variance
    Eigen::VectorXd feat(2);
    feat << 1.0, 0.5;
    const Eigen::MatrixXd A = oracle::design_matrix(d);
    const double closed = s2 * feat.dot((A.transpose() * A).ldlt().solve(feat));
    CHECK(std::abs(vs.value - closed) <= 1e-6 * closed);
}

TEST_CASE("multivariate covariance from exactly K regularized fits") {
    const double sigma2 = 0.4;
    LikelihoodModel m = linear_gaussian(sigma2);
    Dataset d = random_regression(150, 1, 17, std::sqrt(sigma2));
    OptimizerConfig opt;
    opt.tol = 1e-12;
    opt.rate = 0.005;
    const FitResult fit = fit_mle(m, d, ParamVec::Zero(2), opt);
    REQUIRE(fit.converged);

    std::vector<Eigen::VectorXd> pts;
    for (double v : {-1.0, 0.0, 1.0}) pts.push_back(Eigen::VectorXd::Constant(1, v));
    const EvalFn grid = make_prediction_grid(m, pts);

    const CovMatrix cm = mv_fdidm(m, d, grid, 0.05, fit, opt);
    CHECK(cm.fit_count == 3);
    CHECK(cm.symmetrized);
    REQUIRE(cm.projected.rows() == 3);

    // closed form: sigma2 * a_i' (A'A)^{-1} a_j with a = [1; x]
    const Eigen::MatrixXd A = oracle::design_matrix(d);
    const Eigen::MatrixXd gram_inv =
        (A.transpose() * A).ldlt().solve(Eigen::MatrixXd::Identity(2, 2));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            Eigen::VectorXd ai(2), aj(2);
            ai << 1.0, pts[static_cast<size_t>(i)](0);
            aj << 1.0, pts[static_cast<size_t>(j)](0);
            const double closed = sigma2 * ai.dot(gram_inv * aj);
            CHECK(cm.projected(i, j) == doctest::Approx(closed).epsilon(5e-5));
        }
    }
    CHECK((cm.projected - cm.projected.transpose()).norm() <= 1e-14);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cm.projected);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);

    SUBCASE("diagonal agrees with the scalar estimator per component") {
        for (int k = 0; k < 3; ++k) {
            const EvalFn pk = make_point_prediction(m, pts[static_cast<size_t>(k)]);
            const VarEstimate v = fdidm(m, d, pk, 0.05, fit, opt);
            CHECK(std::abs(cm.raw(k, k) - v.value) <= 1e-10 * (1.0 + std::abs(v.value)));
        }
    }
}

TEST_CASE("confidence intervals: quantile width, clamped negatives") {
    VarEstimate v;
    v.value = 0.04;
    const Interval ci = confidence_interval(1.5, v, 0.95);
    const double z = normal_quantile(0.975);
    CHECK(ci.center == 1.5);
    CHECK(ci.beta == 0.95);
    CHECK(ci.lower == doctest::Approx(1.5 - z * 0.2).epsilon(1e-14));
    CHECK(ci.upper == doctest::Approx(1.5 + z * 0.2).epsilon(1e-14));
    CHECK(ci.contains(1.5));
    CHECK_FALSE(ci.contains(1.5 + z * 0.2 + 1e-9));

    VarEstimate neg;
    neg.value = -0.01;
    neg.raw_negative = true;
    const Interval zero = confidence_interval(2.0, neg, 0.9);
    CHECK(zero.width() == 0.0);
    CHECK(zero.raw_negative);
    CHECK(zero.contains(2.0));

    CHECK_THROWS_AS(confidence_interval(0.0, v, 1.0), InvalidArgumentError);
}

TEST_CASE("evaluation-set variance of the empirical mean") {
    auto ev = std::make_shared<Dataset>();
    ev->x.resize(2, 1);
    ev->x << 0.0, 0.0;
    ev->y.resize(2);
    ev->y << 0.0, 1.0;
    EvalFn psi;
    psi.unit_form = [](const Eigen::VectorXd&, double y, const ParamVec&) { return y; };
    psi.eval_set = ev;
    psi.components = {[&psi](const ParamVec& t) { return psi.mean_unit(t); }};
    // values {0, 1}: mean 1/2, sample variance 1/2, variance of the mean 1/4
    CHECK(eval_set_variance(psi, ParamVec::Zero(1)) == doctest::Approx(0.25).epsilon(1e-15));

    EvalFn no_unit = EvalFn::scalar([](const ParamVec&) { return 0.0; });
    CHECK_THROWS_AS(eval_set_variance(no_unit, ParamVec::Zero(1)), InvalidArgumentError);
}

TEST_CASE("combining training and evaluation variances") {
    CHECK(combined_variance(0.04, 0.05, true) == doctest::Approx(0.09).epsilon(1e-15));
    const double dep = std::pow(std::sqrt(0.04) + std::sqrt(0.05), 2.0);
    CHECK(combined_variance(0.04, 0.05, false) == doctest::Approx(dep).epsilon(1e-15));
    CHECK(combined_variance(0.0, 0.0, false) == 0.0);
    CHECK_THROWS_AS(combined_variance(-0.1, 0.0, true), InvalidArgumentError);
}

TEST_CASE("default regularization weight: one percent, floored") {
    CHECK(default_lambda(-500.0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(default_lambda(0.001) == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(default_lambda(0.0) == doctest::Approx(1e-3).epsilon(1e-15));
}

TEST_CASE("likelihood-scale objective: proper families pass through, sse is profiled") {
    Dataset d = random_regression(60, 1, 77, 0.2);
    LikelihoodModel known = linear_gaussian(0.9);
    ParamVec theta(2);
    theta << 0.4, 0.6;
    CHECK(likelihood_scale_objective(known, theta, d) ==
          doctest::Approx(log_likelihood(known, theta, d)).epsilon(1e-14));

    LikelihoodModel sse;
    sse.family.name = Family::Name::GaussianSse;
    const double s2 = sigma2_hat(sse, theta, d);
    const double expect =
        -0.5 * 60.0 * (std::log(2.0 * M_PI * s2) + 1.0);
    CHECK(likelihood_scale_objective(sse, theta, d) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("fisher inverse via regularized refits") {
    SUBCASE("intercept-only gaussian: inverse information is sigma2") {
        MeanProblem mp(80, 0.35, 41);
        const Eigen::MatrixXd fi = fisher_inverse_idm(mp.model, mp.data, mp.mle, 1.0, mp.opt);
        REQUIRE(fi.rows() == 1);
        CHECK(fi(0, 0) == doctest::Approx(0.35).epsilon(1e-7));
    }
    SUBCASE("dimension cap") {
        LikelihoodModel m = linear_gaussian(1.0);
        Dataset d = random_regression(50, 2, 5, 0.1);
        OptimizerConfig opt;
        const FitResult fit = fit_mle(m, d, ParamVec::Zero(3), opt);
        CHECK_THROWS_AS(fisher_inverse_idm(m, d, fit, 1.0, opt, 2), CapabilityError);
    }
}

TEST_CASE("stochastic single-pass interval lands near the plug-in answer") {
    // Gaussian mean with known variance: psi = theta, ideal width
    // 2 z sqrt(sigma2 / n).  The averaged psi samples carry optimizer
    // noise, so only coarse agreement is asserted.
    const Eigen::Index n = 500;
    MeanProblem mp(n, 1.0, 55);
    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::AdaptiveStochastic;
    cfg.rate = 0.01;
    cfg.minibatch_size = 50;
    cfg.window = 50;
    cfg.window_tol = 1e-7;
    cfg.max_iters = 30000;
    cfg.seed = 77;
    const Interval ci = sg_fdidm(mp.model, mp.data, mp.psi, 5.0, 32, 0.95, cfg);
    CHECK(ci.beta == 0.95);
    CHECK(std::abs(ci.center - mp.ybar) <= 0.05);
    const double ideal = 2.0 * normal_quantile(0.975) * std::sqrt(1.0 / static_cast<double>(n));
    CHECK(ci.width() > 0.2 * ideal);
    CHECK(ci.width() < 5.0 * ideal);

    SUBCASE("configuration guards") {
        CHECK_THROWS_AS(sg_fdidm(mp.model, mp.data, mp.psi, 5.0, 0, 0.95, cfg),
                        InvalidArgumentError);
        OptimizerConfig full = cfg;
        full.method = OptimizerConfig::Method::FullGradient;
        CHECK_THROWS_AS(sg_fdidm(mp.model, mp.data, mp.psi, 5.0, 8, 0.95, full),
                        InvalidArgumentError);
    }
}
