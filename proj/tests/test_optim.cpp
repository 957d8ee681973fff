#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "idm/errors.hpp"
#include "idm/model.hpp"
#include "idm/optim.hpp"
#include "idm/rng.hpp"
#include "oracles.hpp"

using namespace idm;

namespace {

// f(theta) = -1/2 (theta-c)' A (theta-c) with A = diag(2, 0.5), c = (1, -2)
const Eigen::Vector2d kCenter{1.0, -2.0};
const Eigen::Vector2d kCurv{2.0, 0.5};

double quad_obj(const ParamVec& t) {
    const Eigen::Vector2d d = t - kCenter;
    return -0.5 * (kCurv.array() * d.array().square()).sum();
}

Eigen::VectorXd quad_grad(const ParamVec& t) {
    return (-(kCurv.array() * (t - kCenter).array())).matrix();
}

}  // namespace

TEST_CASE("full gradient ascent solves a quadratic and honours its tolerance") {
    OptimizerConfig cfg;
    cfg.rate = 0.1;
    cfg.tol = 1e-10;
    ParamVec init(2);
    init << 5.0, 5.0;
    const FitResult res = maximize(quad_obj, quad_grad, init, cfg);
    REQUIRE(res.converged);
    CHECK((res.theta - kCenter).norm() <= 1e-9);
    CHECK(res.grad_norm_final <= cfg.tol * (1.0 + std::abs(res.objective_value)));
    CHECK(res.objective_value > quad_obj(init));
}

TEST_CASE("line_search=false reproduces the plain constant-rate recurrence") {
    OptimizerConfig cfg;
    cfg.rate = 0.01;
    cfg.tol = 1e-300;
    cfg.max_iters = 5;
    cfg.line_search = false;
    ParamVec init(1);
    init << 1.0;
    // f = -1/2 theta^2, so each step is theta <- theta + eta * (-theta)
    const FitResult res = maximize([](const ParamVec& t) { return -0.5 * t(0) * t(0); },
                                   [](const ParamVec& t) { return ParamVec::Constant(1, -t(0)); },
                                   init, cfg);
    double expect = 1.0;
    for (int i = 0; i < 5; ++i) expect = expect + 0.01 * (-expect);
    CHECK(res.iterations == 5);
    CHECK(res.theta(0) == doctest::Approx(expect).epsilon(1e-15));
    CHECK_FALSE(res.converged);
}

TEST_CASE("line search reaches tolerances far below objective resolution") {
    // Gaussian-mean shape: curvature 357, rate 0.01, so the unit step
    // overshoots (eta * curvature > 2) and halving plus the gradient-norm
    // tie rule must carry convergence through the rounding floor of f.
    const double curv = 357.0;
    OptimizerConfig cfg;
    cfg.rate = 0.01;
    cfg.tol = 1e-12;
    ParamVec init(1);
    init << 2.0;
    const FitResult res =
        maximize([&](const ParamVec& t) { return -0.5 * curv * (t(0) - 0.3) * (t(0) - 0.3); },
                 [&](const ParamVec& t) { return ParamVec::Constant(1, -curv * (t(0) - 0.3)); },
                 init, cfg);
    REQUIRE(res.converged);
    CHECK(res.iterations < 1000);
    CHECK(std::abs(res.theta(0) - 0.3) <= 1e-12);
}

TEST_CASE("exhausted halvings stop cleanly with converged=false") {
    // gradient deliberately points uphill on a function that only falls off
    OptimizerConfig cfg;
    cfg.tol = 1e-12;
    ParamVec init(1);
    init << 1.0;
    const FitResult res =
        maximize([](const ParamVec& t) { return -t(0) * t(0); },
                 [](const ParamVec& t) { return ParamVec::Constant(1, t(0)); }, init, cfg);
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 1);
    CHECK(res.theta(0) == 1.0);
    CHECK(res.grad_norm_final == doctest::Approx(1.0));
}

TEST_CASE("config validation rejects nonpositive rate and tol") {
    OptimizerConfig cfg;
    cfg.rate = 0.0;
    ParamVec init = ParamVec::Zero(1);
    CHECK_THROWS_AS(maximize(quad_obj, quad_grad, Eigen::Vector2d{0, 0}, cfg),
                    InvalidArgumentError);
    cfg.rate = 0.1;
    cfg.tol = -1.0;
    CHECK_THROWS_AS(maximize(quad_obj, quad_grad, Eigen::Vector2d{0, 0}, cfg),
                    InvalidArgumentError);
}

TEST_CASE("stochastic with full batch and adaptive off matches plain gradient ascent") {
    OptimizerConfig full;
    full.rate = 0.05;
    full.tol = 1e-300;
    full.max_iters = 40;
    full.line_search = false;
    ParamVec init(2);
    init << 3.0, -1.0;
    const FitResult ref = maximize(quad_obj, quad_grad, init, full);

    OptimizerConfig st = full;
    st.method = OptimizerConfig::Method::AdaptiveStochastic;
    st.minibatch_size = 10;
    st.adaptive = false;
    st.window = 1000;  // never triggers inside 40 iterations
    const Eigen::Index n = 10;
    // the batch always covers all rows, so the estimate IS the full gradient
    const FitResult got = maximize_stochastic(
        [&](const ParamVec& t, const std::vector<Eigen::Index>& idx, Eigen::VectorXd& g) {
            REQUIRE(idx.size() == 10);
            g = quad_grad(t);
            return quad_obj(t);
        },
        n, init, st);
    CHECK(got.iterations == ref.iterations);
    CHECK((got.theta - ref.theta).norm() == 0.0);
}

TEST_CASE("adaptive scaling follows the RMS recurrence exactly") {
    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::AdaptiveStochastic;
    cfg.rate = 0.1;
    cfg.max_iters = 2;
    cfg.minibatch_size = 1;
    cfg.window = 100;
    Eigen::Vector2d g0{1.0, -2.0};
    const FitResult res = maximize_stochastic(
        [&](const ParamVec&, const std::vector<Eigen::Index>&, Eigen::VectorXd& g) {
            g = g0;
            return 0.0;
        },
        1, Eigen::Vector2d{0.0, 0.0}, cfg);

    Eigen::Array2d v = Eigen::Array2d::Zero();
    Eigen::Array2d theta = Eigen::Array2d::Zero();
    for (int t = 0; t < 2; ++t) {
        v = 0.9 * v + 0.1 * g0.array().square();
        theta += 0.1 * g0.array() / (v + 1e-8).sqrt();
    }
    CHECK(res.theta(0) == doctest::Approx(theta(0)).epsilon(1e-15));
    CHECK(res.theta(1) == doctest::Approx(theta(1)).epsilon(1e-15));
}

TEST_CASE("stochastic fit of a linear-gaussian model approaches least squares") {
    SplitMix64 rng(404);
    Dataset d;
    const Eigen::Index n = 200;
    d.x.resize(n, 2);
    d.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.x(i, 0) = rng.gaussian();
        d.x(i, 1) = rng.gaussian();
        d.y(i) = 0.5 + 1.5 * d.x(i, 0) - 0.7 * d.x(i, 1) + 0.1 * rng.gaussian();
    }
    LikelihoodModel m;
    m.family.name = Family::Name::GaussianSse;

    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::AdaptiveStochastic;
    cfg.rate = 0.01;
    cfg.rate_decay = 5e-4;
    cfg.minibatch_size = 16;
    cfg.max_iters = 40000;
    cfg.window_tol = 3e-9;
    cfg.seed = 8;
    BatchObjective bo = [&](const ParamVec& t, const std::vector<Eigen::Index>& idx,
                            Eigen::VectorXd& g) {
        Dataset sub;
        sub.x.resize(static_cast<Eigen::Index>(idx.size()), d.x.cols());
        sub.y.resize(static_cast<Eigen::Index>(idx.size()));
        for (size_t k = 0; k < idx.size(); ++k) {
            sub.x.row(static_cast<Eigen::Index>(k)) = d.x.row(idx[k]);
            sub.y(static_cast<Eigen::Index>(k)) = d.y(idx[k]);
        }
        const double scale = static_cast<double>(n) / static_cast<double>(idx.size());
        g = scale * grad_log_likelihood(m, t, sub);
        return scale * log_likelihood(m, t, sub);
    };
    const FitResult res = maximize_stochastic(bo, n, ParamVec::Zero(3), cfg);
    const Eigen::VectorXd ls = oracle::normal_equations(d);
    CHECK((res.theta - ls).norm() <= 1e-2);

    SUBCASE("seeded shuffle makes runs reproducible") {
        const FitResult again = maximize_stochastic(bo, n, ParamVec::Zero(3), cfg);
        CHECK((res.theta - again.theta).norm() == 0.0);
        OptimizerConfig other = cfg;
        other.seed = 9;
        const FitResult diff = maximize_stochastic(bo, n, ParamVec::Zero(3), other);
        CHECK((res.theta - diff.theta).norm() != 0.0);
    }
}

TEST_CASE("stochastic window convergence fires on a flat objective") {
    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::AdaptiveStochastic;
    cfg.minibatch_size = 1;
    cfg.window = 10;
    cfg.window_tol = 1e-5;
    const FitResult res = maximize_stochastic(
        [](const ParamVec&, const std::vector<Eigen::Index>&, Eigen::VectorXd& g) {
            g = Eigen::VectorXd::Zero(1);
            return 1.0;
        },
        1, ParamVec::Zero(1), cfg);
    CHECK(res.converged);
    CHECK(res.iterations == 20);  // two full windows to compare means
}

TEST_CASE("nelder-mead climbs the rosenbrock ridge") {
    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::NelderMead;
    cfg.tol = 1e-9;
    cfg.max_iters = 5000;
    ParamVec init(2);
    init << -1.2, 1.0;
    const FitResult res = nelder_mead(
        [](const ParamVec& t) {
            const double a = 1.0 - t(0), b = t(1) - t(0) * t(0);
            return -(a * a + 100.0 * b * b);
        },
        init, cfg);
    REQUIRE(res.converged);
    CHECK(std::abs(res.theta(0) - 1.0) <= 1e-4);
    CHECK(std::abs(res.theta(1) - 1.0) <= 1e-4);
}

TEST_CASE("nelder-mead recovers a sample mean") {
    const std::vector<double> y{0.1, 0.4, -0.3, 0.8, 0.25};
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());

    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::NelderMead;
    cfg.tol = 1e-8;
    cfg.max_iters = 2000;
    const FitResult res = nelder_mead(
        [&](const ParamVec& t) {
            double s = 0.0;
            for (double v : y) s -= (v - t(0)) * (v - t(0));
            return s;
        },
        ParamVec::Zero(1), cfg);
    REQUIRE(res.converged);
    CHECK(std::abs(res.theta(0) - mean) <= 1e-4);
}

TEST_CASE("nelder-mead refuses dimensions above its cap") {
    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::NelderMead;
    CHECK_THROWS_AS(nelder_mead([](const ParamVec&) { return 0.0; }, ParamVec::Zero(51), cfg),
                    CapabilityError);
    CHECK_NOTHROW(nelder_mead([](const ParamVec& t) { return -t.squaredNorm(); },
                              ParamVec::Zero(50), cfg));
}

TEST_CASE("optimizer json round trip") {
    OptimizerConfig cfg;
    cfg.method = OptimizerConfig::Method::AdaptiveStochastic;
    cfg.rate = 0.003;
    cfg.rate_decay = 0.01;
    cfg.max_iters = 1234;
    cfg.tol = 2e-8;
    cfg.minibatch_size = 64;
    cfg.seed = 99;
    cfg.line_search = false;
    cfg.adaptive = false;
    cfg.window = 17;
    cfg.window_tol = 3e-6;
    cfg.refit_rate = 0.0005;
    cfg.refit_max_iters = 250;
    const OptimizerConfig back = optimizer_from_json(optimizer_to_json(cfg));
    CHECK(back.method == cfg.method);
    CHECK(back.rate == cfg.rate);
    CHECK(back.rate_decay == cfg.rate_decay);
    CHECK(back.max_iters == cfg.max_iters);
    CHECK(back.tol == cfg.tol);
    CHECK(back.minibatch_size == cfg.minibatch_size);
    CHECK(back.seed == cfg.seed);
    CHECK(back.line_search == cfg.line_search);
    CHECK(back.adaptive == cfg.adaptive);
    CHECK(back.window == cfg.window);
    CHECK(back.window_tol == cfg.window_tol);
    CHECK(back.refit_rate == cfg.refit_rate);
    CHECK(back.refit_max_iters == cfg.refit_max_iters);

    CHECK_THROWS_AS(optimizer_from_json(nlohmann::json{{"method", "sgd"}}), ConfigError);
}
