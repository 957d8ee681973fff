#include "idm/fdidm.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <vector>

#include "idm/baselines.hpp"
#include "idm/errors.hpp"
#include "idm/rng.hpp"
#include "idm/stats.hpp"

namespace idm {

double EvalFn::mean_unit(const ParamVec& theta) const {
    if (!has_unit_form()) throw InvalidArgumentError("EvalFn: no unit form");
    const Dataset& ev = *eval_set;
    double acc = 0.0;
    Eigen::VectorXd xj(ev.feature_dim());
    for (Eigen::Index j = 0; j < ev.n(); ++j) {
        xj = ev.x.row(j).transpose();
        acc += unit_form(xj, ev.y(j), theta);
    }
    return acc / static_cast<double>(ev.n());
}

EvalFn EvalFn::scalar(std::function<double(const ParamVec&)> value,
                      std::function<Eigen::VectorXd(const ParamVec&)> grad) {
    EvalFn psi;
    psi.components.push_back(std::move(value));
    if (grad)
        psi.gradient = [g = std::move(grad)](const ParamVec& theta, int) { return g(theta); };
    return psi;
}

void EvalFn::validate() const {
    if (components.empty()) throw InvalidArgumentError("EvalFn: no components");
    for (const auto& c : components)
        if (!c) throw InvalidArgumentError("EvalFn: empty component");
    if (static_cast<bool>(unit_form) != (eval_set != nullptr))
        throw InvalidArgumentError("EvalFn: unit form and evaluation set must come together");
    if (has_unit_form()) {
        if (arity() != 1) throw InvalidArgumentError("EvalFn: unit form requires a single component");
        if (eval_set->n() < 1) throw InvalidArgumentError("EvalFn: empty evaluation set");
    }
}

namespace {

// Regularized fit with an arbitrary-sign weight on psi; backs both the
// public fit_regularized (weight >= 0) and the central-difference path.
FitResult fit_with_weight(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                          double weight, const FitResult& warm, const OptimizerConfig& config,
                          int component) {
    if (weight == 0.0) return warm;

    OptimizerConfig cfg = config;
    if (cfg.refit_rate > 0.0) cfg.rate = cfg.refit_rate;
    if (cfg.refit_max_iters > 0) cfg.max_iters = cfg.refit_max_iters;

    try {
        if (cfg.method == OptimizerConfig::Method::NelderMead || !psi.has_gradient()) {
            Objective obj = [&](const ParamVec& th) {
                return log_likelihood(model, th, data) + weight * psi.value(th, component);
            };
            return nelder_mead(obj, warm.theta, cfg);
        }
        if (cfg.method == OptimizerConfig::Method::AdaptiveStochastic) {
            BatchObjective bob = [&](const ParamVec& th, const std::vector<Eigen::Index>& batch,
                                     Eigen::VectorXd& g) {
                const Dataset sub = data.select(batch);
                const double scale =
                    static_cast<double>(data.n()) / static_cast<double>(batch.size());
                g = scale * grad_log_likelihood(model, th, sub) +
                    weight * psi.grad(th, component);
                return scale * log_likelihood(model, th, sub) +
                       weight * psi.value(th, component);
            };
            return maximize_stochastic(bob, data.n(), warm.theta, cfg);
        }
        Objective obj = [&](const ParamVec& th) {
            return log_likelihood(model, th, data) + weight * psi.value(th, component);
        };
        Gradient grad = [&](const ParamVec& th) {
            return (grad_log_likelihood(model, th, data) + weight * psi.grad(th, component))
                .eval();
        };
        return maximize(obj, grad, warm.theta, cfg);
    } catch (const NumericError& e) {
        throw NumericError("regularized fit (weight=" + std::to_string(weight) + ", component=" +
                           std::to_string(component) + ") failed: " + e.what());
    }
}

// Shared forward/central finite-difference core.  `weight` is the
// regularizer multiplier in the objective (lambda, or sigma2 * lambda for
// the SSE rescaling); `lambda` is the divisor of the psi difference.
VarEstimate fdidm_core(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                       double lambda, double weight, const FitResult& warm,
                       const OptimizerConfig& config, bool central) {
    VarEstimate v;
    v.central_diff = central;
    if (!central) {
        const FitResult reg = fit_with_weight(model, data, psi, weight, warm, config, 0);
        v.psi_base = psi.value(warm.theta, 0);
        v.psi_reg = psi.value(reg.theta, 0);
        v.lambda_used = lambda;
        v.fit_iterations = reg.iterations;
        v.displacement = (reg.theta - warm.theta).norm();
    } else {
        const FitResult pos = fit_with_weight(model, data, psi, weight, warm, config, 0);
        const FitResult neg = fit_with_weight(model, data, psi, -weight, warm, config, 0);
        v.psi_base = psi.value(neg.theta, 0);
        v.psi_reg = psi.value(pos.theta, 0);
        v.lambda_used = 2.0 * lambda;
        v.fit_iterations = pos.iterations + neg.iterations;
        v.displacement = (pos.theta - warm.theta).norm();
    }
    v.value = (v.psi_reg - v.psi_base) / v.lambda_used;
    v.raw_negative = v.value < 0.0;
    return v;
}

void check_fdidm_args(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                      double lambda, const FitResult& warm, bool univariate) {
    model.validate();
    data.validate();
    psi.validate();
    if (univariate && psi.arity() != 1)
        throw InvalidArgumentError("fdidm: expected a single-component evaluation");
    if (!(lambda > 0.0)) throw InvalidArgumentError("fdidm: lambda must be > 0");
    if (warm.theta.size() != model.param_count(data.feature_dim()))
        throw InvalidArgumentError("fdidm: warm fit has wrong parameter dimension");
}

}  // namespace

FitResult fit_mle(const LikelihoodModel& model, const Dataset& data, const ParamVec& init,
                  const OptimizerConfig& config) {
    model.validate();
    data.validate();
    config.validate();
    if (init.size() != model.param_count(data.feature_dim()))
        throw InvalidArgumentError("fit_mle: init has wrong parameter dimension");

    Objective obj = [&](const ParamVec& th) { return log_likelihood(model, th, data); };
    switch (config.method) {
        case OptimizerConfig::Method::NelderMead:
            return nelder_mead(obj, init, config);
        case OptimizerConfig::Method::AdaptiveStochastic: {
            BatchObjective bob = [&](const ParamVec& th, const std::vector<Eigen::Index>& batch,
                                     Eigen::VectorXd& g) {
                const Dataset sub = data.select(batch);
                const double scale =
                    static_cast<double>(data.n()) / static_cast<double>(batch.size());
                g = scale * grad_log_likelihood(model, th, sub);
                return scale * log_likelihood(model, th, sub);
            };
            return maximize_stochastic(bob, data.n(), init, config);
        }
        case OptimizerConfig::Method::FullGradient:
            break;
    }
    Gradient grad = [&](const ParamVec& th) { return grad_log_likelihood(model, th, data); };
    return maximize(obj, grad, init, config);
}

FitResult fit_regularized(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                          double lambda, const FitResult& warm, const OptimizerConfig& config,
                          int component) {
    model.validate();
    data.validate();
    psi.validate();
    config.validate();
    if (component < 0 || component >= psi.arity())
        throw InvalidArgumentError("fit_regularized: component out of range");
    if (lambda < 0.0) throw InvalidArgumentError("fit_regularized: lambda must be >= 0");
    if (warm.theta.size() != model.param_count(data.feature_dim()))
        throw InvalidArgumentError("fit_regularized: warm fit has wrong parameter dimension");
    return fit_with_weight(model, data, psi, lambda, warm, config, component);
}

VarEstimate fdidm(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                  double lambda, const FitResult& warm, const OptimizerConfig& config,
                  bool central) {
    if (model.family.name == Family::Name::GaussianSse)
        throw WrongFamilyError(
            "fdidm: the gaussian_sse objective is not on the likelihood scale; use fdidm_sse");
    check_fdidm_args(model, data, psi, lambda, warm, true);
    return fdidm_core(model, data, psi, lambda, lambda, warm, config, central);
}

VarEstimate fdidm_sse(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                      double lambda, const FitResult& warm, const OptimizerConfig& config,
                      bool central) {
    if (model.family.name != Family::Name::GaussianSse)
        throw WrongFamilyError("fdidm_sse: model family is not gaussian_sse");
    check_fdidm_args(model, data, psi, lambda, warm, true);
    const double s2 = sigma2_hat(model, warm.theta, data);
    if (!(s2 > 0.0))
        throw DegenerateFitError("fdidm_sse: zero residual variance at the base fit");
    // Regularize -1/2 SSE by sigma2 * lambda * psi; dividing the psi
    // difference by lambda then lands on the likelihood-scale variance.
    return fdidm_core(model, data, psi, lambda, s2 * lambda, warm, config, central);
}

CovMatrix mv_fdidm(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                   double lambda, const FitResult& warm, const OptimizerConfig& config) {
    if (model.family.name == Family::Name::GaussianSse)
        throw WrongFamilyError(
            "mv_fdidm: gaussian_sse is not supported; refit as gaussian_known_var(sigma2_hat)");
    check_fdidm_args(model, data, psi, lambda, warm, false);
    const int K = psi.arity();

    std::vector<FitResult> fits(static_cast<size_t>(K));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(K));
#pragma omp parallel for schedule(static)
    for (int j = 0; j < K; ++j) {
        try {
            fits[static_cast<size_t>(j)] =
                fit_with_weight(model, data, psi, lambda, warm, config, j);
        } catch (...) {
            errors[static_cast<size_t>(j)] = std::current_exception();
        }
    }
    for (int j = 0; j < K; ++j) {
        if (!errors[static_cast<size_t>(j)]) continue;
        try {
            std::rethrow_exception(errors[static_cast<size_t>(j)]);
        } catch (const std::exception& e) {
            throw NumericError("mv_fdidm: component " + std::to_string(j) +
                               " fit failed: " + e.what());
        }
    }

    Eigen::VectorXd psi_base(K);
    for (int i = 0; i < K; ++i) psi_base(i) = psi.value(warm.theta, i);

    CovMatrix cm;
    cm.raw.resize(K, K);
    for (int j = 0; j < K; ++j)
        for (int i = 0; i < K; ++i)
            cm.raw(i, j) =
                (psi.value(fits[static_cast<size_t>(j)].theta, i) - psi_base(i)) / lambda;
    cm.projected = psd_project(0.5 * (cm.raw + cm.raw.transpose()));
    cm.symmetrized = true;
    cm.psd_projected = true;
    cm.fit_count = K;
    return cm;
}

Interval sg_fdidm(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                  double lambda, int S, double beta, const OptimizerConfig& config) {
    model.validate();
    data.validate();
    psi.validate();
    config.validate();
    if (psi.arity() != 1) throw InvalidArgumentError("sg_fdidm: expected a scalar evaluation");
    if (!psi.has_gradient())
        throw InvalidArgumentError("sg_fdidm: the stochastic path needs a psi gradient");
    if (!(lambda > 0.0)) throw InvalidArgumentError("sg_fdidm: lambda must be > 0");
    if (S < 1) throw InvalidArgumentError("sg_fdidm: S must be >= 1");
    if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgumentError("sg_fdidm: beta outside (0,1)");
    if (config.method != OptimizerConfig::Method::AdaptiveStochastic)
        throw InvalidArgumentError("sg_fdidm: config.method must be adaptive_stochastic");
    const Eigen::Index n = data.n();
    if (config.minibatch_size > n)
        throw InvalidArgumentError("sg_fdidm: minibatch_size exceeds n");

    const Eigen::Index d = model.param_count(data.feature_dim());

    // random initialization (independent of the predictor's usual init)
    SplitMix64 init_rng(derive_seed(config.seed, 0));
    ParamVec theta(d);
    for (Eigen::Index j = 0; j < d; ++j) theta(j) = init_rng.uniform(-0.1, 0.1);

    // one shuffle; blocks cycle through all four phases below
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    SplitMix64 shuffle_rng(derive_seed(config.seed, 1));
    for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(
                      shuffle_rng.next_below(static_cast<uint64_t>(i + 1)))]);

    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);  // RMS accumulator, shared across phases
    Eigen::VectorXd g(d);
    size_t pos = 0;
    int step_index = 0;  // schedule index i, carried across phases
    std::vector<Eigen::Index> batch;

    auto step = [&](double lam) {
        const size_t take =
            std::min<size_t>(static_cast<size_t>(config.minibatch_size), order.size() - pos);
        batch.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + take));
        pos += take;
        if (pos >= order.size()) pos = 0;

        const Dataset sub = data.select(batch);
        const double scale = static_cast<double>(n) / static_cast<double>(batch.size());
        g = scale * grad_log_likelihood(model, theta, sub);
        double f = scale * log_likelihood(model, theta, sub);
        if (lam != 0.0) {
            g += lam * psi.grad(theta, 0);
            f += lam * psi.value(theta, 0);
        }
        if (!std::isfinite(f) || !g.allFinite())
            throw NumericError("sg_fdidm: non-finite objective/gradient at step " +
                               std::to_string(step_index));

        const double eta = config.rate / (1.0 + config.rate_decay * step_index);
        if (config.adaptive) {
            v = config.adaptive_decay * v +
                (1.0 - config.adaptive_decay) * g.array().square().matrix();
            theta += eta * (g.array() / (v.array() + config.adaptive_eps).sqrt()).matrix();
        } else {
            theta += eta * g;
        }
        ++step_index;
        return f;
    };

    auto run_to_convergence = [&](double lam) {
        double window_sum = 0.0;
        int window_count = 0;
        double prev_mean = std::numeric_limits<double>::quiet_NaN();
        for (int t = 0; t < config.max_iters; ++t) {
            window_sum += step(lam);
            if (++window_count < config.window) continue;
            const double mean = window_sum / config.window;
            if (!std::isnan(prev_mean) &&
                std::abs(mean - prev_mean) < config.window_tol * (1.0 + std::abs(prev_mean)))
                return;
            prev_mean = mean;
            window_sum = 0.0;
            window_count = 0;
        }
    };

    auto collect = [&](double lam) {
        double acc = 0.0;
        for (int s = 0; s < S; ++s) {
            acc += psi.value(theta, 0);
            step(lam);
        }
        return acc / S;
    };

    run_to_convergence(0.0);
    const double psi_bar_0 = collect(0.0);
    run_to_convergence(lambda);
    const double psi_bar_lambda = collect(lambda);

    const double variance = (psi_bar_lambda - psi_bar_0) / lambda;
    Interval iv;
    iv.center = psi_bar_0;
    iv.beta = beta;
    iv.raw_negative = variance < 0.0;
    const double half =
        normal_quantile(0.5 * (1.0 + beta)) * std::sqrt(std::max(variance, 0.0));
    iv.lower = iv.center - half;
    iv.upper = iv.center + half;
    return iv;
}

Interval confidence_interval(double psi_hat, const VarEstimate& v, double beta) {
    if (!(beta > 0.0 && beta < 1.0))
        throw InvalidArgumentError("confidence_interval: beta outside (0,1)");
    Interval iv;
    iv.center = psi_hat;
    iv.beta = beta;
    iv.raw_negative = v.value < 0.0;
    const double half = normal_quantile(0.5 * (1.0 + beta)) * std::sqrt(v.clamped());
    iv.lower = psi_hat - half;
    iv.upper = psi_hat + half;
    return iv;
}

Eigen::MatrixXd fisher_inverse_idm(const LikelihoodModel& model, const Dataset& data,
                                   const FitResult& warm, double lambda,
                                   const OptimizerConfig& config, Eigen::Index dim_cap) {
    model.validate();
    data.validate();
    if (model.family.name == Family::Name::GaussianSse)
        throw WrongFamilyError(
            "fisher_inverse_idm: gaussian_sse is not on the likelihood scale; refit as "
            "gaussian_known_var(sigma2_hat)");
    if (!(lambda > 0.0)) throw InvalidArgumentError("fisher_inverse_idm: lambda must be > 0");
    const Eigen::Index d = model.param_count(data.feature_dim());
    if (warm.theta.size() != d)
        throw InvalidArgumentError("fisher_inverse_idm: warm fit has wrong parameter dimension");
    if (d > dim_cap)
        throw CapabilityError("fisher_inverse_idm: dimension " + std::to_string(d) +
                              " exceeds cap " + std::to_string(dim_cap));

    // coordinate evaluations psi_i(theta) = theta_i
    EvalFn coords;
    for (Eigen::Index i = 0; i < d; ++i)
        coords.components.push_back(
            [i](const ParamVec& th) { return th(static_cast<Eigen::Index>(i)); });
    coords.gradient = [d](const ParamVec&, int k) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
        g(k) = 1.0;
        return g;
    };

    std::vector<FitResult> fits(static_cast<size_t>(d));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(d));
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < d; ++i) {
        try {
            fits[static_cast<size_t>(i)] = fit_with_weight(model, data, coords, lambda, warm,
                                                           config, static_cast<int>(i));
        } catch (...) {
            errors[static_cast<size_t>(i)] = std::current_exception();
        }
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        if (!errors[static_cast<size_t>(i)]) continue;
        try {
            std::rethrow_exception(errors[static_cast<size_t>(i)]);
        } catch (const std::exception& e) {
            throw NumericError("fisher_inverse_idm: coordinate " + std::to_string(i) +
                               " fit failed: " + e.what());
        }
    }

    Eigen::MatrixXd m(d, d);
    const double scale = static_cast<double>(data.n()) / lambda;
    for (Eigen::Index i = 0; i < d; ++i)
        m.col(i) = scale * (fits[static_cast<size_t>(i)].theta - warm.theta);
    return 0.5 * (m + m.transpose());
}

double eval_set_variance(const EvalFn& psi, const ParamVec& theta) {
    psi.validate();
    if (!psi.has_unit_form())
        throw InvalidArgumentError("eval_set_variance: evaluation has no unit form");
    const Dataset& ev = *psi.eval_set;
    const Eigen::Index m = ev.n();
    if (m < 2) throw InvalidArgumentError("eval_set_variance: evaluation set needs m >= 2");

    Eigen::VectorXd h(m);
    Eigen::VectorXd xj(ev.feature_dim());
    for (Eigen::Index j = 0; j < m; ++j) {
        xj = ev.x.row(j).transpose();
        h(j) = psi.unit_form(xj, ev.y(j), theta);
    }
    const double mean = h.mean();
    return (h.array() - mean).square().sum() /
           (static_cast<double>(m - 1) * static_cast<double>(m));
}

double combined_variance(double var_fdidm, double var_eval_set, bool independent) {
    if (var_fdidm < 0.0 || var_eval_set < 0.0)
        throw InvalidArgumentError("combined_variance: inputs must be nonnegative");
    if (independent) return var_fdidm + var_eval_set;
    const double s = std::sqrt(var_fdidm) + std::sqrt(var_eval_set);
    return s * s;
}

double default_lambda(double objective_value_at_mle) {
    if (!std::isfinite(objective_value_at_mle))
        throw InvalidArgumentError("default_lambda: non-finite objective");
    return std::max(0.01 * std::abs(objective_value_at_mle), 1e-3);
}

double likelihood_scale_objective(const LikelihoodModel& model, const ParamVec& theta,
                                  const Dataset& data) {
    if (model.family.name != Family::Name::GaussianSse)
        return log_likelihood(model, theta, data);
    const double s2 = sigma2_hat(model, theta, data);
    if (!(s2 > 0.0))
        throw DegenerateFitError("likelihood_scale_objective: zero residual variance");
    const double n = static_cast<double>(data.n());
    // Gaussian log likelihood profiled at sigma2_hat
    return -0.5 * n * (std::log(2.0 * M_PI * s2) + 1.0);
}

}  // namespace idm
