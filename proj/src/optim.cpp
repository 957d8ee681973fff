#include "idm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "idm/errors.hpp"
#include "idm/rng.hpp"

namespace idm {

void OptimizerConfig::validate() const {
    if (!(rate > 0.0)) throw InvalidArgumentError("OptimizerConfig: rate must be > 0");
    if (max_iters < 1) throw InvalidArgumentError("OptimizerConfig: max_iters must be >= 1");
    if (!(tol > 0.0)) throw InvalidArgumentError("OptimizerConfig: tol must be > 0");
    if (method == Method::AdaptiveStochastic && minibatch_size < 1)
        throw InvalidArgumentError("OptimizerConfig: minibatch_size must be >= 1");
    if (refit_rate < 0.0) throw InvalidArgumentError("OptimizerConfig: refit_rate must be >= 0");
    if (refit_max_iters < 0)
        throw InvalidArgumentError("OptimizerConfig: refit_max_iters must be >= 0");
}

namespace {

double schedule_rate(const OptimizerConfig& cfg, int t) {
    return cfg.rate / (1.0 + cfg.rate_decay * static_cast<double>(t));
}

}  // namespace

FitResult maximize(const Objective& objective, const Gradient& gradient, const ParamVec& init,
                   const OptimizerConfig& config) {
    config.validate();
    if (!init.allFinite()) throw InvalidArgumentError("maximize: non-finite init");

    FitResult res;
    res.theta = init;
    double f = objective(res.theta);
    if (!std::isfinite(f)) throw NumericError("maximize: objective non-finite at init");

    ParamVec cand(init.size());
    for (int t = 0; t < config.max_iters; ++t) {
        const Eigen::VectorXd g = gradient(res.theta);
        if (!g.allFinite()) throw NumericError("maximize: non-finite gradient at iteration " +
                                               std::to_string(t));
        const double gnorm = g.norm();
        if (gnorm <= config.tol * (1.0 + std::abs(f))) {
            res.converged = true;
            res.grad_norm_final = gnorm;
            break;
        }

        const double eta = schedule_rate(config, t);
        bool accepted = false;
        if (config.line_search) {
            // Within a few ulps of f the objective cannot distinguish
            // candidates (summation rounding jitters the last bits), so
            // inside that band steps are judged by the gradient norm
            // instead: a tied step is accepted only when it strictly
            // shrinks the gradient, i.e. keeps contracting the iterate
            // rather than bouncing across the optimum inside the rounding
            // shell.  This is what lets theta converge well past the
            // objective's resolution.
            const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
            double alpha = 1.0;
            for (int h = 0; h <= config.max_halvings; ++h) {
                cand = res.theta + (alpha * eta) * g;
                const double fc = objective(cand);
                if (std::isfinite(fc) &&
                    (fc > f + slack ||
                     (fc >= f - slack && gradient(cand).norm() < gnorm))) {
                    res.theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        } else {
            cand = res.theta + eta * g;
            const double fc = objective(cand);
            if (!std::isfinite(fc))
                throw NumericError("maximize: objective became non-finite at iteration " +
                                   std::to_string(t) + " (last finite objective " +
                                   std::to_string(f) + ")");
            res.theta = cand;
            f = fc;
            accepted = true;
        }
        res.iterations = t + 1;
        if (!accepted) {
            // no step improves: at the numerical floor for this objective
            res.grad_norm_final = gnorm;
            break;
        }
    }

    if (std::isnan(res.grad_norm_final)) res.grad_norm_final = gradient(res.theta).norm();
    res.objective_value = f;
    return res;
}

FitResult maximize_stochastic(const BatchObjective& objective_batch, Eigen::Index n,
                              const ParamVec& init, const OptimizerConfig& config) {
    config.validate();
    if (config.minibatch_size > n)
        throw InvalidArgumentError("maximize_stochastic: minibatch_size exceeds n");
    if (!init.allFinite()) throw InvalidArgumentError("maximize_stochastic: non-finite init");

    // one seeded shuffle; blocks of size B are then cycled in order
    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    SplitMix64 rng(config.seed);
    for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);

    FitResult res;
    res.theta = init;
    Eigen::VectorXd g(init.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(init.size());  // RMS accumulator

    std::vector<Eigen::Index> batch;
    size_t pos = 0;
    double window_sum = 0.0;
    int window_count = 0;
    double prev_window_mean = std::numeric_limits<double>::quiet_NaN();
    double f = 0.0;

    for (int t = 0; t < config.max_iters; ++t) {
        const size_t take =
            std::min<size_t>(static_cast<size_t>(config.minibatch_size), order.size() - pos);
        batch.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + take));
        pos += take;
        if (pos >= order.size()) pos = 0;

        f = objective_batch(res.theta, batch, g);
        if (!std::isfinite(f) || !g.allFinite())
            throw NumericError("maximize_stochastic: non-finite objective/gradient at iteration " +
                               std::to_string(t));

        const double eta = schedule_rate(config, t);
        if (config.adaptive) {
            v = config.adaptive_decay * v +
                (1.0 - config.adaptive_decay) * g.array().square().matrix();
            res.theta += eta * (g.array() / (v.array() + config.adaptive_eps).sqrt()).matrix();
        } else {
            res.theta += eta * g;
        }
        res.iterations = t + 1;

        window_sum += f;
        if (++window_count == config.window) {
            const double mean = window_sum / config.window;
            if (!std::isnan(prev_window_mean) &&
                std::abs(mean - prev_window_mean) <
                    config.window_tol * (1.0 + std::abs(prev_window_mean))) {
                res.converged = true;
            }
            prev_window_mean = mean;
            window_sum = 0.0;
            window_count = 0;
            if (res.converged) break;
        }
    }

    res.objective_value = f;
    // gradient-norm convergence is a full-batch notion; not reported here
    res.grad_norm_final = std::numeric_limits<double>::quiet_NaN();
    return res;
}

FitResult nelder_mead(const Objective& objective, const ParamVec& init,
                      const OptimizerConfig& config) {
    config.validate();
    const Eigen::Index d = init.size();
    if (d > config.nelder_mead_dim_cap)
        throw CapabilityError("nelder_mead: dimension " + std::to_string(d) + " exceeds cap " +
                              std::to_string(config.nelder_mead_dim_cap));
    if (!init.allFinite()) throw InvalidArgumentError("nelder_mead: non-finite init");

    auto eval = [&](const ParamVec& x) {
        const double f = objective(x);
        return std::isfinite(f) ? f : -std::numeric_limits<double>::infinity();
    };

    const Eigen::Index m = d + 1;
    std::vector<ParamVec> vertex(static_cast<size_t>(m), init);
    std::vector<double> value(static_cast<size_t>(m));
    for (Eigen::Index j = 0; j < d; ++j)
        vertex[static_cast<size_t>(j + 1)](j) += 0.05 * (1.0 + std::abs(init(j)));
    for (Eigen::Index j = 0; j < m; ++j) value[static_cast<size_t>(j)] = eval(vertex[static_cast<size_t>(j)]);

    std::vector<size_t> idx(static_cast<size_t>(m));
    FitResult res;

    for (int t = 0; t < config.max_iters; ++t) {
        std::iota(idx.begin(), idx.end(), size_t{0});
        // descending by value; stable sort keeps vertex-index order on ties
        std::stable_sort(idx.begin(), idx.end(),
                         [&](size_t a, size_t b) { return value[a] > value[b]; });
        const size_t best = idx.front(), worst = idx.back(), second_worst = idx[idx.size() - 2];

        double diameter = 0.0;
        for (size_t j = 0; j < idx.size(); ++j)
            diameter = std::max(diameter, (vertex[idx[j]] - vertex[best]).norm());
        res.iterations = t;
        if (diameter < config.tol) {
            res.converged = true;
            break;
        }

        ParamVec centroid = ParamVec::Zero(d);
        for (size_t j = 0; j + 1 < idx.size(); ++j) centroid += vertex[idx[j]];
        centroid /= static_cast<double>(m - 1);

        const ParamVec reflected = centroid + (centroid - vertex[worst]);
        const double fr = eval(reflected);

        if (fr > value[best]) {
            const ParamVec expanded = centroid + 2.0 * (centroid - vertex[worst]);
            const double fe = eval(expanded);
            if (fe > fr) {
                vertex[worst] = expanded;
                value[worst] = fe;
            } else {
                vertex[worst] = reflected;
                value[worst] = fr;
            }
            continue;
        }
        if (fr > value[second_worst]) {
            vertex[worst] = reflected;
            value[worst] = fr;
            continue;
        }

        bool shrink = false;
        if (fr > value[worst]) {
            const ParamVec contracted = centroid + 0.5 * (centroid - vertex[worst]);
            const double fc = eval(contracted);
            if (fc >= fr) {
                vertex[worst] = contracted;
                value[worst] = fc;
            } else {
                shrink = true;
            }
        } else {
            const ParamVec contracted = centroid - 0.5 * (centroid - vertex[worst]);
            const double fc = eval(contracted);
            if (fc > value[worst]) {
                vertex[worst] = contracted;
                value[worst] = fc;
            } else {
                shrink = true;
            }
        }
        if (shrink) {
            for (size_t j = 1; j < idx.size(); ++j) {
                vertex[idx[j]] = vertex[best] + 0.5 * (vertex[idx[j]] - vertex[best]);
                value[idx[j]] = eval(vertex[idx[j]]);
            }
        }
    }

    size_t best = 0;
    for (size_t j = 1; j < value.size(); ++j)
        if (value[j] > value[best]) best = j;
    res.theta = vertex[best];
    res.objective_value = value[best];
    res.grad_norm_final = std::numeric_limits<double>::quiet_NaN();
    return res;
}

// ---------------------------------------------------------------------------
// JSON

OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
    OptimizerConfig cfg;
    if (j.contains("method")) {
        const std::string m = j["method"].get<std::string>();
        if (m == "full_gradient")
            cfg.method = OptimizerConfig::Method::FullGradient;
        else if (m == "adaptive_stochastic")
            cfg.method = OptimizerConfig::Method::AdaptiveStochastic;
        else if (m == "nelder_mead")
            cfg.method = OptimizerConfig::Method::NelderMead;
        else
            throw ConfigError("optimizer: unknown method '" + m + "'");
    }
    if (j.contains("rate")) cfg.rate = j["rate"].get<double>();
    if (j.contains("rate_decay")) cfg.rate_decay = j["rate_decay"].get<double>();
    if (j.contains("max_iters")) cfg.max_iters = j["max_iters"].get<int>();
    if (j.contains("tol")) cfg.tol = j["tol"].get<double>();
    if (j.contains("minibatch_size")) cfg.minibatch_size = j["minibatch_size"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("line_search")) cfg.line_search = j["line_search"].get<bool>();
    if (j.contains("adaptive")) cfg.adaptive = j["adaptive"].get<bool>();
    if (j.contains("window")) cfg.window = j["window"].get<int>();
    if (j.contains("window_tol")) cfg.window_tol = j["window_tol"].get<double>();
    if (j.contains("refit_rate")) cfg.refit_rate = j["refit_rate"].get<double>();
    if (j.contains("refit_max_iters")) cfg.refit_max_iters = j["refit_max_iters"].get<int>();
    cfg.validate();
    return cfg;
}

nlohmann::json optimizer_to_json(const OptimizerConfig& cfg) {
    nlohmann::json j;
    switch (cfg.method) {
        case OptimizerConfig::Method::FullGradient: j["method"] = "full_gradient"; break;
        case OptimizerConfig::Method::AdaptiveStochastic: j["method"] = "adaptive_stochastic"; break;
        case OptimizerConfig::Method::NelderMead: j["method"] = "nelder_mead"; break;
    }
    j["rate"] = cfg.rate;
    j["rate_decay"] = cfg.rate_decay;
    j["max_iters"] = cfg.max_iters;
    j["tol"] = cfg.tol;
    j["minibatch_size"] = cfg.minibatch_size;
    j["seed"] = cfg.seed;
    j["line_search"] = cfg.line_search;
    j["adaptive"] = cfg.adaptive;
    j["window"] = cfg.window;
    j["window_tol"] = cfg.window_tol;
    j["refit_rate"] = cfg.refit_rate;
    j["refit_max_iters"] = cfg.refit_max_iters;
    return j;
}

}  // namespace idm
