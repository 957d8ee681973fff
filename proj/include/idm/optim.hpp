#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "idm/dataset.hpp"
#include "idm/model.hpp"
#include "json.hpp"

namespace idm {

using Objective = std::function<double(const ParamVec&)>;
using Gradient = std::function<Eigen::VectorXd(const ParamVec&)>;

/// Objective + gradient over a minibatch of row indices, scaled to
/// estimate the full-data sum (i.e. multiplied by n / batch size).
using BatchObjective =
    std::function<double(const ParamVec&, const std::vector<Eigen::Index>&, Eigen::VectorXd&)>;

struct OptimizerConfig {
    enum class Method { FullGradient, AdaptiveStochastic, NelderMead };
    Method method = Method::FullGradient;

    double rate = 0.01;        // initial learning rate
    double rate_decay = 0.0;   // eta_t = rate / (1 + rate_decay * t)
    int max_iters = 100000;
    // Gradient methods converge when ||g|| <= tol * (1 + |objective|);
    // Nelder-Mead when the simplex diameter drops below tol.
    double tol = 1e-6;
    int minibatch_size = 128;  // adaptive_stochastic only
    uint64_t seed = 0;

    // Overrides for the perturbed refits in implicit differencing; the
    // warm start usually needs far fewer steps (or a smaller rate) than
    // the base fit.  Zero inherits the base value.
    double refit_rate = 0.0;
    int refit_max_iters = 0;

    // Halving line search wrapped around full_gradient steps.  Off
    // reproduces a plain constant-rate trajectory.
    bool line_search = true;
    int max_halvings = 30;

    // RMS-of-gradients per-coordinate scaling for the stochastic method.
    // Off gives plain stochastic ascent (with minibatch_size = n and a
    // constant rate this reproduces the full-gradient trajectory).
    bool adaptive = true;
    double adaptive_decay = 0.9;
    double adaptive_eps = 1e-8;

    // Convergence window for the stochastic method: relative change of the
    // mean objective over two consecutive windows below window_tol.
    int window = 50;
    double window_tol = 1e-5;

    int nelder_mead_dim_cap = 50;

    void validate() const;
};

OptimizerConfig optimizer_from_json(const nlohmann::json& j);
nlohmann::json optimizer_to_json(const OptimizerConfig& cfg);

struct FitResult {
    ParamVec theta;
    double objective_value = 0.0;
    int iterations = 0;
    bool converged = false;
    double grad_norm_final = std::numeric_limits<double>::quiet_NaN();
};

/// Full-batch gradient ascent with optional halving line search.
/// Steps are accepted only when the objective does not decrease, so
/// accepted iterates are monotone; 30 failed halvings end the run.
FitResult maximize(const Objective& objective, const Gradient& gradient, const ParamVec& init,
                   const OptimizerConfig& config);

/// Minibatch stochastic gradient ascent (RMS-scaled by default), cycling
/// blocks of a seeded shuffle of [0, n).  Convergence is judged on the
/// trailing-window objective change.
FitResult maximize_stochastic(const BatchObjective& objective_batch, Eigen::Index n,
                              const ParamVec& init, const OptimizerConfig& config);

/// Gradient-free Nelder-Mead simplex ascent (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5).  Initial simplex spans per-coordinate
/// steps of 0.05 * (1 + |theta_j|); ordering ties break by vertex index.
FitResult nelder_mead(const Objective& objective, const ParamVec& init,
                      const OptimizerConfig& config);

}  // namespace idm
