#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "idm/dataset.hpp"
#include "idm/model.hpp"
#include "idm/optim.hpp"

namespace idm {

/// A K-component evaluation psi(theta) of a fitted model.
///
/// `gradient`, when present, enables gradient-based regularized fits;
/// without it the regularized fits fall back to Nelder-Mead.  When the
/// evaluation is an empirical average over an evaluation set, `unit_form`
/// holds the per-unit map h(w; theta) and `eval_set` the units w_j; the
/// scalar component is then exactly the mean of the unit values.
struct EvalFn {
    std::vector<std::function<double(const ParamVec&)>> components;

    /// Gradient of component k at theta; empty std::function if absent.
    std::function<Eigen::VectorXd(const ParamVec&, int)> gradient;

    /// Per-unit evaluation h((x, y); theta) over eval_set (K = 1 only).
    std::function<double(const Eigen::VectorXd&, double, const ParamVec&)> unit_form;
    std::shared_ptr<const Dataset> eval_set;

    int arity() const { return static_cast<int>(components.size()); }
    bool has_gradient() const { return static_cast<bool>(gradient); }
    bool has_unit_form() const { return static_cast<bool>(unit_form) && eval_set != nullptr; }

    double value(const ParamVec& theta, int k = 0) const { return components.at(k)(theta); }
    Eigen::VectorXd grad(const ParamVec& theta, int k = 0) const { return gradient(theta, k); }

    /// (1/m) sum_j h(w_j; theta) over the evaluation set.
    double mean_unit(const ParamVec& theta) const;

    /// Scalar evaluation from a value function and optional gradient.
    static EvalFn scalar(std::function<double(const ParamVec&)> value,
                         std::function<Eigen::VectorXd(const ParamVec&)> grad = nullptr);

    void validate() const;  // K >= 1; unit_form implies K = 1 and nonempty eval_set
};

/// One-sided (or central) finite-difference variance estimate of psi(theta_hat).
///
/// In the default forward mode, value = (psi_reg - psi_base) / lambda_used
/// exactly; in central mode psi_base/psi_reg are the evaluations at the
/// -lambda and +lambda fits and lambda_used = 2 lambda.  A negative value
/// means the paired optima were inexact: it is preserved raw here, flagged,
/// and clamped to zero only where a variance is consumed (intervals).
struct VarEstimate {
    double value = 0.0;
    double lambda_used = 0.0;
    double psi_base = 0.0;
    double psi_reg = 0.0;
    bool central_diff = false;
    bool raw_negative = false;

    // fit diagnostics
    int fit_iterations = 0;     // regularized fit (sum over both in central mode)
    double displacement = 0.0;  // ||theta_hat(lambda) - theta_hat||

    double clamped() const { return value > 0.0 ? value : 0.0; }
};

/// K x K covariance estimate: the raw finite-difference matrix plus its
/// symmetrized, PSD-projected form for interval/ellipse construction.
struct CovMatrix {
    Eigen::MatrixXd raw;
    Eigen::MatrixXd projected;
    bool symmetrized = false;
    bool psd_projected = false;
    int fit_count = 0;  // regularized fits performed (base fit excluded)
};

/// Two-sided confidence interval, symmetric about its center.
struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    double center = 0.0;
    double beta = 0.0;
    bool raw_negative = false;  // variance estimate was negative; width clamped to 0

    double width() const { return upper - lower; }
    bool contains(double v) const { return lower <= v && v <= upper; }
};

/// Plain MLE fit from `init`, dispatching on the configured method
/// (full-batch gradient, stochastic, or Nelder-Mead).
FitResult fit_mle(const LikelihoodModel& model, const Dataset& data, const ParamVec& init,
                  const OptimizerConfig& config);

/// Maximize sum_i log f(z_i; theta) + lambda * psi_k(theta), warm-started
/// at the MLE.  Uses the configured gradient method when psi carries a
/// gradient, Nelder-Mead otherwise (or when configured explicitly).
/// lambda = 0 returns `warm` unchanged.
FitResult fit_regularized(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                          double lambda, const FitResult& warm, const OptimizerConfig& config,
                          int component = 0);

/// Finite-difference variance of psi(theta_hat) from one regularized refit:
/// (psi(theta_hat(lambda)) - psi(theta_hat)) / lambda.  `central` spends a
/// second fit at -lambda and divides the spread by 2 lambda.  Refuses the
/// gaussian_sse family, whose objective is not on the likelihood scale
/// (use fdidm_sse).
VarEstimate fdidm(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                  double lambda, const FitResult& warm, const OptimizerConfig& config,
                  bool central = false);

/// fdidm for the gaussian_sse family: regularizes -1/2 SSE by
/// sigma2_hat * lambda * psi so the finite difference lands back on the
/// likelihood scale.  Errors when the residual variance is zero.
VarEstimate fdidm_sse(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                      double lambda, const FitResult& warm, const OptimizerConfig& config,
                      bool central = false);

/// K x K finite-difference covariance from exactly K regularized fits:
/// raw entry (i, j) = (psi_i(theta_hat(lambda; psi_j)) - psi_i(theta_hat)) / lambda,
/// then symmetrized and PSD-projected.  Component fits are independent and
/// may run in parallel; output ordering is by component index.
CovMatrix mv_fdidm(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                   double lambda, const FitResult& warm, const OptimizerConfig& config);

/// Single-pass stochastic-gradient pipeline: random init, stochastic
/// ascent on the likelihood to convergence, S psi-samples interleaved
/// with further steps, the same for the lambda-regularized objective,
/// then the interval
///   mean(psi_0) +/- z_beta * sqrt((mean(psi_lambda) - mean(psi_0)) / lambda).
/// A negative averaged difference clamps the width to zero and flags it.
Interval sg_fdidm(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                  double lambda, int S, double beta, const OptimizerConfig& config);

/// [psi_hat +/- z * sqrt(max(V, 0))] with z = Phi^{-1}((1 + beta) / 2).
Interval confidence_interval(double psi_hat, const VarEstimate& v, double beta);

/// Estimate of the inverse Fisher information at theta_hat, column i being
/// n * (theta_hat(lambda; psi = theta_i) - theta_hat) / lambda; symmetrized.
/// One regularized fit per coordinate, so capped at `dim_cap` parameters.
Eigen::MatrixXd fisher_inverse_idm(const LikelihoodModel& model, const Dataset& data,
                                   const FitResult& warm, double lambda,
                                   const OptimizerConfig& config, Eigen::Index dim_cap = 50);

/// Variance of the empirical evaluation mean due to the finite evaluation
/// set: (1 / ((m - 1) m)) sum_j (h(w_j; theta) - mean_h)^2.
double eval_set_variance(const EvalFn& psi, const ParamVec& theta);

/// Total variance of the empirical evaluation: the sum when training and
/// evaluation sets are independent, else the conservative bound
/// (sqrt(a) + sqrt(b))^2.
double combined_variance(double var_fdidm, double var_eval_set, bool independent);

/// Default regularization weight: 1% of |objective at the MLE|, floored at
/// 1e-3.  Pass a likelihood-scale objective (see likelihood_scale_objective).
double default_lambda(double objective_value_at_mle);

/// The training objective on the likelihood scale, for the default-lambda
/// heuristic: plain log_likelihood for proper families; for gaussian_sse,
/// the Gaussian log-likelihood profiled at sigma2_hat(theta).
double likelihood_scale_objective(const LikelihoodModel& model, const ParamVec& theta,
                                  const Dataset& data);

}  // namespace idm
