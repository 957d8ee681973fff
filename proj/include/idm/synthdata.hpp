#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "idm/dataset.hpp"
#include "idm/fdidm.hpp"
#include "idm/model.hpp"
#include "json.hpp"

namespace idm {

/// A seeded synthetic data-generating process.
///
/// quadratic: x ~ N(0,1), y = 0.1 x^2 - 0.5 x + 5 + 0.1 eps.
/// sin: x evenly spaced over [-1.5, -0.7) and [0.35, 1.15) (half each;
///   the gap in between never receives points), y = -sin(3x - 0.3) + 0.1 eps.
/// logistic_class: x ~ N(0, I), y ~ Bernoulli(sigmoid(theta0^T [1; x])).
/// newsvendor: x ~ Uniform(0, 2), demand | x ~ N(2 + x, 0.5^2) truncated
///   at 0 (inverse-CDF sampling, so the truncation costs no extra draws).
struct DGPSpec {
    enum class Kind { Quadratic, Sin, LogisticClass, Newsvendor };
    Kind kind = Kind::Quadratic;
    Eigen::Index n = 25;
    double noise_sd = 0.1;            // quadratic / sin observation noise
    bool quadratic_features = false;  // quadratic: emit (x, x^2) feature columns
    bool drop_features = false;       // quadratic: emit no feature columns (marginal-mean tasks)
    Eigen::VectorXd theta0;           // logistic_class coefficients, intercept first
    Eigen::Index eval_m = 0;          // newsvendor evaluation-set size; 0 means m = n
    uint64_t seed = 0;

    void validate() const;
};

DGPSpec dgp_from_json(const nlohmann::json& j);
nlohmann::json dgp_to_json(const DGPSpec& spec);

Dataset gen_quadratic(const DGPSpec& spec);
Dataset gen_sin(const DGPSpec& spec);
Dataset gen_logistic_class(const DGPSpec& spec);

/// Training data for any kind (the newsvendor training half; use
/// gen_newsvendor when the evaluation set is needed too).
Dataset generate(const DGPSpec& spec);

/// Newsvendor task: training pairs plus the average-unmet-demand
/// evaluation max{d - g_theta(x), 0} over a fresh evaluation set.
struct NewsvendorTask {
    Dataset train;
    EvalFn unmet_demand;
};
NewsvendorTask gen_newsvendor(const DGPSpec& spec, const LikelihoodModel& model);

/// True newsvendor parameters (demand mean is 2 + x, so the linear
/// order-quantity model is well-specified at (2, 1)).
ParamVec newsvendor_theta0();

/// E[y | x] (or P(y=1 | x) for logistic_class) under the DGP, for
/// coverage targets.  `x` is the raw scalar input for quadratic/sin and
/// the feature vector for logistic_class.
double dgp_true_mean(const DGPSpec& spec, const Eigen::VectorXd& x);

/// Feature vector the quadratic_features layout expects for raw input x.
Eigen::VectorXd quadratic_feature(double x);

/// Evaluation builders.  Point/grid predictions are on the family's mean
/// scale (identity for Gaussian, sigmoid for bernoulli_logit, exp for
/// poisson_log), so "prediction" means the predicted response, not the
/// link-scale output.
EvalFn make_point_prediction(const LikelihoodModel& model, const Eigen::VectorXd& x0);
EvalFn make_prediction_grid(const LikelihoodModel& model, const std::vector<Eigen::VectorXd>& points);
EvalFn make_holdout_avg_cross_entropy(const LikelihoodModel& model, Dataset eval_set);
EvalFn make_avg_unmet_demand(const LikelihoodModel& model, Dataset eval_set);

/// JSON-driven dispatch over the builders above.
/// Schema: {"kind": "...", "x0": [...], "points": [[...], ...]} with
/// holdout kinds taking their evaluation set from the caller.
EvalFn make_eval_fn(const nlohmann::json& j, const LikelihoodModel& model,
                    const Dataset* eval_set = nullptr);

/// Disjoint seeded split into (train, eval) with |eval| = ceil(fraction * n).
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, uint64_t seed);

}  // namespace idm
