#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "idm/dataset.hpp"
#include "json.hpp"

namespace idm {

using ParamVec = Eigen::VectorXd;

/// Architecture of the parametric predictor h_theta(x).
///
/// `linear` is the affine map h(x) = theta^T [1; x] per output; `mlp` is a
/// fully connected tanh network with a linear output layer.  Parameter
/// layout is pinned (see param_count) so that a ParamVec is portable
/// across runs.
struct PredictorSpec {
    enum class Kind { Linear, Mlp };
    Kind kind = Kind::Linear;
    std::vector<int> hidden;  // tanh widths, mlp only
    int output_dim = 1;

    /// Deterministic parameter count for feature dimension p_x.
    ///
    /// linear: output_dim blocks of [intercept, weights...].
    /// mlp: per layer, a row-major (out x in) weight matrix followed by the
    /// bias vector, layers in forward order.
    Eigen::Index param_count(Eigen::Index feature_dim) const;
};

/// Likelihood family g(y; h) paired with a predictor to give log f(z; theta).
struct Family {
    enum class Name {
        GaussianKnownVar,   // y | x ~ N(h, sigma2), sigma2 fixed
        GaussianSse,        // objective is -1/2 * SSE (see fdidm_sse for rescaling)
        BernoulliLogit,     // y in {0,1}, h is the logit
        CategoricalSoftmax, // y in [0,C), h is the C-vector of logits
        PoissonLog          // y a count, h is the log rate
    };
    Name name = Name::GaussianKnownVar;
    double sigma2 = 1.0;  // GaussianKnownVar only
    int n_classes = 2;    // CategoricalSoftmax only

    /// Predictor output dimension this family consumes.
    int output_dim() const { return name == Name::CategoricalSoftmax ? n_classes : 1; }
};

struct LikelihoodModel {
    PredictorSpec predictor;
    Family family;

    Eigen::Index param_count(Eigen::Index feature_dim) const {
        return predictor.param_count(feature_dim);
    }
    void validate() const;
};

/// JSON round-trip for model specs.
/// Schema: {"predictor": {"kind", "hidden", "output_dim"},
///          "family": {"name", "params": {...}}}
nlohmann::json model_to_json(const LikelihoodModel& model);
LikelihoodModel model_from_json(const nlohmann::json& j);

/// Sum_i log f(z_i; theta).  The unnormalized sum, not the mean; the
/// GaussianSse family returns -1/2 * SSE(theta).
double log_likelihood(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data);

/// Exact gradient of log_likelihood at theta (reverse-mode accumulation).
Eigen::VectorXd grad_log_likelihood(const LikelihoodModel& model, const ParamVec& theta,
                                    const Dataset& data);

/// Symmetric d x d Hessian of log_likelihood, formed by central
/// finite differences of the analytic gradient (step 1e-6 * (1 + |theta_j|)).
/// Intended for baseline use at small d; errors above `dim_cap`.
Eigen::MatrixXd hessian_log_likelihood(const LikelihoodModel& model, const ParamVec& theta,
                                       const Dataset& data, Eigen::Index dim_cap = 10000);

/// Forward pass h_theta(x).
Eigen::VectorXd predict(const LikelihoodModel& model, const ParamVec& theta,
                        const Eigen::VectorXd& x);

/// Gradient in theta of the k-th predictor output at x.
Eigen::VectorXd grad_predict(const LikelihoodModel& model, const ParamVec& theta,
                             const Eigen::VectorXd& x, int output = 0);

/// Residual variance estimate (1/n) * SSE(theta_hat) for the GaussianSse family.
double sigma2_hat(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data);

/// Seeded initial parameter vector: Uniform(-0.1, 0.1) for mlp, zeros for linear.
ParamVec init_params(const LikelihoodModel& model, Eigen::Index feature_dim, uint64_t seed);

namespace serial {

/// Reference implementations accumulating strictly in row order.
/// The production kernels above use a fixed-block reduction (parallel
/// across blocks, combined in block order); these stay as the plain
/// loops the tests and the benchmark compare against.
double log_likelihood(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data);
Eigen::VectorXd grad_log_likelihood(const LikelihoodModel& model, const ParamVec& theta,
                                    const Dataset& data);

}  // namespace serial

/// Rows per reduction block in the parallel kernels.  Fixed so results are
/// independent of thread count; datasets with n <= kReduceBlock reduce in
/// exact row order.
inline constexpr Eigen::Index kReduceBlock = 1024;

}  // namespace idm
