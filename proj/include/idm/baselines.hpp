#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "idm/dataset.hpp"
#include "idm/fdidm.hpp"
#include "idm/model.hpp"
#include "idm/optim.hpp"
#include "idm/synthdata.hpp"

namespace idm {

struct BootstrapConfig {
    int B = 50;
    uint64_t seed = 0;
    // Replicates warm-start from the full-data fit by default; cold starts
    // draw a fresh seeded init per replicate.  The mode is reported with
    // the result.
    bool warm_start = true;

    void validate() const;  // B >= 2
};

struct DGPOracleConfig {
    int replicates = 50;
    uint64_t seed = 0;

    void validate() const;  // replicates >= 2
};

/// Explicit delta method: J^T (-H)^{-1} J with H the full-data Hessian of
/// the log likelihood at theta_hat and J the psi Jacobian (gaussian_sse is
/// rescaled by sigma2_hat onto the likelihood scale).  Inversion is a
/// symmetric pseudo-inverse cutting eigenvalues below 1e-10 * lambda_max;
/// it errors only when some gradient of psi has mass above 1e-6 in the cut
/// subspace.
CovMatrix delta_method_variance(const LikelihoodModel& model, const Dataset& data,
                                const ParamVec& theta_hat, const EvalFn& psi,
                                Eigen::Index dim_cap = 10000);

/// Nonparametric bootstrap: resample rows with replacement B times
/// (independent per-replicate streams derived from the seed), refit, and
/// return the sample covariance of psi across replicates (denominator
/// B - 1).  Failed replicate fits are skipped; more than 10% failing is an
/// error.  fit_count records the B attempted refits.
CovMatrix bootstrap_variance(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                             const FitResult& warm, const OptimizerConfig& fit_config,
                             const BootstrapConfig& boot);

/// Ground-truth sampling oracle: draw fresh datasets of size dgp.n from
/// the DGP, cold-fit each, return the sample covariance of psi.  Only
/// valid for DGPs with a replicate-independent evaluation (not newsvendor).
CovMatrix true_sampling_variance(const DGPSpec& dgp, const LikelihoodModel& model,
                                 const EvalFn& psi, const OptimizerConfig& fit_config,
                                 const DGPOracleConfig& oracle);

/// Nearest-PSD reconstruction: symmetrize, eigendecompose, rebuild from
/// the strictly positive eigenpairs.  Idempotent.
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m);

}  // namespace idm
