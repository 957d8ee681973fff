#include "idm/baselines.hpp"

#include <cmath>
#include <exception>
#include <string>
#include <vector>

#include "idm/errors.hpp"
#include "idm/rng.hpp"

namespace idm {

void BootstrapConfig::validate() const {
    if (B < 2) throw InvalidArgumentError("BootstrapConfig: B must be >= 2");
}

void DGPOracleConfig::validate() const {
    if (replicates < 2) throw InvalidArgumentError("DGPOracleConfig: replicates must be >= 2");
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw InvalidArgumentError("psd_project: matrix must be square");
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericError("psd_project: eigendecomposition failed");
    const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

// Sample covariance (denominator used - 1) over the successful replicate
// rows, accumulated in replicate order.
CovMatrix replicate_covariance(const Eigen::MatrixXd& psis, const std::vector<char>& ok,
                               int attempted, const char* who) {
    const int K = static_cast<int>(psis.cols());
    int used = 0;
    for (char o : ok) used += o;
    const int failed = attempted - used;
    if (failed * 10 > attempted)
        throw NumericError(std::string(who) + ": " + std::to_string(failed) + " of " +
                           std::to_string(attempted) + " replicate fits failed");
    if (used < 2)
        throw NumericError(std::string(who) + ": fewer than 2 successful replicates");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(K);
    for (int b = 0; b < attempted; ++b)
        if (ok[static_cast<size_t>(b)]) mean += psis.row(b).transpose();
    mean /= static_cast<double>(used);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(K, K);
    for (int b = 0; b < attempted; ++b) {
        if (!ok[static_cast<size_t>(b)]) continue;
        const Eigen::VectorXd dev = psis.row(b).transpose() - mean;
        cov += dev * dev.transpose();
    }
    cov /= static_cast<double>(used - 1);

    CovMatrix cm;
    cm.raw = cov;
    cm.projected = psd_project(cov);
    cm.symmetrized = true;
    cm.psd_projected = true;
    cm.fit_count = attempted;
    return cm;
}

}  // namespace

CovMatrix delta_method_variance(const LikelihoodModel& model, const Dataset& data,
                                const ParamVec& theta_hat, const EvalFn& psi,
                                Eigen::Index dim_cap) {
    model.validate();
    data.validate();
    psi.validate();
    if (!psi.has_gradient())
        throw InvalidArgumentError("delta_method_variance: psi must have a gradient");
    const Eigen::Index d = model.param_count(data.feature_dim());
    if (theta_hat.size() != d)
        throw InvalidArgumentError("delta_method_variance: theta_hat has wrong dimension");
    if (d > dim_cap)
        throw CapabilityError("delta_method_variance: dimension " + std::to_string(d) +
                              " exceeds cap " + std::to_string(dim_cap));

    double scale = 1.0;  // gaussian_sse Hessian is on the -1/2 SSE scale
    if (model.family.name == Family::Name::GaussianSse) {
        scale = sigma2_hat(model, theta_hat, data);
        if (!(scale > 0.0))
            throw DegenerateFitError("delta_method_variance: zero residual variance");
    }

    const Eigen::MatrixXd h = hessian_log_likelihood(model, theta_hat, data, dim_cap);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-h);
    if (es.info() != Eigen::Success)
        throw NumericError("delta_method_variance: eigendecomposition failed");
    const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
    const double emax = evals(d - 1);
    if (!(emax > 0.0))
        throw SingularityError("delta_method_variance: Fisher matrix not positive (max eigenvalue " +
                               std::to_string(emax) + ")");
    const double cutoff = 1e-10 * emax;

    const int K = psi.arity();
    Eigen::MatrixXd jac(d, K);
    for (int k = 0; k < K; ++k) jac.col(k) = psi.grad(theta_hat, k);

    // eigenbasis coordinates of each gradient; the pseudo-inverse only
    // trusts directions with curvature above the cutoff
    const Eigen::MatrixXd w = es.eigenvectors().transpose() * jac;
    for (int k = 0; k < K; ++k) {
        double cut_mass = 0.0;
        for (Eigen::Index i = 0; i < d; ++i)
            if (evals(i) <= cutoff) cut_mass += w(i, k) * w(i, k);
        if (std::sqrt(cut_mass) > 1e-6)
            throw SingularityError(
                "delta_method_variance: psi component " + std::to_string(k) +
                " has gradient mass " + std::to_string(std::sqrt(cut_mass)) +
                " in the near-null curvature subspace (min eigenvalue " +
                std::to_string(evals(0)) + ")");
    }

    Eigen::MatrixXd w_scaled = w;
    for (Eigen::Index i = 0; i < d; ++i)
        w_scaled.row(i) *= (evals(i) > cutoff) ? 1.0 / evals(i) : 0.0;

    CovMatrix cm;
    cm.raw = scale * (w.transpose() * w_scaled);
    cm.raw = 0.5 * (cm.raw + cm.raw.transpose()).eval();
    cm.projected = psd_project(cm.raw);
    cm.symmetrized = true;
    cm.psd_projected = true;
    cm.fit_count = 0;
    return cm;
}

CovMatrix bootstrap_variance(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                             const FitResult& warm, const OptimizerConfig& fit_config,
                             const BootstrapConfig& boot) {
    model.validate();
    data.validate();
    psi.validate();
    fit_config.validate();
    boot.validate();
    const Eigen::Index n = data.n();
    if (warm.theta.size() != model.param_count(data.feature_dim()))
        throw InvalidArgumentError("bootstrap_variance: warm fit has wrong parameter dimension");

    const int B = boot.B;
    const int K = psi.arity();
    Eigen::MatrixXd psis = Eigen::MatrixXd::Zero(B, K);
    std::vector<char> ok(static_cast<size_t>(B), 0);

#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < B; ++b) {
        try {
            SplitMix64 rng(derive_seed(boot.seed, 2 * static_cast<uint64_t>(b)));
            std::vector<Eigen::Index> rows(static_cast<size_t>(n));
            for (auto& r : rows)
                r = static_cast<Eigen::Index>(rng.next_below(static_cast<uint64_t>(n)));
            const Dataset resampled = data.select(rows);

            const ParamVec init =
                boot.warm_start
                    ? warm.theta
                    : init_params(model, data.feature_dim(),
                                  derive_seed(boot.seed, 2 * static_cast<uint64_t>(b) + 1));
            const FitResult fit = fit_mle(model, resampled, init, fit_config);
            if (!fit.converged) continue;
            for (int k = 0; k < K; ++k) psis(b, k) = psi.value(fit.theta, k);
            ok[static_cast<size_t>(b)] = 1;
        } catch (const std::exception&) {
            // failed replicate; counted below
        }
    }

    return replicate_covariance(psis, ok, B, "bootstrap_variance");
}

CovMatrix true_sampling_variance(const DGPSpec& dgp, const LikelihoodModel& model,
                                 const EvalFn& psi, const OptimizerConfig& fit_config,
                                 const DGPOracleConfig& oracle) {
    dgp.validate();
    model.validate();
    psi.validate();
    fit_config.validate();
    oracle.validate();
    if (dgp.kind == DGPSpec::Kind::Newsvendor)
        throw InvalidArgumentError(
            "true_sampling_variance: the newsvendor evaluation is replicate-specific");

    const int R = oracle.replicates;
    const int K = psi.arity();
    Eigen::MatrixXd psis = Eigen::MatrixXd::Zero(R, K);
    std::vector<char> ok(static_cast<size_t>(R), 0);

#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < R; ++r) {
        try {
            DGPSpec fresh = dgp;
            fresh.seed = derive_seed(oracle.seed, 2 * static_cast<uint64_t>(r));
            const Dataset draw = generate(fresh);
            const ParamVec init =
                init_params(model, draw.feature_dim(),
                            derive_seed(oracle.seed, 2 * static_cast<uint64_t>(r) + 1));
            const FitResult fit = fit_mle(model, draw, init, fit_config);
            if (!fit.converged) continue;
            for (int k = 0; k < K; ++k) psis(r, k) = psi.value(fit.theta, k);
            ok[static_cast<size_t>(r)] = 1;
        } catch (const std::exception&) {
        }
    }

    return replicate_covariance(psis, ok, R, "true_sampling_variance");
}

}  // namespace idm
