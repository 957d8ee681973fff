// Times the blocked parallel likelihood kernels against the serial
// reference on growing datasets, then a full variance estimate to show
// where the time goes end to end.  Build and run; no arguments.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "idm/fdidm.hpp"
#include "idm/model.hpp"
#include "idm/rng.hpp"
#include "idm/synthdata.hpp"

using namespace idm;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_of(const std::function<void()>& body, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = clock_type::now();
        body();
        const auto t1 = clock_type::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

struct Setup {
    LikelihoodModel model;
    Dataset data;
    ParamVec theta;
};

Setup make_setup(const char* kind, Eigen::Index n) {
    Setup s;
    DGPSpec dgp;
    dgp.kind = DGPSpec::Kind::Quadratic;
    dgp.n = n;
    dgp.seed = 42;
    s.data = generate(dgp);
    if (std::string(kind) == "mlp") {
        s.model.predictor.kind = PredictorSpec::Kind::Mlp;
        s.model.predictor.hidden = {50};
        s.model.family.name = Family::Name::GaussianSse;
    } else {
        s.model.family.name = Family::Name::GaussianKnownVar;
        s.model.family.sigma2 = 0.01;
    }
    s.theta = init_params(s.model, s.data.feature_dim(), 7);
    return s;
}

void bench_kernels(const char* kind) {
    std::printf("%-6s %10s %12s %12s %8s %12s %12s %8s\n", kind, "n", "ll serial", "ll blocked",
                "speedup", "grad serial", "grad blocked", "speedup");
    for (Eigen::Index n : {2000, 20000, 200000}) {
        const Setup s = make_setup(kind, n);
        volatile double sink = 0.0;
        const double ls = seconds_of([&] { sink = sink + serial::log_likelihood(s.model, s.theta, s.data); }, 5);
        const double lb = seconds_of([&] { sink = sink + log_likelihood(s.model, s.theta, s.data); }, 5);
        double gnorm = 0.0;
        const double gs = seconds_of(
            [&] { gnorm = serial::grad_log_likelihood(s.model, s.theta, s.data).norm(); }, 5);
        const double gb =
            seconds_of([&] { gnorm = grad_log_likelihood(s.model, s.theta, s.data).norm(); }, 5);
        (void)gnorm;
        std::printf("%-6s %10lld %12.3e %12.3e %7.2fx %12.3e %12.3e %7.2fx\n", "",
                    static_cast<long long>(n), ls, lb, ls / lb, gs, gb, gs / gb);

        const double a = serial::log_likelihood(s.model, s.theta, s.data);
        const double b = log_likelihood(s.model, s.theta, s.data);
        const double rel = std::abs(a - b) / (1.0 + std::abs(a));
        if (rel > 1e-10) std::printf("  WARNING: serial/blocked disagree, rel %.2e\n", rel);
    }
}

void bench_estimate() {
    DGPSpec dgp;
    dgp.kind = DGPSpec::Kind::LogisticClass;
    dgp.n = 4000;
    dgp.theta0.resize(4);
    dgp.theta0 << 0.4, -0.6, 0.3, 0.2;
    dgp.seed = 9;
    const Dataset d = generate(dgp);

    LikelihoodModel m;
    m.family.name = Family::Name::BernoulliLogit;
    OptimizerConfig opt;
    opt.rate = 0.5;
    opt.tol = 1e-9;

    Eigen::VectorXd x0 = Eigen::VectorXd::Constant(3, 0.2);
    const EvalFn psi = make_point_prediction(m, x0);

    const auto t0 = clock_type::now();
    const FitResult mle = fit_mle(m, d, init_params(m, d.feature_dim(), 1), opt);
    const auto t1 = clock_type::now();
    const VarEstimate v = fdidm(m, d, psi, 1.0, mle, opt);
    const auto t2 = clock_type::now();

    std::printf("\nend to end, logistic n=%lld: base fit %.3f s (%d iters), "
                "variance estimate %.3f s (%d iters), V = %.3e\n",
                static_cast<long long>(d.n()),
                std::chrono::duration<double>(t1 - t0).count(), mle.iterations,
                std::chrono::duration<double>(t2 - t1).count(), v.fit_iterations, v.value);
}

}  // namespace

int main() {
    std::printf("threads: %d (IDM_THREADS caps this)\n\n", omp_get_max_threads());
    bench_kernels("linear");
    std::printf("\n");
    bench_kernels("mlp");
    bench_estimate();
    return 0;
}
