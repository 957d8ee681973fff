#include "idm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <utility>

#include "idm/errors.hpp"
#include "idm/rng.hpp"
#include "idm/stats.hpp"

namespace idm {

namespace {

double sigmoid(double h) {
    if (h >= 0.0) return 1.0 / (1.0 + std::exp(-h));
    const double e = std::exp(h);
    return e / (1.0 + e);
}

constexpr double kNewsvendorSd = 0.5;  // demand | x ~ N(2 + x, 0.5^2), truncated at 0

double draw_truncated_demand(SplitMix64& rng, double mu) {
    // inverse-CDF sampling of the left-truncated normal: one uniform per draw
    const double p0 = normal_cdf(-mu / kNewsvendorSd);
    const double p = p0 + rng.next_double() * (1.0 - p0);
    return mu + kNewsvendorSd * normal_quantile(p);
}

Dataset newsvendor_pairs(Eigen::Index rows, uint64_t seed) {
    Dataset d;
    d.x.resize(rows, 1);
    d.y.resize(rows);
    SplitMix64 rng(seed);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double x = rng.uniform(0.0, 2.0);
        d.x(i, 0) = x;
        d.y(i) = draw_truncated_demand(rng, 2.0 + x);
    }
    return d;
}

}  // namespace

void DGPSpec::validate() const {
    if (n < 1) throw InvalidArgumentError("DGPSpec: n must be >= 1");
    if (!(noise_sd >= 0.0)) throw InvalidArgumentError("DGPSpec: noise_sd must be >= 0");
    switch (kind) {
        case Kind::Sin:
            if (n % 2 != 0)
                throw InvalidArgumentError("DGPSpec: sin needs even n (half per input range)");
            break;
        case Kind::LogisticClass:
            if (theta0.size() < 2)
                throw InvalidArgumentError(
                    "DGPSpec: logistic_class needs theta0 with intercept and >= 1 weight");
            if (!theta0.allFinite())
                throw InvalidArgumentError("DGPSpec: non-finite theta0");
            break;
        case Kind::Newsvendor:
            if (eval_m < 0) throw InvalidArgumentError("DGPSpec: eval_m must be >= 0");
            break;
        case Kind::Quadratic:
            break;
    }
}

Dataset gen_quadratic(const DGPSpec& spec) {
    if (spec.kind != DGPSpec::Kind::Quadratic)
        throw InvalidArgumentError("gen_quadratic: wrong DGP kind");
    spec.validate();
    Dataset d;
    const Eigen::Index cols = spec.drop_features ? 0 : (spec.quadratic_features ? 2 : 1);
    d.x.resize(spec.n, cols);
    d.y.resize(spec.n);
    SplitMix64 rng(spec.seed);
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        const double x = rng.gaussian();
        const double eps = rng.gaussian();
        if (cols > 0) d.x(i, 0) = x;
        if (cols > 1) d.x(i, 1) = x * x;
        d.y(i) = 0.1 * x * x - 0.5 * x + 5.0 + spec.noise_sd * eps;
    }
    return d;
}

Dataset gen_sin(const DGPSpec& spec) {
    if (spec.kind != DGPSpec::Kind::Sin) throw InvalidArgumentError("gen_sin: wrong DGP kind");
    spec.validate();
    const Eigen::Index half = spec.n / 2;
    Dataset d;
    d.x.resize(spec.n, 1);
    d.y.resize(spec.n);
    SplitMix64 rng(spec.seed);
    // evenly spaced over [-1.5, -0.7) then [0.35, 1.15); both half-open
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        const bool second = i >= half;
        const Eigen::Index k = second ? i - half : i;
        const double lo = second ? 0.35 : -1.5;
        const double x = lo + 0.8 * static_cast<double>(k) / static_cast<double>(half);
        d.x(i, 0) = x;
        d.y(i) = -std::sin(3.0 * x - 0.3) + spec.noise_sd * rng.gaussian();
    }
    return d;
}

Dataset gen_logistic_class(const DGPSpec& spec) {
    if (spec.kind != DGPSpec::Kind::LogisticClass)
        throw InvalidArgumentError("gen_logistic_class: wrong DGP kind");
    spec.validate();
    const Eigen::Index p = spec.theta0.size() - 1;
    Dataset d;
    d.x.resize(spec.n, p);
    d.y.resize(spec.n);
    SplitMix64 rng(spec.seed);
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        double h = spec.theta0(0);
        for (Eigen::Index j = 0; j < p; ++j) {
            const double x = rng.gaussian();
            d.x(i, j) = x;
            h += spec.theta0(j + 1) * x;
        }
        d.y(i) = rng.next_double() < sigmoid(h) ? 1.0 : 0.0;
    }
    return d;
}

Dataset generate(const DGPSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case DGPSpec::Kind::Quadratic: return gen_quadratic(spec);
        case DGPSpec::Kind::Sin: return gen_sin(spec);
        case DGPSpec::Kind::LogisticClass: return gen_logistic_class(spec);
        case DGPSpec::Kind::Newsvendor:
            return newsvendor_pairs(spec.n, derive_seed(spec.seed, 0));
    }
    throw InvalidArgumentError("generate: unknown DGP kind");
}

NewsvendorTask gen_newsvendor(const DGPSpec& spec, const LikelihoodModel& model) {
    if (spec.kind != DGPSpec::Kind::Newsvendor)
        throw InvalidArgumentError("gen_newsvendor: wrong DGP kind");
    spec.validate();
    const Eigen::Index m = spec.eval_m > 0 ? spec.eval_m : spec.n;
    NewsvendorTask task;
    task.train = newsvendor_pairs(spec.n, derive_seed(spec.seed, 0));
    task.unmet_demand =
        make_avg_unmet_demand(model, newsvendor_pairs(m, derive_seed(spec.seed, 1)));
    return task;
}

ParamVec newsvendor_theta0() {
    ParamVec t(2);
    t << 2.0, 1.0;
    return t;
}

double dgp_true_mean(const DGPSpec& spec, const Eigen::VectorXd& x) {
    switch (spec.kind) {
        case DGPSpec::Kind::Quadratic: {
            const double v = x(0);
            return 0.1 * v * v - 0.5 * v + 5.0;
        }
        case DGPSpec::Kind::Sin:
            return -std::sin(3.0 * x(0) - 0.3);
        case DGPSpec::Kind::LogisticClass: {
            if (x.size() + 1 != spec.theta0.size())
                throw InvalidArgumentError("dgp_true_mean: feature dimension mismatch");
            return sigmoid(spec.theta0(0) + spec.theta0.tail(x.size()).dot(x));
        }
        case DGPSpec::Kind::Newsvendor: {
            // mean of the left-truncated demand
            const double mu = 2.0 + x(0);
            const double a = -mu / kNewsvendorSd;
            const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
            return mu + kNewsvendorSd * phi / (1.0 - normal_cdf(a));
        }
    }
    throw InvalidArgumentError("dgp_true_mean: unknown DGP kind");
}

Eigen::VectorXd quadratic_feature(double x) {
    Eigen::VectorXd f(2);
    f << x, x * x;
    return f;
}

namespace {

// Mean-scale value and gradient of the prediction at x0.
double mean_prediction(const LikelihoodModel& model, const ParamVec& theta,
                       const Eigen::VectorXd& x0) {
    const double h = predict(model, theta, x0)(0);
    switch (model.family.name) {
        case Family::Name::GaussianKnownVar:
        case Family::Name::GaussianSse: return h;
        case Family::Name::BernoulliLogit: return sigmoid(h);
        case Family::Name::PoissonLog: return std::exp(h);
        case Family::Name::CategoricalSoftmax: break;
    }
    throw CapabilityError("point prediction is not defined for categorical models");
}

Eigen::VectorXd mean_prediction_grad(const LikelihoodModel& model, const ParamVec& theta,
                                     const Eigen::VectorXd& x0) {
    Eigen::VectorXd g = grad_predict(model, theta, x0, 0);
    switch (model.family.name) {
        case Family::Name::GaussianKnownVar:
        case Family::Name::GaussianSse: return g;
        case Family::Name::BernoulliLogit: {
            const double p = sigmoid(predict(model, theta, x0)(0));
            return (p * (1.0 - p)) * g;
        }
        case Family::Name::PoissonLog:
            return std::exp(predict(model, theta, x0)(0)) * g;
        case Family::Name::CategoricalSoftmax: break;
    }
    throw CapabilityError("point prediction is not defined for categorical models");
}

void check_point_family(const LikelihoodModel& model) {
    if (model.family.name == Family::Name::CategoricalSoftmax)
        throw CapabilityError("point prediction is not defined for categorical models");
}

}  // namespace

EvalFn make_point_prediction(const LikelihoodModel& model, const Eigen::VectorXd& x0) {
    check_point_family(model);
    EvalFn psi;
    psi.components.push_back(
        [model, x0](const ParamVec& th) { return mean_prediction(model, th, x0); });
    psi.gradient = [model, x0](const ParamVec& th, int) {
        return mean_prediction_grad(model, th, x0);
    };
    return psi;
}

EvalFn make_prediction_grid(const LikelihoodModel& model,
                            const std::vector<Eigen::VectorXd>& points) {
    if (points.empty()) throw InvalidArgumentError("make_prediction_grid: no points");
    check_point_family(model);
    auto grid = std::make_shared<const std::vector<Eigen::VectorXd>>(points);
    EvalFn psi;
    for (size_t k = 0; k < grid->size(); ++k)
        psi.components.push_back([model, grid, k](const ParamVec& th) {
            return mean_prediction(model, th, (*grid)[k]);
        });
    psi.gradient = [model, grid](const ParamVec& th, int k) {
        return mean_prediction_grad(model, th, (*grid)[static_cast<size_t>(k)]);
    };
    return psi;
}

EvalFn make_holdout_avg_cross_entropy(const LikelihoodModel& model, Dataset eval_set) {
    eval_set.validate();
    auto ev = std::make_shared<const Dataset>(std::move(eval_set));
    const double inv_m = 1.0 / static_cast<double>(ev->n());
    EvalFn psi;
    psi.components.push_back([model, ev, inv_m](const ParamVec& th) {
        return -inv_m * log_likelihood(model, th, *ev);
    });
    psi.gradient = [model, ev, inv_m](const ParamVec& th, int) {
        return (-inv_m * grad_log_likelihood(model, th, *ev)).eval();
    };
    psi.unit_form = [model](const Eigen::VectorXd& x, double y, const ParamVec& th) {
        Dataset one;
        one.x = x.transpose();
        one.y.resize(1);
        one.y(0) = y;
        return -log_likelihood(model, th, one);
    };
    psi.eval_set = ev;
    return psi;
}

EvalFn make_avg_unmet_demand(const LikelihoodModel& model, Dataset eval_set) {
    eval_set.validate();
    auto ev = std::make_shared<const Dataset>(std::move(eval_set));
    EvalFn psi;
    // same row order and accumulation as EvalFn::mean_unit, so the
    // component and the unit-form mean agree exactly
    psi.components.push_back([model, ev](const ParamVec& th) {
        double acc = 0.0;
        Eigen::VectorXd xj(ev->feature_dim());
        for (Eigen::Index j = 0; j < ev->n(); ++j) {
            xj = ev->x.row(j).transpose();
            acc += std::max(ev->y(j) - predict(model, th, xj)(0), 0.0);
        }
        return acc / static_cast<double>(ev->n());
    });
    psi.unit_form = [model](const Eigen::VectorXd& x, double y, const ParamVec& th) {
        return std::max(y - predict(model, th, x)(0), 0.0);
    };
    psi.eval_set = ev;
    return psi;
}

EvalFn make_eval_fn(const nlohmann::json& j, const LikelihoodModel& model,
                    const Dataset* eval_set) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "point_prediction") {
        const auto v = j.at("x0").get<std::vector<double>>();
        return make_point_prediction(
            model, Eigen::Map<const Eigen::VectorXd>(v.data(),
                                                     static_cast<Eigen::Index>(v.size())));
    }
    if (kind == "prediction_grid") {
        std::vector<Eigen::VectorXd> points;
        for (const auto& pj : j.at("points")) {
            const auto v = pj.get<std::vector<double>>();
            points.emplace_back(Eigen::Map<const Eigen::VectorXd>(
                v.data(), static_cast<Eigen::Index>(v.size())));
        }
        return make_prediction_grid(model, points);
    }
    if (kind == "holdout_avg_cross_entropy") {
        if (eval_set == nullptr)
            throw ConfigError("make_eval_fn: holdout_avg_cross_entropy needs an evaluation set");
        return make_holdout_avg_cross_entropy(model, *eval_set);
    }
    if (kind == "avg_unmet_demand") {
        if (eval_set == nullptr)
            throw ConfigError("make_eval_fn: avg_unmet_demand needs an evaluation set");
        return make_avg_unmet_demand(model, *eval_set);
    }
    throw ConfigError("make_eval_fn: unknown evaluation kind '" + kind + "'");
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, uint64_t seed) {
    data.validate();
    if (!(fraction > 0.0 && fraction < 1.0))
        throw InvalidArgumentError("holdout_split: fraction outside (0,1)");
    const Eigen::Index n = data.n();
    if (n < 2) throw InvalidArgumentError("holdout_split: need n >= 2");
    const Eigen::Index n_eval =
        static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(n)));
    if (n_eval < 1 || n_eval >= n) throw InvalidArgumentError("holdout_split: degenerate sizes");

    std::vector<Eigen::Index> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    SplitMix64 rng(seed);
    for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)],
                  perm[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);

    std::vector<Eigen::Index> eval_rows(perm.begin(), perm.begin() + n_eval);
    std::vector<Eigen::Index> train_rows(perm.begin() + n_eval, perm.end());
    std::sort(eval_rows.begin(), eval_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
    return {data.select(train_rows), data.select(eval_rows)};
}

DGPSpec dgp_from_json(const nlohmann::json& j) {
    DGPSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "quadratic")
        spec.kind = DGPSpec::Kind::Quadratic;
    else if (kind == "sin")
        spec.kind = DGPSpec::Kind::Sin;
    else if (kind == "logistic_class")
        spec.kind = DGPSpec::Kind::LogisticClass;
    else if (kind == "newsvendor")
        spec.kind = DGPSpec::Kind::Newsvendor;
    else
        throw ConfigError("dgp: unknown kind '" + kind + "'");
    if (j.contains("n")) spec.n = j["n"].get<Eigen::Index>();
    if (j.contains("noise_sd")) spec.noise_sd = j["noise_sd"].get<double>();
    if (j.contains("quadratic_features"))
        spec.quadratic_features = j["quadratic_features"].get<bool>();
    if (j.contains("drop_features")) spec.drop_features = j["drop_features"].get<bool>();
    if (j.contains("theta0")) {
        const auto v = j["theta0"].get<std::vector<double>>();
        spec.theta0 =
            Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("eval_m")) spec.eval_m = j["eval_m"].get<Eigen::Index>();
    if (j.contains("seed")) spec.seed = j["seed"].get<uint64_t>();
    spec.validate();
    return spec;
}

nlohmann::json dgp_to_json(const DGPSpec& spec) {
    nlohmann::json j;
    switch (spec.kind) {
        case DGPSpec::Kind::Quadratic: j["kind"] = "quadratic"; break;
        case DGPSpec::Kind::Sin: j["kind"] = "sin"; break;
        case DGPSpec::Kind::LogisticClass: j["kind"] = "logistic_class"; break;
        case DGPSpec::Kind::Newsvendor: j["kind"] = "newsvendor"; break;
    }
    j["n"] = spec.n;
    j["noise_sd"] = spec.noise_sd;
    if (spec.kind == DGPSpec::Kind::Quadratic) {
        j["quadratic_features"] = spec.quadratic_features;
        j["drop_features"] = spec.drop_features;
    }
    if (spec.theta0.size() > 0)
        j["theta0"] = std::vector<double>(spec.theta0.data(),
                                          spec.theta0.data() + spec.theta0.size());
    if (spec.kind == DGPSpec::Kind::Newsvendor) j["eval_m"] = spec.eval_m;
    j["seed"] = spec.seed;
    return j;
}

}  // namespace idm
