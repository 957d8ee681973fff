#include "idm/model.hpp"

#include <omp.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "idm/errors.hpp"
#include "idm/rng.hpp"

namespace idm {

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::select(const std::vector<Eigen::Index>& rows) const {
    Dataset out;
    out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        out.x.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
        out.y(static_cast<Eigen::Index>(i)) = y(rows[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (x.rows() < 1) throw InvalidArgumentError("Dataset: need at least one row");
    if (y.size() != x.rows()) throw InvalidArgumentError("Dataset: y length != row count");
    if (!x.allFinite() || !y.allFinite()) throw InvalidArgumentError("Dataset: non-finite entry");
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgumentError("load_csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size())
            throw InvalidArgumentError("load_csv: ragged row in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.front().size() < 2)
        throw InvalidArgumentError("load_csv: need at least one feature and one response column");
    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index p = static_cast<Eigen::Index>(rows.front().size()) - 1;
    Dataset data;
    data.x.resize(n, p);
    data.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) data.x(i, j) = rows[i][j];
        data.y(i) = rows[i][p];
    }
    data.validate();
    return data;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgumentError("write_csv: cannot open " + path);
    char buf[32];
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
            snprintf(buf, sizeof buf, "%.17g", data.x(i, j));
            out << buf << ',';
        }
        snprintf(buf, sizeof buf, "%.17g", data.y(i));
        out << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// Predictor layout

Eigen::Index PredictorSpec::param_count(Eigen::Index feature_dim) const {
    if (kind == Kind::Linear) return (feature_dim + 1) * output_dim;
    Eigen::Index d = 0;
    Eigen::Index in = feature_dim;
    for (int w : hidden) {
        d += static_cast<Eigen::Index>(w) * (in + 1);
        in = w;
    }
    d += static_cast<Eigen::Index>(output_dim) * (in + 1);
    return d;
}

void LikelihoodModel::validate() const {
    if (predictor.output_dim != family.output_dim())
        throw InvalidArgumentError("LikelihoodModel: predictor output_dim does not match family");
    if (family.name == Family::Name::GaussianKnownVar && !(family.sigma2 > 0.0))
        throw InvalidArgumentError("LikelihoodModel: gaussian_known_var needs sigma2 > 0");
    if (family.name == Family::Name::CategoricalSoftmax && family.n_classes < 2)
        throw InvalidArgumentError("LikelihoodModel: categorical_softmax needs n_classes >= 2");
    for (int w : predictor.hidden)
        if (w < 1) throw InvalidArgumentError("PredictorSpec: hidden width must be >= 1");
}

namespace {

void check_theta(const LikelihoodModel& model, const ParamVec& theta, Eigen::Index feature_dim) {
    if (theta.size() != model.param_count(feature_dim))
        throw InvalidArgumentError("theta length does not match model parameter count");
    if (!theta.allFinite()) throw InvalidArgumentError("theta has non-finite entries");
}

// Scratch buffers for one forward/backward pass; reused across rows.
struct MlpWorkspace {
    std::vector<Eigen::VectorXd> act;    // activations per layer (incl. input, output)
    std::vector<Eigen::VectorXd> delta;  // back-propagated errors per layer
    std::vector<Eigen::Index> sizes;     // layer sizes [p_x, h..., p]

    void init(const PredictorSpec& spec, Eigen::Index feature_dim) {
        sizes.clear();
        sizes.push_back(feature_dim);
        for (int w : spec.hidden) sizes.push_back(w);
        sizes.push_back(spec.output_dim);
        act.assign(sizes.size(), {});
        delta.assign(sizes.size(), {});
        for (size_t l = 0; l < sizes.size(); ++l) {
            act[l].resize(sizes[l]);
            delta[l].resize(sizes[l]);
        }
    }
};

// Forward pass; leaves all activations in ws for a later backward pass.
void mlp_forward(const PredictorSpec& spec, const ParamVec& theta, const Eigen::VectorXd& x,
                 MlpWorkspace& ws) {
    ws.act[0] = x;
    Eigen::Index off = 0;
    const size_t L = ws.sizes.size() - 1;
    for (size_t l = 0; l < L; ++l) {
        const Eigen::Index in = ws.sizes[l], out = ws.sizes[l + 1];
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
            theta.data() + off, out, in);
        Eigen::Map<const Eigen::VectorXd> b(theta.data() + off + out * in, out);
        ws.act[l + 1].noalias() = W * ws.act[l];
        ws.act[l + 1] += b;
        if (l + 1 < L)  // hidden layers are tanh, output layer linear
            ws.act[l + 1] = ws.act[l + 1].array().tanh();
        off += out * (in + 1);
    }
    (void)spec;
}

// Backward pass from output error u; accumulates dL/dtheta into grad.
void mlp_backward(const ParamVec& theta, const Eigen::VectorXd& u, MlpWorkspace& ws,
                  Eigen::VectorXd& grad) {
    const size_t L = ws.sizes.size() - 1;
    ws.delta[L] = u;
    // Walk layers in reverse, peeling parameter blocks off the tail.
    Eigen::Index off_end = theta.size();
    for (size_t l = L; l-- > 0;) {
        const Eigen::Index in = ws.sizes[l], out = ws.sizes[l + 1];
        const Eigen::Index off = off_end - out * (in + 1);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
            theta.data() + off, out, in);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gW(
            grad.data() + off, out, in);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + off + out * in, out);
        gW.noalias() += ws.delta[l + 1] * ws.act[l].transpose();
        gb += ws.delta[l + 1];
        if (l > 0) {
            ws.delta[l].noalias() = W.transpose() * ws.delta[l + 1];
            ws.delta[l].array() *= 1.0 - ws.act[l].array().square();
        }
        off_end = off;
    }
}

void linear_forward(const PredictorSpec& spec, const ParamVec& theta, const Eigen::VectorXd& x,
                    Eigen::VectorXd& h) {
    const Eigen::Index p = spec.output_dim, px = x.size();
    h.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::Index off = j * (px + 1);
        h(j) = theta(off) + theta.segment(off + 1, px).dot(x);
    }
}

void linear_backward(const PredictorSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                     Eigen::VectorXd& grad) {
    const Eigen::Index p = spec.output_dim, px = x.size();
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::Index off = j * (px + 1);
        grad(off) += u(j);
        grad.segment(off + 1, px) += u(j) * x;
    }
}

// log g(y; h) and, when want_grad, d log g / dh written into u.
double family_log_density(const Family& fam, double y, const Eigen::VectorXd& h, bool want_grad,
                          Eigen::VectorXd& u) {
    switch (fam.name) {
        case Family::Name::GaussianKnownVar: {
            const double r = y - h(0);
            if (want_grad) u(0) = r / fam.sigma2;
            return -0.5 * r * r / fam.sigma2 -
                   0.5 * std::log(6.283185307179586476925286766559 * fam.sigma2);
        }
        case Family::Name::GaussianSse: {
            const double r = y - h(0);
            if (want_grad) u(0) = r;
            return -0.5 * r * r;
        }
        case Family::Name::BernoulliLogit: {
            const double z = h(0);
            // log f = y*z - softplus(z), softplus computed overflow-safe
            const double sp = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            if (want_grad) u(0) = y - 1.0 / (1.0 + std::exp(-z));
            return y * z - sp;
        }
        case Family::Name::CategoricalSoftmax: {
            const int cls = static_cast<int>(y);
            if (cls < 0 || cls >= fam.n_classes)
                throw InvalidArgumentError("categorical_softmax: class index out of range");
            const double m = h.maxCoeff();
            const double lse = m + std::log((h.array() - m).exp().sum());
            if (want_grad) {
                u = (-(h.array() - lse).exp()).matrix();
                u(cls) += 1.0;
            }
            return h(cls) - lse;
        }
        case Family::Name::PoissonLog: {
            const double z = h(0);
            if (y < 0.0 || y != std::floor(y))
                throw InvalidArgumentError("poisson_log: response must be a nonnegative integer");
            if (want_grad) u(0) = y - std::exp(z);
            return y * z - std::exp(z) - std::lgamma(y + 1.0);
        }
    }
    throw InvalidArgumentError("unknown likelihood family");
}

// Per-block accumulation over rows [begin, end); grad may be null.
double accumulate_rows(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data,
                       Eigen::Index begin, Eigen::Index end, Eigen::VectorXd* grad,
                       MlpWorkspace& ws) {
    const bool mlp = model.predictor.kind == PredictorSpec::Kind::Mlp;
    double sum = 0.0;
    Eigen::VectorXd xi(data.feature_dim());
    Eigen::VectorXd h(model.predictor.output_dim), u(model.predictor.output_dim);
    for (Eigen::Index i = begin; i < end; ++i) {
        xi = data.x.row(i).transpose();
        if (mlp) {
            mlp_forward(model.predictor, theta, xi, ws);
            h = ws.act.back();
        } else {
            linear_forward(model.predictor, theta, xi, h);
        }
        sum += family_log_density(model.family, data.y(i), h, grad != nullptr, u);
        if (grad) {
            if (mlp)
                mlp_backward(theta, u, ws, *grad);
            else
                linear_backward(model.predictor, xi, u, *grad);
        }
    }
    return sum;
}

// Shared driver for the blocked kernels.  Blocks have a fixed size, are
// filled in parallel, and are combined sequentially in block order, so the
// result does not depend on the number of threads.
double blocked_reduce(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data,
                      Eigen::VectorXd* grad) {
    const Eigen::Index n = data.n();
    const Eigen::Index nblocks = (n + kReduceBlock - 1) / kReduceBlock;

    if (nblocks <= 1 || omp_in_parallel()) {
        MlpWorkspace ws;
        if (model.predictor.kind == PredictorSpec::Kind::Mlp)
            ws.init(model.predictor, data.feature_dim());
        if (grad) grad->setZero();
        return accumulate_rows(model, theta, data, 0, n, grad, ws);
    }

    std::vector<double> partial(nblocks, 0.0);
    std::vector<Eigen::VectorXd> partial_grad;
    if (grad) partial_grad.assign(nblocks, Eigen::VectorXd::Zero(theta.size()));

#pragma omp parallel
    {
        MlpWorkspace ws;
        if (model.predictor.kind == PredictorSpec::Kind::Mlp)
            ws.init(model.predictor, data.feature_dim());
#pragma omp for schedule(static)
        for (Eigen::Index b = 0; b < nblocks; ++b) {
            const Eigen::Index lo = b * kReduceBlock;
            const Eigen::Index hi = std::min(n, lo + kReduceBlock);
            partial[b] = accumulate_rows(model, theta, data, lo, hi,
                                         grad ? &partial_grad[b] : nullptr, ws);
        }
    }

    double sum = 0.0;
    if (grad) grad->setZero();
    for (Eigen::Index b = 0; b < nblocks; ++b) {
        sum += partial[b];
        if (grad) *grad += partial_grad[b];
    }
    return sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations

double log_likelihood(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data) {
    model.validate();
    data.validate();
    check_theta(model, theta, data.feature_dim());
    const double v = blocked_reduce(model, theta, data, nullptr);
    if (!std::isfinite(v)) throw NumericError("log_likelihood: non-finite result");
    return v;
}

Eigen::VectorXd grad_log_likelihood(const LikelihoodModel& model, const ParamVec& theta,
                                    const Dataset& data) {
    model.validate();
    data.validate();
    check_theta(model, theta, data.feature_dim());
    Eigen::VectorXd grad(theta.size());
    blocked_reduce(model, theta, data, &grad);
    if (!grad.allFinite()) throw NumericError("grad_log_likelihood: non-finite result");
    return grad;
}

Eigen::MatrixXd hessian_log_likelihood(const LikelihoodModel& model, const ParamVec& theta,
                                       const Dataset& data, Eigen::Index dim_cap) {
    check_theta(model, theta, data.feature_dim());
    const Eigen::Index d = theta.size();
    if (d > dim_cap)
        throw CapabilityError("hessian_log_likelihood: dimension " + std::to_string(d) +
                              " exceeds cap " + std::to_string(dim_cap));
    Eigen::MatrixXd hess(d, d);
    ParamVec probe = theta;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double step = 1e-6 * (1.0 + std::abs(theta(j)));
        probe(j) = theta(j) + step;
        const Eigen::VectorXd gp = grad_log_likelihood(model, probe, data);
        probe(j) = theta(j) - step;
        const Eigen::VectorXd gm = grad_log_likelihood(model, probe, data);
        probe(j) = theta(j);
        hess.col(j) = (gp - gm) / (2.0 * step);
    }
    // second derivatives commute; average out finite-difference asymmetry
    hess = 0.5 * (hess + hess.transpose()).eval();
    return hess;
}

Eigen::VectorXd predict(const LikelihoodModel& model, const ParamVec& theta,
                        const Eigen::VectorXd& x) {
    check_theta(model, theta, x.size());
    Eigen::VectorXd h;
    if (model.predictor.kind == PredictorSpec::Kind::Mlp) {
        MlpWorkspace ws;
        ws.init(model.predictor, x.size());
        mlp_forward(model.predictor, theta, x, ws);
        h = ws.act.back();
    } else {
        linear_forward(model.predictor, theta, x, h);
    }
    return h;
}

Eigen::VectorXd grad_predict(const LikelihoodModel& model, const ParamVec& theta,
                             const Eigen::VectorXd& x, int output) {
    check_theta(model, theta, x.size());
    if (output < 0 || output >= model.predictor.output_dim)
        throw InvalidArgumentError("grad_predict: output index out of range");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd u = Eigen::VectorXd::Zero(model.predictor.output_dim);
    u(output) = 1.0;
    if (model.predictor.kind == PredictorSpec::Kind::Mlp) {
        MlpWorkspace ws;
        ws.init(model.predictor, x.size());
        mlp_forward(model.predictor, theta, x, ws);
        mlp_backward(theta, u, ws, grad);
    } else {
        linear_backward(model.predictor, x, u, grad);
    }
    return grad;
}

double sigma2_hat(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data) {
    if (model.family.name != Family::Name::GaussianSse)
        throw WrongFamilyError("sigma2_hat: defined for the gaussian_sse family");
    data.validate();
    check_theta(model, theta, data.feature_dim());
    // -1/2 SSE is exactly the gaussian_sse objective
    const double neg_half_sse = log_likelihood(model, theta, data);
    return -2.0 * neg_half_sse / static_cast<double>(data.n());
}

ParamVec init_params(const LikelihoodModel& model, Eigen::Index feature_dim, uint64_t seed) {
    const Eigen::Index d = model.param_count(feature_dim);
    if (model.predictor.kind == PredictorSpec::Kind::Linear) return Eigen::VectorXd::Zero(d);
    SplitMix64 rng(seed);
    ParamVec theta(d);
    for (Eigen::Index j = 0; j < d; ++j) theta(j) = rng.uniform(-0.1, 0.1);
    return theta;
}

// ---------------------------------------------------------------------------
// Serial reference kernels

namespace serial {

double log_likelihood(const LikelihoodModel& model, const ParamVec& theta, const Dataset& data) {
    model.validate();
    data.validate();
    check_theta(model, theta, data.feature_dim());
    MlpWorkspace ws;
    if (model.predictor.kind == PredictorSpec::Kind::Mlp)
        ws.init(model.predictor, data.feature_dim());
    return accumulate_rows(model, theta, data, 0, data.n(), nullptr, ws);
}

Eigen::VectorXd grad_log_likelihood(const LikelihoodModel& model, const ParamVec& theta,
                                    const Dataset& data) {
    model.validate();
    data.validate();
    check_theta(model, theta, data.feature_dim());
    MlpWorkspace ws;
    if (model.predictor.kind == PredictorSpec::Kind::Mlp)
        ws.init(model.predictor, data.feature_dim());
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
    accumulate_rows(model, theta, data, 0, data.n(), &grad, ws);
    return grad;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// JSON

namespace {

std::string family_name_string(Family::Name n) {
    switch (n) {
        case Family::Name::GaussianKnownVar: return "gaussian_known_var";
        case Family::Name::GaussianSse: return "gaussian_sse";
        case Family::Name::BernoulliLogit: return "bernoulli_logit";
        case Family::Name::CategoricalSoftmax: return "categorical_softmax";
        case Family::Name::PoissonLog: return "poisson_log";
    }
    return "?";
}

}  // namespace

nlohmann::json model_to_json(const LikelihoodModel& model) {
    nlohmann::json j;
    j["predictor"]["kind"] = model.predictor.kind == PredictorSpec::Kind::Linear ? "linear" : "mlp";
    j["predictor"]["hidden"] = model.predictor.hidden;
    j["predictor"]["output_dim"] = model.predictor.output_dim;
    j["family"]["name"] = family_name_string(model.family.name);
    nlohmann::json params = nlohmann::json::object();
    if (model.family.name == Family::Name::GaussianKnownVar) params["sigma2"] = model.family.sigma2;
    if (model.family.name == Family::Name::CategoricalSoftmax)
        params["n_classes"] = model.family.n_classes;
    j["family"]["params"] = params;
    return j;
}

LikelihoodModel model_from_json(const nlohmann::json& j) {
    LikelihoodModel model;
    const auto& pred = j.at("predictor");
    const std::string kind = pred.at("kind").get<std::string>();
    if (kind == "linear")
        model.predictor.kind = PredictorSpec::Kind::Linear;
    else if (kind == "mlp")
        model.predictor.kind = PredictorSpec::Kind::Mlp;
    else
        throw ConfigError("model_from_json: unknown predictor kind '" + kind + "'");
    if (pred.contains("hidden")) model.predictor.hidden = pred["hidden"].get<std::vector<int>>();
    if (pred.contains("output_dim")) model.predictor.output_dim = pred["output_dim"].get<int>();

    const auto& fam = j.at("family");
    const std::string name = fam.at("name").get<std::string>();
    if (name == "gaussian_known_var")
        model.family.name = Family::Name::GaussianKnownVar;
    else if (name == "gaussian_sse")
        model.family.name = Family::Name::GaussianSse;
    else if (name == "bernoulli_logit")
        model.family.name = Family::Name::BernoulliLogit;
    else if (name == "categorical_softmax")
        model.family.name = Family::Name::CategoricalSoftmax;
    else if (name == "poisson_log")
        model.family.name = Family::Name::PoissonLog;
    else
        throw ConfigError("model_from_json: unknown family '" + name + "'");
    if (fam.contains("params")) {
        const auto& params = fam["params"];
        if (params.contains("sigma2")) model.family.sigma2 = params["sigma2"].get<double>();
        if (params.contains("n_classes")) model.family.n_classes = params["n_classes"].get<int>();
    }
    if (!pred.contains("output_dim")) model.predictor.output_dim = model.family.output_dim();
    model.validate();
    return model;
}

}  // namespace idm
