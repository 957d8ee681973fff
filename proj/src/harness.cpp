#include "idm/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "idm/dataset.hpp"
#include "idm/errors.hpp"
#include "idm/rng.hpp"
#include "idm/stats.hpp"

namespace idm {

namespace {

// Fixed sub-stream indices off root_seed, one per purpose, so no two
// stages ever consume the same stream.
constexpr uint64_t kStreamDgp = 11;
constexpr uint64_t kStreamInit = 12;
constexpr uint64_t kStreamOpt = 13;
constexpr uint64_t kStreamHoldout = 14;
constexpr uint64_t kStreamBootstrap = 15;
constexpr uint64_t kStreamSim = 16;
constexpr uint64_t kStreamReplicates = 1u << 16;

// Root stream for replicate r of replicate block `block` (coverage uses
// block 0; convergence uses one block per n).  Sub-purposes within a
// replicate derive from this root: 0 data, 1 init, 2 optimizer, 3 holdout.
uint64_t replicate_root(uint64_t root_seed, uint64_t block, int r) {
    return derive_seed(derive_seed(root_seed, kStreamReplicates + block),
                       static_cast<uint64_t>(r));
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig::Kind kind_from_string(const std::string& s) {
    if (s == "interval") return ExperimentConfig::Kind::Interval;
    if (s == "coverage") return ExperimentConfig::Kind::Coverage;
    if (s == "convergence") return ExperimentConfig::Kind::Convergence;
    if (s == "runtime") return ExperimentConfig::Kind::Runtime;
    if (s == "fisher") return ExperimentConfig::Kind::Fisher;
    throw ConfigError("unknown experiment kind '" + s + "'");
}

std::string kind_to_string(ExperimentConfig::Kind k) {
    switch (k) {
        case ExperimentConfig::Kind::Interval: return "interval";
        case ExperimentConfig::Kind::Coverage: return "coverage";
        case ExperimentConfig::Kind::Convergence: return "convergence";
        case ExperimentConfig::Kind::Runtime: return "runtime";
        case ExperimentConfig::Kind::Fisher: return "fisher";
    }
    throw ConfigError("unknown experiment kind");
}

BootstrapConfig bootstrap_from_json(const nlohmann::json& j) {
    BootstrapConfig bc;
    if (j.contains("B")) bc.B = j["B"].get<int>();
    if (j.contains("seed")) bc.seed = j["seed"].get<uint64_t>();
    if (j.contains("warm_start")) bc.warm_start = j["warm_start"].get<bool>();
    return bc;
}

nlohmann::json bootstrap_to_json(const BootstrapConfig& bc) {
    return {{"B", bc.B}, {"seed", bc.seed}, {"warm_start", bc.warm_start}};
}

DGPOracleConfig oracle_from_json(const nlohmann::json& j) {
    DGPOracleConfig oc;
    if (j.contains("replicates")) oc.replicates = j["replicates"].get<int>();
    if (j.contains("seed")) oc.seed = j["seed"].get<uint64_t>();
    return oc;
}

nlohmann::json oracle_to_json(const DGPOracleConfig& oc) {
    return {{"replicates", oc.replicates}, {"seed", oc.seed}};
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    optimizer.validate();
    if (data_csv.empty()) dgp.validate();
    if (!(idm.beta > 0.0 && idm.beta < 1.0))
        throw ConfigError("config: idm.beta must be in (0, 1)");
    if (!idm.lambda_auto && !(idm.lambda > 0.0))
        throw ConfigError("config: idm.lambda must be positive or \"auto\"");
    if (idm.sg_steps < 0) throw ConfigError("config: idm.sg_steps must be >= 0");
    if (idm.sg_steps > 0 && experiment != Kind::Interval)
        throw ConfigError("config: idm.sg_steps applies to the interval experiment only");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ConfigError("config: holdout_fraction must be in [0, 1)");
    if (output.empty()) throw ConfigError("config: output prefix must be nonempty");
    if (baselines.bootstrap) baselines.bootstrap->validate();
    if (baselines.simulation) baselines.simulation->validate();

    switch (experiment) {
        case Kind::Interval:
            break;
        case Kind::Coverage:
            if (!data_csv.empty())
                throw ConfigError("config: coverage needs a DGP, not a fixed CSV");
            if (coverage.replicates < 1)
                throw ConfigError("config: coverage.replicates must be >= 1");
            if (coverage.target != "theta0" && coverage.target != "replicate")
                throw ConfigError("config: coverage.target must be \"theta0\" or \"replicate\"");
            if (coverage.target == "replicate" && !coverage.grid.empty())
                throw ConfigError("config: a coverage grid requires fixed theta0 targets");
            break;
        case Kind::Convergence:
            if (!data_csv.empty())
                throw ConfigError("config: convergence needs a DGP, not a fixed CSV");
            if (convergence.n_list.empty() || convergence.lambda_list.empty())
                throw ConfigError("config: convergence.n_list and lambda_list must be nonempty");
            for (Eigen::Index n : convergence.n_list)
                if (n < 2) throw ConfigError("config: convergence.n_list entries must be >= 2");
            for (double l : convergence.lambda_list)
                if (!(l > 0.0))
                    throw ConfigError("config: convergence.lambda_list entries must be positive");
            if (convergence.replicates < 2)
                throw ConfigError("config: convergence.replicates must be >= 2");
            if (convergence.sim_replicates < 2)
                throw ConfigError("config: convergence.sim_replicates must be >= 2");
            break;
        case Kind::Runtime:
            if (!baselines.bootstrap)
                throw ConfigError("config: the runtime experiment needs baselines.bootstrap");
            break;
        case Kind::Fisher:
            if (!(fisher.lambda > 0.0))
                throw ConfigError("config: fisher.lambda must be positive");
            break;
    }
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    static const char* known[] = {"experiment", "dgp",    "data_csv",         "model",
                                  "optimizer",  "idm",    "baselines",        "eval",
                                  "holdout_fraction",     "output",           "root_seed",
                                  "coverage",   "convergence",               "fisher"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "'");
    }

    ExperimentConfig cfg;
    if (j.contains("experiment"))
        cfg.experiment = kind_from_string(j["experiment"].get<std::string>());
    if (j.contains("dgp")) cfg.dgp = dgp_from_json(j["dgp"]);
    if (j.contains("data_csv")) cfg.data_csv = j["data_csv"].get<std::string>();
    if (!j.contains("model")) throw ConfigError("config: missing 'model'");
    cfg.model = model_from_json(j["model"]);
    if (j.contains("optimizer")) cfg.optimizer = optimizer_from_json(j["optimizer"]);

    if (j.contains("idm")) {
        const nlohmann::json& ji = j["idm"];
        if (ji.contains("lambda")) {
            if (ji["lambda"].is_string()) {
                if (ji["lambda"].get<std::string>() != "auto")
                    throw ConfigError("config: idm.lambda must be a number or \"auto\"");
                cfg.idm.lambda_auto = true;
            } else {
                cfg.idm.lambda = ji["lambda"].get<double>();
                cfg.idm.lambda_auto = false;
            }
        }
        if (ji.contains("beta")) cfg.idm.beta = ji["beta"].get<double>();
        if (ji.contains("central_diff")) cfg.idm.central_diff = ji["central_diff"].get<bool>();
        if (ji.contains("sg_steps")) cfg.idm.sg_steps = ji["sg_steps"].get<int>();
    }

    if (j.contains("baselines")) {
        const nlohmann::json& jb = j["baselines"];
        if (jb.contains("delta")) cfg.baselines.delta = jb["delta"].get<bool>();
        if (jb.contains("bootstrap") && !jb["bootstrap"].is_null())
            cfg.baselines.bootstrap = bootstrap_from_json(jb["bootstrap"]);
        if (jb.contains("simulation") && !jb["simulation"].is_null())
            cfg.baselines.simulation = oracle_from_json(jb["simulation"]);
    }

    if (j.contains("eval")) cfg.eval = j["eval"];
    if (j.contains("holdout_fraction")) cfg.holdout_fraction = j["holdout_fraction"].get<double>();
    if (j.contains("output")) cfg.output = j["output"].get<std::string>();
    if (j.contains("root_seed")) cfg.root_seed = j["root_seed"].get<uint64_t>();

    if (j.contains("coverage")) {
        const nlohmann::json& jc = j["coverage"];
        if (jc.contains("replicates")) cfg.coverage.replicates = jc["replicates"].get<int>();
        if (jc.contains("grid")) cfg.coverage.grid = jc["grid"].get<std::vector<double>>();
        if (jc.contains("target")) cfg.coverage.target = jc["target"].get<std::string>();
        if (jc.contains("psi0") && !jc["psi0"].is_null())
            cfg.coverage.psi0 = jc["psi0"].get<double>();
    }

    if (j.contains("convergence")) {
        const nlohmann::json& jc = j["convergence"];
        if (jc.contains("n_list"))
            for (const auto& v : jc["n_list"])
                cfg.convergence.n_list.push_back(static_cast<Eigen::Index>(v.get<long long>()));
        if (jc.contains("lambda_list"))
            cfg.convergence.lambda_list = jc["lambda_list"].get<std::vector<double>>();
        if (jc.contains("replicates")) cfg.convergence.replicates = jc["replicates"].get<int>();
        if (jc.contains("sim_replicates"))
            cfg.convergence.sim_replicates = jc["sim_replicates"].get<int>();
    }

    if (j.contains("fisher") && j["fisher"].contains("lambda"))
        cfg.fisher.lambda = j["fisher"]["lambda"].get<double>();

    cfg.validate();
    return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["experiment"] = kind_to_string(cfg.experiment);
    j["dgp"] = dgp_to_json(cfg.dgp);
    if (!cfg.data_csv.empty()) j["data_csv"] = cfg.data_csv;
    j["model"] = model_to_json(cfg.model);
    j["optimizer"] = optimizer_to_json(cfg.optimizer);
    j["idm"]["lambda"] = cfg.idm.lambda_auto ? nlohmann::json("auto") : nlohmann::json(cfg.idm.lambda);
    j["idm"]["beta"] = cfg.idm.beta;
    j["idm"]["central_diff"] = cfg.idm.central_diff;
    j["idm"]["sg_steps"] = cfg.idm.sg_steps;
    j["baselines"]["delta"] = cfg.baselines.delta;
    if (cfg.baselines.bootstrap) j["baselines"]["bootstrap"] = bootstrap_to_json(*cfg.baselines.bootstrap);
    if (cfg.baselines.simulation) j["baselines"]["simulation"] = oracle_to_json(*cfg.baselines.simulation);
    if (!cfg.eval.is_null()) j["eval"] = cfg.eval;
    if (cfg.holdout_fraction > 0.0) j["holdout_fraction"] = cfg.holdout_fraction;
    j["output"] = cfg.output;
    j["root_seed"] = cfg.root_seed;
    if (cfg.experiment == ExperimentConfig::Kind::Coverage) {
        j["coverage"]["replicates"] = cfg.coverage.replicates;
        j["coverage"]["grid"] = cfg.coverage.grid;
        j["coverage"]["target"] = cfg.coverage.target;
        if (cfg.coverage.psi0) j["coverage"]["psi0"] = *cfg.coverage.psi0;
    }
    if (cfg.experiment == ExperimentConfig::Kind::Convergence) {
        j["convergence"]["n_list"] = nlohmann::json::array();
        for (Eigen::Index n : cfg.convergence.n_list)
            j["convergence"]["n_list"].push_back(static_cast<long long>(n));
        j["convergence"]["lambda_list"] = cfg.convergence.lambda_list;
        j["convergence"]["replicates"] = cfg.convergence.replicates;
        j["convergence"]["sim_replicates"] = cfg.convergence.sim_replicates;
    }
    if (cfg.experiment == ExperimentConfig::Kind::Fisher)
        j["fisher"]["lambda"] = cfg.fisher.lambda;
    return j;
}

void apply_override(nlohmann::json& root, const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("override: empty key");
    std::vector<std::string> parts;
    std::string::size_type start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
        if (parts.back().empty()) throw ConfigError("override '" + key + "': empty path segment");
        if (dot == std::string::npos) break;
        start = dot + 1;
    }

    nlohmann::json* node = &root;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object() && !node->is_null())
            throw ConfigError("override '" + key + "': path crosses a non-object value");
        node = &(*node)[parts[i]];
    }
    if (!node->is_object() && !node->is_null())
        throw ConfigError("override '" + key + "': path crosses a non-object value");

    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    (*node)[parts.back()] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
}

namespace {

// Shared per-experiment state: data, evaluation, base fit, resolved lambda.
struct Workbench {
    Dataset train;
    std::shared_ptr<const Dataset> eval_set;
    EvalFn psi;
    FitResult mle;
    OptimizerConfig opt;
    double lambda = 0.0;
    bool eval_independent = false;
    uint64_t dgp_seed = 0;
    double mle_seconds = 0.0;
};

OptimizerConfig resolved_optimizer(const ExperimentConfig& cfg) {
    OptimizerConfig opt = cfg.optimizer;
    if (opt.seed == 0) opt.seed = derive_seed(cfg.root_seed, kStreamOpt);
    return opt;
}

Workbench prepare(const ExperimentConfig& cfg, bool need_eval) {
    Workbench wb;
    wb.opt = resolved_optimizer(cfg);
    wb.dgp_seed = cfg.dgp.seed != 0 ? cfg.dgp.seed : derive_seed(cfg.root_seed, kStreamDgp);

    if (!cfg.data_csv.empty()) {
        wb.train = load_csv(cfg.data_csv);
    } else if (cfg.dgp.kind == DGPSpec::Kind::Newsvendor) {
        DGPSpec spec = cfg.dgp;
        spec.seed = wb.dgp_seed;
        NewsvendorTask task = gen_newsvendor(spec, cfg.model);
        wb.train = std::move(task.train);
        wb.psi = std::move(task.unmet_demand);
        wb.eval_set = wb.psi.eval_set;
        wb.eval_independent = true;
    } else {
        DGPSpec spec = cfg.dgp;
        spec.seed = wb.dgp_seed;
        wb.train = generate(spec);
    }

    if (cfg.holdout_fraction > 0.0) {
        auto split = holdout_split(wb.train, cfg.holdout_fraction,
                                   derive_seed(cfg.root_seed, kStreamHoldout));
        wb.train = std::move(split.first);
        wb.eval_set = std::make_shared<Dataset>(std::move(split.second));
        wb.eval_independent = true;
    }

    if (need_eval && wb.psi.arity() == 0) {
        if (cfg.eval.is_null()) throw ConfigError("config: missing 'eval' specification");
        wb.psi = make_eval_fn(cfg.eval, cfg.model, wb.eval_set.get());
    }

    const ParamVec init = init_params(cfg.model, wb.train.feature_dim(),
                                      derive_seed(cfg.root_seed, kStreamInit));
    const auto t0 = std::chrono::steady_clock::now();
    wb.mle = fit_mle(cfg.model, wb.train, init, wb.opt);
    wb.mle_seconds = seconds_since(t0);

    wb.lambda = cfg.idm.lambda_auto
                    ? default_lambda(likelihood_scale_objective(cfg.model, wb.mle.theta, wb.train))
                    : cfg.idm.lambda;
    return wb;
}

// Regularized-refit variance with the family-appropriate objective scale.
VarEstimate run_var_estimate(const LikelihoodModel& model, const Dataset& data, const EvalFn& psi,
                             double lambda, const FitResult& warm, const OptimizerConfig& opt,
                             bool central) {
    if (model.family.name == Family::Name::GaussianSse)
        return fdidm_sse(model, data, psi, lambda, warm, opt, central);
    return fdidm(model, data, psi, lambda, warm, opt, central);
}

Interval interval_from_variance(double psi_hat, double var, double beta) {
    VarEstimate v;
    v.value = var;
    v.raw_negative = var < 0.0;
    return confidence_interval(psi_hat, v, beta);
}

nlohmann::json interval_json(const Interval& ci) {
    return {{"lo", ci.lower}, {"hi", ci.upper}, {"beta", ci.beta}};
}

nlohmann::json method_entry(const std::string& method, double psi_hat,
                            const nlohmann::json& lambda, double variance, double var_eval_set,
                            const Interval& ci, bool raw_negative, int fit_iters, int fit_count) {
    nlohmann::json j;
    j["method"] = method;
    j["psi_hat"] = psi_hat;
    j["lambda"] = lambda;
    j["var_fdidm"] = variance;
    j["var_eval_set"] = var_eval_set;
    j["interval"] = interval_json(ci);
    j["diagnostics"] = {{"raw_negative", raw_negative}, {"fit_iters", fit_iters}};
    j["fit_count"] = fit_count;
    return j;
}

std::vector<double> row_major(const Eigen::MatrixXd& m) {
    std::vector<double> v;
    v.reserve(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
    return v;
}

nlohmann::json cov_json(const CovMatrix& cm) {
    nlohmann::json j;
    j["k"] = cm.raw.rows();
    j["raw"] = row_major(cm.raw);
    j["projected"] = row_major(cm.projected);
    j["symmetrized"] = cm.symmetrized;
    j["psd_projected"] = cm.psd_projected;
    j["fit_count"] = cm.fit_count;
    return j;
}

nlohmann::json mle_json(const FitResult& mle) {
    nlohmann::json j;
    j["objective"] = mle.objective_value;
    j["iterations"] = mle.iterations;
    j["converged"] = mle.converged;
    if (std::isfinite(mle.grad_norm_final)) j["grad_norm_final"] = mle.grad_norm_final;
    return j;
}

nlohmann::json resolved_config(const ExperimentConfig& cfg, const Workbench* wb) {
    ExperimentConfig r = cfg;
    r.optimizer = resolved_optimizer(cfg);
    nlohmann::json j = config_to_json(r);
    if (wb != nullptr) {
        j["dgp"]["seed"] = wb->dgp_seed;
        if (cfg.idm.lambda_auto) {
            j["idm"]["lambda"] = wb->lambda;
            j["idm"]["lambda_requested"] = "auto";
        }
    }
    return j;
}

void note(ExperimentResult& out, const std::string& msg) {
    out.diagnostics = true;
    out.diagnostic_messages.push_back(msg);
}

// Feature vector the model sees for raw scalar input x under this DGP.
Eigen::VectorXd feature_for(const DGPSpec& spec, double x) {
    if (spec.kind == DGPSpec::Kind::Quadratic) {
        if (spec.drop_features) return Eigen::VectorXd(0);
        if (spec.quadratic_features) return quadratic_feature(x);
    }
    Eigen::VectorXd f(1);
    f << x;
    return f;
}

ParamVec coverage_true_params(const ExperimentConfig& cfg) {
    if (cfg.dgp.kind == DGPSpec::Kind::Newsvendor) return newsvendor_theta0();
    if (cfg.dgp.kind == DGPSpec::Kind::LogisticClass && cfg.dgp.theta0.size() > 0)
        return cfg.dgp.theta0;
    throw ConfigError(
        "coverage: replicate targets need a DGP with true parameters "
        "(newsvendor or logistic_class)");
}

// First captured replicate failure, rethrown for its message.
std::string first_error(const std::vector<std::exception_ptr>& errs) {
    for (const std::exception_ptr& e : errs) {
        if (!e) continue;
        try {
            std::rethrow_exception(e);
        } catch (const std::exception& ex) {
            return ex.what();
        } catch (...) {
            return "unknown error";
        }
    }
    return "";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw Error("write failed: " + path);
}

}  // namespace

ExperimentResult run_interval(const ExperimentConfig& cfg) {
    cfg.validate();
    Workbench wb = prepare(cfg, true);
    ExperimentResult out;
    if (!wb.mle.converged)
        note(out, "base fit did not converge after " + std::to_string(wb.mle.iterations) +
                      " iterations");

    const int K = wb.psi.arity();
    nlohmann::json methods = nlohmann::json::array();
    std::ostringstream csv;
    csv << "method,component,psi_hat,variance,var_eval_set,lo,hi,width,fit_count\n";
    auto csv_row = [&csv](const std::string& method, int comp, double psi_hat, double var,
                          double ves, const Interval& ci, int fits) {
        csv << method << ',' << comp << ',' << fmt(psi_hat) << ',' << fmt(var) << ',' << fmt(ves)
            << ',' << fmt(ci.lower) << ',' << fmt(ci.upper) << ',' << fmt(ci.width()) << ','
            << fits << '\n';
    };

    if (K == 1) {
        const double psi_hat = wb.psi.value(wb.mle.theta);
        const double ves = wb.psi.has_unit_form() ? eval_set_variance(wb.psi, wb.mle.theta) : 0.0;

        if (cfg.idm.sg_steps > 0) {
            const Interval ci = sg_fdidm(cfg.model, wb.train, wb.psi, wb.lambda, cfg.idm.sg_steps,
                                         cfg.idm.beta, wb.opt);
            if (ci.raw_negative)
                note(out, "stochastic pipeline averaged difference was negative; width clamped");
            const double z = normal_quantile(0.5 * (1.0 + ci.beta));
            const double halfw = 0.5 * ci.width();
            const double var = (halfw / z) * (halfw / z);
            methods.push_back(
                method_entry("sg_fdidm", ci.center, wb.lambda, var, ves, ci, ci.raw_negative, 0, 2));
            csv_row("sg_fdidm", 0, ci.center, var, ves, ci, 2);
        } else {
            const VarEstimate v = run_var_estimate(cfg.model, wb.train, wb.psi, wb.lambda, wb.mle,
                                                   wb.opt, cfg.idm.central_diff);
            if (v.raw_negative) note(out, "raw finite-difference variance was negative");
            const Interval ci = confidence_interval(psi_hat, v, cfg.idm.beta);
            const int fits = 1 + (cfg.idm.central_diff ? 2 : 1);
            methods.push_back(method_entry("fdidm", psi_hat, wb.lambda, v.value, ves, ci,
                                           v.raw_negative, v.fit_iterations, fits));
            csv_row("fdidm", 0, psi_hat, v.value, ves, ci, fits);
        }

        if (cfg.baselines.delta) {
            const CovMatrix cm = delta_method_variance(cfg.model, wb.train, wb.mle.theta, wb.psi);
            const double var = cm.projected(0, 0);
            const Interval ci = interval_from_variance(psi_hat, var, cfg.idm.beta);
            methods.push_back(method_entry("delta", psi_hat, nullptr, var, ves, ci, false, 0, 1));
            csv_row("delta", 0, psi_hat, var, ves, ci, 1);
        }
        if (cfg.baselines.bootstrap) {
            BootstrapConfig bc = *cfg.baselines.bootstrap;
            if (bc.seed == 0) bc.seed = derive_seed(cfg.root_seed, kStreamBootstrap);
            const CovMatrix cm =
                bootstrap_variance(cfg.model, wb.train, wb.psi, wb.mle, wb.opt, bc);
            const double var = cm.projected(0, 0);
            const Interval ci = interval_from_variance(psi_hat, var, cfg.idm.beta);
            methods.push_back(
                method_entry("bootstrap", psi_hat, nullptr, var, ves, ci, false, 0, cm.fit_count));
            csv_row("bootstrap", 0, psi_hat, var, ves, ci, cm.fit_count);
        }
        if (cfg.baselines.simulation) {
            DGPOracleConfig oc = *cfg.baselines.simulation;
            if (oc.seed == 0) oc.seed = derive_seed(cfg.root_seed, kStreamSim);
            DGPSpec spec = cfg.dgp;
            const CovMatrix cm = true_sampling_variance(spec, cfg.model, wb.psi, wb.opt, oc);
            const double var = cm.projected(0, 0);
            const Interval ci = interval_from_variance(psi_hat, var, cfg.idm.beta);
            methods.push_back(
                method_entry("simulation", psi_hat, nullptr, var, ves, ci, false, 0, cm.fit_count));
            csv_row("simulation", 0, psi_hat, var, ves, ci, cm.fit_count);
        }
    } else {
        Eigen::VectorXd psi_hat(K);
        for (int k = 0; k < K; ++k) psi_hat(k) = wb.psi.value(wb.mle.theta, k);

        auto matrix_entry = [&](const std::string& method, const CovMatrix& cm, int fits,
                                const nlohmann::json& lambda) {
            nlohmann::json j;
            j["method"] = method;
            j["psi_hat"] = std::vector<double>(psi_hat.data(), psi_hat.data() + K);
            j["lambda"] = lambda;
            j["cov"] = cov_json(cm);
            nlohmann::json intervals = nlohmann::json::array();
            for (int k = 0; k < K; ++k) {
                const Interval ci =
                    interval_from_variance(psi_hat(k), cm.projected(k, k), cfg.idm.beta);
                intervals.push_back(interval_json(ci));
                csv_row(method, k, psi_hat(k), cm.projected(k, k), 0.0, ci, fits);
            }
            j["intervals"] = intervals;
            j["fit_count"] = fits;
            bool raw_negative = false;
            for (int k = 0; k < K; ++k) raw_negative = raw_negative || cm.raw(k, k) < 0.0;
            j["diagnostics"] = {{"raw_negative", raw_negative}, {"fit_iters", 0}};
            if (raw_negative && method == "mv_fdidm")
                note(out, "raw finite-difference covariance had a negative diagonal entry");
            methods.push_back(j);
        };

        const CovMatrix cm =
            mv_fdidm(cfg.model, wb.train, wb.psi, wb.lambda, wb.mle, wb.opt);
        matrix_entry("mv_fdidm", cm, cm.fit_count + 1, wb.lambda);

        if (cfg.baselines.delta) {
            const CovMatrix dm = delta_method_variance(cfg.model, wb.train, wb.mle.theta, wb.psi);
            matrix_entry("delta", dm, 1, nullptr);
        }
        if (cfg.baselines.bootstrap) {
            BootstrapConfig bc = *cfg.baselines.bootstrap;
            if (bc.seed == 0) bc.seed = derive_seed(cfg.root_seed, kStreamBootstrap);
            const CovMatrix bm =
                bootstrap_variance(cfg.model, wb.train, wb.psi, wb.mle, wb.opt, bc);
            matrix_entry("bootstrap", bm, bm.fit_count, nullptr);
        }
        if (cfg.baselines.simulation) {
            DGPOracleConfig oc = *cfg.baselines.simulation;
            if (oc.seed == 0) oc.seed = derive_seed(cfg.root_seed, kStreamSim);
            const CovMatrix sm = true_sampling_variance(cfg.dgp, cfg.model, wb.psi, wb.opt, oc);
            matrix_entry("simulation", sm, sm.fit_count, nullptr);
        }
    }

    nlohmann::json rep;
    rep["experiment"] = "interval";
    rep["config"] = resolved_config(cfg, &wb);
    rep["n"] = static_cast<long long>(wb.train.n());
    rep["mle"] = mle_json(wb.mle);
    rep["methods"] = methods;
    rep["diagnostic_messages"] = out.diagnostic_messages;
    out.report = std::move(rep);
    out.csv = csv.str();
    return out;
}

ExperimentResult run_coverage(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentResult out;
    const int R = cfg.coverage.replicates;
    const bool per_replicate = cfg.coverage.target == "replicate";

    // Fixed targets (grid points or a single configured evaluation).
    struct Target {
        double x0 = 0.0;
        bool has_x0 = false;
        double psi0 = 0.0;  // per_replicate mode fills per replicate instead
        EvalFn psi;         // empty in per_replicate mode (built per replicate)
    };
    std::vector<Target> targets;
    if (!cfg.coverage.grid.empty()) {
        for (double x : cfg.coverage.grid) {
            Target t;
            t.x0 = x;
            t.has_x0 = true;
            Eigen::VectorXd x1(1);
            x1 << x;
            t.psi0 = dgp_true_mean(cfg.dgp, x1);
            t.psi = make_point_prediction(cfg.model, feature_for(cfg.dgp, x));
            targets.push_back(std::move(t));
        }
    } else {
        Target t;
        if (!per_replicate) {
            if (!cfg.coverage.psi0)
                throw ConfigError(
                    "coverage: gridless theta0 targets need an explicit coverage.psi0");
            t.psi0 = *cfg.coverage.psi0;
            if (cfg.dgp.kind == DGPSpec::Kind::Newsvendor)
                throw ConfigError("coverage: newsvendor targets must use target \"replicate\"");
            if (cfg.eval.is_null()) throw ConfigError("config: missing 'eval' specification");
            t.psi = make_eval_fn(cfg.eval, cfg.model, nullptr);
        }
        targets.push_back(std::move(t));
    }
    const int G = static_cast<int>(targets.size());
    const ParamVec true_params = per_replicate ? coverage_true_params(cfg) : ParamVec();

    std::vector<char> ok(static_cast<size_t>(R), 0);
    std::vector<char> hit(static_cast<size_t>(G * R), 0);
    std::vector<double> width(static_cast<size_t>(G * R), 0.0);
    std::vector<double> variance(static_cast<size_t>(G * R), 0.0);
    std::vector<double> psi0_rep(static_cast<size_t>(R), 0.0);
    std::vector<char> rawneg(static_cast<size_t>(R), 0);
    std::vector<char> unconverged(static_cast<size_t>(R), 0);
    std::vector<std::exception_ptr> errs(static_cast<size_t>(R));

#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < R; ++r) {
        try {
            const uint64_t rep_root = replicate_root(cfg.root_seed, 0, r);
            DGPSpec spec = cfg.dgp;
            spec.seed = derive_seed(rep_root, 0);

            Dataset train;
            EvalFn rep_psi;
            if (spec.kind == DGPSpec::Kind::Newsvendor) {
                NewsvendorTask task = gen_newsvendor(spec, cfg.model);
                train = std::move(task.train);
                rep_psi = std::move(task.unmet_demand);
            } else {
                train = generate(spec);
                if (per_replicate) {
                    std::shared_ptr<const Dataset> ev;
                    if (cfg.holdout_fraction > 0.0) {
                        auto split =
                            holdout_split(train, cfg.holdout_fraction, derive_seed(rep_root, 3));
                        train = std::move(split.first);
                        ev = std::make_shared<Dataset>(std::move(split.second));
                    }
                    if (cfg.eval.is_null())
                        throw ConfigError("config: missing 'eval' specification");
                    rep_psi = make_eval_fn(cfg.eval, cfg.model, ev.get());
                }
            }

            OptimizerConfig opt = cfg.optimizer;
            opt.seed = derive_seed(rep_root, 2);
            const ParamVec init =
                init_params(cfg.model, train.feature_dim(), derive_seed(rep_root, 1));
            const FitResult mle = fit_mle(cfg.model, train, init, opt);
            if (!mle.converged) unconverged[static_cast<size_t>(r)] = 1;

            const double lambda =
                cfg.idm.lambda_auto
                    ? default_lambda(likelihood_scale_objective(cfg.model, mle.theta, train))
                    : cfg.idm.lambda;

            for (int g = 0; g < G; ++g) {
                const EvalFn& psi = per_replicate ? rep_psi : targets[static_cast<size_t>(g)].psi;
                const VarEstimate v = run_var_estimate(cfg.model, train, psi, lambda, mle, opt,
                                                       cfg.idm.central_diff);
                if (v.raw_negative) rawneg[static_cast<size_t>(r)] = 1;
                const double psi_hat = psi.value(mle.theta);
                const Interval ci = confidence_interval(psi_hat, v, cfg.idm.beta);
                const double psi0 = per_replicate ? psi.value(true_params)
                                                  : targets[static_cast<size_t>(g)].psi0;
                if (per_replicate) psi0_rep[static_cast<size_t>(r)] = psi0;
                const size_t cell = static_cast<size_t>(g * R + r);
                hit[cell] = ci.contains(psi0) ? 1 : 0;
                width[cell] = ci.width();
                variance[cell] = v.value;
            }
            ok[static_cast<size_t>(r)] = 1;
        } catch (...) {
            errs[static_cast<size_t>(r)] = std::current_exception();
        }
    }

    int used = 0;
    for (char o : ok) used += o;
    const int failed = R - used;
    if (failed * 20 > R)
        throw NumericError("coverage: " + std::to_string(failed) + " of " + std::to_string(R) +
                           " replicates failed; first error: " + first_error(errs));
    if (failed > 0)
        note(out, std::to_string(failed) + " replicate(s) failed and were excluded; first error: " +
                      first_error(errs));
    if (used == 0) throw NumericError("coverage: no successful replicates");

    int raw_negative_reps = 0;
    int unconverged_fits = 0;
    for (int r = 0; r < R; ++r) {
        if (!ok[static_cast<size_t>(r)]) continue;
        raw_negative_reps += rawneg[static_cast<size_t>(r)];
        unconverged_fits += unconverged[static_cast<size_t>(r)];
    }
    if (raw_negative_reps > 0)
        note(out, std::to_string(raw_negative_reps) +
                      " replicate(s) produced a negative raw variance (clamped in intervals)");

    std::ostringstream csv;
    csv << "target,x0,psi0,replicates,hits,rate,mean_width\n";
    nlohmann::json rows = nlohmann::json::array();
    long total_hits = 0;
    double total_width = 0.0;
    double min_variance = std::numeric_limits<double>::infinity();
    bool all_finite = true;

    for (int g = 0; g < G; ++g) {
        long hits = 0;
        double wsum = 0.0;
        double psi0_sum = 0.0;
        for (int r = 0; r < R; ++r) {
            if (!ok[static_cast<size_t>(r)]) continue;
            const size_t cell = static_cast<size_t>(g * R + r);
            hits += hit[cell];
            wsum += width[cell];
            psi0_sum += per_replicate ? psi0_rep[static_cast<size_t>(r)]
                                      : targets[static_cast<size_t>(g)].psi0;
            if (!std::isfinite(variance[cell])) all_finite = false;
            min_variance = std::min(min_variance, variance[cell]);
        }
        const double rate = static_cast<double>(hits) / used;
        const double mean_width = wsum / used;
        const double psi0 = psi0_sum / used;

        nlohmann::json row;
        row["target"] = g;
        if (targets[static_cast<size_t>(g)].has_x0) row["x0"] = targets[static_cast<size_t>(g)].x0;
        row["psi0"] = psi0;
        row["replicates"] = used;
        row["hits"] = hits;
        row["rate"] = rate;
        row["mean_width"] = mean_width;
        rows.push_back(row);

        csv << g << ','
            << (targets[static_cast<size_t>(g)].has_x0 ? fmt(targets[static_cast<size_t>(g)].x0)
                                                       : std::string())
            << ',' << fmt(psi0) << ',' << used << ',' << hits << ',' << fmt(rate) << ','
            << fmt(mean_width) << '\n';
        total_hits += hits;
        total_width += wsum;
    }

    const long total_cells = static_cast<long>(G) * used;
    nlohmann::json aggregate;
    aggregate["replicates"] = used;
    aggregate["targets"] = G;
    aggregate["hits"] = total_hits;
    aggregate["rate"] = static_cast<double>(total_hits) / total_cells;
    aggregate["mean_width"] = total_width / total_cells;
    csv << "aggregate,," << ',' << used << ',' << total_hits << ','
        << fmt(static_cast<double>(total_hits) / total_cells) << ','
        << fmt(total_width / total_cells) << '\n';

    nlohmann::json rep;
    rep["experiment"] = "coverage";
    rep["config"] = resolved_config(cfg, nullptr);
    rep["targets"] = rows;
    rep["aggregate"] = aggregate;
    rep["failed_replicates"] = failed;
    rep["raw_negative_replicates"] = raw_negative_reps;
    rep["unconverged_fits"] = unconverged_fits;
    rep["all_variances_finite"] = all_finite;
    rep["min_variance"] = min_variance;
    rep["diagnostic_messages"] = out.diagnostic_messages;
    out.report = std::move(rep);
    out.csv = csv.str();
    return out;
}

ExperimentResult run_convergence(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentResult out;
    if (cfg.eval.is_null()) throw ConfigError("config: missing 'eval' specification");
    const EvalFn psi = make_eval_fn(cfg.eval, cfg.model, nullptr);
    const int R = cfg.convergence.replicates;
    const int NL = static_cast<int>(cfg.convergence.n_list.size());
    const int LL = static_cast<int>(cfg.convergence.lambda_list.size());

    std::ostringstream csv;
    csv << "n,method,lambda,mean_scaled_sq_error,se,replicates\n";
    nlohmann::json rows = nlohmann::json::array();
    nlohmann::json oracles = nlohmann::json::array();
    int total_failed = 0;

    for (int ni = 0; ni < NL; ++ni) {
        const Eigen::Index n = cfg.convergence.n_list[static_cast<size_t>(ni)];
        DGPSpec dspec = cfg.dgp;
        dspec.n = n;

        DGPOracleConfig oc;
        oc.replicates = cfg.convergence.sim_replicates;
        oc.seed = derive_seed(derive_seed(cfg.root_seed, kStreamSim), static_cast<uint64_t>(ni));
        const CovMatrix truth = true_sampling_variance(dspec, cfg.model, psi, cfg.optimizer, oc);
        const double v_star = truth.projected(0, 0);
        oracles.push_back({{"n", static_cast<long long>(n)}, {"v_star", v_star}});

        // Shared replicates: one dataset and base fit per r, reused for
        // every lambda and for the reference method.
        std::vector<char> ok(static_cast<size_t>(R), 0);
        std::vector<double> err_l(static_cast<size_t>(LL * R), 0.0);
        std::vector<double> err_delta(static_cast<size_t>(R), 0.0);
        std::vector<std::exception_ptr> errs(static_cast<size_t>(R));

#pragma omp parallel for schedule(dynamic)
        for (int r = 0; r < R; ++r) {
            try {
                const uint64_t rep_root =
                    replicate_root(cfg.root_seed, static_cast<uint64_t>(1 + ni), r);
                DGPSpec spec = dspec;
                spec.seed = derive_seed(rep_root, 0);
                const Dataset train = generate(spec);
                OptimizerConfig opt = cfg.optimizer;
                opt.seed = derive_seed(rep_root, 2);
                const ParamVec init =
                    init_params(cfg.model, train.feature_dim(), derive_seed(rep_root, 1));
                const FitResult mle = fit_mle(cfg.model, train, init, opt);

                for (int li = 0; li < LL; ++li) {
                    const double lambda = cfg.convergence.lambda_list[static_cast<size_t>(li)];
                    const VarEstimate v = run_var_estimate(cfg.model, train, psi, lambda, mle,
                                                           opt, cfg.idm.central_diff);
                    const double scaled = static_cast<double>(n) * (v.value - v_star);
                    err_l[static_cast<size_t>(li * R + r)] = scaled * scaled;
                }
                const CovMatrix dm =
                    delta_method_variance(cfg.model, train, mle.theta, psi);
                const double scaled = static_cast<double>(n) * (dm.projected(0, 0) - v_star);
                err_delta[static_cast<size_t>(r)] = scaled * scaled;
                ok[static_cast<size_t>(r)] = 1;
            } catch (...) {
                errs[static_cast<size_t>(r)] = std::current_exception();
            }
        }

        int used = 0;
        for (char o : ok) used += o;
        const int failed = R - used;
        total_failed += failed;
        if (failed * 20 > R)
            throw NumericError("convergence: n=" + std::to_string(n) + ": " +
                               std::to_string(failed) + " of " + std::to_string(R) +
                               " replicates failed; first error: " + first_error(errs));
        if (used < 2)
            throw NumericError("convergence: n=" + std::to_string(n) +
                               ": fewer than 2 successful replicates");

        auto mean_se = [&](auto value_at) {
            double mean = 0.0;
            for (int r = 0; r < R; ++r)
                if (ok[static_cast<size_t>(r)]) mean += value_at(r);
            mean /= used;
            double ss = 0.0;
            for (int r = 0; r < R; ++r) {
                if (!ok[static_cast<size_t>(r)]) continue;
                const double d = value_at(r) - mean;
                ss += d * d;
            }
            const double se = std::sqrt(ss / (used - 1) / used);
            return std::pair<double, double>(mean, se);
        };

        for (int li = 0; li < LL; ++li) {
            const double lambda = cfg.convergence.lambda_list[static_cast<size_t>(li)];
            const auto [mean, se] =
                mean_se([&](int r) { return err_l[static_cast<size_t>(li * R + r)]; });
            nlohmann::json row;
            row["n"] = static_cast<long long>(n);
            row["method"] = "fdidm";
            row["lambda"] = lambda;
            row["mean_scaled_sq_error"] = mean;
            row["se"] = se;
            row["replicates"] = used;
            rows.push_back(row);
            csv << n << ",fdidm," << fmt(lambda) << ',' << fmt(mean) << ',' << fmt(se) << ','
                << used << '\n';
        }
        const auto [dmean, dse] = mean_se([&](int r) { return err_delta[static_cast<size_t>(r)]; });
        nlohmann::json drow;
        drow["n"] = static_cast<long long>(n);
        drow["method"] = "delta";
        drow["mean_scaled_sq_error"] = dmean;
        drow["se"] = dse;
        drow["replicates"] = used;
        rows.push_back(drow);
        csv << n << ",delta,," << fmt(dmean) << ',' << fmt(dse) << ',' << used << '\n';
    }

    if (total_failed > 0)
        note(out, std::to_string(total_failed) + " replicate(s) failed and were excluded");

    nlohmann::json rep;
    rep["experiment"] = "convergence";
    rep["config"] = resolved_config(cfg, nullptr);
    rep["oracles"] = oracles;
    rep["rows"] = rows;
    rep["failed_replicates"] = total_failed;
    rep["diagnostic_messages"] = out.diagnostic_messages;
    out.report = std::move(rep);
    out.csv = csv.str();
    return out;
}

ExperimentResult run_runtime(const ExperimentConfig& cfg) {
    cfg.validate();
    Workbench wb = prepare(cfg, true);
    ExperimentResult out;
    if (!wb.mle.converged)
        note(out, "base fit did not converge after " + std::to_string(wb.mle.iterations) +
                      " iterations");
    const int K = wb.psi.arity();

    auto t0 = std::chrono::steady_clock::now();
    double idm_var = 0.0;
    int idm_fits = 0;
    bool raw_negative = false;
    if (K == 1) {
        const VarEstimate v = run_var_estimate(cfg.model, wb.train, wb.psi, wb.lambda, wb.mle,
                                               wb.opt, cfg.idm.central_diff);
        idm_var = v.value;
        raw_negative = v.raw_negative;
        idm_fits = 1 + (cfg.idm.central_diff ? 2 : 1);
    } else {
        const CovMatrix cm = mv_fdidm(cfg.model, wb.train, wb.psi, wb.lambda, wb.mle, wb.opt);
        if (cm.fit_count != K)
            throw NumericError("runtime: expected " + std::to_string(K) +
                               " component fits, counted " + std::to_string(cm.fit_count));
        idm_var = cm.projected(0, 0);
        idm_fits = 1 + cm.fit_count;
    }
    const double idm_seconds = seconds_since(t0);
    if (raw_negative) note(out, "raw finite-difference variance was negative");

    BootstrapConfig bc = *cfg.baselines.bootstrap;
    if (bc.seed == 0) bc.seed = derive_seed(cfg.root_seed, kStreamBootstrap);
    t0 = std::chrono::steady_clock::now();
    const CovMatrix bm = bootstrap_variance(cfg.model, wb.train, wb.psi, wb.mle, wb.opt, bc);
    const double boot_seconds = seconds_since(t0);
    if (bm.fit_count != bc.B)
        throw NumericError("runtime: bootstrap attempted " + std::to_string(bm.fit_count) +
                           " fits, configured " + std::to_string(bc.B));

    const double idm_total = wb.mle_seconds + idm_seconds;
    std::ostringstream csv;
    csv << "method,fit_count,seconds,variance\n";
    csv << "idm," << idm_fits << ',' << fmt(idm_total) << ',' << fmt(idm_var) << '\n';
    csv << "bootstrap," << bc.B << ',' << fmt(boot_seconds) << ',' << fmt(bm.projected(0, 0))
        << '\n';

    nlohmann::json rep;
    rep["experiment"] = "runtime";
    rep["config"] = resolved_config(cfg, &wb);
    rep["n"] = static_cast<long long>(wb.train.n());
    rep["mle"] = mle_json(wb.mle);
    rep["idm"] = {{"fit_count", idm_fits},
                  {"seconds", idm_total},
                  {"mle_seconds", wb.mle_seconds},
                  {"estimator_seconds", idm_seconds},
                  {"variance", idm_var}};
    rep["bootstrap"] = {{"fit_count", bc.B},
                        {"seconds", boot_seconds},
                        {"variance", bm.projected(0, 0)}};
    rep["idm_faster"] = idm_total < boot_seconds;
    rep["diagnostic_messages"] = out.diagnostic_messages;
    out.report = std::move(rep);
    out.csv = csv.str();
    return out;
}

ExperimentResult run_fisher(const ExperimentConfig& cfg) {
    cfg.validate();
    Workbench wb = prepare(cfg, false);
    ExperimentResult out;
    if (!wb.mle.converged)
        note(out, "base fit did not converge after " + std::to_string(wb.mle.iterations) +
                      " iterations");

    const Eigen::MatrixXd approx =
        fisher_inverse_idm(cfg.model, wb.train, wb.mle, cfg.fisher.lambda, wb.opt);

    const Eigen::MatrixXd h = hessian_log_likelihood(cfg.model, wb.mle.theta, wb.train);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-h);
    if (es.info() != Eigen::Success)
        throw NumericError("fisher: eigendecomposition of the Hessian failed");
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw SingularityError("fisher: observed information is not positive definite");
    const Eigen::MatrixXd oracle = static_cast<double>(wb.train.n()) * es.eigenvectors() *
                                   es.eigenvalues().cwiseInverse().asDiagonal() *
                                   es.eigenvectors().transpose();

    const double rel = (approx - oracle).norm() / oracle.norm();

    nlohmann::json rep;
    rep["experiment"] = "fisher";
    rep["config"] = resolved_config(cfg, &wb);
    rep["n"] = static_cast<long long>(wb.train.n());
    rep["d"] = approx.rows();
    rep["lambda"] = cfg.fisher.lambda;
    rep["mle"] = mle_json(wb.mle);
    rep["fisher_inverse"] = row_major(approx);
    rep["oracle"] = row_major(oracle);
    rep["frobenius_rel_error"] = rel;
    rep["diagnostic_messages"] = out.diagnostic_messages;
    out.report = std::move(rep);
    out.csv.clear();
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("IDM_THREADS")) {
        const int t = std::atoi(env);
        if (t >= 1) omp_set_num_threads(t);
    }

    ExperimentResult result;
    switch (cfg.experiment) {
        case ExperimentConfig::Kind::Interval: result = run_interval(cfg); break;
        case ExperimentConfig::Kind::Coverage: result = run_coverage(cfg); break;
        case ExperimentConfig::Kind::Convergence: result = run_convergence(cfg); break;
        case ExperimentConfig::Kind::Runtime: result = run_runtime(cfg); break;
        case ExperimentConfig::Kind::Fisher: result = run_fisher(cfg); break;
    }

    write_text(cfg.output + ".json", result.report.dump(2) + "\n");
    if (!result.csv.empty()) write_text(cfg.output + "_table.csv", result.csv);

    // Timestamps go to the metadata file only, keeping the report and
    // table byte-stable across reruns of the same config.
    char stamp[32] = {0};
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc;
    gmtime_r(&now, &tm_utc);
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    nlohmann::json meta;
    meta["written_at"] = stamp;
    meta["threads"] = omp_get_max_threads();
    meta["output_prefix"] = cfg.output;
    meta["diagnostics"] = result.diagnostics;
    write_text(cfg.output + "_meta.json", meta.dump(2) + "\n");
    return result;
}

int exit_code(const ExperimentResult& result, bool allow_diagnostics) {
    return (result.diagnostics && !allow_diagnostics) ? 3 : 0;
}

}  // namespace idm
