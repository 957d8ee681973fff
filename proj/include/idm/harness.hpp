#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "idm/baselines.hpp"
#include "idm/fdidm.hpp"
#include "idm/model.hpp"
#include "idm/optim.hpp"
#include "idm/synthdata.hpp"
#include "json.hpp"

namespace idm {

/// Estimator options shared by the experiments.
struct IdmOptions {
    double lambda = 0.0;      // ignored while lambda_auto is set
    bool lambda_auto = true;  // resolve via default_lambda at the fitted model
    double beta = 0.95;
    bool central_diff = false;
    // S > 0 runs the single-pass stochastic pipeline instead of the
    // fit-then-refit estimator (interval experiment only).
    int sg_steps = 0;
};

struct BaselineOptions {
    bool delta = false;
    std::optional<BootstrapConfig> bootstrap;
    std::optional<DGPOracleConfig> simulation;
};

struct CoverageOptions {
    int replicates = 50;
    // Raw scalar inputs for per-point prediction targets.  Empty grid uses
    // the config's own eval spec as the single target.
    std::vector<double> grid;
    // "theta0": score intervals against the DGP truth (fixed per target).
    // "replicate": recompute the target on each replicate's evaluation set
    // at the true parameters (newsvendor-style random targets).
    std::string target = "theta0";
    // Known target value for gridless theta0 runs whose evaluation has no
    // per-point closed form (marginal means and the like).
    std::optional<double> psi0;
};

struct ConvergenceOptions {
    std::vector<Eigen::Index> n_list;
    std::vector<double> lambda_list;
    int replicates = 50;
    int sim_replicates = 200;  // ground-truth sampling replicates per n
};

struct FisherOptions {
    double lambda = 1.0;
};

/// One experiment specification.  A single JSON document round-trips
/// through config_from_json / config_to_json; CLI --set overrides edit the
/// document before parsing.
struct ExperimentConfig {
    enum class Kind { Interval, Coverage, Convergence, Runtime, Fisher };
    Kind experiment = Kind::Interval;

    DGPSpec dgp;
    std::string data_csv;  // nonempty: load training data from CSV, skip the DGP
    LikelihoodModel model;
    OptimizerConfig optimizer;
    IdmOptions idm;
    BaselineOptions baselines;
    nlohmann::json eval;  // evaluation spec consumed by make_eval_fn
    // > 0 carves the evaluation set out of the generated data before
    // fitting (holdout evaluations only).
    double holdout_fraction = 0.0;
    std::string output = "out";
    uint64_t root_seed = 1;

    CoverageOptions coverage;
    ConvergenceOptions convergence;
    FisherOptions fisher;

    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Set `root` at dotted path `key` ("idm.lambda") to `value` parsed as
/// JSON, falling back to the raw string when it is not valid JSON.
/// Intermediate objects are created as needed.
void apply_override(nlohmann::json& root, const std::string& key, const std::string& value);

/// Outcome of one experiment: the JSON report (with the resolved config
/// embedded), an optional CSV table, and soft diagnostics that do not
/// abort the run but flip the exit code unless explicitly allowed.
struct ExperimentResult {
    nlohmann::json report;
    std::string csv;
    bool diagnostics = false;
    std::vector<std::string> diagnostic_messages;
};

ExperimentResult run_interval(const ExperimentConfig& cfg);
ExperimentResult run_coverage(const ExperimentConfig& cfg);
ExperimentResult run_convergence(const ExperimentConfig& cfg);
ExperimentResult run_runtime(const ExperimentConfig& cfg);
ExperimentResult run_fisher(const ExperimentConfig& cfg);

/// Dispatch on cfg.experiment, cap the worker count from IDM_THREADS, and
/// write <output>.json, <output>_table.csv (tabular experiments), and
/// <output>_meta.json (timestamps live only here, so the other outputs
/// are byte-identical across reruns of the same config).
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// 0 on success, 3 when diagnostics fired and are not allowed.
int exit_code(const ExperimentResult& result, bool allow_diagnostics);

}  // namespace idm
