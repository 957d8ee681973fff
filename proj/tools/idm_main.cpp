#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idm/errors.hpp"
#include "idm/harness.hpp"
#include "json.hpp"

namespace {

struct CliArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_prefix;
    uint64_t seed = 0;
    bool seed_given = false;
    bool out_given = false;
    bool allow_diagnostics = false;
};

// Shared argument set for `run` and the experiment-selecting aliases.
void attach_options(CLI::App* sub, CliArgs& args) {
    sub->add_option("config", args.config_path, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--set", args.overrides,
                    "Override a dotted config path, e.g. --set idm.lambda=0.1")
        ->allow_extra_args(false);
    sub->add_option("--out", args.out_prefix, "Output path prefix (overrides config)")
        ->each([&args](const std::string&) { args.out_given = true; });
    sub->add_option("--seed", args.seed, "Root seed (overrides config)")
        ->each([&args](const std::string&) { args.seed_given = true; });
    sub->add_flag("--allow-diagnostics", args.allow_diagnostics,
                  "Exit 0 even when soft diagnostics fired");
}

int run(const CliArgs& args, const std::string& experiment) {
    std::ifstream in(args.config_path);
    if (!in) {
        std::fprintf(stderr, "error: cannot open %s\n", args.config_path.c_str());
        return 2;
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        std::fprintf(stderr, "config error: %s: %s\n", args.config_path.c_str(), e.what());
        return 2;
    }

    try {
        for (const std::string& kv : args.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0)
                throw idm::ConfigError("--set expects key=value, got '" + kv + "'");
            idm::apply_override(doc, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!experiment.empty()) doc["experiment"] = experiment;
        if (args.out_given) doc["output"] = args.out_prefix;
        if (args.seed_given) doc["root_seed"] = args.seed;

        const idm::ExperimentConfig cfg = idm::config_from_json(doc);
        const idm::ExperimentResult result = idm::run_experiment(cfg);

        for (const std::string& msg : result.diagnostic_messages)
            std::fprintf(stderr, "diagnostic: %s\n", msg.c_str());
        std::printf("wrote %s.json", cfg.output.c_str());
        if (!result.csv.empty()) std::printf(" and %s_table.csv", cfg.output.c_str());
        std::printf("\n");
        return idm::exit_code(result, args.allow_diagnostics);
    } catch (const idm::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Finite-difference implicit delta method experiment runner"};
    app.require_subcommand(1);

    CliArgs args;
    struct Sub {
        CLI::App* cmd;
        std::string experiment;  // empty: keep the config's experiment field
    };
    std::vector<Sub> subs;
    auto add = [&](const std::string& name, const std::string& experiment,
                   const std::string& desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        attach_options(sub, args);
        subs.push_back({sub, experiment});
    };
    add("run", "", "Run the experiment named in the config");
    add("interval", "interval", "Single-dataset interval estimates, all enabled methods");
    add("coverage", "coverage", "Replicated interval coverage against known targets");
    add("convergence", "convergence", "Scaled squared-error sweep over n and lambda");
    add("runtime", "runtime", "Wall-clock and fit-count comparison against the bootstrap");
    add("fisher", "fisher", "Inverse Fisher information from regularized refits");

    CLI11_PARSE(app, argc, argv);

    for (const Sub& s : subs)
        if (s.cmd->parsed()) return run(args, s.experiment);
    std::fprintf(stderr, "error: no subcommand selected\n");
    return 2;
}
