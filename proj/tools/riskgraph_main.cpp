#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "riskgraph/errors.hpp"
#include "riskgraph/pipeline.hpp"

using namespace riskgraph;

namespace {

std::vector<int> select_scenarios(const PipelineConfig& cfg, const std::string& sel) {
    std::vector<int> all = cfg.scenarios;
    std::sort(all.begin(), all.end());
    if (sel == "all") return all;
    const int want = sel[0] - '0';
    if (std::find(all.begin(), all.end(), want) == all.end())
        config_error("scenario_not_configured",
                     "--scenario " + sel + " is not in the config's scenario list");
    return {want};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"claims-graph disease risk pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string scenario_sel = "all";
    uint64_t seed_override = 0;
    int threads = 0;
    std::string output_override;
    app.add_option("--config", config_path, "pipeline config JSON file")->required();
    app.add_option("--scenario", scenario_sel, "scenario selection")
        ->check(CLI::IsMember({"1", "2", "3", "all"}))
        ->capture_default_str();
    app.add_option("--seed", seed_override, "override the config's global seed");
    app.add_option("--threads", threads, "cap worker threads (0 = library default)");
    app.add_option("--output", output_override, "override the config's output_dir");

    CLI::App* c_generate = app.add_subcommand("generate", "synthesize a claims dataset");
    CLI::App* c_ingest = app.add_subcommand("ingest", "validate inputs and report code coverage");
    CLI::App* c_cohort = app.add_subcommand("cohort", "build per-scenario cohorts");
    CLI::App* c_match = app.add_subcommand("match", "split, propensity-match, and subset");
    CLI::App* c_train = app.add_subcommand("train", "train one model family");
    CLI::App* c_evaluate = app.add_subcommand("evaluate", "score holdouts into results.csv");
    CLI::App* c_explain = app.add_subcommand("explain", "rank code relations from the graph model");
    CLI::App* c_run_all = app.add_subcommand("run-all", "chain every stage for each scenario");
    for (CLI::App* sub : {c_generate, c_ingest, c_cohort, c_match, c_train, c_evaluate, c_explain,
                          c_run_all})
        sub->fallthrough();

    std::string train_model;
    c_train->add_option("model", train_model, "vgnn, rf, or gbm")
        ->required()
        ->check(CLI::IsMember({"vgnn", "rf", "gbm"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        PipelineConfig cfg = PipelineConfig::load(config_path);
        if (app.count("--seed")) cfg.seed = seed_override;
        if (!output_override.empty()) cfg.output_dir = output_override;
        cfg.validate();
        const std::vector<int> scenarios = select_scenarios(cfg, scenario_sel);
#ifdef _OPENMP
        if (threads > 0) omp_set_num_threads(threads);
#endif

        if (*c_generate) run_generate(cfg);
        if (*c_ingest) run_ingest(cfg);
        if (*c_cohort)
            for (int s : scenarios) run_cohort(cfg, s);
        if (*c_match)
            for (int s : scenarios) run_match(cfg, s);
        if (*c_train)
            for (int s : scenarios) run_train(cfg, s, train_model);
        if (*c_evaluate) run_evaluate(cfg, scenarios);
        if (*c_explain)
            for (int s : scenarios) run_explain(cfg, s);
        if (*c_run_all) run_all(cfg, scenarios);
    } catch (const Error& e) {
        std::cerr << "riskgraph: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "riskgraph: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
