#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "riskgraph/baselines.hpp"
#include "riskgraph/datagen.hpp"
#include "riskgraph/exec.hpp"
#include "riskgraph/explain.hpp"
#include "riskgraph/gnn.hpp"

namespace riskgraph {

inline constexpr const char* kToolVersion = "1.0.0";

// Everything a run needs, read from one JSON file. Input paths and a
// generator section are mutually exclusive: with a generator the pipeline
// synthesizes its own dataset under <output_dir>/data. Per-module seeds are
// never configured directly; they all derive from the global seed.
struct PipelineConfig {
    uint64_t seed = 0;
    std::string output_dir;
    std::vector<int> scenarios{1, 2, 3};

    std::string patients_csv;
    std::string claims_csv;
    std::string code_map_csv;
    std::string case_definition_csv;  // empty -> bundled default definition

    std::optional<GeneratorConfig> generator;

    double test_fraction = 0.2;
    double caliper = 0.2;
    std::optional<int> subset_per_class;

    TrainConfig train;
    TreeEnsembleConfig forest;
    TreeEnsembleConfig gbm;

    int explain_top_k = 5;
    MeanMode mean_mode = MeanMode::GroupSize;
    bool explain_include_self = false;

    // Collects every problem before throwing, so one round trip fixes a bad
    // config file.
    void validate() const;

    static PipelineConfig load(const std::string& path);
};

uint64_t module_seed(uint64_t global_seed, std::string_view module);

// fnv1a64 over the raw bytes, as 16 hex digits.
std::string file_digest(const std::string& path);

std::string data_dir(const PipelineConfig& cfg);
std::string scenario_dir(const PipelineConfig& cfg, int scenario);

void run_generate(const PipelineConfig& cfg);
void run_ingest(const PipelineConfig& cfg);
void run_cohort(const PipelineConfig& cfg, int scenario);
void run_match(const PipelineConfig& cfg, int scenario);

// model is one of "vgnn", "rf", "gbm"; trains the matched regime and, when
// a subset is configured, the subset regime.
void run_train(const PipelineConfig& cfg, int scenario, const std::string& model);

void run_evaluate(const PipelineConfig& cfg, const std::vector<int>& scenarios);
void run_explain(const PipelineConfig& cfg, int scenario);
void run_all(const PipelineConfig& cfg, const std::vector<int>& scenarios);

}  // namespace riskgraph
