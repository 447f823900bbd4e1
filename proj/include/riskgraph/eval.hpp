#pragma once

#include <optional>
#include <string>
#include <vector>

namespace riskgraph {

struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;  // parallel, {0,1}
};

// P(random case outranks random control), ties counted half, via the
// average-rank Mann-Whitney identity. Needs both classes present.
double auroc(const ScoredSet& s);

struct ResultRow {
    int scenario = 0;
    std::string model;
    std::string regime;
    std::optional<double> auroc;  // empty cell rendered as "absent"
    int n_train = 0;
    int n_test = 0;
};

// results.csv: header scenario,model,regime,auroc,n_train,n_test.
// Timing lives in a sidecar file so this one is byte-stable across reruns.
void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path);
std::vector<ResultRow> load_results_csv(const std::string& path);

// Plain-text AUROC bars for terminals.
std::string render_bars(const std::vector<ResultRow>& rows);

}  // namespace riskgraph
