#include "riskgraph/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"

namespace riskgraph {

double auroc(const ScoredSet& s) {
    const size_t n = s.scores.size();
    if (s.labels.size() != n) data_error("undefined_auroc", "scores and labels differ in length");
    size_t n1 = 0;
    for (int y : s.labels) {
        if (y != 0 && y != 1) data_error("undefined_auroc", "labels must be 0 or 1");
        n1 += static_cast<size_t>(y);
    }
    const size_t n0 = n - n1;
    if (n < 2 || n1 == 0 || n0 == 0)
        data_error("undefined_auroc", "need at least one case and one control");

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return s.scores[a] < s.scores[b]; });

    double case_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && s.scores[idx[j]] == s.scores[idx[i]]) ++j;
        double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
        for (size_t k = i; k < j; ++k) {
            if (s.labels[idx[k]] == 1) case_rank_sum += avg_rank;
        }
        i = j;
    }
    double u = case_rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
    return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    CsvWriter w(path);
    w.row({"scenario", "model", "regime", "auroc", "n_train", "n_test"});
    for (const auto& r : rows) {
        w.row({std::to_string(r.scenario), r.model, r.regime,
               r.auroc ? fmt_double(*r.auroc) : "absent", std::to_string(r.n_train),
               std::to_string(r.n_test)});
    }
    w.close();
}

std::vector<ResultRow> load_results_csv(const std::string& path) {
    CsvFile f = read_csv(path);
    int c_s = f.column("scenario", path);
    int c_m = f.column("model", path);
    int c_r = f.column("regime", path);
    int c_a = f.column("auroc", path);
    int c_tr = f.column("n_train", path);
    int c_te = f.column("n_test", path);
    std::vector<ResultRow> rows;
    for (const auto& r : f.rows) {
        ResultRow row;
        row.scenario = static_cast<int>(parse_int(r[c_s], "scenario"));
        row.model = r[c_m];
        row.regime = r[c_r];
        if (r[c_a] != "absent") row.auroc = parse_double(r[c_a], "auroc");
        row.n_train = static_cast<int>(parse_int(r[c_tr], "n_train"));
        row.n_test = static_cast<int>(parse_int(r[c_te], "n_test"));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string render_bars(const std::vector<ResultRow>& rows) {
    std::string out;
    for (const auto& r : rows) {
        char head[64];
        std::snprintf(head, sizeof(head), "s%d %-5s %-8s ", r.scenario, r.model.c_str(),
                      r.regime.c_str());
        out += head;
        if (r.auroc) {
            int filled = static_cast<int>(std::lround(*r.auroc * 30.0));
            filled = std::clamp(filled, 0, 30);
            out += '|';
            out.append(static_cast<size_t>(filled), '#');
            out.append(static_cast<size_t>(30 - filled), '.');
            out += "| ";
            out += fmt_double(std::round(*r.auroc * 1e4) / 1e4);
        } else {
            out += "absent";
        }
        out += '\n';
    }
    return out;
}

}  // namespace riskgraph
