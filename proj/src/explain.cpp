#include "riskgraph/explain.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"

namespace riskgraph {

namespace {

void check_square(const Matrix& m, int v, const char* what) {
    if (m.rows != v || m.cols != v)
        data_error("shape_mismatch",
                   std::string(what) + " is not aligned with the vocabulary size");
}

const char* sign_name(RelationSign s) {
    return s == RelationSign::Positive ? "positive" : "negative";
}

}  // namespace

RelationMatrix symmetrize(const RelationMatrix& a, const Vocabulary& vocab) {
    const int v = static_cast<int>(vocab.groups.size());
    check_square(a.values, v, "relation matrix");
    RelationMatrix out;
    out.kind = a.kind;
    out.values.resize(v, v);
    for (int i = 0; i < v; ++i) {
        for (int j = i; j < v; ++j) {
            const double m = 0.5 * (a.values.at(i, j) + a.values.at(j, i));
            out.values.at(i, j) = m;
            out.values.at(j, i) = m;
        }
    }
    return out;
}

RelationMatrix group_mean(const std::vector<RelationMatrix>& ms, RelationKind kind,
                          MeanMode mode) {
    if (ms.empty()) data_error("empty_group", "cannot average an empty matrix group");
    const int v = ms[0].values.rows;
    RelationMatrix out;
    out.kind = kind;
    out.values.resize(v, v);
    Matrix support(v, v);
    for (const auto& m : ms) {
        if (!m.values.same_shape(ms[0].values))
            data_error("shape_mismatch", "group matrices differ in shape");
        for (size_t t = 0; t < out.values.a.size(); ++t) {
            out.values.a[t] += m.values.a[t];
            support.a[t] += m.values.a[t] != 0.0 ? 1.0 : 0.0;
        }
    }
    if (mode == MeanMode::GroupSize) {
        const double n = static_cast<double>(ms.size());
        for (auto& x : out.values.a) x /= n;
    } else {
        for (size_t t = 0; t < out.values.a.size(); ++t)
            out.values.a[t] = support.a[t] > 0.0 ? out.values.a[t] / support.a[t] : 0.0;
    }
    return out;
}

RelationMatrix weight_difference(const RelationMatrix& pos, const RelationMatrix& neg) {
    if (!pos.values.same_shape(neg.values))
        data_error("shape_mismatch", "group means are over different vocabularies");
    RelationMatrix out;
    out.kind = RelationKind::WeightDifference;
    out.values = pos.values;
    for (size_t t = 0; t < out.values.a.size(); ++t) out.values.a[t] -= neg.values.a[t];
    return out;
}

std::vector<RankedRelation> top_relations(const RelationMatrix& w, const Vocabulary& vocab,
                                          int k, RelationSign sign, bool include_self) {
    const int v = static_cast<int>(vocab.groups.size());
    check_square(w.values, v, "weight matrix");
    if (k < 1) config_error("bad_rank_count", "k must be at least 1");

    struct Entry {
        double weight;
        int i, j;
    };
    std::vector<Entry> entries;
    for (int i = 0; i < v; ++i) {
        for (int j = include_self ? i : i + 1; j < v; ++j) {
            const double x = w.values.at(i, j);
            if (sign == RelationSign::Positive ? x > 0.0 : x < 0.0)
                entries.push_back({x, i, j});
        }
    }
    std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
        if (a.weight != b.weight)
            return sign == RelationSign::Positive ? a.weight > b.weight : a.weight < b.weight;
        if (a.i != b.i) return vocab.groups[a.i] < vocab.groups[b.i];
        return vocab.groups[a.j] < vocab.groups[b.j];
    });
    if (static_cast<int>(entries.size()) < k) {
        std::cerr << "warning: only " << entries.size() << " " << sign_name(sign)
                  << " relations available, fewer than the " << k << " requested\n";
    } else {
        entries.resize(k);
    }

    std::vector<RankedRelation> out;
    for (size_t r = 0; r < entries.size(); ++r) {
        RankedRelation rel;
        rel.group_a = vocab.groups[entries[r].i];
        rel.group_b = vocab.groups[entries[r].j];
        rel.weight = entries[r].weight;
        rel.rank = static_cast<int>(r) + 1;
        rel.sign = sign;
        out.push_back(std::move(rel));
    }
    return out;
}

ExplainReport explain_cohort(const ModelParams& params, const std::vector<CohortSample>& samples,
                             const Vocabulary& vocab, int k, MeanMode mode, Exec exec) {
    const int v = static_cast<int>(vocab.groups.size());
    const int n = static_cast<int>(samples.size());
    if (params.vocab_size != v)
        data_error("shape_mismatch", "model and vocabulary disagree on size");

    // Chunked extraction keeps memory bounded: a block of patients runs in
    // parallel, then lands in the accumulators in sample order.
    Matrix sum_case(v, v), sum_ctrl(v, v);
    Matrix supp_case(v, v), supp_ctrl(v, v);
    int n_case = 0, n_ctrl = 0;
    const int block = 32;
    std::vector<RelationMatrix> buf(std::min(block, std::max(n, 1)));
    for (int start = 0; start < n; start += block) {
        const int len = std::min(block, n - start);
        run_indexed(len, exec, [&](int bi) {
            const CohortSample& s = samples[start + bi];
            RelationMatrix per;
            per.values = extract_adjacency(params, build_graph(s, vocab));
            buf[bi] = symmetrize(per, vocab);
        });
        for (int bi = 0; bi < len; ++bi) {
            const bool is_case = samples[start + bi].label == 1;
            Matrix& sum = is_case ? sum_case : sum_ctrl;
            Matrix& supp = is_case ? supp_case : supp_ctrl;
            (is_case ? n_case : n_ctrl) += 1;
            for (size_t t = 0; t < sum.a.size(); ++t) {
                sum.a[t] += buf[bi].values.a[t];
                supp.a[t] += buf[bi].values.a[t] != 0.0 ? 1.0 : 0.0;
            }
        }
    }
    if (n_case == 0 || n_ctrl == 0)
        data_error("empty_group", "relation report needs at least one case and one control");

    auto finish = [&](Matrix& sum, const Matrix& supp, int count, RelationKind kind) {
        RelationMatrix m;
        m.kind = kind;
        m.values = std::move(sum);
        if (mode == MeanMode::GroupSize) {
            for (auto& x : m.values.a) x /= static_cast<double>(count);
        } else {
            for (size_t t = 0; t < m.values.a.size(); ++t)
                m.values.a[t] = supp.a[t] > 0.0 ? m.values.a[t] / supp.a[t] : 0.0;
        }
        return m;
    };

    ExplainReport report;
    report.n_case = n_case;
    report.n_control = n_ctrl;
    report.mean_case = finish(sum_case, supp_case, n_case, RelationKind::GroupMeanPositive);
    report.mean_control = finish(sum_ctrl, supp_ctrl, n_ctrl, RelationKind::GroupMeanNegative);
    report.difference = weight_difference(report.mean_case, report.mean_control);
    report.top_positive = top_relations(report.difference, vocab, k, RelationSign::Positive);
    report.top_negative = top_relations(report.difference, vocab, k, RelationSign::Negative);
    return report;
}

void write_relations_csv(const ExplainReport& report, const std::string& path) {
    CsvWriter w(path);
    w.row({"sign", "rank", "group_a_label", "group_b_label", "weight"});
    for (const auto* list : {&report.top_positive, &report.top_negative}) {
        for (const auto& r : *list)
            w.row({sign_name(r.sign), std::to_string(r.rank), r.group_a, r.group_b,
                   fmt_double(r.weight)});
    }
    w.close();
}

void write_weight_csv(const RelationMatrix& w, const std::string& path) {
    CsvWriter out(path);
    out.row({"i", "j", "weight"});
    for (int i = 0; i < w.values.rows; ++i)
        for (int j = i; j < w.values.cols; ++j)
            if (w.values.at(i, j) != 0.0)
                out.row({std::to_string(i), std::to_string(j), fmt_double(w.values.at(i, j))});
    out.close();
}

Matrix load_weight_csv(const std::string& path, int vocab_size) {
    CsvFile f = read_csv(path);
    const int ci = f.column("i", path);
    const int cj = f.column("j", path);
    const int cw = f.column("weight", path);
    Matrix m(vocab_size, vocab_size);
    for (const auto& row : f.rows) {
        const int i = static_cast<int>(parse_int(row[ci], "i"));
        const int j = static_cast<int>(parse_int(row[cj], "j"));
        if (i < 0 || j < i || j >= vocab_size)
            data_error("bad_triplet", path + ": index pair out of range");
        const double x = parse_double(row[cw], "weight");
        m.at(i, j) = x;
        m.at(j, i) = x;
    }
    return m;
}

}  // namespace riskgraph
