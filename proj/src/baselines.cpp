#include "riskgraph/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "riskgraph/errors.hpp"
#include "riskgraph/rng.hpp"

namespace riskgraph {

namespace {

using nlohmann::json;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Lexicographic row order makes every downstream random draw independent of
// the order the caller stored the rows in.
std::vector<int> canonical_order(const std::vector<FeatureVector>& rows) {
    std::vector<int> idx(rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (rows[a].values != rows[b].values) return rows[a].values < rows[b].values;
        return rows[a].label < rows[b].label;
    });
    return idx;
}

struct SplitChoice {
    bool found = false;
    double score = 0.0;  // lower is better
    double threshold = 0.0;
};

// Best Gini split on one feature; score is the weighted child impurity.
SplitChoice best_gini_split(const std::vector<const FeatureVector*>& data,
                            const std::vector<int>& rows, int feature, int min_leaf) {
    const int n = static_cast<int>(rows.size());
    std::vector<std::pair<double, int>> vals(n);
    for (int i = 0; i < n; ++i)
        vals[i] = {data[rows[i]]->values[feature], data[rows[i]]->label};
    std::sort(vals.begin(), vals.end());

    int total_pos = 0;
    for (auto& [v, y] : vals) total_pos += y;

    SplitChoice best;
    int left_pos = 0;
    for (int i = 0; i < n - 1; ++i) {
        left_pos += vals[i].second;
        if (vals[i].first == vals[i + 1].first) continue;
        const int nl = i + 1, nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double pl = static_cast<double>(left_pos) / nl;
        const double pr = static_cast<double>(total_pos - left_pos) / nr;
        const double score = nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr);
        if (!best.found || score < best.score) {
            best.found = true;
            best.score = score;
            best.threshold = 0.5 * (vals[i].first + vals[i + 1].first);
        }
    }
    return best;
}

// Best squared-error split on one feature for regression targets; score is
// the negated gain so that lower still wins.
SplitChoice best_sse_split(const std::vector<const FeatureVector*>& data,
                           const std::vector<int>& rows, const std::vector<double>& target,
                           int feature, int min_leaf) {
    const int n = static_cast<int>(rows.size());
    std::vector<std::pair<double, double>> vals(n);
    for (int i = 0; i < n; ++i)
        vals[i] = {data[rows[i]]->values[feature], target[rows[i]]};
    std::sort(vals.begin(), vals.end());

    double total = 0.0;
    for (auto& [v, t] : vals) total += t;

    SplitChoice best;
    double left = 0.0;
    for (int i = 0; i < n - 1; ++i) {
        left += vals[i].second;
        if (vals[i].first == vals[i + 1].first) continue;
        const int nl = i + 1, nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double right = total - left;
        const double gain = left * left / nl + right * right / nr - total * total / n;
        if (!best.found || -gain < best.score) {
            best.found = true;
            best.score = -gain;
            best.threshold = 0.5 * (vals[i].first + vals[i + 1].first);
        }
    }
    return best;
}

struct NodeSplit {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
};

// Evaluates the drawn candidate features independently, then reduces in draw
// order, so serial and parallel searches pick the same split.
template <typename EvalOne>
NodeSplit pick_split(const std::vector<int>& features, double parent_score, Exec exec,
                     EvalOne&& eval) {
    const int k = static_cast<int>(features.size());
    std::vector<SplitChoice> choices(k);
    run_indexed(k, exec, [&](int i) { choices[i] = eval(features[i]); });
    NodeSplit out;
    double best = parent_score - 1e-12;
    for (int i = 0; i < k; ++i) {
        if (choices[i].found && choices[i].score < best) {
            best = choices[i].score;
            out.found = true;
            out.feature = features[i];
            out.threshold = choices[i].threshold;
        }
    }
    return out;
}

std::vector<int> draw_features(Rng& rng, int n_features, int k) {
    std::vector<int> all(n_features);
    std::iota(all.begin(), all.end(), 0);
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n_features - i)));
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
}

struct ForestJob {
    const std::vector<const FeatureVector*>& data;
    const TreeEnsembleConfig& cfg;
    int n_features;
    int k;
};

int grow_gini_node(const ForestJob& job, Tree& tree, std::vector<int> rows, int depth, Rng& rng) {
    const int n = static_cast<int>(rows.size());
    int pos = 0;
    for (int r : rows) pos += job.data[r]->label;

    const int self = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[self].value = static_cast<double>(pos) / n;

    if (depth >= job.cfg.max_depth || pos == 0 || pos == n || n < 2 * job.cfg.min_samples_leaf)
        return self;

    const double p = static_cast<double>(pos) / n;
    const double parent_score = n * 2.0 * p * (1.0 - p);
    std::vector<int> feats = draw_features(rng, job.n_features, job.k);
    NodeSplit split = pick_split(feats, parent_score, Exec::Serial, [&](int f) {
        return best_gini_split(job.data, rows, f, job.cfg.min_samples_leaf);
    });
    if (!split.found) return self;

    std::vector<int> left, right;
    for (int r : rows)
        (job.data[r]->values[split.feature] < split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    tree.nodes[self].feature = split.feature;
    tree.nodes[self].threshold = split.threshold;
    const int l = grow_gini_node(job, tree, std::move(left), depth + 1, rng);
    tree.nodes[self].left = l;
    const int r = grow_gini_node(job, tree, std::move(right), depth + 1, rng);
    tree.nodes[self].right = r;
    return self;
}

struct GbmJob {
    const std::vector<const FeatureVector*>& data;
    const std::vector<double>& residual;    // y - p per row
    const std::vector<double>& hessian;     // p (1 - p) per row
    const TreeEnsembleConfig& cfg;
    const std::vector<int>& features;  // non-constant candidates, fixed per run
    Exec exec;
};

int grow_sse_node(const GbmJob& job, Tree& tree, std::vector<int> rows, int depth) {
    const int n = static_cast<int>(rows.size());
    double rsum = 0.0, hsum = 0.0;
    for (int r : rows) {
        rsum += job.residual[r];
        hsum += job.hessian[r];
    }

    const int self = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[self].value = rsum / (hsum + 1e-6);

    if (depth >= job.cfg.max_depth || n < 2 * job.cfg.min_samples_leaf) return self;

    NodeSplit split =
        pick_split(job.features, 0.0, depth == 0 ? job.exec : Exec::Serial, [&](int f) {
            return best_sse_split(job.data, rows, job.residual, f, job.cfg.min_samples_leaf);
        });
    if (!split.found) return self;

    std::vector<int> left, right;
    for (int r : rows)
        (job.data[r]->values[split.feature] < split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    tree.nodes[self].feature = split.feature;
    tree.nodes[self].threshold = split.threshold;
    const int l = grow_sse_node(job, tree, std::move(left), depth + 1);
    tree.nodes[self].left = l;
    const int r = grow_sse_node(job, tree, std::move(right), depth + 1);
    tree.nodes[self].right = r;
    return self;
}

double tree_value(const Tree& t, const std::vector<double>& x) {
    int node = 0;
    while (t.nodes[node].feature >= 0)
        node = x[t.nodes[node].feature] < t.nodes[node].threshold ? t.nodes[node].left
                                                                  : t.nodes[node].right;
    return t.nodes[node].value;
}

void check_rows(const std::vector<FeatureVector>& rows) {
    if (rows.empty()) data_error("empty_training_set", "no feature rows to train on");
    const size_t width = rows[0].values.size();
    for (const auto& r : rows) {
        if (r.values.size() != width)
            data_error("ragged_features", "feature rows differ in length");
        for (double v : r.values)
            if (!std::isfinite(v)) data_error("nonfinite_feature", "feature value is not finite");
        if (r.label != 0 && r.label != 1)
            data_error("bad_label", "labels must be 0 or 1");
    }
}

double base_rate(const std::vector<FeatureVector>& rows) {
    double s = 0.0;
    for (const auto& r : rows) s += r.label;
    return s / static_cast<double>(rows.size());
}

json tree_to_json(const Tree& t) {
    json nodes = json::array();
    for (const auto& n : t.nodes)
        nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    return nodes;
}

Tree tree_from_json(const json& j) {
    Tree t;
    for (const auto& n : j) {
        if (!n.is_array() || n.size() != 5)
            data_error("model_shape", "malformed tree node record");
        TreeNode node;
        node.feature = n[0].get<int>();
        node.threshold = n[1].get<double>();
        node.left = n[2].get<int>();
        node.right = n[3].get<int>();
        node.value = n[4].get<double>();
        t.nodes.push_back(node);
    }
    if (t.nodes.empty()) data_error("model_shape", "tree with no nodes");
    const int sz = static_cast<int>(t.nodes.size());
    for (const auto& n : t.nodes) {
        const bool leaf = n.feature < 0;
        if (!leaf && (n.left < 0 || n.left >= sz || n.right < 0 || n.right >= sz))
            data_error("model_shape", "tree child index out of range");
    }
    return t;
}

json config_to_json(const TreeEnsembleConfig& c) {
    return json{{"n_trees", c.n_trees},
                {"max_depth", c.max_depth},
                {"min_samples_leaf", c.min_samples_leaf},
                {"features_per_split", c.features_per_split},
                {"learning_rate", c.learning_rate},
                {"seed", c.seed}};
}

TreeEnsembleConfig config_from_json(const json& j) {
    TreeEnsembleConfig c;
    c.n_trees = j.at("n_trees").get<int>();
    c.max_depth = j.at("max_depth").get<int>();
    c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
    c.features_per_split = j.at("features_per_split").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

json meta_to_json(const FeatureMeta& m) {
    return json{{"groups", m.groups}, {"age_mean", m.age.mean}, {"age_sd", m.age.sd}};
}

FeatureMeta meta_from_json(const json& j) {
    FeatureMeta m;
    m.groups = j.at("groups").get<std::vector<std::string>>();
    m.age.mean = j.at("age_mean").get<double>();
    m.age.sd = j.at("age_sd").get<double>();
    return m;
}

json ensemble_json(const char* format, const TreeEnsembleConfig& cfg, const FeatureMeta& meta,
                   int n_features, bool degenerate, double constant,
                   const std::vector<Tree>& trees) {
    json j;
    j["format"] = format;
    j["version"] = 1;
    j["config"] = config_to_json(cfg);
    j["features"] = meta_to_json(meta);
    j["n_features"] = n_features;
    j["degenerate"] = degenerate;
    j["constant"] = constant;
    json arr = json::array();
    for (const auto& t : trees) arr.push_back(tree_to_json(t));
    j["trees"] = std::move(arr);
    return j;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) data_error("io", "cannot write model file: " + path);
    out << j.dump(1) << "\n";
    out.flush();
    if (!out.good()) data_error("io", "failed writing model file: " + path);
}

json read_json(const std::string& path, const char* format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) data_error("io", "cannot read model file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        data_error("model_format", std::string("model file is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != format)
        data_error("model_format", std::string("expected a ") + format + " model file");
    return j;
}

}  // namespace

FeatureVector vectorize(const CohortSample& sample, const Vocabulary& vocab) {
    FeatureVector fv;
    fv.label = sample.label;
    fv.values.assign(vocab.groups.size() + 2, 0.0);
    for (const auto& [group, count] : sample.grouped_codes) {
        const int idx = vocab.find(group);
        if (idx >= 0) fv.values[idx] = count;
    }
    fv.values[vocab.groups.size()] = sample.age_at_index;
    fv.values[vocab.groups.size() + 1] = sample.gender == Gender::M ? 1.0 : 0.0;
    return fv;
}

AgeStats fit_age_stats(const std::vector<FeatureVector>& rows) {
    AgeStats st;
    if (rows.empty()) return st;
    const size_t col = rows[0].values.size() - 2;
    double sum = 0.0;
    for (const auto& r : rows) sum += r.values[col];
    st.mean = sum / rows.size();
    double ss = 0.0;
    for (const auto& r : rows) {
        const double d = r.values[col] - st.mean;
        ss += d * d;
    }
    st.sd = rows.size() > 1 ? std::sqrt(ss / (rows.size() - 1)) : 0.0;
    if (st.sd == 0.0) st.sd = 1.0;
    return st;
}

void apply_age_stats(std::vector<FeatureVector>& rows, const AgeStats& st) {
    if (rows.empty()) return;
    const size_t col = rows[0].values.size() - 2;
    for (auto& r : rows) r.values[col] = (r.values[col] - st.mean) / st.sd;
}

void TreeEnsembleConfig::validate() const {
    std::vector<std::string> problems;
    if (n_trees < 0) problems.push_back("n_trees must be non-negative");
    if (max_depth < 0) problems.push_back("max_depth must be non-negative");
    if (min_samples_leaf < 1) problems.push_back("min_samples_leaf must be at least 1");
    if (features_per_split < 0)
        problems.push_back("features_per_split must be non-negative (0 means automatic)");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0))
        problems.push_back("learning_rate must lie in (0, 1]");
    if (!problems.empty()) {
        std::string joined;
        for (size_t i = 0; i < problems.size(); ++i) {
            if (i) joined += "; ";
            joined += problems[i];
        }
        config_error("invalid_ensemble_config", joined);
    }
}

ForestModel train_forest(const std::vector<FeatureVector>& rows, const TreeEnsembleConfig& cfg,
                         Exec exec) {
    cfg.validate();
    check_rows(rows);

    ForestModel model;
    model.config = cfg;
    model.n_features = static_cast<int>(rows[0].values.size());

    const double rate = base_rate(rows);
    model.constant = rate;
    if (rate == 0.0 || rate == 1.0) {
        std::cerr << "warning: single-class training data, forest reduced to a constant "
                     "predictor\n";
        model.degenerate = true;
        return model;
    }

    std::vector<int> canon = canonical_order(rows);
    std::vector<const FeatureVector*> data(rows.size());
    for (size_t i = 0; i < canon.size(); ++i) data[i] = &rows[canon[i]];

    const int n = static_cast<int>(data.size());
    int k = cfg.features_per_split > 0
                ? std::min(cfg.features_per_split, model.n_features)
                : std::max(1, static_cast<int>(std::sqrt(model.n_features)));

    model.trees.assign(cfg.n_trees, Tree{});
    ForestJob job{data, cfg, model.n_features, k};
    run_indexed(cfg.n_trees, exec, [&](int t) {
        Rng rng = Rng::substream(cfg.seed, "tree", static_cast<uint64_t>(t));
        std::vector<int> boot(n);
        for (int i = 0; i < n; ++i)
            boot[i] = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
        std::sort(boot.begin(), boot.end());
        grow_gini_node(job, model.trees[t], std::move(boot), 0, rng);
    });
    return model;
}

GbmModel train_boosted(const std::vector<FeatureVector>& rows, const TreeEnsembleConfig& cfg,
                       Exec exec) {
    cfg.validate();
    check_rows(rows);

    GbmModel model;
    model.config = cfg;
    model.n_features = static_cast<int>(rows[0].values.size());

    const double rate = base_rate(rows);
    model.constant = rate;
    if (rate == 0.0 || rate == 1.0) {
        std::cerr << "warning: single-class training data, boosting reduced to a constant "
                     "predictor\n";
        model.degenerate = true;
        return model;
    }

    std::vector<int> canon = canonical_order(rows);
    std::vector<const FeatureVector*> data(rows.size());
    for (size_t i = 0; i < canon.size(); ++i) data[i] = &rows[canon[i]];

    const int n = static_cast<int>(data.size());
    model.prior = std::log(rate / (1.0 - rate));

    // Boosting scans every informative feature; constant columns are dropped
    // from the pool up front, so padding the data with one never changes the
    // fitted trees.
    std::vector<int> features;
    for (int f = 0; f < model.n_features; ++f) {
        const double first = data[0]->values[f];
        for (int i = 1; i < n; ++i) {
            if (data[i]->values[f] != first) {
                features.push_back(f);
                break;
            }
        }
    }

    std::vector<double> score(n, model.prior);
    std::vector<double> residual(n), hessian(n);
    std::vector<int> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), 0);

    for (int round = 0; round < cfg.n_trees; ++round) {
        for (int i = 0; i < n; ++i) {
            const double p = sigmoid(score[i]);
            residual[i] = data[i]->label - p;
            hessian[i] = p * (1.0 - p);
        }
        Tree tree;
        GbmJob job{data, residual, hessian, cfg, features, exec};
        grow_sse_node(job, tree, all_rows, 0);
        for (int i = 0; i < n; ++i)
            score[i] += cfg.learning_rate * tree_value(tree, data[i]->values);
        model.trees.push_back(std::move(tree));
        for (int i = 0; i < n; ++i)
            if (!std::isfinite(score[i]))
                numerical_error("divergence", "boosting score became non-finite at round " +
                                                  std::to_string(round));
    }
    return model;
}

double predict(const ForestModel& m, const std::vector<double>& x) {
    if (m.degenerate) return m.constant;
    if (static_cast<int>(x.size()) != m.n_features)
        data_error("feature_mismatch", "input width does not match the trained forest");
    double sum = 0.0;
    for (const auto& t : m.trees) sum += tree_value(t, x);
    return m.trees.empty() ? m.constant : sum / static_cast<double>(m.trees.size());
}

double predict(const GbmModel& m, const std::vector<double>& x) {
    if (m.degenerate) return m.constant;
    if (static_cast<int>(x.size()) != m.n_features)
        data_error("feature_mismatch", "input width does not match the trained model");
    double f = m.prior;
    for (const auto& t : m.trees) f += m.config.learning_rate * tree_value(t, x);
    return sigmoid(f);
}

void save_forest(const ForestModel& m, const FeatureMeta& meta, const std::string& path) {
    write_json(ensemble_json("riskgraph-forest", m.config, meta, m.n_features, m.degenerate,
                             m.constant, m.trees),
               path);
}

void save_gbm(const GbmModel& m, const FeatureMeta& meta, const std::string& path) {
    json j = ensemble_json("riskgraph-gbm", m.config, meta, m.n_features, m.degenerate,
                           m.constant, m.trees);
    j["prior"] = m.prior;
    write_json(j, path);
}

LoadedForest load_forest(const std::string& path) {
    json j = read_json(path, "riskgraph-forest");
    LoadedForest out;
    try {
        out.model.config = config_from_json(j.at("config"));
        out.meta = meta_from_json(j.at("features"));
        out.model.n_features = j.at("n_features").get<int>();
        out.model.degenerate = j.at("degenerate").get<bool>();
        out.model.constant = j.at("constant").get<double>();
        for (const auto& t : j.at("trees")) out.model.trees.push_back(tree_from_json(t));
    } catch (const json::exception& e) {
        data_error("model_format", std::string("model file is missing fields: ") + e.what());
    }
    if (out.model.n_features != static_cast<int>(out.meta.groups.size()) + 2)
        data_error("model_shape", "feature metadata does not match feature count");
    return out;
}

LoadedGbm load_gbm(const std::string& path) {
    json j = read_json(path, "riskgraph-gbm");
    LoadedGbm out;
    try {
        out.model.config = config_from_json(j.at("config"));
        out.meta = meta_from_json(j.at("features"));
        out.model.n_features = j.at("n_features").get<int>();
        out.model.degenerate = j.at("degenerate").get<bool>();
        out.model.constant = j.at("constant").get<double>();
        out.model.prior = j.at("prior").get<double>();
        for (const auto& t : j.at("trees")) out.model.trees.push_back(tree_from_json(t));
    } catch (const json::exception& e) {
        data_error("model_format", std::string("model file is missing fields: ") + e.what());
    }
    if (out.model.n_features != static_cast<int>(out.meta.groups.size()) + 2)
        data_error("model_shape", "feature metadata does not match feature count");
    return out;
}

}  // namespace riskgraph
