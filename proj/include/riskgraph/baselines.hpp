#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "riskgraph/cohort.hpp"
#include "riskgraph/exec.hpp"
#include "riskgraph/gnn.hpp"

namespace riskgraph {

// Flat featurization: one count per vocabulary group, then age_at_index,
// then a male indicator. Age is standardized by the caller via AgeStats so
// train and test share the same transform.
struct FeatureVector {
    std::vector<double> values;
    int label = 0;
};

FeatureVector vectorize(const CohortSample& sample, const Vocabulary& vocab);

struct AgeStats {
    double mean = 0.0;
    double sd = 1.0;
};

AgeStats fit_age_stats(const std::vector<FeatureVector>& rows);
void apply_age_stats(std::vector<FeatureVector>& rows, const AgeStats& st);

struct TreeEnsembleConfig {
    int n_trees = 200;
    int max_depth = 6;
    int min_samples_leaf = 1;
    int features_per_split = 0;  // forest only; 0 picks floor(sqrt(F))
    double learning_rate = 0.1;  // boosting only
    uint64_t seed = 0;

    void validate() const;
};

// Flat binary tree; interior nodes route x[feature] < threshold to left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf payload
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ForestModel {
    TreeEnsembleConfig config;
    int n_features = 0;
    bool degenerate = false;
    double constant = 0.0;
    std::vector<Tree> trees;
};

struct GbmModel {
    TreeEnsembleConfig config;
    int n_features = 0;
    bool degenerate = false;
    double constant = 0.0;
    double prior = 0.0;  // log-odds of the base rate
    std::vector<Tree> trees;
};

// Bagged Gini trees, parallel across trees with per-tree RNG substreams.
// Rows are canonicalized internally, so training-row order never matters.
ForestModel train_forest(const std::vector<FeatureVector>& rows, const TreeEnsembleConfig& cfg,
                         Exec exec = Exec::Parallel);

// Stagewise regression trees on logistic-loss gradients with Newton leaf
// values; rounds are sequential, split search is parallel within a round.
GbmModel train_boosted(const std::vector<FeatureVector>& rows, const TreeEnsembleConfig& cfg,
                       Exec exec = Exec::Parallel);

double predict(const ForestModel& m, const std::vector<double>& x);
double predict(const GbmModel& m, const std::vector<double>& x);

// Featurization metadata stored with a model so a reloaded file can score
// raw cohort samples.
struct FeatureMeta {
    std::vector<std::string> groups;
    AgeStats age;
};

void save_forest(const ForestModel& m, const FeatureMeta& meta, const std::string& path);
void save_gbm(const GbmModel& m, const FeatureMeta& meta, const std::string& path);

struct LoadedForest {
    ForestModel model;
    FeatureMeta meta;
};

struct LoadedGbm {
    GbmModel model;
    FeatureMeta meta;
};

LoadedForest load_forest(const std::string& path);
LoadedGbm load_gbm(const std::string& path);

}  // namespace riskgraph
