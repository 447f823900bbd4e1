#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "riskgraph/cohort.hpp"

namespace riskgraph {

struct SplitConfig {
    double test_fraction = 0.2;
    uint64_t seed = 0;

    void validate() const;
};

struct SplitResult {
    std::vector<CohortSample> train;
    std::vector<CohortSample> test;
};

// Stratified holdout: each class is shuffled in patient-id order and split
// separately, so the test set keeps the natural class ratio. Requires at
// least two samples of each class.
SplitResult split(const std::vector<CohortSample>& samples, const SplitConfig& cfg);

// Logistic model P(case | age, gender) fit by Newton iteration on the
// standardized design. A constant covariate is dropped rather than fit.
struct PropensityModel {
    double intercept = 0.0;
    double beta_age = 0.0;
    double beta_gender = 0.0;
    double age_mean = 0.0;
    double age_sd = 1.0;
    bool use_age = true;
    bool use_gender = true;
    int iterations = 0;

    double score(const CohortSample& s) const;  // clamped to (0,1)
};

PropensityModel fit_propensity(const std::vector<CohortSample>& pool);

struct MatchConfig {
    double caliper = 0.2;  // in units of SD(score) over the pool
    std::optional<int> subset_per_class;
    uint64_t seed = 0;

    void validate() const;
};

struct MatchedPair {
    std::string case_id;
    std::string control_id;
    double case_score = 0.0;
    double control_score = 0.0;
};

struct MatchResult {
    std::vector<MatchedPair> pairs;
    int unmatched_cases = 0;
};

// Greedy nearest-neighbor matching without replacement. Cases are visited in
// descending score order; a pair is accepted only when the score gap is
// within caliper * SD(pool scores). scores[i] belongs to pool[i].
MatchResult match_one_to_one(const std::vector<CohortSample>& pool,
                             const std::vector<double>& scores, const MatchConfig& cfg);

// Pool samples named by the match result, case then control per pair.
std::vector<CohortSample> matched_samples(const std::vector<CohortSample>& pool,
                                          const MatchResult& result);

// Uniform per-class subsample of n_per_class cases and controls; pair
// structure is not preserved.
std::vector<CohortSample> subset_per_class(const std::vector<CohortSample>& samples,
                                           int n_per_class, uint64_t seed);

double standardized_mean_difference(const std::vector<double>& a, const std::vector<double>& b);

void write_matched_csv(const MatchResult& result, const std::string& path);
MatchResult load_matched_csv(const std::string& path);

void write_ids_csv(const std::vector<CohortSample>& samples, const std::string& path);
std::vector<std::string> load_ids_csv(const std::string& path);

}  // namespace riskgraph
