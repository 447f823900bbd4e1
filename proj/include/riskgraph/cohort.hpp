#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskgraph/domain.hpp"
#include "riskgraph/exec.hpp"
#include "riskgraph/rng.hpp"

namespace riskgraph {

// One risk-prediction setting. The selection window (where the index date is
// drawn) and the prediction window (where a case's onset must fall) share the
// same length; the feature window is the fixed lookback before the index.
struct ScenarioConfig {
    int scenario_id = 1;
    int selection_years = 1;
    int prediction_years = 1;
    int feature_years = 3;
    int min_age_at_index = 65;
    int min_record_span_years = 3;
    int min_qualifying_months = 2;
    int min_codes_per_month = 3;
    uint64_t seed = 0;

    static ScenarioConfig for_scenario(int id, uint64_t seed);
    void validate() const;
};

struct CohortSample {
    std::string patient_id;
    Date index_date;
    int label = 0;
    int age_at_index = 0;
    Gender gender = Gender::F;
    // Mapped feature-window code counts, sorted by group id.
    std::vector<std::pair<std::string, int>> grouped_codes;
    int qualifying_month_count = 0;
};

struct Cohort {
    ScenarioConfig scenario;
    std::vector<CohortSample> samples;
    std::map<std::string, int> exclusion_report;
};

// (anchor, label): first case-evidence date for cases, last record date for
// controls. Caller guarantees a non-empty timeline.
std::pair<Date, int> anchor_date(const PatientTimeline& tl, const CaseDefinition& def);

// Uniform over the selection_days dates ending the day before the anchor.
Date draw_index_date(Date anchor, int selection_days, Rng& rng);

struct SampleOutcome {
    std::optional<CohortSample> sample;
    std::string exclusion;  // set iff !sample
};

// Applies the inclusion ladder in fixed order: no_records, under_age,
// short_history, insufficient_months. Index dates come from a per-patient
// substream keyed by patient_id, so results do not depend on patient order.
SampleOutcome build_sample(const PatientTimeline& tl, const CaseDefinition& def,
                           const ScenarioConfig& cfg);

Cohort build_cohort(const std::vector<PatientTimeline>& tls, const CaseDefinition& def,
                    const ScenarioConfig& cfg, Exec exec = Exec::Parallel);

void write_cohort_csv(const Cohort& cohort, const std::string& path);
void write_cohort_codes_csv(const Cohort& cohort, const std::string& path);
void write_exclusions_csv(const Cohort& cohort, const std::string& path);

// Rebuilds samples (minus the exclusion report) from the two CSVs.
Cohort load_cohort(const std::string& cohort_csv, const std::string& codes_csv);

}  // namespace riskgraph
