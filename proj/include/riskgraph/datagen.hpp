#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "riskgraph/domain.hpp"
#include "riskgraph/exec.hpp"

namespace riskgraph {

// One code-pair signal planted into the synthetic stream. With probability
// p_case (cases) / p_control (controls) both groups are seeded repeatedly
// into the years leading up to the patient's (pseudo-)onset, so the pair
// co-occurs in any trailing feature window. solo_case / solo_control give the
// probability of planting exactly one side instead (keeps single-group
// frequencies from carrying the whole signal); p + solo must stay <= 1.
struct PlantedPair {
    std::string group_a;
    std::string group_b;
    double p_case = 0.0;
    double p_control = 0.0;
    double solo_case = 0.0;
    double solo_control = 0.0;
};

struct GeneratorConfig {
    int n_patients = 0;
    double case_fraction = 0.0;
    int n_diagnosis_groups = 0;
    int n_procedure_groups = 0;
    int n_medication_groups = 0;
    int raw_codes_per_group = 1;
    std::vector<PlantedPair> planted_pairs;
    double visits_per_year = 6.0;
    int codes_per_visit_min = 1;
    int codes_per_visit_max = 3;
    Date span_start;
    Date span_end;
    int age_min = 0;
    int age_max = 0;
    uint64_t seed = 0;

    void validate() const;  // throws config errors, all findings listed
};

struct GroundTruth {
    std::map<std::string, int> labels;        // patient_id -> 1 case / 0 control
    std::map<std::string, Date> onset_dates;  // cases only: first evidence date
    std::vector<PlantedPair> planted_pairs;

    void write_csv(const std::string& path) const;
    static GroundTruth load_csv(const std::string& path);
};

struct GeneratedData {
    std::vector<PatientTimeline> timelines;
    GroundTruth truth;
};

// The synthetic grouping scheme covering every raw code the generator emits,
// including the case-evidence codes. Group ids look like DXG012 / PRG003 /
// RXG021 plus the two evidence groups ADRD_DX / ADRD_RX.
CodeMap synthetic_code_map(const GeneratorConfig& cfg);

// Deterministic synthetic claims. Each patient draws from its own substream
// Rng::substream(seed, "patient", i), so output is byte-identical whether
// patients are generated serially or in parallel.
GeneratedData generate(const GeneratorConfig& cfg, Exec exec = Exec::Parallel);

}  // namespace riskgraph
