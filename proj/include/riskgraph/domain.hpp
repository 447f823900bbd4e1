#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "riskgraph/date.hpp"

namespace riskgraph {

enum class CodeSystem { Diagnosis, Procedure, Medication };

std::string to_string(CodeSystem s);
CodeSystem code_system_from_string(std::string_view s);

enum class Gender { F, M };

std::string to_string(Gender g);
Gender gender_from_string(std::string_view s);

struct MedicalCode {
    CodeSystem system = CodeSystem::Diagnosis;
    std::string raw;        // source code as billed, e.g. "331.0"
    std::string drug_name;  // populated for medications only
    std::string group;      // mapped category id; empty until mapped / if unmapped
};

struct ClaimRecord {
    Date date;
    std::vector<MedicalCode> codes;
};

struct PatientTimeline {
    std::string patient_id;
    int birth_year = 0;
    Gender gender = Gender::F;
    std::vector<ClaimRecord> records;  // sorted ascending by date, same-day ties allowed
};

// Prefix-pattern grouper collapsing raw codes into category ids, in the style
// of CCS for diagnoses/procedures and AHFS therapeutic classes for drugs.
// A pattern ending in '*' matches any raw code with that prefix (including
// the bare prefix itself); a pattern without '*' matches exactly. When
// several patterns match, the longest prefix wins; an exact pattern beats a
// wildcard of equal length.
class CodeMap {
public:
    struct Entry {
        CodeSystem system;
        std::string pattern;
        std::string group;
        std::string label;
    };

    void add(Entry e);

    // Throws on duplicate patterns within a system or conflicting group labels.
    void validate() const;

    // Longest-match group for the code, or nullopt when unmapped.
    std::optional<std::string> map(const MedicalCode& code) const;

    const std::string& label_of(const std::string& group) const;

    // Group ids sorted lexicographically; the basis for model vocabularies.
    std::vector<std::string> groups() const;

    const std::vector<Entry>& entries() const { return entries_; }

    static CodeMap load_csv(const std::string& path);
    void write_csv(const std::string& path) const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::string> group_labels_;
};

// Returns a copy of the code with .group filled in, or nullopt if no pattern
// matches (unmapped codes are normal; callers count and drop them).
std::optional<MedicalCode> map_code(const MedicalCode& code, const CodeMap& map);

struct CaseDefinition {
    std::vector<std::string> diagnosis_patterns;  // wildcard patterns
    std::vector<std::string> medication_names;    // matched case-insensitively

    static CaseDefinition load_csv(const std::string& path);
    void write_csv(const std::string& path) const;
};

// The bundled target-disease definition (dementia-family diagnosis code
// ranges plus cholinesterase-inhibitor / memantine drug names).
CaseDefinition default_case_definition();

// True iff any diagnosis code matches a diagnosis pattern or any medication
// matches a medication name (by name substring or exact raw code,
// case-insensitive).
bool is_case_evidence(const ClaimRecord& record, const CaseDefinition& def);

// Earliest record date carrying case evidence; nullopt when none exists.
std::optional<Date> first_case_date(const PatientTimeline& timeline, const CaseDefinition& def);

// Wildcard match used by both the grouper and the case definition.
bool pattern_matches(std::string_view pattern, std::string_view raw);

// --- dataset files -------------------------------------------------------

std::vector<PatientTimeline> load_patients(const std::string& patients_csv,
                                           const std::string& claims_csv);

void write_patients_csv(const std::vector<PatientTimeline>& timelines, const std::string& path);
void write_claims_csv(const std::vector<PatientTimeline>& timelines, const std::string& path);

}  // namespace riskgraph
