#include "riskgraph/domain.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "riskgraph/csv.hpp"

namespace riskgraph {

std::string to_string(CodeSystem s) {
    switch (s) {
        case CodeSystem::Diagnosis: return "Diagnosis";
        case CodeSystem::Procedure: return "Procedure";
        case CodeSystem::Medication: return "Medication";
    }
    return "?";
}

CodeSystem code_system_from_string(std::string_view s) {
    if (s == "Diagnosis") return CodeSystem::Diagnosis;
    if (s == "Procedure") return CodeSystem::Procedure;
    if (s == "Medication") return CodeSystem::Medication;
    data_error("bad_system", "unknown code system '" + std::string(s) + "'");
}

std::string to_string(Gender g) { return g == Gender::F ? "F" : "M"; }

Gender gender_from_string(std::string_view s) {
    if (s == "F") return Gender::F;
    if (s == "M") return Gender::M;
    data_error("bad_gender", "expected F or M, got '" + std::string(s) + "'");
}

bool pattern_matches(std::string_view pattern, std::string_view raw) {
    if (!pattern.empty() && pattern.back() == '*') {
        std::string_view prefix = pattern.substr(0, pattern.size() - 1);
        return raw.substr(0, prefix.size()) == prefix;
    }
    return raw == pattern;
}

namespace {

// Prefix length plus exactness bonus; longer prefixes win, exact beats
// wildcard at equal length.
int match_score(std::string_view pattern) {
    if (!pattern.empty() && pattern.back() == '*') {
        return 2 * static_cast<int>(pattern.size() - 1);
    }
    return 2 * static_cast<int>(pattern.size()) + 1;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void check_pattern_syntax(const std::string& pattern) {
    if (pattern.empty()) data_error("bad_pattern", "empty pattern");
    auto star = pattern.find('*');
    if (star != std::string::npos && star != pattern.size() - 1) {
        data_error("bad_pattern", "'*' only allowed as trailing wildcard: '" + pattern + "'");
    }
}

}  // namespace

void CodeMap::add(Entry e) {
    check_pattern_syntax(e.pattern);
    group_labels_.emplace(e.group, e.label);
    entries_.push_back(std::move(e));
}

void CodeMap::validate() const {
    std::set<std::pair<int, std::string>> seen;
    for (const auto& e : entries_) {
        if (!seen.insert({static_cast<int>(e.system), e.pattern}).second) {
            data_error("duplicate_pattern",
                       "pattern '" + e.pattern + "' occurs twice for system " + to_string(e.system));
        }
        auto it = group_labels_.find(e.group);
        if (it != group_labels_.end() && it->second != e.label) {
            data_error("conflicting_label",
                       "group '" + e.group + "' has labels '" + it->second + "' and '" + e.label + "'");
        }
    }
}

std::optional<std::string> CodeMap::map(const MedicalCode& code) const {
    const Entry* best = nullptr;
    int best_score = -1;
    for (const auto& e : entries_) {
        if (e.system != code.system) continue;
        if (!pattern_matches(e.pattern, code.raw)) continue;
        int score = match_score(e.pattern);
        if (score > best_score) {
            best_score = score;
            best = &e;
        }
    }
    if (!best) return std::nullopt;
    return best->group;
}

const std::string& CodeMap::label_of(const std::string& group) const {
    auto it = group_labels_.find(group);
    if (it == group_labels_.end()) data_error("unknown_group", "no label for group '" + group + "'");
    return it->second;
}

std::vector<std::string> CodeMap::groups() const {
    std::vector<std::string> out;
    out.reserve(group_labels_.size());
    for (const auto& [g, _] : group_labels_) out.push_back(g);
    return out;  // std::map iteration is already sorted
}

CodeMap CodeMap::load_csv(const std::string& path) {
    CsvFile file = read_csv(path);
    int c_system = file.column("system", path);
    int c_pattern = file.column("pattern", path);
    int c_group = file.column("group", path);
    int c_label = file.column("label", path);
    CodeMap map;
    for (const auto& row : file.rows) {
        map.add({code_system_from_string(row[c_system]), row[c_pattern], row[c_group], row[c_label]});
    }
    map.validate();
    return map;
}

void CodeMap::write_csv(const std::string& path) const {
    CsvWriter w(path);
    w.row({"system", "pattern", "group", "label"});
    for (const auto& e : entries_) {
        w.row({to_string(e.system), e.pattern, e.group, e.label});
    }
    w.close();
}

std::optional<MedicalCode> map_code(const MedicalCode& code, const CodeMap& map) {
    auto group = map.map(code);
    if (!group) return std::nullopt;
    MedicalCode out = code;
    out.group = *group;
    return out;
}

CaseDefinition default_case_definition() {
    CaseDefinition def;
    def.diagnosis_patterns = {
        "331.0*", "G30.*",    // Alzheimer's dementia
        "290.4*", "F01.*",    // vascular dementia
        "331.1*", "G31.0*",   // frontotemporal dementia
        "331.82*", "G31.83",  // Lewy body dementia
        "290.0*",             // senile dementia
        "290.1*",             // presenile dementia
        "290.8*",             // other specified senile psychotic
        "290.9*",             // unspecified senile psychotic condition
    };
    def.medication_names = {
        "Aricept", "Donepezil", "Razadyne", "Reminyl",  "Galantamine",
        "Exelon",  "Rivastigmine", "Namenda", "Memantine", "Acetylcholine",
    };
    return def;
}

CaseDefinition CaseDefinition::load_csv(const std::string& path) {
    CsvFile file = read_csv(path);
    int c_kind = file.column("kind", path);
    int c_value = file.column("value", path);
    CaseDefinition def;
    for (const auto& row : file.rows) {
        if (row[c_kind] == "diagnosis_pattern") {
            check_pattern_syntax(row[c_value]);
            def.diagnosis_patterns.push_back(row[c_value]);
        } else if (row[c_kind] == "medication_name") {
            def.medication_names.push_back(row[c_value]);
        } else {
            data_error("bad_case_definition", path + ": unknown kind '" + row[c_kind] + "'");
        }
    }
    if (def.diagnosis_patterns.empty() || def.medication_names.empty()) {
        data_error("bad_case_definition", path + ": needs at least one diagnosis pattern and one medication name");
    }
    return def;
}

void CaseDefinition::write_csv(const std::string& path) const {
    CsvWriter w(path);
    w.row({"kind", "value"});
    for (const auto& p : diagnosis_patterns) w.row({"diagnosis_pattern", p});
    for (const auto& m : medication_names) w.row({"medication_name", m});
    w.close();
}

bool is_case_evidence(const ClaimRecord& record, const CaseDefinition& def) {
    for (const auto& code : record.codes) {
        if (code.system == CodeSystem::Diagnosis) {
            for (const auto& p : def.diagnosis_patterns) {
                if (pattern_matches(p, code.raw)) return true;
            }
        } else if (code.system == CodeSystem::Medication) {
            std::string name = lower(code.drug_name);
            std::string raw = lower(code.raw);
            for (const auto& m : def.medication_names) {
                std::string want = lower(m);
                if (!name.empty() && name.find(want) != std::string::npos) return true;
                if (raw == want) return true;
            }
        }
    }
    return false;
}

std::optional<Date> first_case_date(const PatientTimeline& timeline, const CaseDefinition& def) {
    for (const auto& record : timeline.records) {  // records sorted ascending
        if (is_case_evidence(record, def)) return record.date;
    }
    return std::nullopt;
}

std::vector<PatientTimeline> load_patients(const std::string& patients_csv,
                                           const std::string& claims_csv) {
    CsvFile pfile = read_csv(patients_csv);
    int p_id = pfile.column("patient_id", patients_csv);
    int p_birth = pfile.column("birth_year", patients_csv);
    int p_gender = pfile.column("gender", patients_csv);

    std::vector<PatientTimeline> timelines;
    std::unordered_map<std::string, size_t> index;
    timelines.reserve(pfile.rows.size());
    for (const auto& row : pfile.rows) {
        if (index.count(row[p_id])) {
            data_error("duplicate_patient", patients_csv + ": patient_id '" + row[p_id] + "' repeated");
        }
        PatientTimeline t;
        t.patient_id = row[p_id];
        t.birth_year = static_cast<int>(parse_int(row[p_birth], "birth_year"));
        t.gender = gender_from_string(row[p_gender]);
        index.emplace(t.patient_id, timelines.size());
        timelines.push_back(std::move(t));
    }

    CsvFile cfile = read_csv(claims_csv);
    int c_id = cfile.column("patient_id", claims_csv);
    int c_date = cfile.column("date", claims_csv);
    int c_system = cfile.column("system", claims_csv);
    int c_raw = cfile.column("raw_code", claims_csv);
    int c_drug = cfile.column("drug_name", claims_csv);

    for (const auto& row : cfile.rows) {
        auto it = index.find(row[c_id]);
        if (it == index.end()) {
            data_error("unknown_patient", claims_csv + ": claim for unknown patient '" + row[c_id] + "'");
        }
        if (row[c_raw].empty()) {
            data_error("empty_code", claims_csv + ": empty raw_code for patient '" + row[c_id] + "'");
        }
        PatientTimeline& t = timelines[it->second];
        Date date = Date::parse_iso(row[c_date]);
        MedicalCode code{code_system_from_string(row[c_system]), row[c_raw], row[c_drug], {}};
        // Claims for one patient on one day arrive as consecutive rows; merge
        // them into a single record per (patient, date, adjacency) run.
        if (!t.records.empty() && t.records.back().date == date) {
            t.records.back().codes.push_back(std::move(code));
        } else {
            t.records.push_back({date, {std::move(code)}});
        }
    }

    for (auto& t : timelines) {
        std::stable_sort(t.records.begin(), t.records.end(),
                         [](const ClaimRecord& a, const ClaimRecord& b) { return a.date < b.date; });
        // Merge same-day runs split by the sort.
        std::vector<ClaimRecord> merged;
        for (auto& r : t.records) {
            if (!merged.empty() && merged.back().date == r.date) {
                for (auto& c : r.codes) merged.back().codes.push_back(std::move(c));
            } else {
                merged.push_back(std::move(r));
            }
        }
        t.records = std::move(merged);
    }
    return timelines;
}

void write_patients_csv(const std::vector<PatientTimeline>& timelines, const std::string& path) {
    CsvWriter w(path);
    w.row({"patient_id", "birth_year", "gender"});
    for (const auto& t : timelines) {
        w.row({t.patient_id, std::to_string(t.birth_year), to_string(t.gender)});
    }
    w.close();
}

void write_claims_csv(const std::vector<PatientTimeline>& timelines, const std::string& path) {
    CsvWriter w(path);
    w.row({"patient_id", "date", "system", "raw_code", "drug_name"});
    for (const auto& t : timelines) {
        for (const auto& r : t.records) {
            for (const auto& c : r.codes) {
                w.row({t.patient_id, r.date.iso(), to_string(c.system), c.raw, c.drug_name});
            }
        }
    }
    w.close();
}

}  // namespace riskgraph
