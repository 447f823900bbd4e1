#include "riskgraph/cohort.hpp"

#include <algorithm>
#include <map>

#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"

namespace riskgraph {

ScenarioConfig ScenarioConfig::for_scenario(int id, uint64_t seed) {
    ScenarioConfig cfg;
    cfg.scenario_id = id;
    cfg.selection_years = id;
    cfg.prediction_years = id;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

void ScenarioConfig::validate() const {
    std::vector<std::string> problems;
    if (scenario_id < 1 || scenario_id > 3) problems.push_back("scenario_id must be 1, 2, or 3");
    if (selection_years != scenario_id || prediction_years != scenario_id)
        problems.push_back("selection_years and prediction_years must equal scenario_id");
    if (feature_years < 1) problems.push_back("feature_years must be positive");
    if (min_age_at_index < 1) problems.push_back("min_age_at_index must be positive");
    if (min_record_span_years < 1) problems.push_back("min_record_span_years must be positive");
    if (min_qualifying_months < 1) problems.push_back("min_qualifying_months must be positive");
    if (min_codes_per_month < 1) problems.push_back("min_codes_per_month must be positive");
    if (!problems.empty()) {
        std::string all;
        for (size_t i = 0; i < problems.size(); ++i) {
            if (i) all += "; ";
            all += problems[i];
        }
        config_error("invalid_scenario_config", all);
    }
}

std::pair<Date, int> anchor_date(const PatientTimeline& tl, const CaseDefinition& def) {
    if (auto onset = first_case_date(tl, def)) return {*onset, 1};
    return {tl.records.back().date, 0};
}

Date draw_index_date(Date anchor, int selection_days, Rng& rng) {
    return anchor.minus_days(static_cast<int>(rng.int_in(1, selection_days)));
}

SampleOutcome build_sample(const PatientTimeline& tl, const CaseDefinition& def,
                           const ScenarioConfig& cfg) {
    if (tl.records.empty()) return {std::nullopt, "no_records"};

    auto [anchor, label] = anchor_date(tl, def);
    Rng rng = Rng::substream(cfg.seed, tl.patient_id);
    Date index = draw_index_date(anchor, years_to_days(cfg.selection_years), rng);

    int age = index.year() - tl.birth_year;
    if (age < cfg.min_age_at_index) return {std::nullopt, "under_age"};

    int span = days_between(tl.records.front().date, tl.records.back().date);
    if (span < years_to_days(cfg.min_record_span_years)) return {std::nullopt, "short_history"};

    const Date lo = index.minus_days(years_to_days(cfg.feature_years));
    std::map<int, int> month_codes;
    std::map<std::string, int> group_counts;
    for (const auto& rec : tl.records) {
        if (rec.date < lo) continue;
        if (index < rec.date) break;
        for (const auto& code : rec.codes) {
            if (code.group.empty()) continue;
            ++month_codes[rec.date.month_key()];
            ++group_counts[code.group];
        }
    }
    int qualifying = 0;
    for (const auto& [mk, count] : month_codes) {
        (void)mk;
        if (count >= cfg.min_codes_per_month) ++qualifying;
    }
    if (qualifying < cfg.min_qualifying_months) return {std::nullopt, "insufficient_months"};

    CohortSample s;
    s.patient_id = tl.patient_id;
    s.index_date = index;
    s.label = label;
    s.age_at_index = age;
    s.gender = tl.gender;
    s.grouped_codes.assign(group_counts.begin(), group_counts.end());
    s.qualifying_month_count = qualifying;
    return {std::move(s), ""};
}

Cohort build_cohort(const std::vector<PatientTimeline>& tls, const CaseDefinition& def,
                    const ScenarioConfig& cfg, Exec exec) {
    cfg.validate();
    const int n = static_cast<int>(tls.size());
    std::vector<SampleOutcome> outcomes(n);
    run_indexed(n, exec, [&](int i) { outcomes[i] = build_sample(tls[i], def, cfg); });

    Cohort cohort;
    cohort.scenario = cfg;
    for (auto& out : outcomes) {
        if (out.sample)
            cohort.samples.push_back(std::move(*out.sample));
        else
            ++cohort.exclusion_report[out.exclusion];
    }
    return cohort;
}

void write_cohort_csv(const Cohort& cohort, const std::string& path) {
    CsvWriter w(path);
    w.row({"patient_id", "index_date", "label", "age_at_index", "gender", "qualifying_months"});
    for (const auto& s : cohort.samples) {
        w.row({s.patient_id, s.index_date.iso(), std::to_string(s.label),
               std::to_string(s.age_at_index), to_string(s.gender),
               std::to_string(s.qualifying_month_count)});
    }
    w.close();
}

void write_cohort_codes_csv(const Cohort& cohort, const std::string& path) {
    CsvWriter w(path);
    w.row({"patient_id", "group", "count"});
    for (const auto& s : cohort.samples) {
        for (const auto& [group, count] : s.grouped_codes) {
            w.row({s.patient_id, group, std::to_string(count)});
        }
    }
    w.close();
}

void write_exclusions_csv(const Cohort& cohort, const std::string& path) {
    CsvWriter w(path);
    w.row({"reason", "count"});
    for (const auto& [reason, count] : cohort.exclusion_report) {
        w.row({reason, std::to_string(count)});
    }
    w.close();
}

Cohort load_cohort(const std::string& cohort_csv, const std::string& codes_csv) {
    Cohort cohort;
    CsvFile f = read_csv(cohort_csv);
    int c_id = f.column("patient_id", cohort_csv);
    int c_index = f.column("index_date", cohort_csv);
    int c_label = f.column("label", cohort_csv);
    int c_age = f.column("age_at_index", cohort_csv);
    int c_gender = f.column("gender", cohort_csv);
    int c_months = f.column("qualifying_months", cohort_csv);
    std::map<std::string, size_t> by_id;
    for (const auto& r : f.rows) {
        CohortSample s;
        s.patient_id = r[c_id];
        s.index_date = Date::parse_iso(r[c_index]);
        s.label = static_cast<int>(parse_int(r[c_label], "label"));
        s.age_at_index = static_cast<int>(parse_int(r[c_age], "age_at_index"));
        s.gender = gender_from_string(r[c_gender]);
        s.qualifying_month_count = static_cast<int>(parse_int(r[c_months], "qualifying_months"));
        if (!by_id.emplace(s.patient_id, cohort.samples.size()).second)
            data_error("duplicate_patient", cohort_csv + ": " + s.patient_id);
        cohort.samples.push_back(std::move(s));
    }

    CsvFile codes = read_csv(codes_csv);
    int k_id = codes.column("patient_id", codes_csv);
    int k_group = codes.column("group", codes_csv);
    int k_count = codes.column("count", codes_csv);
    for (const auto& r : codes.rows) {
        auto it = by_id.find(r[k_id]);
        if (it == by_id.end()) data_error("unknown_patient", codes_csv + ": " + r[k_id]);
        cohort.samples[it->second].grouped_codes.emplace_back(
            r[k_group], static_cast<int>(parse_int(r[k_count], "count")));
    }
    for (auto& s : cohort.samples) {
        std::sort(s.grouped_codes.begin(), s.grouped_codes.end());
    }
    return cohort;
}

}  // namespace riskgraph
