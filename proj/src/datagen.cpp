#include "riskgraph/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace riskgraph {

namespace {

struct GroupRef {
    CodeSystem sys;
    int idx;  // 0-based within its system
};

std::string group_id(CodeSystem sys, int idx) {
    const char* prefix = sys == CodeSystem::Diagnosis  ? "DXG"
                         : sys == CodeSystem::Procedure ? "PRG"
                                                        : "RXG";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%03d", prefix, idx + 1);
    return buf;
}

std::string raw_prefix(CodeSystem sys, int idx) {
    char buf[16];
    char c = sys == CodeSystem::Diagnosis ? 'D' : sys == CodeSystem::Procedure ? 'P' : 'R';
    std::snprintf(buf, sizeof(buf), "%c%03d.", c, idx + 1);
    return buf;
}

std::optional<GroupRef> parse_group_id(const std::string& id, const GeneratorConfig& cfg) {
    if (id.size() < 4) return std::nullopt;
    CodeSystem sys;
    int limit;
    std::string prefix = id.substr(0, 3);
    if (prefix == "DXG") {
        sys = CodeSystem::Diagnosis;
        limit = cfg.n_diagnosis_groups;
    } else if (prefix == "PRG") {
        sys = CodeSystem::Procedure;
        limit = cfg.n_procedure_groups;
    } else if (prefix == "RXG") {
        sys = CodeSystem::Medication;
        limit = cfg.n_medication_groups;
    } else {
        return std::nullopt;
    }
    int v = 0;
    for (size_t i = 3; i < id.size(); ++i) {
        if (id[i] < '0' || id[i] > '9') return std::nullopt;
        v = v * 10 + (id[i] - '0');
    }
    if (v < 1 || v > limit) return std::nullopt;
    return GroupRef{sys, v - 1};
}

// Raw codes that satisfy the built-in case definition; everything else the
// generator emits stays clear of its patterns and medication names.
const char* kEvidenceDx[] = {"331.0", "G30.9", "290.40", "F01.50"};
const struct {
    const char* raw;
    const char* name;
} kEvidenceRx[] = {
    {"NDC00001", "Donepezil"},
    {"NDC00002", "Memantine"},
    {"NDC00003", "Rivastigmine"},
};
constexpr int kEvidenceDxCount = 4;
constexpr int kEvidenceRxCount = 3;

constexpr int kPlantIntervalDays = 120;
constexpr int kPlantSpanYears = 6;
constexpr int kMonthCodeMinimum = 3;  // per-month code count used by cohort inclusion

MedicalCode background_code(const GroupRef& g, int raw_idx) {
    MedicalCode c;
    c.system = g.sys;
    c.raw = raw_prefix(g.sys, g.idx) + std::to_string(raw_idx);
    if (g.sys == CodeSystem::Medication) c.drug_name = "Drug " + group_id(g.sys, g.idx);
    c.group = group_id(g.sys, g.idx);
    return c;
}

MedicalCode evidence_code(int which) {
    MedicalCode c;
    if (which < kEvidenceDxCount) {
        c.system = CodeSystem::Diagnosis;
        c.raw = kEvidenceDx[which];
        c.group = "ADRD_DX";
    } else {
        c.system = CodeSystem::Medication;
        c.raw = kEvidenceRx[which - kEvidenceDxCount].raw;
        c.drug_name = kEvidenceRx[which - kEvidenceDxCount].name;
        c.group = "ADRD_RX";
    }
    return c;
}

std::vector<GroupRef> background_pool(const GeneratorConfig& cfg) {
    std::vector<std::string> excluded;
    for (const auto& p : cfg.planted_pairs) {
        excluded.push_back(p.group_a);
        excluded.push_back(p.group_b);
    }
    std::vector<GroupRef> pool;
    auto add_system = [&](CodeSystem sys, int count) {
        for (int i = 0; i < count; ++i) {
            if (std::find(excluded.begin(), excluded.end(), group_id(sys, i)) != excluded.end())
                continue;
            pool.push_back({sys, i});
        }
    };
    add_system(CodeSystem::Diagnosis, cfg.n_diagnosis_groups);
    add_system(CodeSystem::Procedure, cfg.n_procedure_groups);
    add_system(CodeSystem::Medication, cfg.n_medication_groups);
    return pool;
}

// Draw order per patient is fixed: age, gender, case anchor offset, pair
// activation (and events), monthly visits, intake/closing fillers, evidence.
// Changing it would silently change every generated dataset.
PatientTimeline make_patient(const GeneratorConfig& cfg, int i, bool is_case,
                             const std::vector<GroupRef>& pool, Date* onset_out) {
    Rng rng = Rng::substream(cfg.seed, "patient", static_cast<uint64_t>(i));

    PatientTimeline tl;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "P%06d", i + 1);
    tl.patient_id = idbuf;

    int age_at_anchor = rng.int_in(cfg.age_min + 4, cfg.age_max);
    tl.gender = rng.bernoulli(0.5) ? Gender::F : Gender::M;

    const int span_days = days_between(cfg.span_start, cfg.span_end);
    Date anchor = cfg.span_end;
    if (is_case) {
        // Onset lands in the final stretch of the span so a full selection
        // window plus feature window fits before it.
        int lo = static_cast<int>(std::ceil(0.6 * span_days));
        int hi = span_days - 30;
        anchor = cfg.span_start.plus_days(rng.int_in(lo, hi));
        *onset_out = anchor;
    }
    tl.birth_year = anchor.year() - age_at_anchor;

    auto pick_background = [&]() {
        const GroupRef& g = pool[rng.below(pool.size())];
        int raw_idx = rng.below(static_cast<uint64_t>(cfg.raw_codes_per_group));
        return background_code(g, raw_idx);
    };
    auto pick_group_raw = [&](const std::string& gid) {
        GroupRef g = *parse_group_id(gid, cfg);
        int raw_idx = rng.below(static_cast<uint64_t>(cfg.raw_codes_per_group));
        return background_code(g, raw_idx);
    };

    std::vector<ClaimRecord> records;

    for (const auto& pair : cfg.planted_pairs) {
        double p_both = is_case ? pair.p_case : pair.p_control;
        double p_solo = is_case ? pair.solo_case : pair.solo_control;
        double u = rng.uniform();
        bool both = u < p_both;
        bool solo = !both && u < p_both + p_solo;
        if (!both && !solo) continue;
        bool solo_is_a = solo && rng.bernoulli(0.5);
        Date floor = cfg.span_start.plus_days(1);
        Date deep = anchor.minus_days(years_to_days(kPlantSpanYears));
        if (deep > floor) floor = deep;
        for (Date d = anchor.minus_days(1); d >= floor; d = d.minus_days(kPlantIntervalDays)) {
            Date ev = d.minus_days(rng.int_in(0, 14));
            if (ev < floor) ev = floor;
            ClaimRecord rec;
            rec.date = ev;
            if (both) {
                rec.codes.push_back(pick_group_raw(pair.group_a));
                rec.codes.push_back(pick_group_raw(pair.group_b));
            } else {
                rec.codes.push_back(pick_group_raw(solo_is_a ? pair.group_a : pair.group_b));
            }
            records.push_back(std::move(rec));
        }
    }

    double p_visit = std::min(1.0, cfg.visits_per_year / 12.0);
    for (int mk = cfg.span_start.month_key(); mk <= cfg.span_end.month_key(); ++mk) {
        if (!rng.bernoulli(p_visit)) continue;
        Date first = Date::from_ymd(mk / 12, mk % 12 + 1, 1);
        Date last = Date::from_ymd((mk + 1) / 12, (mk + 1) % 12 + 1, 1).minus_days(1);
        if (first < cfg.span_start) first = cfg.span_start;
        if (last > cfg.span_end) last = cfg.span_end;
        Date d = first.plus_days(rng.below(static_cast<uint64_t>(days_between(first, last) + 1)));
        ClaimRecord rec;
        rec.date = d;
        int n_codes = rng.int_in(cfg.codes_per_visit_min, cfg.codes_per_visit_max);
        for (int k = 0; k < n_codes; ++k) rec.codes.push_back(pick_background());
        records.push_back(std::move(rec));
    }

    // Intake and closing visits pin every patient's record span to the full
    // observation span (controls anchor at the closing visit).
    ClaimRecord intake{cfg.span_start, {pick_background(), pick_background()}};
    ClaimRecord closing{cfg.span_end, {pick_background(), pick_background()}};
    records.push_back(std::move(intake));
    records.push_back(std::move(closing));

    if (is_case) {
        ClaimRecord onset_rec;
        onset_rec.date = anchor;
        onset_rec.codes.push_back(evidence_code(rng.below(kEvidenceDxCount + kEvidenceRxCount)));
        records.push_back(std::move(onset_rec));
        for (Date d = anchor.plus_days(90); d <= cfg.span_end; d = d.plus_days(90)) {
            if (!rng.bernoulli(0.7)) continue;
            ClaimRecord follow;
            follow.date = d;
            follow.codes.push_back(evidence_code(rng.below(kEvidenceDxCount + kEvidenceRxCount)));
            records.push_back(std::move(follow));
        }
    }

    std::stable_sort(records.begin(), records.end(),
                     [](const ClaimRecord& x, const ClaimRecord& y) { return x.date < y.date; });
    for (auto& rec : records) {
        if (!tl.records.empty() && tl.records.back().date == rec.date) {
            auto& dst = tl.records.back().codes;
            dst.insert(dst.end(), rec.codes.begin(), rec.codes.end());
        } else {
            tl.records.push_back(std::move(rec));
        }
    }
    return tl;
}

}  // namespace

void GeneratorConfig::validate() const {
    std::vector<std::string> problems;
    auto bad = [&](const std::string& msg) { problems.push_back(msg); };

    if (n_patients < 1) bad("n_patients must be at least 1");
    if (!(case_fraction > 0.0 && case_fraction < 1.0))
        bad("case_fraction must lie strictly between 0 and 1");
    if (n_patients >= 1 && case_fraction > 0.0 && case_fraction < 1.0) {
        long long n_cases = std::llround(n_patients * case_fraction);
        if (n_cases < 1 || n_cases > n_patients - 1)
            bad("case_fraction rounds to zero cases or zero controls at this n_patients");
    }
    if (n_diagnosis_groups < 0 || n_procedure_groups < 0 || n_medication_groups < 0)
        bad("group counts must be non-negative");
    if (raw_codes_per_group < 1) bad("raw_codes_per_group must be at least 1");
    if (!(visits_per_year > 0.0)) bad("visits_per_year must be positive");
    if (codes_per_visit_min < 1 || codes_per_visit_min > codes_per_visit_max)
        bad("codes_per_visit bounds must satisfy 1 <= min <= max");
    if (codes_per_visit_max < kMonthCodeMinimum)
        bad("codes_per_visit_max below the per-month inclusion minimum (3)");
    if (!(span_start < span_end)) {
        bad("span_start must precede span_end");
    } else {
        int span_days = days_between(span_start, span_end);
        if (0.6 * span_days < years_to_days(kPlantSpanYears) + 60)
            bad("observation span too short to fit planted history before onset");
        double p_visit = std::min(1.0, visits_per_year / 12.0);
        int width = codes_per_visit_max - codes_per_visit_min + 1;
        int qualifying = std::max(0, codes_per_visit_max - std::max(codes_per_visit_min, kMonthCodeMinimum) + 1);
        double q = p_visit * (width > 0 ? static_cast<double>(qualifying) / width : 0.0);
        if (36.0 * q < 4.0)
            bad("expected qualifying months per feature window below inclusion minimum");
    }
    if (age_min < 1) bad("age_min must be positive");
    if (age_max < age_min + 4)
        bad("age_max must exceed age_min by at least the index-date jitter (4 years)");
    for (size_t k = 0; k < planted_pairs.size(); ++k) {
        const auto& p = planted_pairs[k];
        std::string tag = "planted_pairs[" + std::to_string(k) + "]: ";
        if (!parse_group_id(p.group_a, *this)) bad(tag + "unknown group_a " + p.group_a);
        if (!parse_group_id(p.group_b, *this)) bad(tag + "unknown group_b " + p.group_b);
        if (p.group_a == p.group_b) bad(tag + "group_a and group_b must differ");
        if (p.p_case < 0.0 || p.p_case > 1.0 || p.p_control < 0.0 || p.p_control > 1.0)
            bad(tag + "probabilities must lie in [0,1]");
        if (p.p_case < p.p_control) bad(tag + "p_case must be at least p_control");
        if (p.solo_case < 0.0 || p.solo_control < 0.0) bad(tag + "solo rates must be non-negative");
        if (p.p_case + p.solo_case > 1.0 || p.p_control + p.solo_control > 1.0)
            bad(tag + "pair probability plus solo rate exceeds 1");
    }
    if (problems.empty() && background_pool(*this).empty())
        bad("no background groups remain after excluding planted pair groups");

    if (!problems.empty()) {
        std::string all;
        for (size_t k = 0; k < problems.size(); ++k) {
            if (k) all += "; ";
            all += problems[k];
        }
        config_error("invalid_generator_config", all);
    }
}

CodeMap synthetic_code_map(const GeneratorConfig& cfg) {
    CodeMap map;
    auto add_system = [&](CodeSystem sys, int count, const char* what) {
        for (int i = 0; i < count; ++i) {
            map.add({sys, raw_prefix(sys, i) + "*", group_id(sys, i),
                     std::string("Synthetic ") + what + " group " + std::to_string(i + 1)});
        }
    };
    add_system(CodeSystem::Diagnosis, cfg.n_diagnosis_groups, "diagnosis");
    add_system(CodeSystem::Procedure, cfg.n_procedure_groups, "procedure");
    add_system(CodeSystem::Medication, cfg.n_medication_groups, "medication");
    map.add({CodeSystem::Diagnosis, "331.*", "ADRD_DX", "Dementia diagnosis (evidence)"});
    map.add({CodeSystem::Diagnosis, "G30.*", "ADRD_DX", "Dementia diagnosis (evidence)"});
    map.add({CodeSystem::Diagnosis, "290.*", "ADRD_DX", "Dementia diagnosis (evidence)"});
    map.add({CodeSystem::Diagnosis, "F01.*", "ADRD_DX", "Dementia diagnosis (evidence)"});
    map.add({CodeSystem::Medication, "NDC0000*", "ADRD_RX", "Dementia medication (evidence)"});
    map.validate();
    return map;
}

GeneratedData generate(const GeneratorConfig& cfg, Exec exec) {
    cfg.validate();
    const std::vector<GroupRef> pool = background_pool(cfg);
    const int n = cfg.n_patients;
    const int n_cases = static_cast<int>(std::llround(n * cfg.case_fraction));

    std::vector<PatientTimeline> tls(n);
    std::vector<Date> onsets(n);
    run_indexed(n, exec,
                [&](int i) { tls[i] = make_patient(cfg, i, i < n_cases, pool, &onsets[i]); });

    GeneratedData out;
    out.truth.planted_pairs = cfg.planted_pairs;
    for (int i = 0; i < n; ++i) {
        out.truth.labels[tls[i].patient_id] = i < n_cases ? 1 : 0;
        if (i < n_cases) out.truth.onset_dates[tls[i].patient_id] = onsets[i];
    }
    out.timelines = std::move(tls);
    return out;
}

void GroundTruth::write_csv(const std::string& path) const {
    CsvWriter w(path);
    w.row({"patient_id", "label", "onset_date"});
    for (const auto& [pid, label] : labels) {
        auto it = onset_dates.find(pid);
        w.row({pid, label ? "case" : "control", it == onset_dates.end() ? "" : it->second.iso()});
    }
    w.close();
}

GroundTruth GroundTruth::load_csv(const std::string& path) {
    CsvFile f = read_csv(path);
    int pid = f.column("patient_id", path);
    int lab = f.column("label", path);
    int ons = f.column("onset_date", path);
    GroundTruth gt;
    for (const auto& r : f.rows) {
        int label;
        if (r[lab] == "case")
            label = 1;
        else if (r[lab] == "control")
            label = 0;
        else
            data_error("bad_label", path + ": unknown label '" + r[lab] + "'");
        gt.labels[r[pid]] = label;
        if (label) gt.onset_dates[r[pid]] = Date::parse_iso(r[ons]);
    }
    return gt;
}

}  // namespace riskgraph
