#include <doctest.h>

#include <algorithm>
#include <set>

#include "riskgraph/csv.hpp"
#include "riskgraph/domain.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/rng.hpp"
#include "testutil.hpp"

using namespace riskgraph;

namespace {

MedicalCode dx(std::string raw) { return {CodeSystem::Diagnosis, std::move(raw), "", ""}; }
MedicalCode pr(std::string raw) { return {CodeSystem::Procedure, std::move(raw), "", ""}; }
MedicalCode rx(std::string raw, std::string name) {
    return {CodeSystem::Medication, std::move(raw), std::move(name), ""};
}

Date d(int y, int m, int day) { return Date::from_ymd(y, m, day); }

}  // namespace

TEST_CASE("wildcard patterns match by prefix, bare patterns exactly") {
    CHECK(pattern_matches("331.0*", "331.0"));
    CHECK(pattern_matches("331.0*", "331.01"));
    CHECK(pattern_matches("331.0*", "331.0123"));
    CHECK_FALSE(pattern_matches("331.0*", "331.1"));
    CHECK_FALSE(pattern_matches("331.0*", "331"));
    CHECK(pattern_matches("G31.83", "G31.83"));
    CHECK_FALSE(pattern_matches("G31.83", "G31.831"));
    CHECK(pattern_matches("*", "anything"));
    CHECK_FALSE(pattern_matches("", "x"));
    CHECK(pattern_matches("", ""));
}

TEST_CASE("map_code picks the longest matching prefix regardless of insertion order") {
    for (bool reversed : {false, true}) {
        CodeMap m;
        CodeMap::Entry broad{CodeSystem::Diagnosis, "290.*", "BROAD", "broad range"};
        CodeMap::Entry vasc{CodeSystem::Diagnosis, "290.4*", "VASC", "vascular subrange"};
        if (reversed) {
            m.add(vasc);
            m.add(broad);
        } else {
            m.add(broad);
            m.add(vasc);
        }
        m.validate();
        CHECK(map_code(dx("290.41"), m)->group == "VASC");
        CHECK(map_code(dx("290.4"), m)->group == "VASC");
        CHECK(map_code(dx("290.1"), m)->group == "BROAD");
        CHECK_FALSE(map_code(dx("999.99"), m).has_value());
    }
}

TEST_CASE("an exact pattern beats a wildcard with the same prefix") {
    CodeMap m;
    m.add({CodeSystem::Diagnosis, "G31.8*", "WILD", "wild"});
    m.add({CodeSystem::Diagnosis, "G31.83", "EXACT", "exact"});
    m.validate();
    CHECK(map_code(dx("G31.83"), m)->group == "EXACT");
    CHECK(map_code(dx("G31.84"), m)->group == "WILD");
    CHECK(map_code(dx("G31.831"), m)->group == "WILD");
}

TEST_CASE("patterns only apply within their code system") {
    CodeMap m;
    m.add({CodeSystem::Diagnosis, "123*", "DX_GRP", "dx"});
    m.add({CodeSystem::Procedure, "123*", "PR_GRP", "pr"});
    m.validate();
    CHECK(map_code(dx("1234"), m)->group == "DX_GRP");
    CHECK(map_code(pr("1234"), m)->group == "PR_GRP");
    CHECK_FALSE(map_code(rx("1234", "x"), m).has_value());
}

TEST_CASE("map_code preserves the code and fills only the group") {
    CodeMap m;
    m.add({CodeSystem::Medication, "NDC*", "RX_GRP", "rx"});
    m.validate();
    auto mapped = map_code(rx("NDC001", "SomeDrug"), m);
    REQUIRE(mapped.has_value());
    CHECK(mapped->raw == "NDC001");
    CHECK(mapped->drug_name == "SomeDrug");
    CHECK(mapped->system == CodeSystem::Medication);
    CHECK(mapped->group == "RX_GRP");
}

TEST_CASE("validate rejects duplicate patterns and conflicting labels") {
    CodeMap dup;
    dup.add({CodeSystem::Diagnosis, "290.*", "A", "a"});
    dup.add({CodeSystem::Diagnosis, "290.*", "B", "b"});
    CHECK_THROWS_AS(dup.validate(), Error);

    CodeMap crosssys;
    crosssys.add({CodeSystem::Diagnosis, "290.*", "A", "a"});
    crosssys.add({CodeSystem::Procedure, "290.*", "B", "b"});
    CHECK_NOTHROW(crosssys.validate());

    CodeMap conflict;
    conflict.add({CodeSystem::Diagnosis, "290.*", "A", "first label"});
    conflict.add({CodeSystem::Diagnosis, "291.*", "A", "second label"});
    CHECK_THROWS_AS(conflict.validate(), Error);

    try {
        dup.validate();
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Data);
    }
}

TEST_CASE("groups lists each group once, sorted") {
    CodeMap m;
    m.add({CodeSystem::Diagnosis, "9*", "ZULU", "z"});
    m.add({CodeSystem::Diagnosis, "1*", "ALPHA", "a"});
    m.add({CodeSystem::Procedure, "1*", "ALPHA", "a"});
    m.validate();
    CHECK(m.groups() == std::vector<std::string>{"ALPHA", "ZULU"});
    CHECK(m.label_of("ZULU") == "z");
}

TEST_CASE("longest match agrees with exhaustive scoring on random maps") {
    Rng rng(20260815);
    const char alphabet[] = {'0', '1', '2', '3'};
    for (int round = 0; round < 20; ++round) {
        CodeMap m;
        std::set<std::string> seen;
        struct Pat {
            std::string prefix;
            bool wild;
            std::string group;
        };
        std::vector<Pat> pats;
        while (pats.size() < 25) {
            int len = static_cast<int>(rng.int_in(1, 5));
            std::string p;
            for (int i = 0; i < len; ++i) p += alphabet[rng.below(4)];
            bool wild = rng.bernoulli(0.6);
            std::string text = wild ? p + "*" : p;
            if (!seen.insert(text).second) continue;
            std::string group = "G" + std::to_string(pats.size());
            m.add({CodeSystem::Diagnosis, text, group, group});
            pats.push_back({p, wild, group});
        }
        m.validate();
        for (int trial = 0; trial < 200; ++trial) {
            int len = static_cast<int>(rng.int_in(1, 6));
            std::string raw;
            for (int i = 0; i < len; ++i) raw += alphabet[rng.below(4)];

            const Pat* best = nullptr;
            size_t best_score = 0;
            for (const auto& p : pats) {
                bool hit = p.wild ? raw.compare(0, p.prefix.size(), p.prefix) == 0
                                  : raw == p.prefix;
                if (!hit) continue;
                size_t score = 2 * p.prefix.size() + (p.wild ? 0 : 1);
                if (score > best_score) {
                    best_score = score;
                    best = &p;
                }
            }
            auto got = map_code(dx(raw), m);
            if (best == nullptr) {
                CHECK_FALSE(got.has_value());
            } else {
                REQUIRE(got.has_value());
                CHECK(got->group == best->group);
            }
        }
    }
}

TEST_CASE("the bundled case definition flags dementia diagnoses and drugs") {
    CaseDefinition def = default_case_definition();
    Date day = d(2015, 3, 4);

    CHECK(is_case_evidence({day, {dx("331.0")}}, def));
    CHECK(is_case_evidence({day, {dx("G30.1")}}, def));
    CHECK(is_case_evidence({day, {dx("290.43")}}, def));
    CHECK(is_case_evidence({day, {dx("G31.83")}}, def));
    CHECK_FALSE(is_case_evidence({day, {dx("G31.84")}}, def));
    CHECK_FALSE(is_case_evidence({day, {dx("401.9")}}, def));

    CHECK(is_case_evidence({day, {rx("NDC0093", "Donepezil HCl 10mg tab")}}, def));
    CHECK(is_case_evidence({day, {rx("NDC0017", "ARICEPT")}}, def));
    CHECK(is_case_evidence({day, {rx("memantine", "")}}, def));
    CHECK_FALSE(is_case_evidence({day, {rx("NDC0001", "Metformin 500mg")}}, def));

    CHECK_FALSE(is_case_evidence({day, {pr("99213")}}, def));
    CHECK_FALSE(is_case_evidence({day, {pr("Aricept")}}, def));

    CHECK(is_case_evidence({day, {dx("401.9"), rx("NDC0017", "Exelon patch")}}, def));
}

TEST_CASE("first_case_date returns the earliest evidence date") {
    CaseDefinition def = default_case_definition();
    PatientTimeline tl;
    tl.patient_id = "p1";
    tl.records.push_back({d(2014, 5, 2), {dx("401.9")}});
    tl.records.push_back({d(2015, 3, 4), {dx("401.9"), dx("331.0")}});
    tl.records.push_back({d(2016, 1, 1), {dx("G30.0")}});
    auto got = first_case_date(tl, def);
    REQUIRE(got.has_value());
    CHECK(*got == d(2015, 3, 4));

    PatientTimeline clean;
    clean.records.push_back({d(2014, 5, 2), {dx("401.9")}});
    CHECK_FALSE(first_case_date(clean, def).has_value());
    CHECK_FALSE(first_case_date(PatientTimeline{}, def).has_value());
}

TEST_CASE("code map csv round trip") {
    TempDir tmp;
    CodeMap m;
    m.add({CodeSystem::Diagnosis, "290.4*", "VASC", "vascular, broad"});
    m.add({CodeSystem::Medication, "NDC*", "RX", "any \"drug\""});
    m.validate();
    m.write_csv(tmp.file("map.csv"));
    CodeMap back = CodeMap::load_csv(tmp.file("map.csv"));
    REQUIRE(back.entries().size() == m.entries().size());
    for (size_t i = 0; i < m.entries().size(); ++i) {
        CHECK(back.entries()[i].system == m.entries()[i].system);
        CHECK(back.entries()[i].pattern == m.entries()[i].pattern);
        CHECK(back.entries()[i].group == m.entries()[i].group);
        CHECK(back.entries()[i].label == m.entries()[i].label);
    }
}

TEST_CASE("case definition csv round trip") {
    TempDir tmp;
    CaseDefinition def = default_case_definition();
    def.write_csv(tmp.file("def.csv"));
    CaseDefinition back = CaseDefinition::load_csv(tmp.file("def.csv"));
    CHECK(back.diagnosis_patterns == def.diagnosis_patterns);
    CHECK(back.medication_names == def.medication_names);
}

TEST_CASE("patients and claims csv round trip, merging same-day rows") {
    TempDir tmp;
    std::vector<PatientTimeline> tls(2);
    tls[0].patient_id = "P000001";
    tls[0].birth_year = 1948;
    tls[0].gender = Gender::F;
    tls[0].records.push_back({d(2010, 1, 5), {dx("290.1"), rx("NDC1", "Aspirin, buffered")}});
    tls[0].records.push_back({d(2011, 7, 9), {pr("99213")}});
    tls[1].patient_id = "P000002";
    tls[1].birth_year = 1950;
    tls[1].gender = Gender::M;
    tls[1].records.push_back({d(2009, 12, 31), {dx("401.9")}});

    write_patients_csv(tls, tmp.file("patients.csv"));
    write_claims_csv(tls, tmp.file("claims.csv"));
    auto back = load_patients(tmp.file("patients.csv"), tmp.file("claims.csv"));

    REQUIRE(back.size() == 2);
    CHECK(back[0].patient_id == "P000001");
    CHECK(back[0].birth_year == 1948);
    CHECK(back[0].gender == Gender::F);
    REQUIRE(back[0].records.size() == 2);
    REQUIRE(back[0].records[0].codes.size() == 2);
    CHECK(back[0].records[0].date == d(2010, 1, 5));
    CHECK(back[0].records[0].codes[1].drug_name == "Aspirin, buffered");
    CHECK(back[1].records[0].codes[0].raw == "401.9");
}

TEST_CASE("load_patients sorts records and merges duplicate dates") {
    TempDir tmp;
    {
        CsvWriter w(tmp.file("patients.csv"));
        w.row({"patient_id", "birth_year", "gender"});
        w.row({"p1", "1940", "M"});
        w.close();
    }
    {
        CsvWriter w(tmp.file("claims.csv"));
        w.row({"patient_id", "date", "system", "raw_code", "drug_name"});
        w.row({"p1", "2012-06-01", "Diagnosis", "331.0", ""});
        w.row({"p1", "2010-02-03", "Procedure", "99213", ""});
        w.row({"p1", "2012-06-01", "Medication", "NDC9", "Donepezil"});
        w.close();
    }
    auto tls = load_patients(tmp.file("patients.csv"), tmp.file("claims.csv"));
    REQUIRE(tls.size() == 1);
    REQUIRE(tls[0].records.size() == 2);
    CHECK(tls[0].records[0].date == d(2010, 2, 3));
    CHECK(tls[0].records[1].codes.size() == 2);
}

TEST_CASE("load_patients rejects inconsistent inputs with data errors") {
    TempDir tmp;
    {
        CsvWriter w(tmp.file("patients.csv"));
        w.row({"patient_id", "birth_year", "gender"});
        w.row({"p1", "1940", "M"});
        w.row({"p1", "1941", "F"});
        w.close();
    }
    {
        CsvWriter w(tmp.file("claims.csv"));
        w.row({"patient_id", "date", "system", "raw_code", "drug_name"});
        w.close();
    }
    CHECK_THROWS_AS(load_patients(tmp.file("patients.csv"), tmp.file("claims.csv")), Error);

    {
        CsvWriter w(tmp.file("patients2.csv"));
        w.row({"patient_id", "birth_year", "gender"});
        w.row({"p1", "1940", "M"});
        w.close();
    }
    {
        CsvWriter w(tmp.file("claims2.csv"));
        w.row({"patient_id", "date", "system", "raw_code", "drug_name"});
        w.row({"p2", "2012-06-01", "Diagnosis", "331.0", ""});
        w.close();
    }
    try {
        load_patients(tmp.file("patients2.csv"), tmp.file("claims2.csv"));
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Data);
    }
}
