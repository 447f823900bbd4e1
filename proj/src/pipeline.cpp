#include "riskgraph/pipeline.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "riskgraph/cohort.hpp"
#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/eval.hpp"
#include "riskgraph/matching.hpp"
#include "riskgraph/rng.hpp"

namespace riskgraph {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// --- config parsing -------------------------------------------------------
// Every reader appends to `problems` instead of throwing, so a bad file is
// reported in full rather than one field at a time.

void unknown_keys(const json& j, const std::string& where,
                  std::initializer_list<const char*> allowed, std::vector<std::string>& problems) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) problems.push_back(where + ": unknown key \"" + it.key() + "\"");
    }
}

const json* section(const json& j, const char* key, const std::string& where,
                    std::vector<std::string>& problems) {
    if (!j.contains(key)) return nullptr;
    if (!j[key].is_object()) {
        problems.push_back(where + "." + key + " must be an object");
        return nullptr;
    }
    return &j[key];
}

void read_num(const json& j, const char* key, const std::string& where, double& out,
              std::vector<std::string>& problems, bool required = false) {
    if (!j.contains(key)) {
        if (required) problems.push_back(where + "." + key + " is required");
        return;
    }
    if (!j[key].is_number()) {
        problems.push_back(where + "." + key + " must be a number");
        return;
    }
    out = j[key].get<double>();
}

void read_int(const json& j, const char* key, const std::string& where, int& out,
              std::vector<std::string>& problems, bool required = false) {
    if (!j.contains(key)) {
        if (required) problems.push_back(where + "." + key + " is required");
        return;
    }
    if (!j[key].is_number_integer()) {
        problems.push_back(where + "." + key + " must be an integer");
        return;
    }
    out = j[key].get<int>();
}

void read_u64(const json& j, const char* key, const std::string& where, uint64_t& out,
              std::vector<std::string>& problems, bool required = false) {
    if (!j.contains(key)) {
        if (required) problems.push_back(where + "." + key + " is required");
        return;
    }
    if (!j[key].is_number_integer() ||
        (!j[key].is_number_unsigned() && j[key].get<int64_t>() < 0)) {
        problems.push_back(where + "." + key + " must be a non-negative integer");
        return;
    }
    out = j[key].get<uint64_t>();
}

void read_str(const json& j, const char* key, const std::string& where, std::string& out,
              std::vector<std::string>& problems, bool required = false) {
    if (!j.contains(key)) {
        if (required) problems.push_back(where + "." + key + " is required");
        return;
    }
    if (!j[key].is_string()) {
        problems.push_back(where + "." + key + " must be a string");
        return;
    }
    out = j[key].get<std::string>();
}

void read_bool(const json& j, const char* key, const std::string& where, bool& out,
               std::vector<std::string>& problems) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean()) {
        problems.push_back(where + "." + key + " must be a boolean");
        return;
    }
    out = j[key].get<bool>();
}

bool read_date(const json& j, const char* key, const std::string& where, Date& out,
               std::vector<std::string>& problems) {
    std::string s;
    read_str(j, key, where, s, problems, true);
    if (s.empty()) return false;
    try {
        out = Date::parse_iso(s);
        return true;
    } catch (const Error& e) {
        problems.push_back(where + "." + key + ": " + e.what());
        return false;
    }
}

GeneratorConfig read_generator(const json& j, std::vector<std::string>& problems) {
    const std::string w = "generator";
    unknown_keys(j, w,
                 {"n_patients", "case_fraction", "n_diagnosis_groups", "n_procedure_groups",
                  "n_medication_groups", "raw_codes_per_group", "planted_pairs", "visits_per_year",
                  "codes_per_visit_min", "codes_per_visit_max", "span_start", "span_end", "age_min",
                  "age_max"},
                 problems);
    GeneratorConfig g;
    read_int(j, "n_patients", w, g.n_patients, problems, true);
    read_num(j, "case_fraction", w, g.case_fraction, problems, true);
    read_int(j, "n_diagnosis_groups", w, g.n_diagnosis_groups, problems, true);
    read_int(j, "n_procedure_groups", w, g.n_procedure_groups, problems, true);
    read_int(j, "n_medication_groups", w, g.n_medication_groups, problems, true);
    read_int(j, "raw_codes_per_group", w, g.raw_codes_per_group, problems);
    read_num(j, "visits_per_year", w, g.visits_per_year, problems);
    read_int(j, "codes_per_visit_min", w, g.codes_per_visit_min, problems);
    read_int(j, "codes_per_visit_max", w, g.codes_per_visit_max, problems);
    read_date(j, "span_start", w, g.span_start, problems);
    read_date(j, "span_end", w, g.span_end, problems);
    read_int(j, "age_min", w, g.age_min, problems, true);
    read_int(j, "age_max", w, g.age_max, problems, true);
    if (j.contains("planted_pairs")) {
        if (!j["planted_pairs"].is_array()) {
            problems.push_back("generator.planted_pairs must be an array");
        } else {
            int idx = 0;
            for (const auto& pj : j["planted_pairs"]) {
                std::string pw = "generator.planted_pairs[" + std::to_string(idx++) + "]";
                if (!pj.is_object()) {
                    problems.push_back(pw + " must be an object");
                    continue;
                }
                unknown_keys(
                    pj, pw,
                    {"group_a", "group_b", "p_case", "p_control", "solo_case", "solo_control"},
                    problems);
                PlantedPair p;
                read_str(pj, "group_a", pw, p.group_a, problems, true);
                read_str(pj, "group_b", pw, p.group_b, problems, true);
                read_num(pj, "p_case", pw, p.p_case, problems, true);
                read_num(pj, "p_control", pw, p.p_control, problems, true);
                read_num(pj, "solo_case", pw, p.solo_case, problems);
                read_num(pj, "solo_control", pw, p.solo_control, problems);
                g.planted_pairs.push_back(std::move(p));
            }
        }
    }
    return g;
}

void read_ensemble(const json& j, const std::string& w, TreeEnsembleConfig& out,
                   std::vector<std::string>& problems) {
    unknown_keys(
        j, w,
        {"n_trees", "max_depth", "min_samples_leaf", "features_per_split", "learning_rate"},
        problems);
    read_int(j, "n_trees", w, out.n_trees, problems);
    read_int(j, "max_depth", w, out.max_depth, problems);
    read_int(j, "min_samples_leaf", w, out.min_samples_leaf, problems);
    read_int(j, "features_per_split", w, out.features_per_split, problems);
    read_num(j, "learning_rate", w, out.learning_rate, problems);
}

PipelineConfig read_config(const json& j, std::vector<std::string>& problems) {
    PipelineConfig cfg;
    if (!j.is_object()) {
        problems.push_back("config root must be a JSON object");
        return cfg;
    }
    unknown_keys(j, "config",
                 {"seed", "output_dir", "scenarios", "paths", "generator", "split", "match",
                  "train", "baselines", "explain"},
                 problems);
    read_u64(j, "seed", "config", cfg.seed, problems, true);
    read_str(j, "output_dir", "config", cfg.output_dir, problems);

    if (j.contains("scenarios")) {
        cfg.scenarios.clear();
        if (!j["scenarios"].is_array()) {
            problems.push_back("config.scenarios must be an array of integers");
        } else {
            for (const auto& e : j["scenarios"]) {
                if (!e.is_number_integer()) {
                    problems.push_back("config.scenarios entries must be integers");
                    continue;
                }
                cfg.scenarios.push_back(e.get<int>());
            }
        }
    }

    if (const json* p = section(j, "paths", "config", problems)) {
        unknown_keys(*p, "paths", {"patients", "claims", "code_map", "case_definition"}, problems);
        read_str(*p, "patients", "paths", cfg.patients_csv, problems, true);
        read_str(*p, "claims", "paths", cfg.claims_csv, problems, true);
        read_str(*p, "code_map", "paths", cfg.code_map_csv, problems, true);
        read_str(*p, "case_definition", "paths", cfg.case_definition_csv, problems);
    }
    if (const json* g = section(j, "generator", "config", problems))
        cfg.generator = read_generator(*g, problems);
    if (const json* s = section(j, "split", "config", problems)) {
        unknown_keys(*s, "split", {"test_fraction"}, problems);
        read_num(*s, "test_fraction", "split", cfg.test_fraction, problems);
    }
    if (const json* m = section(j, "match", "config", problems)) {
        unknown_keys(*m, "match", {"caliper", "subset_per_class"}, problems);
        read_num(*m, "caliper", "match", cfg.caliper, problems);
        if (m->contains("subset_per_class")) {
            int n = 0;
            read_int(*m, "subset_per_class", "match", n, problems);
            cfg.subset_per_class = n;
        }
    }
    if (const json* t = section(j, "train", "config", problems)) {
        unknown_keys(*t, "train",
                     {"learning_rate", "batch_size", "dropout", "epochs", "layers", "heads",
                      "beta", "embed_dim", "val_fraction"},
                     problems);
        read_num(*t, "learning_rate", "train", cfg.train.learning_rate, problems);
        read_int(*t, "batch_size", "train", cfg.train.batch_size, problems);
        read_num(*t, "dropout", "train", cfg.train.dropout, problems);
        read_int(*t, "epochs", "train", cfg.train.epochs, problems);
        read_int(*t, "layers", "train", cfg.train.layers, problems);
        read_int(*t, "heads", "train", cfg.train.heads, problems);
        read_num(*t, "beta", "train", cfg.train.beta, problems);
        read_int(*t, "embed_dim", "train", cfg.train.embed_dim, problems);
        read_num(*t, "val_fraction", "train", cfg.train.val_fraction, problems);
    }
    if (const json* b = section(j, "baselines", "config", problems)) {
        unknown_keys(*b, "baselines", {"forest", "gbm"}, problems);
        if (const json* f = section(*b, "forest", "baselines", problems))
            read_ensemble(*f, "baselines.forest", cfg.forest, problems);
        if (const json* g = section(*b, "gbm", "baselines", problems))
            read_ensemble(*g, "baselines.gbm", cfg.gbm, problems);
    }
    if (const json* e = section(j, "explain", "config", problems)) {
        unknown_keys(*e, "explain", {"top_k", "mean", "include_self"}, problems);
        read_int(*e, "top_k", "explain", cfg.explain_top_k, problems);
        std::string mean;
        read_str(*e, "mean", "explain", mean, problems);
        if (mean == "support")
            cfg.mean_mode = MeanMode::Support;
        else if (!mean.empty() && mean != "group_size")
            problems.push_back("explain.mean must be \"group_size\" or \"support\"");
        read_bool(*e, "include_self", "explain", cfg.explain_include_self, problems);
    }
    return cfg;
}

// Delegate to a module validator, folding its findings into ours.
template <typename F>
void fold_validate(F&& f, const std::string& where, std::vector<std::string>& problems) {
    try {
        f();
    } catch (const Error& e) {
        problems.push_back(where + ": " + e.what());
    }
}

void collect_problems(const PipelineConfig& cfg, std::vector<std::string>& problems) {
    if (cfg.output_dir.empty())
        problems.push_back("output_dir is required (config key or --output)");
    if (cfg.scenarios.empty()) problems.push_back("scenarios must not be empty");
    for (int s : cfg.scenarios)
        if (s < 1 || s > 3) problems.push_back("scenario ids must be 1, 2, or 3");
    for (size_t i = 1; i < cfg.scenarios.size(); ++i)
        if (std::find(cfg.scenarios.begin(), cfg.scenarios.begin() + i, cfg.scenarios[i]) !=
            cfg.scenarios.begin() + i) {
            problems.push_back("scenarios must not repeat");
            break;
        }

    const bool has_paths = !cfg.patients_csv.empty() || !cfg.claims_csv.empty() ||
                           !cfg.code_map_csv.empty() || !cfg.case_definition_csv.empty();
    if (cfg.generator && has_paths)
        problems.push_back("paths and generator are mutually exclusive; pick one data source");
    if (!cfg.generator && !has_paths)
        problems.push_back("either a paths section or a generator section is required");
    if (!cfg.generator) {
        const std::pair<const char*, const std::string*> path_fields[] = {
            {"paths.patients", &cfg.patients_csv},
            {"paths.claims", &cfg.claims_csv},
            {"paths.code_map", &cfg.code_map_csv},
            {"paths.case_definition", &cfg.case_definition_csv}};
        for (const auto& [label, path] : path_fields) {
            if (!path->empty() && !fs::exists(*path))
                problems.push_back(std::string(label) + ": file not found: " + *path);
        }
    } else {
        fold_validate([&] { cfg.generator->validate(); }, "generator", problems);
    }

    if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
        problems.push_back("split.test_fraction must lie in (0, 1)");
    if (!(cfg.caliper > 0.0)) problems.push_back("match.caliper must be positive");
    if (cfg.subset_per_class && *cfg.subset_per_class < 1)
        problems.push_back("match.subset_per_class must be positive");
    if (cfg.explain_top_k < 1) problems.push_back("explain.top_k must be positive");

    fold_validate([&] { cfg.train.validate(); }, "train", problems);
    fold_validate([&] { cfg.forest.validate(); }, "baselines.forest", problems);
    fold_validate([&] { cfg.gbm.validate(); }, "baselines.gbm", problems);
}

// --- manifests ------------------------------------------------------------

json config_json(const PipelineConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["scenarios"] = cfg.scenarios;
    j["paths"] = {{"patients", cfg.patients_csv},
                  {"claims", cfg.claims_csv},
                  {"code_map", cfg.code_map_csv},
                  {"case_definition", cfg.case_definition_csv}};
    if (cfg.generator) {
        const GeneratorConfig& g = *cfg.generator;
        json pairs = json::array();
        for (const auto& p : g.planted_pairs)
            pairs.push_back({{"group_a", p.group_a},
                             {"group_b", p.group_b},
                             {"p_case", p.p_case},
                             {"p_control", p.p_control},
                             {"solo_case", p.solo_case},
                             {"solo_control", p.solo_control}});
        j["generator"] = {{"n_patients", g.n_patients},
                          {"case_fraction", g.case_fraction},
                          {"n_diagnosis_groups", g.n_diagnosis_groups},
                          {"n_procedure_groups", g.n_procedure_groups},
                          {"n_medication_groups", g.n_medication_groups},
                          {"raw_codes_per_group", g.raw_codes_per_group},
                          {"planted_pairs", pairs},
                          {"visits_per_year", g.visits_per_year},
                          {"codes_per_visit_min", g.codes_per_visit_min},
                          {"codes_per_visit_max", g.codes_per_visit_max},
                          {"span_start", g.span_start.iso()},
                          {"span_end", g.span_end.iso()},
                          {"age_min", g.age_min},
                          {"age_max", g.age_max}};
    }
    j["split"] = {{"test_fraction", cfg.test_fraction}};
    j["match"] = {{"caliper", cfg.caliper}};
    if (cfg.subset_per_class) j["match"]["subset_per_class"] = *cfg.subset_per_class;
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"batch_size", cfg.train.batch_size},
                  {"dropout", cfg.train.dropout},
                  {"epochs", cfg.train.epochs},
                  {"layers", cfg.train.layers},
                  {"heads", cfg.train.heads},
                  {"beta", cfg.train.beta},
                  {"embed_dim", cfg.train.embed_dim},
                  {"val_fraction", cfg.train.val_fraction}};
    auto ensemble_json = [](const TreeEnsembleConfig& t) {
        return json{{"n_trees", t.n_trees},
                    {"max_depth", t.max_depth},
                    {"min_samples_leaf", t.min_samples_leaf},
                    {"features_per_split", t.features_per_split},
                    {"learning_rate", t.learning_rate}};
    };
    j["baselines"] = {{"forest", ensemble_json(cfg.forest)}, {"gbm", ensemble_json(cfg.gbm)}};
    j["explain"] = {{"top_k", cfg.explain_top_k},
                    {"mean", cfg.mean_mode == MeanMode::Support ? "support" : "group_size"},
                    {"include_self", cfg.explain_include_self}};
    return j;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string config_digest(const PipelineConfig& cfg) {
    return hex64(fnv1a64(config_json(cfg).dump()));
}

// Path shown in manifests: relative to the output dir for artifacts, as
// configured for external inputs.
std::string display_path(const PipelineConfig& cfg, const std::string& path) {
    const std::string prefix = cfg.output_dir + "/";
    if (path.rfind(prefix, 0) == 0) return path.substr(prefix.size());
    return path;
}

using InputDigests = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const PipelineConfig& cfg, const std::string& dir, const std::string& stage,
                    int scenario, uint64_t mseed, const InputDigests& inputs) {
    json j;
    j["stage"] = stage;
    if (scenario > 0) j["scenario"] = scenario;
    j["versions"] = {{"riskgraph", kToolVersion}, {"manifest", 1}};
    j["config_digest"] = config_digest(cfg);
    j["seed"] = cfg.seed;
    j["module_seed"] = mseed;
    json in = json::object();
    for (const auto& [path, digest] : inputs) in[display_path(cfg, path)] = digest;
    j["inputs"] = in;
    std::ofstream out(dir + "/manifest.json");
    if (!out) data_error("write_failed", "cannot write " + dir + "/manifest.json");
    out << j.dump(1) << "\n";
    std::cerr << "[" << stage << (scenario > 0 ? " s" + std::to_string(scenario) : "") << "] "
              << dir << "\n";
}

// --- artifact plumbing ----------------------------------------------------

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        data_error("missing_artifact",
                   "missing artifact " + path + "; run the `" + producer + "` subcommand first");
}

struct InputSet {
    std::string patients;
    std::string claims;
    std::string code_map;
    std::string case_def;  // empty -> bundled default definition
};

InputSet resolve_inputs(const PipelineConfig& cfg) {
    InputSet in;
    if (cfg.generator) {
        const std::string d = data_dir(cfg);
        in.patients = d + "/patients.csv";
        in.claims = d + "/claims.csv";
        in.code_map = d + "/code_map.csv";
        in.case_def = d + "/case_definition.csv";
        for (const auto& p : {in.patients, in.claims, in.code_map, in.case_def})
            require_artifact(p, "generate");
    } else {
        in.patients = cfg.patients_csv;
        in.claims = cfg.claims_csv;
        in.code_map = cfg.code_map_csv;
        in.case_def = cfg.case_definition_csv;
        for (const auto& p : {in.patients, in.claims, in.code_map}) {
            if (!fs::exists(p)) config_error("missing_input", "input file not found: " + p);
        }
        if (!in.case_def.empty() && !fs::exists(in.case_def))
            config_error("missing_input", "input file not found: " + in.case_def);
    }
    return in;
}

InputDigests digest_inputs(const InputSet& in) {
    InputDigests d;
    for (const auto& p : {in.patients, in.claims, in.code_map, in.case_def})
        if (!p.empty()) d.emplace_back(p, file_digest(p));
    return d;
}

CaseDefinition load_case_definition(const InputSet& in) {
    if (in.case_def.empty()) return default_case_definition();
    return CaseDefinition::load_csv(in.case_def);
}

struct IngestCounts {
    int64_t patients = 0;
    int64_t claims = 0;
    int64_t codes = 0;
    int64_t mapped = 0;
    int64_t unmapped = 0;
};

std::vector<PatientTimeline> load_mapped_timelines(const InputSet& in, const CodeMap& map,
                                                   IngestCounts* counts = nullptr) {
    auto tls = load_patients(in.patients, in.claims);
    IngestCounts local;
    for (auto& tl : tls) {
        ++local.patients;
        for (auto& rec : tl.records) {
            ++local.claims;
            for (auto& code : rec.codes) {
                ++local.codes;
                if (auto mapped = map_code(code, map)) {
                    code = *mapped;
                    ++local.mapped;
                } else {
                    ++local.unmapped;
                }
            }
        }
    }
    if (counts) *counts = local;
    return tls;
}

std::string cohort_dir(const PipelineConfig& cfg, int s) { return scenario_dir(cfg, s) + "/cohort"; }
std::string match_dir(const PipelineConfig& cfg, int s) { return scenario_dir(cfg, s) + "/match"; }
std::string train_dir(const PipelineConfig& cfg, int s, const std::string& model) {
    return scenario_dir(cfg, s) + "/train_" + model;
}
std::string explain_dir(const PipelineConfig& cfg, int s) {
    return scenario_dir(cfg, s) + "/explain";
}

Cohort load_scenario_cohort(const PipelineConfig& cfg, int s) {
    const std::string d = cohort_dir(cfg, s);
    require_artifact(d + "/cohort.csv", "cohort");
    require_artifact(d + "/cohort_codes.csv", "cohort");
    return load_cohort(d + "/cohort.csv", d + "/cohort_codes.csv");
}

// Samples in matched.csv order, case then control per pair.
std::vector<CohortSample> samples_by_id(const Cohort& cohort, const std::vector<std::string>& ids,
                                        const std::string& source) {
    std::unordered_map<std::string, const CohortSample*> by_id;
    for (const auto& s : cohort.samples) by_id[s.patient_id] = &s;
    std::vector<CohortSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            data_error("unknown_patient", source + " names patient " + id + " absent from cohort.csv");
        out.push_back(*it->second);
    }
    return out;
}

std::vector<std::string> matched_ids(const MatchResult& mr) {
    std::vector<std::string> ids;
    ids.reserve(mr.pairs.size() * 2);
    for (const auto& p : mr.pairs) {
        ids.push_back(p.case_id);
        ids.push_back(p.control_id);
    }
    return ids;
}

struct RegimeSamples {
    std::vector<CohortSample> matched;
    std::vector<CohortSample> subset;  // empty unless a subset is configured
    InputDigests inputs;
};

RegimeSamples load_training_samples(const PipelineConfig& cfg, int s, const Cohort& cohort) {
    const std::string md = match_dir(cfg, s);
    require_artifact(md + "/matched.csv", "match");
    RegimeSamples out;
    MatchResult mr = load_matched_csv(md + "/matched.csv");
    out.matched = samples_by_id(cohort, matched_ids(mr), "matched.csv");
    out.inputs.emplace_back(md + "/matched.csv", file_digest(md + "/matched.csv"));
    if (cfg.subset_per_class) {
        require_artifact(md + "/subset_train.csv", "match");
        out.subset = samples_by_id(cohort, load_ids_csv(md + "/subset_train.csv"), "subset_train.csv");
        out.inputs.emplace_back(md + "/subset_train.csv", file_digest(md + "/subset_train.csv"));
    }
    return out;
}

std::vector<std::string> regimes(const PipelineConfig& cfg) {
    std::vector<std::string> r{"matched"};
    if (cfg.subset_per_class) r.push_back("subset");
    return r;
}

// --- model scoring --------------------------------------------------------

std::vector<double> score_vgnn(const LoadedModel& lm, const std::vector<CohortSample>& samples) {
    std::vector<double> scores(samples.size());
    run_indexed(static_cast<int>(samples.size()), Exec::Parallel, [&](int i) {
        PatientGraph g = build_graph(samples[i], lm.vocab);
        scores[i] = forward(lm.params, g, Mode::Infer).probability;
    });
    return scores;
}

template <typename Model>
std::vector<double> score_trees(const Model& model, const FeatureMeta& meta,
                                const std::vector<CohortSample>& samples) {
    const Vocabulary vocab = Vocabulary::from_groups(meta.groups);
    const size_t age_idx = meta.groups.size();
    std::vector<double> scores(samples.size());
    run_indexed(static_cast<int>(samples.size()), Exec::Parallel, [&](int i) {
        FeatureVector v = vectorize(samples[i], vocab);
        v.values[age_idx] = (v.values[age_idx] - meta.age.mean) / meta.age.sd;
        scores[i] = predict(model, v.values);
    });
    return scores;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_timing(const std::string& path, const std::vector<std::array<std::string, 3>>& rows) {
    CsvWriter w(path);
    w.row({"model", "regime", "seconds"});
    for (const auto& r : rows) w.row({r[0], r[1], r[2]});
}

}  // namespace

// --- public surface -------------------------------------------------------

uint64_t module_seed(uint64_t global_seed, std::string_view module) {
    return Rng::substream(global_seed, module).next_u64();
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) data_error("unreadable_file", "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a64(ss.str()));
}

std::string data_dir(const PipelineConfig& cfg) { return cfg.output_dir + "/data"; }

std::string scenario_dir(const PipelineConfig& cfg, int scenario) {
    return cfg.output_dir + "/s" + std::to_string(scenario);
}

void PipelineConfig::validate() const {
    std::vector<std::string> problems;
    collect_problems(*this, problems);
    if (!problems.empty()) config_error("invalid_config", join(problems, "; "));
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) config_error("missing_config", "config file not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        config_error("config_parse", path + ": " + e.what());
    }
    std::vector<std::string> problems;
    PipelineConfig cfg = read_config(j, problems);
    if (!problems.empty()) config_error("invalid_config", join(problems, "; "));
    return cfg;
}

void run_generate(const PipelineConfig& cfg) {
    if (!cfg.generator)
        config_error("no_generator", "generate needs a generator section in the config");
    GeneratorConfig g = *cfg.generator;
    g.seed = module_seed(cfg.seed, "datagen");

    const std::string d = data_dir(cfg);
    fs::create_directories(d);

    GeneratedData data = generate(g);
    write_patients_csv(data.timelines, d + "/patients.csv");
    write_claims_csv(data.timelines, d + "/claims.csv");
    synthetic_code_map(g).write_csv(d + "/code_map.csv");
    default_case_definition().write_csv(d + "/case_definition.csv");
    data.truth.write_csv(d + "/ground_truth.csv");

    write_manifest(cfg, d, "generate", 0, g.seed, {});
}

void run_ingest(const PipelineConfig& cfg) {
    const InputSet in = resolve_inputs(cfg);
    CodeMap map = CodeMap::load_csv(in.code_map);
    map.validate();
    const CaseDefinition def = load_case_definition(in);

    IngestCounts counts;
    auto tls = load_mapped_timelines(in, map, &counts);
    int64_t evidence_patients = 0;
    for (const auto& tl : tls)
        if (first_case_date(tl, def)) ++evidence_patients;

    const std::string d = cfg.output_dir + "/ingest";
    fs::create_directories(d);
    CsvWriter w(d + "/report.csv");
    w.row({"metric", "value"});
    auto metric = [&](const char* name, int64_t v) { w.row({name, std::to_string(v)}); };
    metric("patients", counts.patients);
    metric("claims", counts.claims);
    metric("codes", counts.codes);
    metric("mapped_codes", counts.mapped);
    metric("unmapped_codes", counts.unmapped);
    metric("groups", static_cast<int64_t>(map.groups().size()));
    metric("case_evidence_patients", evidence_patients);

    write_manifest(cfg, d, "ingest", 0, module_seed(cfg.seed, "ingest"), digest_inputs(in));
}

void run_cohort(const PipelineConfig& cfg, int scenario) {
    const InputSet in = resolve_inputs(cfg);
    CodeMap map = CodeMap::load_csv(in.code_map);
    map.validate();
    const CaseDefinition def = load_case_definition(in);
    auto tls = load_mapped_timelines(in, map);

    const uint64_t mseed = module_seed(cfg.seed, "cohort");
    const ScenarioConfig sc = ScenarioConfig::for_scenario(scenario, mseed);
    Cohort cohort = build_cohort(tls, def, sc);

    const std::string d = cohort_dir(cfg, scenario);
    fs::create_directories(d);
    write_cohort_csv(cohort, d + "/cohort.csv");
    write_cohort_codes_csv(cohort, d + "/cohort_codes.csv");
    write_exclusions_csv(cohort, d + "/exclusions.csv");

    write_manifest(cfg, d, "cohort", scenario, mseed, digest_inputs(in));
}

void run_match(const PipelineConfig& cfg, int scenario) {
    const std::string cd = cohort_dir(cfg, scenario);
    Cohort cohort = load_scenario_cohort(cfg, scenario);

    const uint64_t mseed = module_seed(cfg.seed, "matching");
    SplitConfig split_cfg;
    split_cfg.test_fraction = cfg.test_fraction;
    split_cfg.seed = mseed;
    SplitResult sp = split(cohort.samples, split_cfg);

    const PropensityModel pm = fit_propensity(sp.train);
    std::vector<double> scores(sp.train.size());
    for (size_t i = 0; i < sp.train.size(); ++i) scores[i] = pm.score(sp.train[i]);

    MatchConfig mc;
    mc.caliper = cfg.caliper;
    mc.subset_per_class = cfg.subset_per_class;
    mc.seed = mseed;
    MatchResult mr = match_one_to_one(sp.train, scores, mc);

    const std::string d = match_dir(cfg, scenario);
    fs::create_directories(d);
    write_ids_csv(sp.train, d + "/split_train.csv");
    write_ids_csv(sp.test, d + "/split_test.csv");
    write_matched_csv(mr, d + "/matched.csv");
    if (cfg.subset_per_class) {
        auto matched = matched_samples(sp.train, mr);
        auto sub = subset_per_class(matched, *cfg.subset_per_class,
                                    module_seed(cfg.seed, "matching.subset"));
        write_ids_csv(sub, d + "/subset_train.csv");
    }

    write_manifest(cfg, d, "match", scenario, mseed,
                   {{cd + "/cohort.csv", file_digest(cd + "/cohort.csv")},
                    {cd + "/cohort_codes.csv", file_digest(cd + "/cohort_codes.csv")}});
}

void run_train(const PipelineConfig& cfg, int scenario, const std::string& model) {
    if (model != "vgnn" && model != "rf" && model != "gbm")
        config_error("unknown_model", "train model must be vgnn, rf, or gbm, not \"" + model + "\"");

    const InputSet in = resolve_inputs(cfg);
    CodeMap map = CodeMap::load_csv(in.code_map);
    map.validate();
    const Vocabulary vocab = Vocabulary::from_groups(map.groups());

    const std::string cd = cohort_dir(cfg, scenario);
    Cohort cohort = load_scenario_cohort(cfg, scenario);
    RegimeSamples rs = load_training_samples(cfg, scenario, cohort);

    const std::string d = train_dir(cfg, scenario, model);
    fs::create_directories(d);

    std::vector<std::array<std::string, 3>> timing;
    InputDigests inputs{{cd + "/cohort.csv", file_digest(cd + "/cohort.csv")},
                        {cd + "/cohort_codes.csv", file_digest(cd + "/cohort_codes.csv")},
                        {in.code_map, file_digest(in.code_map)}};
    inputs.insert(inputs.end(), rs.inputs.begin(), rs.inputs.end());

    const uint64_t stage_seed =
        module_seed(cfg.seed, model == "vgnn" ? std::string("gnn") : "baselines." + model);
    for (const std::string& regime : regimes(cfg)) {
        const auto& samples = regime == "matched" ? rs.matched : rs.subset;
        const std::string model_path = d + "/model_" + regime + ".json";
        const auto t0 = std::chrono::steady_clock::now();
        if (model == "vgnn") {
            TrainConfig tc = cfg.train;
            tc.seed = module_seed(cfg.seed, "gnn." + regime);
            TrainResult r = train(samples, vocab, tc);
            save_model(r.params, vocab, tc, model_path);
            write_train_log(r.history, d + "/train_log_" + regime + ".csv");
        } else {
            std::vector<FeatureVector> rows(samples.size());
            for (size_t i = 0; i < samples.size(); ++i) rows[i] = vectorize(samples[i], vocab);
            const AgeStats stats = fit_age_stats(rows);
            apply_age_stats(rows, stats);
            TreeEnsembleConfig tc = model == "rf" ? cfg.forest : cfg.gbm;
            tc.seed = module_seed(cfg.seed, "baselines." + model + "." + regime);
            const FeatureMeta meta{vocab.groups, stats};
            if (model == "rf")
                save_forest(train_forest(rows, tc), meta, model_path);
            else
                save_gbm(train_boosted(rows, tc), meta, model_path);
        }
        timing.push_back({model, regime, fmt_double(seconds_since(t0))});
    }
    write_timing(d + "/timing.csv", timing);

    write_manifest(cfg, d, "train " + model, scenario, stage_seed, inputs);
}

void run_evaluate(const PipelineConfig& cfg, const std::vector<int>& scenarios) {
    std::vector<ResultRow> rows;
    std::vector<std::array<std::string, 5>> timings;
    InputDigests inputs;

    for (int s : scenarios) {
        const std::string md = match_dir(cfg, s);
        Cohort cohort = load_scenario_cohort(cfg, s);
        require_artifact(md + "/split_test.csv", "match");
        require_artifact(md + "/matched.csv", "match");
        const auto test = samples_by_id(cohort, load_ids_csv(md + "/split_test.csv"),
                                        "split_test.csv");
        const int n_matched = static_cast<int>(load_matched_csv(md + "/matched.csv").pairs.size()) * 2;
        const int n_subset =
            cfg.subset_per_class ? *cfg.subset_per_class * 2 : 0;

        ScoredSet scored;
        scored.labels.reserve(test.size());
        for (const auto& t : test) scored.labels.push_back(t.label);

        const std::string cd = cohort_dir(cfg, s);
        inputs.emplace_back(cd + "/cohort.csv", file_digest(cd + "/cohort.csv"));
        inputs.emplace_back(md + "/split_test.csv", file_digest(md + "/split_test.csv"));

        // Train-time seconds per cell, keyed model:regime.
        std::unordered_map<std::string, std::string> train_seconds;
        for (const std::string model : {"vgnn", "rf", "gbm"}) {
            const std::string td = train_dir(cfg, s, model);
            const std::string timing_path = td + "/timing.csv";
            if (fs::exists(timing_path)) {
                CsvFile f = read_csv(timing_path);
                int km = f.column("model", timing_path);
                int kr = f.column("regime", timing_path);
                int ks = f.column("seconds", timing_path);
                for (const auto& r : f.rows) train_seconds[r[km] + ":" + r[kr]] = r[ks];
            }
            for (const std::string regime : {"matched", "subset"}) {
                ResultRow row;
                row.scenario = s;
                row.model = model;
                row.regime = regime;
                row.n_test = static_cast<int>(test.size());
                if (regime == "subset" && !cfg.subset_per_class) {
                    rows.push_back(row);
                    continue;
                }
                row.n_train = regime == "matched" ? n_matched : n_subset;
                const std::string model_path = td + "/model_" + regime + ".json";
                require_artifact(model_path, "train " + model);
                inputs.emplace_back(model_path, file_digest(model_path));

                const auto t0 = std::chrono::steady_clock::now();
                if (model == "vgnn") {
                    scored.scores = score_vgnn(load_model(model_path), test);
                } else if (model == "rf") {
                    LoadedForest lf = load_forest(model_path);
                    scored.scores = score_trees(lf.model, lf.meta, test);
                } else {
                    LoadedGbm lg = load_gbm(model_path);
                    scored.scores = score_trees(lg.model, lg.meta, test);
                }
                const double score_sec = seconds_since(t0);
                row.auroc = auroc(scored);
                rows.push_back(row);

                auto ts = train_seconds.find(model + ":" + regime);
                timings.push_back({std::to_string(s), model, regime,
                                   ts == train_seconds.end() ? "absent" : ts->second,
                                   fmt_double(score_sec)});
            }
        }
    }

    const std::string d = cfg.output_dir + "/evaluate";
    fs::create_directories(d);
    write_results_csv(rows, d + "/results.csv");
    {
        std::ofstream bars(d + "/bars.txt");
        bars << render_bars(rows);
    }
    {
        CsvWriter w(d + "/timings.csv");
        w.row({"scenario", "model", "regime", "train_seconds", "score_seconds"});
        for (const auto& r : timings) w.row({r[0], r[1], r[2], r[3], r[4]});
    }

    write_manifest(cfg, d, "evaluate", 0, module_seed(cfg.seed, "eval"), inputs);
}

void run_explain(const PipelineConfig& cfg, int scenario) {
    const InputSet in = resolve_inputs(cfg);
    CodeMap map = CodeMap::load_csv(in.code_map);
    map.validate();

    const std::string td = train_dir(cfg, scenario, "vgnn");
    const std::string model_path = td + "/model_matched.json";
    require_artifact(model_path, "train vgnn");
    LoadedModel lm = load_model(model_path);

    Cohort cohort = load_scenario_cohort(cfg, scenario);
    const std::string md = match_dir(cfg, scenario);
    require_artifact(md + "/matched.csv", "match");
    MatchResult mr = load_matched_csv(md + "/matched.csv");
    auto samples = samples_by_id(cohort, matched_ids(mr), "matched.csv");

    ExplainReport rep =
        explain_cohort(lm.params, samples, lm.vocab, cfg.explain_top_k, cfg.mean_mode);
    if (cfg.explain_include_self) {
        rep.top_positive = top_relations(rep.difference, lm.vocab, cfg.explain_top_k,
                                         RelationSign::Positive, true);
        rep.top_negative = top_relations(rep.difference, lm.vocab, cfg.explain_top_k,
                                         RelationSign::Negative, true);
    }

    const std::string d = explain_dir(cfg, scenario);
    fs::create_directories(d);
    write_weight_csv(rep.difference, d + "/W.csv");
    write_relations_csv(rep, d + "/relations_top.csv");
    {
        CsvWriter w(d + "/vocabulary.csv");
        w.row({"index", "group", "label"});
        for (size_t i = 0; i < lm.vocab.groups.size(); ++i)
            w.row({std::to_string(i), lm.vocab.groups[i], map.label_of(lm.vocab.groups[i])});
    }

    const std::string cd = cohort_dir(cfg, scenario);
    write_manifest(cfg, d, "explain", scenario, module_seed(cfg.seed, "explain"),
                   {{model_path, file_digest(model_path)},
                    {cd + "/cohort.csv", file_digest(cd + "/cohort.csv")},
                    {md + "/matched.csv", file_digest(md + "/matched.csv")},
                    {in.code_map, file_digest(in.code_map)}});
}

void run_all(const PipelineConfig& cfg, const std::vector<int>& scenarios) {
    if (cfg.generator) run_generate(cfg);
    run_ingest(cfg);
    for (int s : scenarios) {
        run_cohort(cfg, s);
        run_match(cfg, s);
        run_train(cfg, s, "vgnn");
        run_train(cfg, s, "rf");
        run_train(cfg, s, "gbm");
    }
    run_evaluate(cfg, scenarios);
    for (int s : scenarios) run_explain(cfg, s);
}

}  // namespace riskgraph
