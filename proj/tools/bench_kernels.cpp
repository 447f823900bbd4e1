#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "riskgraph/baselines.hpp"
#include "riskgraph/cohort.hpp"
#include "riskgraph/datagen.hpp"
#include "riskgraph/explain.hpp"
#include "riskgraph/gnn.hpp"
#include "riskgraph/rng.hpp"

using namespace riskgraph;

namespace {

uint64_t mix(uint64_t h, uint64_t v) {
    return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

uint64_t bits(double x) {
    uint64_t u;
    static_assert(sizeof(u) == sizeof(x));
    std::memcpy(&u, &x, sizeof(u));
    return u;
}

uint64_t hash_timelines(const std::vector<PatientTimeline>& tls) {
    uint64_t h = 0;
    for (const auto& tl : tls) {
        h = mix(h, fnv1a64(tl.patient_id));
        h = mix(h, static_cast<uint64_t>(tl.birth_year));
        for (const auto& rec : tl.records) {
            h = mix(h, fnv1a64(rec.date.iso()));
            for (const auto& c : rec.codes) h = mix(h, fnv1a64(c.raw) ^ fnv1a64(c.group));
        }
    }
    return h;
}

uint64_t hash_cohort(const Cohort& c) {
    uint64_t h = 0;
    for (const auto& s : c.samples) {
        h = mix(h, fnv1a64(s.patient_id));
        h = mix(h, static_cast<uint64_t>(s.label));
        h = mix(h, fnv1a64(s.index_date.iso()));
        for (const auto& [g, n] : s.grouped_codes) h = mix(h, fnv1a64(g) ^ static_cast<uint64_t>(n));
    }
    return h;
}

uint64_t hash_matrix(const Matrix& m) {
    uint64_t h = mix(static_cast<uint64_t>(m.rows), static_cast<uint64_t>(m.cols));
    for (double x : m.a) h = mix(h, bits(x));
    return h;
}

uint64_t hash_params(const ModelParams& p) {
    uint64_t h = hash_matrix(p.embedding);
    for (const auto& w : p.enc_w) h = mix(h, hash_matrix(w));
    for (const auto& a : p.enc_a)
        for (double x : a) h = mix(h, bits(x));
    h = mix(h, hash_matrix(p.w_mu));
    h = mix(h, hash_matrix(p.w_logvar));
    h = mix(h, hash_matrix(p.dec_w));
    for (double x : p.dec_a) h = mix(h, bits(x));
    for (double x : p.w_out) h = mix(h, bits(x));
    return mix(h, bits(p.b_out));
}

uint64_t hash_forest(const ForestModel& m, const std::vector<FeatureVector>& rows) {
    uint64_t h = 0;
    for (const auto& r : rows) h = mix(h, bits(predict(m, r.values)));
    return h;
}

struct Timed {
    double seconds;
    uint64_t digest;
};

template <typename F>
Timed timed(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    uint64_t d = f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {s, d};
}

int report(const char* name, const Timed& serial, const Timed& parallel) {
    const bool same = serial.digest == parallel.digest;
    std::printf("%-14s %10.3fs %10.3fs %8.2fx   %s\n", name, serial.seconds, parallel.seconds,
                serial.seconds / (parallel.seconds > 0 ? parallel.seconds : 1e-9),
                same ? "identical" : "MISMATCH");
    return same ? 0 : 1;
}

}  // namespace

int run_benchmarks(int argc, char** argv);

int main(int argc, char** argv) {
    try {
        return run_benchmarks(argc, argv);
    } catch (const Error& e) {
        std::fprintf(stderr, "bench_kernels: %s\n", e.what());
        return static_cast<int>(e.category());
    }
}

int run_benchmarks(int argc, char** argv) {
    CLI::App app{"serial vs parallel kernel comparison"};
    int n_patients = 1500;
    int threads = 0;
    app.add_option("--patients", n_patients, "synthetic dataset size")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "cap worker threads");
    CLI11_PARSE(app, argc, argv);
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled; both columns run serial code\n");
#endif

    GeneratorConfig gen;
    gen.n_patients = n_patients;
    gen.case_fraction = 0.4;
    gen.n_diagnosis_groups = 20;
    gen.n_procedure_groups = 15;
    gen.n_medication_groups = 15;
    gen.raw_codes_per_group = 3;
    gen.planted_pairs = {{"DXG001", "RXG001", 0.8, 0.1, 0.1, 0.1}};
    gen.span_start = Date::from_ymd(2008, 1, 1);
    gen.span_end = Date::from_ymd(2019, 12, 31);
    gen.age_min = 64;
    gen.age_max = 90;
    gen.seed = 7;

    std::printf("%-14s %11s %11s %9s\n", "kernel", "serial", "parallel", "speedup");
    int failures = 0;

    GeneratedData data;
    {
        auto s = timed([&] {
            data = generate(gen, Exec::Serial);
            return hash_timelines(data.timelines);
        });
        auto p = timed([&] { return hash_timelines(generate(gen, Exec::Parallel).timelines); });
        failures += report("generate", s, p);
    }

    const CaseDefinition def = default_case_definition();
    const ScenarioConfig sc = ScenarioConfig::for_scenario(1, 11);
    Cohort cohort;
    {
        auto s = timed([&] {
            cohort = build_cohort(data.timelines, def, sc, Exec::Serial);
            return hash_cohort(cohort);
        });
        auto p = timed([&] { return hash_cohort(build_cohort(data.timelines, def, sc)); });
        failures += report("cohort", s, p);
    }

    const CodeMap map = synthetic_code_map(gen);
    const Vocabulary vocab = Vocabulary::from_groups(map.groups());
    std::vector<CohortSample> samples = cohort.samples;
    if (samples.size() > 600) samples.resize(600);

    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 3;
    tc.embed_dim = 8;
    tc.batch_size = 64;
    tc.seed = 5;
    {
        auto s = timed([&] { return hash_params(train(samples, vocab, tc, Exec::Serial).params); });
        auto p = timed([&] { return hash_params(train(samples, vocab, tc).params); });
        failures += report("gnn_train", s, p);
    }

    std::vector<FeatureVector> rows(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) rows[i] = vectorize(samples[i], vocab);
    apply_age_stats(rows, fit_age_stats(rows));
    TreeEnsembleConfig fc;
    fc.n_trees = 150;
    fc.seed = 3;
    {
        auto s = timed([&] { return hash_forest(train_forest(rows, fc, Exec::Serial), rows); });
        auto p = timed([&] { return hash_forest(train_forest(rows, fc), rows); });
        failures += report("forest", s, p);
    }

    ModelParams params = ModelParams::init(static_cast<int>(vocab.groups.size()), tc);
    {
        auto s = timed([&] {
            return hash_matrix(
                explain_cohort(params, samples, vocab, 5, MeanMode::GroupSize, Exec::Serial)
                    .difference.values);
        });
        auto p = timed([&] {
            return hash_matrix(explain_cohort(params, samples, vocab, 5).difference.values);
        });
        failures += report("explain", s, p);
    }

    return failures == 0 ? 0 : 1;
}
