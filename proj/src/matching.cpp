#include "riskgraph/matching.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"

namespace riskgraph {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Indices of each class, ordered by patient id so input order is irrelevant.
std::pair<std::vector<int>, std::vector<int>> class_indices(
    const std::vector<CohortSample>& samples) {
    std::vector<int> cases, controls;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
        (samples[i].label ? cases : controls).push_back(i);
    }
    auto by_id = [&](int a, int b) { return samples[a].patient_id < samples[b].patient_id; };
    std::sort(cases.begin(), cases.end(), by_id);
    std::sort(controls.begin(), controls.end(), by_id);
    return {std::move(cases), std::move(controls)};
}

}  // namespace

void SplitConfig::validate() const {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        config_error("invalid_split_config", "test_fraction must lie strictly between 0 and 1");
}

SplitResult split(const std::vector<CohortSample>& samples, const SplitConfig& cfg) {
    cfg.validate();
    if (samples.size() < 10)
        data_error("too_few_samples",
                   "need at least 10 samples to split, have " + std::to_string(samples.size()));
    auto [cases, controls] = class_indices(samples);
    if (cases.size() < 2 || controls.size() < 2)
        data_error("degenerate_cohort", "both classes need at least 2 samples to split");

    SplitResult out;
    auto take = [&](std::vector<int>& idx, const char* tag) {
        Rng rng = Rng::substream(cfg.seed, tag);
        rng.shuffle(idx);
        auto n_test = static_cast<size_t>(std::llround(idx.size() * cfg.test_fraction));
        n_test = std::clamp<size_t>(n_test, 1, idx.size() - 1);
        for (size_t i = 0; i < idx.size(); ++i) {
            (i < n_test ? out.test : out.train).push_back(samples[idx[i]]);
        }
    };
    take(cases, "split_cases");
    take(controls, "split_controls");

    auto by_id = [](const CohortSample& a, const CohortSample& b) {
        return a.patient_id < b.patient_id;
    };
    std::sort(out.train.begin(), out.train.end(), by_id);
    std::sort(out.test.begin(), out.test.end(), by_id);
    return out;
}

double PropensityModel::score(const CohortSample& s) const {
    double z = intercept;
    if (use_age) z += beta_age * (s.age_at_index - age_mean) / age_sd;
    if (use_gender && s.gender == Gender::M) z += beta_gender;
    return std::clamp(sigmoid(z), 1e-6, 1.0 - 1e-6);
}

PropensityModel fit_propensity(const std::vector<CohortSample>& pool) {
    const int n = static_cast<int>(pool.size());
    int n_cases = 0;
    for (const auto& s : pool) n_cases += s.label;
    if (n_cases == 0 || n_cases == n)
        data_error("degenerate_pool", "propensity fit needs both classes present");

    PropensityModel m;
    double mean = 0.0;
    for (const auto& s : pool) mean += s.age_at_index;
    mean /= n;
    double ss = 0.0;
    for (const auto& s : pool) ss += (s.age_at_index - mean) * (s.age_at_index - mean);
    m.age_mean = mean;
    m.age_sd = std::sqrt(ss / std::max(1, n - 1));
    if (m.age_sd < 1e-12) {
        m.use_age = false;
        m.age_sd = 1.0;
    }
    bool any_m = false, any_f = false;
    for (const auto& s : pool) (s.gender == Gender::M ? any_m : any_f) = true;
    m.use_gender = any_m && any_f;

    // Design row: [1, standardized age?, male indicator?].
    const int k = 1 + (m.use_age ? 1 : 0) + (m.use_gender ? 1 : 0);
    auto design_row = [&](const CohortSample& s, double* x) {
        int j = 0;
        x[j++] = 1.0;
        if (m.use_age) x[j++] = (s.age_at_index - m.age_mean) / m.age_sd;
        if (m.use_gender) x[j++] = s.gender == Gender::M ? 1.0 : 0.0;
    };

    std::vector<double> beta(k, 0.0);
    const int max_iters = 100;
    for (int iter = 1; iter <= max_iters; ++iter) {
        double grad[3] = {0, 0, 0};
        double hess[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
        for (const auto& s : pool) {
            double x[3];
            design_row(s, x);
            double z = 0.0;
            for (int j = 0; j < k; ++j) z += beta[j] * x[j];
            double p = sigmoid(z);
            double w = p * (1.0 - p);
            for (int j = 0; j < k; ++j) {
                grad[j] += (s.label - p) * x[j];
                for (int l = 0; l < k; ++l) hess[j * k + l] += w * x[j] * x[l];
            }
        }
        // Solve hess * step = grad with partial pivoting.
        double step[3];
        {
            double a[9];
            std::copy(hess, hess + k * k, a);
            std::copy(grad, grad + k, step);
            for (int col = 0; col < k; ++col) {
                int piv = col;
                for (int r = col + 1; r < k; ++r)
                    if (std::abs(a[r * k + col]) > std::abs(a[piv * k + col])) piv = r;
                if (std::abs(a[piv * k + col]) < 1e-12)
                    numerical_error("propensity_singular",
                                    "singular information matrix at iteration " +
                                        std::to_string(iter));
                if (piv != col) {
                    for (int c = 0; c < k; ++c) std::swap(a[col * k + c], a[piv * k + c]);
                    std::swap(step[col], step[piv]);
                }
                for (int r = col + 1; r < k; ++r) {
                    double f = a[r * k + col] / a[col * k + col];
                    for (int c = col; c < k; ++c) a[r * k + c] -= f * a[col * k + c];
                    step[r] -= f * step[col];
                }
            }
            for (int r = k - 1; r >= 0; --r) {
                for (int c = r + 1; c < k; ++c) step[r] -= a[r * k + c] * step[c];
                step[r] /= a[r * k + r];
            }
        }
        double max_step = 0.0;
        for (int j = 0; j < k; ++j) {
            beta[j] += step[j];
            max_step = std::max(max_step, std::abs(step[j]));
        }
        if (max_step < 1e-10) {
            m.iterations = iter;
            int j = 0;
            m.intercept = beta[j++];
            if (m.use_age) m.beta_age = beta[j++];
            if (m.use_gender) m.beta_gender = beta[j++];
            return m;
        }
    }
    double max_beta = 0.0;
    for (int j = 0; j < k; ++j) max_beta = std::max(max_beta, std::abs(beta[j]));
    numerical_error("propensity_nonconvergence",
                    "no convergence after " + std::to_string(max_iters) +
                        " iterations (max |coef| = " + fmt_double(max_beta) +
                        "); the classes may be perfectly separated");
}

void MatchConfig::validate() const {
    std::vector<std::string> problems;
    if (!(caliper > 0.0)) problems.push_back("caliper must be positive");
    if (subset_per_class && *subset_per_class < 1)
        problems.push_back("subset_per_class must be positive");
    if (!problems.empty()) {
        std::string all;
        for (size_t i = 0; i < problems.size(); ++i) {
            if (i) all += "; ";
            all += problems[i];
        }
        config_error("invalid_match_config", all);
    }
}

MatchResult match_one_to_one(const std::vector<CohortSample>& pool,
                             const std::vector<double>& scores, const MatchConfig& cfg) {
    cfg.validate();
    if (scores.size() != pool.size())
        data_error("score_mismatch", "scores and pool must be the same length");

    auto [cases, controls] = class_indices(pool);
    double threshold = cfg.caliper * sample_sd(scores);

    // Cases in descending score order, ties by patient id.
    std::sort(cases.begin(), cases.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return pool[a].patient_id < pool[b].patient_id;
    });
    // Controls keyed by (score, id-rank); candidates found via lower_bound.
    std::set<std::pair<double, int>> avail;
    for (size_t r = 0; r < controls.size(); ++r)
        avail.insert({scores[controls[r]], static_cast<int>(r)});

    MatchResult out;
    for (int ci : cases) {
        if (avail.empty()) {
            ++out.unmatched_cases;
            continue;
        }
        double want = scores[ci];
        auto hi = avail.lower_bound({want, -1});
        auto best = avail.end();
        if (hi != avail.end()) best = hi;
        if (hi != avail.begin()) {
            auto lo = std::prev(hi);
            if (best == avail.end() || want - lo->first <= best->first - want) best = lo;
        }
        if (std::abs(best->first - want) > threshold) {
            ++out.unmatched_cases;
            continue;
        }
        int control_idx = controls[best->second];
        out.pairs.push_back({pool[ci].patient_id, pool[control_idx].patient_id, want,
                             best->first});
        avail.erase(best);
    }
    if (out.pairs.empty())
        data_error("matching_failed", "no case could be matched within the caliper");
    return out;
}

std::vector<CohortSample> matched_samples(const std::vector<CohortSample>& pool,
                                          const MatchResult& result) {
    std::map<std::string, const CohortSample*> by_id;
    for (const auto& s : pool) by_id[s.patient_id] = &s;
    std::vector<CohortSample> out;
    out.reserve(result.pairs.size() * 2);
    for (const auto& p : result.pairs) {
        auto c = by_id.find(p.case_id);
        auto k = by_id.find(p.control_id);
        if (c == by_id.end() || k == by_id.end())
            data_error("unknown_patient", "matched pair references a patient outside the pool");
        out.push_back(*c->second);
        out.push_back(*k->second);
    }
    return out;
}

std::vector<CohortSample> subset_per_class(const std::vector<CohortSample>& samples,
                                           int n_per_class, uint64_t seed) {
    if (n_per_class < 1) config_error("invalid_subset", "n_per_class must be positive");
    auto [cases, controls] = class_indices(samples);
    if (n_per_class > static_cast<int>(cases.size()) ||
        n_per_class > static_cast<int>(controls.size()))
        config_error("invalid_subset",
                     "n_per_class " + std::to_string(n_per_class) + " exceeds class size " +
                         std::to_string(std::min(cases.size(), controls.size())));

    std::vector<CohortSample> out;
    auto take = [&](std::vector<int>& idx, const char* tag) {
        Rng rng = Rng::substream(seed, tag);
        rng.shuffle(idx);
        idx.resize(n_per_class);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            return samples[a].patient_id < samples[b].patient_id;
        });
        for (int i : idx) out.push_back(samples[i]);
    };
    take(cases, "subset_cases");
    take(controls, "subset_controls");
    return out;
}

double standardized_mean_difference(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (double x : a) ma += x;
    for (double x : b) mb += x;
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double va = 0.0, vb = 0.0;
    for (double x : a) va += (x - ma) * (x - ma);
    for (double x : b) vb += (x - mb) * (x - mb);
    va /= std::max<size_t>(1, a.size() - 1);
    vb /= std::max<size_t>(1, b.size() - 1);
    double denom = std::sqrt((va + vb) / 2.0);
    if (denom == 0.0) return 0.0;
    return (ma - mb) / denom;
}

void write_matched_csv(const MatchResult& result, const std::string& path) {
    CsvWriter w(path);
    w.row({"case_patient_id", "control_patient_id", "case_score", "control_score"});
    for (const auto& p : result.pairs) {
        w.row({p.case_id, p.control_id, fmt_double(p.case_score), fmt_double(p.control_score)});
    }
    w.close();
}

MatchResult load_matched_csv(const std::string& path) {
    CsvFile f = read_csv(path);
    int c_case = f.column("case_patient_id", path);
    int c_control = f.column("control_patient_id", path);
    int c_cs = f.column("case_score", path);
    int c_ks = f.column("control_score", path);
    MatchResult out;
    for (const auto& r : f.rows) {
        out.pairs.push_back({r[c_case], r[c_control], parse_double(r[c_cs], "case_score"),
                             parse_double(r[c_ks], "control_score")});
    }
    return out;
}

void write_ids_csv(const std::vector<CohortSample>& samples, const std::string& path) {
    CsvWriter w(path);
    w.row({"patient_id"});
    for (const auto& s : samples) w.row({s.patient_id});
    w.close();
}

std::vector<std::string> load_ids_csv(const std::string& path) {
    CsvFile f = read_csv(path);
    int c = f.column("patient_id", path);
    std::vector<std::string> ids;
    for (const auto& r : f.rows) ids.push_back(r[c]);
    return ids;
}

}  // namespace riskgraph
