#include "riskgraph/gnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "riskgraph/csv.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/eval.hpp"

namespace riskgraph {

namespace {

using nlohmann::json;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }
constexpr double kLeakySlope = 0.2;
constexpr double kProbClamp = 1e-7;

bool all_finite(const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

void check_finite(const Matrix& m, const std::string& tag) {
    if (!all_finite(m.a.data(), m.a.size()))
        numerical_error("numerical_overflow", "non-finite values in " + tag);
}

// One attention sublayer's forward intermediates, kept for the backward pass.
struct LayerWs {
    Matrix g;                      // n x d, W h_j per node
    std::vector<double> src, dst;  // n each
    Matrix pre;                    // n x n raw scores before LeakyReLU
    Matrix att;                    // n x n row-stochastic weights
    Matrix m;                      // n x d pre-activation aggregate
    Matrix out;                    // n x d after ELU
    Matrix dropped;                // n x d after dropout (train) or = out
};

struct Ws {
    Matrix h0;
    std::vector<LayerWs> enc;
    Matrix mu, lv, z;
    LayerWs dec;
    std::vector<double> ubar;
    double logit = 0.0;
    double p = 0.0;
    double kl = 0.0;
};

void attention_forward(const Matrix& hin, const Matrix& w, const std::vector<double>& a,
                       LayerWs& ws, const std::string& tag) {
    const int n = hin.rows;
    const int d = hin.cols;
    ws.g.resize(n, d);
    ws.src.assign(n, 0.0);
    ws.dst.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        matvec(w, hin.row(i), ws.g.row(i));
        ws.src[i] = dot(a.data(), ws.g.row(i), d);
        ws.dst[i] = dot(a.data() + d, ws.g.row(i), d);
    }
    ws.pre.resize(n, n);
    ws.att.resize(n, n);
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            double raw = ws.src[i] + ws.dst[j];
            ws.pre.at(i, j) = raw;
            double e = raw > 0.0 ? raw : kLeakySlope * raw;
            ws.att.at(i, j) = e;
            mx = std::max(mx, e);
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            double v = std::exp(ws.att.at(i, j) - mx);
            ws.att.at(i, j) = v;
            sum += v;
        }
        for (int j = 0; j < n; ++j) ws.att.at(i, j) /= sum;
    }
    ws.m.resize(n, d);
    ws.out.resize(n, d);
    for (int i = 0; i < n; ++i) {
        double* mi = ws.m.row(i);
        for (int j = 0; j < n; ++j) {
            const double aij = ws.att.at(i, j);
            const double* gj = ws.g.row(j);
            for (int k = 0; k < d; ++k) mi[k] += aij * gj[k];
        }
        double* oi = ws.out.row(i);
        for (int k = 0; k < d; ++k) oi[k] = elu(mi[k]);
    }
    check_finite(ws.out, tag);
}

// Returns d(loss)/d(hin); accumulates into dw and da.
Matrix attention_backward(const Matrix& hin, const Matrix& w, const std::vector<double>& a,
                          const LayerWs& ws, const Matrix& dout, Matrix& dw,
                          std::vector<double>& da) {
    const int n = hin.rows;
    const int d = hin.cols;
    Matrix dm(n, d);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) dm.at(i, k) = dout.at(i, k) * elu_grad(ws.m.at(i, k));

    Matrix dg(n, d);
    Matrix datt(n, n);
    for (int i = 0; i < n; ++i) {
        const double* dmi = dm.row(i);
        for (int j = 0; j < n; ++j) {
            datt.at(i, j) = dot(dmi, ws.g.row(j), d);
            const double aij = ws.att.at(i, j);
            double* dgj = dg.row(j);
            for (int k = 0; k < d; ++k) dgj[k] += aij * dmi[k];
        }
    }

    // Softmax rows, then LeakyReLU, then the additive score structure.
    std::vector<double> dsrc(n, 0.0), ddst(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double rowdot = 0.0;
        for (int j = 0; j < n; ++j) rowdot += ws.att.at(i, j) * datt.at(i, j);
        for (int j = 0; j < n; ++j) {
            double de = ws.att.at(i, j) * (datt.at(i, j) - rowdot);
            double dpre = de * (ws.pre.at(i, j) > 0.0 ? 1.0 : kLeakySlope);
            dsrc[i] += dpre;
            ddst[j] += dpre;
        }
    }
    for (int i = 0; i < n; ++i) {
        const double* gi = ws.g.row(i);
        double* dgi = dg.row(i);
        for (int k = 0; k < d; ++k) {
            da[k] += dsrc[i] * gi[k];
            da[d + k] += ddst[i] * gi[k];
            dgi[k] += dsrc[i] * a[k] + ddst[i] * a[d + k];
        }
    }

    Matrix dhin(n, d);
    for (int i = 0; i < n; ++i) {
        outer_acc(dw, dg.row(i), hin.row(i));
        matTvec_acc(w, dg.row(i), dhin.row(i));
    }
    return dhin;
}

ForwardOutput forward_ws(const ModelParams& params, const PatientGraph& graph, Mode mode,
                         const NoiseDraw* noise, Ws& ws) {
    const int n = static_cast<int>(graph.nodes.size());
    const int d = params.dim;
    const int layers = params.layers;
    if (n == 0) data_error("empty_graph", "patient graph has no nodes");
    if (mode == Mode::Train) {
        if (noise == nullptr)
            config_error("missing_noise", "training mode requires a noise draw");
        if (static_cast<int>(noise->dropout.size()) != layers || noise->eps.rows != n ||
            noise->eps.cols != d)
            config_error("noise_shape", "noise draw does not match model and graph shape");
    }

    ws.h0.resize(n, d);
    for (int i = 0; i < n; ++i) {
        const double* e = params.embedding.row(graph.nodes[i]);
        std::copy(e, e + d, ws.h0.row(i));
    }

    ws.enc.resize(layers);
    const Matrix* cur = &ws.h0;
    for (int l = 0; l < layers; ++l) {
        LayerWs& lw = ws.enc[l];
        attention_forward(*cur, params.enc_w[l], params.enc_a[l], lw,
                          "encoder layer " + std::to_string(l));
        lw.dropped = lw.out;
        if (mode == Mode::Train) {
            const Matrix& mask = noise->dropout[l];
            for (size_t t = 0; t < lw.dropped.a.size(); ++t) lw.dropped.a[t] *= mask.a[t];
        }
        cur = &lw.dropped;
    }

    ws.mu.resize(n, d);
    ws.lv.resize(n, d);
    ws.z.resize(n, d);
    ws.kl = 0.0;
    for (int i = 0; i < n; ++i) {
        matvec(params.w_mu, cur->row(i), ws.mu.row(i));
        matvec(params.w_logvar, cur->row(i), ws.lv.row(i));
        for (int k = 0; k < d; ++k) {
            const double mu = ws.mu.at(i, k);
            const double lv = ws.lv.at(i, k);
            double z = mu;
            if (mode == Mode::Train) z += std::exp(0.5 * lv) * noise->eps.at(i, k);
            ws.z.at(i, k) = z;
            ws.kl += 0.5 * (std::exp(lv) + mu * mu - 1.0 - lv);
        }
    }
    ws.kl /= n;
    check_finite(ws.z, "variational layer");
    if (!std::isfinite(ws.kl))
        numerical_error("numerical_overflow", "non-finite values in variational layer");

    attention_forward(ws.z, params.dec_w, params.dec_a, ws.dec, "decoder");

    ws.ubar.assign(d, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* ui = ws.dec.out.row(i);
        for (int k = 0; k < d; ++k) ws.ubar[k] += ui[k];
    }
    for (int k = 0; k < d; ++k) ws.ubar[k] /= n;
    ws.logit = dot(params.w_out.data(), ws.ubar.data(), d) + params.b_out;
    if (!std::isfinite(ws.logit))
        numerical_error("numerical_overflow", "non-finite values in readout");
    ws.p = sigmoid(ws.logit);

    ForwardOutput out;
    out.probability = std::min(std::max(ws.p, 1e-12), 1.0 - 1e-12);
    out.kl = ws.kl;
    out.adjacency = ws.dec.att;
    out.node_states = ws.dec.out;
    return out;
}

std::vector<std::pair<double*, size_t>> tensor_views(ModelParams& p) {
    std::vector<std::pair<double*, size_t>> v;
    v.emplace_back(p.embedding.a.data(), p.embedding.a.size());
    for (auto& w : p.enc_w) v.emplace_back(w.a.data(), w.a.size());
    for (auto& a : p.enc_a) v.emplace_back(a.data(), a.size());
    v.emplace_back(p.w_mu.a.data(), p.w_mu.a.size());
    v.emplace_back(p.w_logvar.a.data(), p.w_logvar.a.size());
    v.emplace_back(p.dec_w.a.data(), p.dec_w.a.size());
    v.emplace_back(p.dec_a.data(), p.dec_a.size());
    v.emplace_back(p.w_out.data(), p.w_out.size());
    v.emplace_back(&p.b_out, 1);
    return v;
}

void zero_params(ModelParams& p) {
    for (auto& [ptr, len] : tensor_views(p)) std::fill(ptr, ptr + len, 0.0);
}

void fill_uniform(Rng& rng, double* x, size_t n, double scale) {
    for (size_t i = 0; i < n; ++i) x[i] = rng.uniform(-scale, scale);
}

json tensor_json(const Matrix& m) {
    return json{{"shape", {m.rows, m.cols}}, {"data", m.a}};
}

Matrix tensor_from_json(const json& j, const std::string& name) {
    if (!j.contains("shape") || !j.contains("data"))
        data_error("model_format", "tensor '" + name + "' is missing shape or data");
    auto shape = j.at("shape").get<std::vector<int>>();
    auto data = j.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
        data.size() != static_cast<size_t>(shape[0]) * static_cast<size_t>(shape[1]))
        data_error("model_shape", "tensor '" + name + "' has inconsistent shape");
    Matrix m(shape[0], shape[1]);
    m.a = std::move(data);
    return m;
}

}  // namespace

Vocabulary Vocabulary::from_groups(std::vector<std::string> groups) {
    std::sort(groups.begin(), groups.end());
    Vocabulary v;
    v.groups = std::move(groups);
    for (size_t i = 0; i < v.groups.size(); ++i) {
        if (!v.index.emplace(v.groups[i], static_cast<int>(i)).second)
            data_error("duplicate_group", "group listed twice: " + v.groups[i]);
    }
    return v;
}

int Vocabulary::find(const std::string& group) const {
    auto it = index.find(group);
    return it == index.end() ? -1 : it->second;
}

void Vocabulary::write_csv(const std::string& path) const {
    CsvWriter w(path);
    w.row({"group"});
    for (const auto& g : groups) w.row({g});
    w.close();
}

Vocabulary Vocabulary::load_csv(const std::string& path) {
    CsvFile f = read_csv(path);
    const int c = f.column("group", path);
    std::vector<std::string> groups;
    groups.reserve(f.rows.size());
    for (auto& r : f.rows) groups.push_back(r[c]);
    return from_groups(std::move(groups));
}

PatientGraph build_graph(const CohortSample& sample, const Vocabulary& vocab, int* dropped) {
    PatientGraph g;
    for (const auto& [group, count] : sample.grouped_codes) {
        int idx = vocab.find(group);
        if (idx < 0) {
            if (dropped != nullptr) ++*dropped;
            continue;
        }
        g.nodes.push_back(idx);
        g.counts.push_back(count);
    }
    if (g.nodes.empty())
        data_error("empty_graph", "no in-vocabulary codes for patient " + sample.patient_id);
    return g;
}

void TrainConfig::validate() const {
    std::vector<std::string> problems;
    if (!(learning_rate > 0.0)) problems.push_back("learning_rate must be positive");
    if (batch_size < 1) problems.push_back("batch_size must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must lie in [0, 1)");
    if (epochs < 0) problems.push_back("epochs must be non-negative");
    if (layers < 1) problems.push_back("layers must be at least 1");
    if (heads != 1) problems.push_back("only single-head attention is supported");
    if (!(beta >= 0.0)) problems.push_back("beta must be non-negative");
    if (embed_dim < 2) problems.push_back("embed_dim must be at least 2");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        problems.push_back("val_fraction must lie in [0, 1)");
    if (!problems.empty()) {
        std::string joined;
        for (size_t i = 0; i < problems.size(); ++i) {
            if (i) joined += "; ";
            joined += problems[i];
        }
        config_error("invalid_train_config", joined);
    }
}

ModelParams ModelParams::zeros(int vocab_size, int dim, int layers) {
    ModelParams p;
    p.vocab_size = vocab_size;
    p.dim = dim;
    p.layers = layers;
    p.embedding.resize(vocab_size, dim);
    p.enc_w.assign(layers, Matrix(dim, dim));
    p.enc_a.assign(layers, std::vector<double>(2 * dim, 0.0));
    p.w_mu.resize(dim, dim);
    p.w_logvar.resize(dim, dim);
    p.dec_w.resize(dim, dim);
    p.dec_a.assign(2 * dim, 0.0);
    p.w_out.assign(dim, 0.0);
    p.b_out = 0.0;
    return p;
}

// Draw order is part of the reproducibility contract: embedding rows first,
// then per encoder layer W then a, then w_mu, w_logvar, dec_w, dec_a, w_out.
ModelParams ModelParams::init(int vocab_size, const TrainConfig& cfg) {
    ModelParams p = zeros(vocab_size, cfg.embed_dim, cfg.layers);
    Rng rng = Rng::substream(cfg.seed, "init");
    const int d = cfg.embed_dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sa = 1.0 / std::sqrt(2.0 * d);
    fill_uniform(rng, p.embedding.a.data(), p.embedding.a.size(), sd);
    for (int l = 0; l < cfg.layers; ++l) {
        fill_uniform(rng, p.enc_w[l].a.data(), p.enc_w[l].a.size(), sd);
        fill_uniform(rng, p.enc_a[l].data(), p.enc_a[l].size(), sa);
    }
    fill_uniform(rng, p.w_mu.a.data(), p.w_mu.a.size(), sd);
    fill_uniform(rng, p.w_logvar.a.data(), p.w_logvar.a.size(), sd);
    fill_uniform(rng, p.dec_w.a.data(), p.dec_w.a.size(), sd);
    fill_uniform(rng, p.dec_a.data(), p.dec_a.size(), sa);
    fill_uniform(rng, p.w_out.data(), p.w_out.size(), sd);
    p.b_out = 0.0;
    return p;
}

NoiseDraw NoiseDraw::draw(Rng& rng, int layers, int n, int dim, double dropout_rate) {
    NoiseDraw nd;
    nd.dropout.assign(layers, Matrix(n, dim));
    const double keep = 1.0 - dropout_rate;
    for (int l = 0; l < layers; ++l)
        for (auto& v : nd.dropout[l].a)
            v = (dropout_rate > 0.0 && rng.uniform() < dropout_rate) ? 0.0 : 1.0 / keep;
    nd.eps.resize(n, dim);
    for (auto& v : nd.eps.a) v = rng.normal();
    return nd;
}

ForwardOutput forward(const ModelParams& params, const PatientGraph& graph, Mode mode,
                      const NoiseDraw* noise) {
    Ws ws;
    return forward_ws(params, graph, mode, noise, ws);
}

double bce_loss(double probability, int label) {
    const double p = std::min(std::max(probability, kProbClamp), 1.0 - kProbClamp);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double loss_and_gradients(const ModelParams& params, const PatientGraph& graph, int label,
                          double beta, Mode mode, const NoiseDraw* noise, ModelParams& grads,
                          double weight, ForwardOutput* out) {
    Ws ws;
    ForwardOutput fo = forward_ws(params, graph, mode, noise, ws);
    if (out != nullptr) *out = fo;
    const double loss = bce_loss(ws.p, label) + beta * ws.kl;

    const int n = static_cast<int>(graph.nodes.size());
    const int d = params.dim;
    const int layers = params.layers;

    // Readout. The clamp zeroes the probability gradient outside its range.
    double dlogit = 0.0;
    if (ws.p > kProbClamp && ws.p < 1.0 - kProbClamp) {
        const double dp = label == 1 ? -1.0 / ws.p : 1.0 / (1.0 - ws.p);
        dlogit = dp * ws.p * (1.0 - ws.p);
    }
    dlogit *= weight;
    for (int k = 0; k < d; ++k) grads.w_out[k] += dlogit * ws.ubar[k];
    grads.b_out += dlogit;

    Matrix du(n, d);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) du.at(i, k) = dlogit * params.w_out[k] / n;

    Matrix dz = attention_backward(ws.z, params.dec_w, params.dec_a, ws.dec, du, grads.dec_w,
                                   grads.dec_a);

    // Variational head: KL term plus the reparameterized sample path.
    const double dkl = weight * beta;
    Matrix dmu(n, d), dlv(n, d);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) {
            const double mu = ws.mu.at(i, k);
            const double lv = ws.lv.at(i, k);
            double gmu = dkl * mu / n;
            double glv = dkl * (std::exp(lv) - 1.0) / (2.0 * n);
            gmu += dz.at(i, k);
            if (mode == Mode::Train)
                glv += dz.at(i, k) * noise->eps.at(i, k) * 0.5 * std::exp(0.5 * lv);
            dmu.at(i, k) = gmu;
            dlv.at(i, k) = glv;
        }
    }

    const Matrix& henc = ws.enc.back().dropped;
    Matrix dh(n, d);
    for (int i = 0; i < n; ++i) {
        outer_acc(grads.w_mu, dmu.row(i), henc.row(i));
        outer_acc(grads.w_logvar, dlv.row(i), henc.row(i));
        matTvec_acc(params.w_mu, dmu.row(i), dh.row(i));
        matTvec_acc(params.w_logvar, dlv.row(i), dh.row(i));
    }

    for (int l = layers - 1; l >= 0; --l) {
        if (mode == Mode::Train) {
            const Matrix& mask = noise->dropout[l];
            for (size_t t = 0; t < dh.a.size(); ++t) dh.a[t] *= mask.a[t];
        }
        const Matrix& hin = l == 0 ? ws.h0 : ws.enc[l - 1].dropped;
        dh = attention_backward(hin, params.enc_w[l], params.enc_a[l], ws.enc[l], dh,
                                grads.enc_w[l], grads.enc_a[l]);
    }

    for (int i = 0; i < n; ++i) {
        double* ge = grads.embedding.row(graph.nodes[i]);
        const double* dhi = dh.row(i);
        for (int k = 0; k < d; ++k) ge[k] += dhi[k];
    }
    return loss;
}

namespace {

struct AdamState {
    ModelParams m, v;
    long t = 0;
};

void adam_step(ModelParams& params, ModelParams& grads, AdamState& st, const TrainConfig& cfg) {
    ++st.t;
    auto pv = tensor_views(params);
    auto gv = tensor_views(grads);
    auto mv = tensor_views(st.m);
    auto vv = tensor_views(st.v);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.t));
    for (size_t t = 0; t < pv.size(); ++t) {
        for (size_t i = 0; i < pv[t].second; ++i) {
            const double g = gv[t].first[i];
            double& m = mv[t].first[i];
            double& v = vv[t].first[i];
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
            pv[t].first[i] -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.adam_eps);
        }
    }
}

}  // namespace

TrainResult train(const std::vector<CohortSample>& samples, const Vocabulary& vocab,
                  const TrainConfig& cfg, Exec exec) {
    cfg.validate();
    const int total = static_cast<int>(samples.size());
    int n_case = 0;
    for (const auto& s : samples) n_case += s.label;
    if (total < 2 || n_case == 0 || n_case == total)
        data_error("degenerate_training_set",
                   "training requires at least one case and one control");

    std::vector<PatientGraph> graphs(total);
    for (int i = 0; i < total; ++i) graphs[i] = build_graph(samples[i], vocab);

    // Stratified validation split, held fixed across epochs.
    std::vector<int> case_idx, ctrl_idx;
    for (int i = 0; i < total; ++i) (samples[i].label ? case_idx : ctrl_idx).push_back(i);
    Rng split_rng = Rng::substream(cfg.seed, "val_split");
    split_rng.shuffle(case_idx);
    split_rng.shuffle(ctrl_idx);
    const int val_cases = static_cast<int>(case_idx.size() * cfg.val_fraction);
    const int val_ctrls = static_cast<int>(ctrl_idx.size() * cfg.val_fraction);
    std::vector<int> val_idx, train_idx;
    if (val_cases >= 1 && val_ctrls >= 1) {
        val_idx.insert(val_idx.end(), case_idx.begin(), case_idx.begin() + val_cases);
        val_idx.insert(val_idx.end(), ctrl_idx.begin(), ctrl_idx.begin() + val_ctrls);
        train_idx.insert(train_idx.end(), case_idx.begin() + val_cases, case_idx.end());
        train_idx.insert(train_idx.end(), ctrl_idx.begin() + val_ctrls, ctrl_idx.end());
    } else {
        for (int i = 0; i < total; ++i) train_idx.push_back(i);
    }
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    {
        int c = 0;
        for (int i : train_idx) c += samples[i].label;
        if (c == 0 || c == static_cast<int>(train_idx.size()))
            data_error("degenerate_training_set",
                       "validation split left the training set with one class");
    }

    TrainResult result;
    result.params = ModelParams::init(static_cast<int>(vocab.groups.size()), cfg);

    AdamState adam;
    adam.m = ModelParams::zeros(result.params.vocab_size, cfg.embed_dim, cfg.layers);
    adam.v = adam.m;

    const int n_train = static_cast<int>(train_idx.size());
    std::vector<ModelParams> sample_grads;
    std::vector<double> sample_loss;
    ModelParams batch_grad = adam.m;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order = train_idx;
        Rng::substream(cfg.seed, "epoch_shuffle", static_cast<uint64_t>(epoch)).shuffle(order);

        double loss_sum = 0.0;
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n_train - start);
            if (static_cast<int>(sample_grads.size()) < bsz) {
                sample_grads.resize(bsz, batch_grad);
                sample_loss.resize(bsz);
            }
            const ModelParams& params = result.params;
            run_indexed(bsz, exec, [&](int bi) {
                const int idx = order[start + bi];
                ModelParams& g = sample_grads[bi];
                zero_params(g);
                Rng noise_rng = Rng::substream(
                    cfg.seed, "noise",
                    static_cast<uint64_t>(epoch) * static_cast<uint64_t>(total) +
                        static_cast<uint64_t>(idx));
                NoiseDraw nd = NoiseDraw::draw(noise_rng, cfg.layers,
                                               static_cast<int>(graphs[idx].nodes.size()),
                                               cfg.embed_dim, cfg.dropout);
                sample_loss[bi] =
                    loss_and_gradients(params, graphs[idx], samples[idx].label, cfg.beta,
                                       Mode::Train, &nd, g, 1.0 / bsz);
            });
            zero_params(batch_grad);
            auto bv = tensor_views(batch_grad);
            for (int bi = 0; bi < bsz; ++bi) {
                auto sv = tensor_views(sample_grads[bi]);
                for (size_t t = 0; t < bv.size(); ++t)
                    for (size_t i = 0; i < bv[t].second; ++i)
                        bv[t].first[i] += sv[t].first[i];
                loss_sum += sample_loss[bi];
            }
            adam_step(result.params, batch_grad, adam, cfg);
        }

        const double mean_loss = loss_sum / n_train;
        if (!std::isfinite(mean_loss))
            numerical_error("divergence",
                            "training loss became non-finite at epoch " + std::to_string(epoch));
        result.history.mean_loss.push_back(mean_loss);

        double va = std::numeric_limits<double>::quiet_NaN();
        if (!val_idx.empty()) {
            const int nv = static_cast<int>(val_idx.size());
            std::vector<double> scores(nv);
            const ModelParams& params = result.params;
            run_indexed(nv, exec, [&](int vi) {
                scores[vi] = forward(params, graphs[val_idx[vi]], Mode::Infer).probability;
            });
            ScoredSet ss;
            for (int vi = 0; vi < nv; ++vi) {
                ss.scores.push_back(scores[vi]);
                ss.labels.push_back(samples[val_idx[vi]].label);
            }
            va = auroc(ss);
        }
        result.history.val_auroc.push_back(va);
        result.history.seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return result;
}

Matrix extract_adjacency(const ModelParams& params, const PatientGraph& graph,
                         AdjacencySource source) {
    Ws ws;
    forward_ws(params, graph, Mode::Infer, nullptr, ws);
    const Matrix& att = source == AdjacencySource::Decoder ? ws.dec.att : ws.enc.back().att;
    const int n = static_cast<int>(graph.nodes.size());
    Matrix full(params.vocab_size, params.vocab_size);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) full.at(graph.nodes[i], graph.nodes[j]) = att.at(i, j);
    return full;
}

void write_train_log(const TrainHistory& history, const std::string& path) {
    CsvWriter w(path);
    w.row({"epoch", "mean_loss", "val_auroc", "seconds"});
    for (size_t e = 0; e < history.mean_loss.size(); ++e) {
        std::string va =
            std::isnan(history.val_auroc[e]) ? "absent" : fmt_double(history.val_auroc[e]);
        w.row({std::to_string(e), fmt_double(history.mean_loss[e]), va,
               fmt_double(history.seconds[e])});
    }
    w.close();
}

void save_model(const ModelParams& p, const Vocabulary& vocab, const TrainConfig& cfg,
                const std::string& path) {
    json j;
    j["format"] = "riskgraph-vgnn";
    j["version"] = 1;
    j["config"] = {{"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size},
                   {"dropout", cfg.dropout},             {"epochs", cfg.epochs},
                   {"layers", cfg.layers},               {"heads", cfg.heads},
                   {"beta", cfg.beta},                   {"embed_dim", cfg.embed_dim},
                   {"val_fraction", cfg.val_fraction},   {"adam_beta1", cfg.adam_beta1},
                   {"adam_beta2", cfg.adam_beta2},       {"adam_eps", cfg.adam_eps},
                   {"seed", cfg.seed}};
    j["vocabulary"] = vocab.groups;
    json t;
    t["embedding"] = tensor_json(p.embedding);
    t["enc_w"] = json::array();
    t["enc_a"] = json::array();
    for (const auto& w : p.enc_w) t["enc_w"].push_back(tensor_json(w));
    for (const auto& a : p.enc_a) t["enc_a"].push_back(json(a));
    t["w_mu"] = tensor_json(p.w_mu);
    t["w_logvar"] = tensor_json(p.w_logvar);
    t["dec_w"] = tensor_json(p.dec_w);
    t["dec_a"] = p.dec_a;
    t["w_out"] = p.w_out;
    t["b_out"] = p.b_out;
    j["tensors"] = std::move(t);
    std::ofstream out(path, std::ios::binary);
    if (!out) data_error("io", "cannot write model file: " + path);
    out << j.dump(1) << "\n";
    out.flush();
    if (!out.good()) data_error("io", "failed writing model file: " + path);
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) data_error("io", "cannot read model file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        data_error("model_format", std::string("model file is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("format", "") != "riskgraph-vgnn")
            data_error("model_format", "unrecognized model file format");
        LoadedModel r;
        const json& c = j.at("config");
        r.config.learning_rate = c.at("learning_rate").get<double>();
        r.config.batch_size = c.at("batch_size").get<int>();
        r.config.dropout = c.at("dropout").get<double>();
        r.config.epochs = c.at("epochs").get<int>();
        r.config.layers = c.at("layers").get<int>();
        r.config.heads = c.at("heads").get<int>();
        r.config.beta = c.at("beta").get<double>();
        r.config.embed_dim = c.at("embed_dim").get<int>();
        r.config.val_fraction = c.at("val_fraction").get<double>();
        r.config.adam_beta1 = c.at("adam_beta1").get<double>();
        r.config.adam_beta2 = c.at("adam_beta2").get<double>();
        r.config.adam_eps = c.at("adam_eps").get<double>();
        r.config.seed = c.at("seed").get<uint64_t>();
        r.config.validate();
        r.vocab = Vocabulary::from_groups(j.at("vocabulary").get<std::vector<std::string>>());
        const json& t = j.at("tensors");
        const int v = static_cast<int>(r.vocab.groups.size());
        const int d = r.config.embed_dim;
        ModelParams& p = r.params;
        p.vocab_size = v;
        p.dim = d;
        p.layers = r.config.layers;
        p.embedding = tensor_from_json(t.at("embedding"), "embedding");
        if (p.embedding.rows != v || p.embedding.cols != d)
            data_error("model_shape", "embedding does not match vocabulary and embed_dim");
        const json& ews = t.at("enc_w");
        const json& eas = t.at("enc_a");
        if (static_cast<int>(ews.size()) != r.config.layers ||
            static_cast<int>(eas.size()) != r.config.layers)
            data_error("model_shape", "encoder tensor count does not match layers");
        for (int l = 0; l < r.config.layers; ++l) {
            Matrix w = tensor_from_json(ews[l], "enc_w");
            if (w.rows != d || w.cols != d)
                data_error("model_shape", "encoder weight has wrong shape");
            p.enc_w.push_back(std::move(w));
            auto a = eas[l].get<std::vector<double>>();
            if (static_cast<int>(a.size()) != 2 * d)
                data_error("model_shape", "encoder attention vector has wrong length");
            p.enc_a.push_back(std::move(a));
        }
        auto square = [&](const char* name) {
            Matrix m = tensor_from_json(t.at(name), name);
            if (m.rows != d || m.cols != d)
                data_error("model_shape", std::string(name) + " has wrong shape");
            return m;
        };
        p.w_mu = square("w_mu");
        p.w_logvar = square("w_logvar");
        p.dec_w = square("dec_w");
        p.dec_a = t.at("dec_a").get<std::vector<double>>();
        if (static_cast<int>(p.dec_a.size()) != 2 * d)
            data_error("model_shape", "dec_a has wrong length");
        p.w_out = t.at("w_out").get<std::vector<double>>();
        if (static_cast<int>(p.w_out.size()) != d)
            data_error("model_shape", "w_out has wrong length");
        p.b_out = t.at("b_out").get<double>();
        return r;
    } catch (const json::exception& e) {
        data_error("model_format", std::string("model file is missing fields: ") + e.what());
    }
}

}  // namespace riskgraph
