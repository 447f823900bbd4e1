#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskgraph/cohort.hpp"
#include "riskgraph/exec.hpp"
#include "riskgraph/linalg.hpp"
#include "riskgraph/rng.hpp"

namespace riskgraph {

struct Vocabulary {
    std::vector<std::string> groups;   // stable model-defining order
    std::map<std::string, int> index;  // group -> position

    static Vocabulary from_groups(std::vector<std::string> groups);
    int find(const std::string& group) const;  // -1 when absent
    void write_csv(const std::string& path) const;
    static Vocabulary load_csv(const std::string& path);
};

// One patient's complete code graph: nodes are the distinct in-vocabulary
// groups seen in the feature window. Edges are implicit (fully connected
// with self-loops).
struct PatientGraph {
    std::vector<int> nodes;   // strictly increasing vocabulary indices
    std::vector<int> counts;  // occurrences per node (stored, unused by v1)
};

// Groups missing from the vocabulary are dropped and tallied via *dropped.
PatientGraph build_graph(const CohortSample& sample, const Vocabulary& vocab,
                         int* dropped = nullptr);

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 128;
    double dropout = 0.1;
    int epochs = 200;
    int layers = 2;
    int heads = 1;  // only single-head attention is implemented
    double beta = 0.002;
    int embed_dim = 16;
    double val_fraction = 0.1;  // monitoring split carved from the train set
    uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct ModelParams {
    int vocab_size = 0;
    int dim = 0;
    int layers = 0;
    Matrix embedding;                        // V x d
    std::vector<Matrix> enc_w;               // layers of d x d
    std::vector<std::vector<double>> enc_a;  // layers of 2d
    Matrix w_mu;                             // d x d
    Matrix w_logvar;                         // d x d
    Matrix dec_w;                            // d x d
    std::vector<double> dec_a;               // 2d
    std::vector<double> w_out;               // d
    double b_out = 0.0;

    static ModelParams zeros(int vocab_size, int dim, int layers);
    static ModelParams init(int vocab_size, const TrainConfig& cfg);
};

enum class Mode { Train, Infer };

// Per-sample stochastic draws, fixed before the forward pass so that a
// forward with a given NoiseDraw is a pure function (finite differences
// probe exactly the same computation the backward pass differentiates).
struct NoiseDraw {
    std::vector<Matrix> dropout;  // per encoder layer, n x d inverted masks
    Matrix eps;                   // n x d reparameterization noise

    static NoiseDraw draw(Rng& rng, int layers, int n, int dim, double dropout_rate);
};

struct ForwardOutput {
    double probability = 0.0;
    double kl = 0.0;
    Matrix adjacency;    // n x n decoder attention, rows sum to 1
    Matrix node_states;  // n x d decoder outputs
};

// Train mode requires a NoiseDraw; infer mode ignores it and is
// deterministic.
ForwardOutput forward(const ModelParams& params, const PatientGraph& graph, Mode mode,
                      const NoiseDraw* noise = nullptr);

double bce_loss(double probability, int label);

// Runs forward, returns loss = BCE + beta*kl, and accumulates
// weight * d(loss)/d(theta) into grads (shaped like ModelParams).
double loss_and_gradients(const ModelParams& params, const PatientGraph& graph, int label,
                          double beta, Mode mode, const NoiseDraw* noise, ModelParams& grads,
                          double weight, ForwardOutput* out = nullptr);

struct TrainHistory {
    std::vector<double> mean_loss;
    std::vector<double> val_auroc;  // NaN when no validation split
    std::vector<double> seconds;
};

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

// Mini-batch Adam over per-sample exact gradients. Per-sample noise streams
// are keyed by (epoch, sample position), and per-sample gradients are
// reduced in sample order, so serial and parallel runs match bitwise.
TrainResult train(const std::vector<CohortSample>& samples, const Vocabulary& vocab,
                  const TrainConfig& cfg, Exec exec = Exec::Parallel);

enum class AdjacencySource { Decoder, Encoder };

// Infer-mode attention embedded into global V x V coordinates; rows of
// occupied nodes are stochastic, all other entries zero. Encoder export
// (final encoder layer) is kept for ablation.
Matrix extract_adjacency(const ModelParams& params, const PatientGraph& graph,
                         AdjacencySource source = AdjacencySource::Decoder);

void write_train_log(const TrainHistory& history, const std::string& path);

void save_model(const ModelParams& params, const Vocabulary& vocab, const TrainConfig& cfg,
                const std::string& path);

struct LoadedModel {
    ModelParams params;
    Vocabulary vocab;
    TrainConfig config;
};

LoadedModel load_model(const std::string& path);

}  // namespace riskgraph
