#pragma once

#include <string>
#include <vector>

#include "riskgraph/cohort.hpp"
#include "riskgraph/exec.hpp"
#include "riskgraph/gnn.hpp"
#include "riskgraph/linalg.hpp"

namespace riskgraph {

enum class RelationKind { PerPatient, GroupMeanPositive, GroupMeanNegative, WeightDifference };

// V x V relation weights over a fixed vocabulary. Per-patient matrices may
// be asymmetric; everything downstream of symmetrize() is exactly symmetric.
struct RelationMatrix {
    Matrix values;
    RelationKind kind = RelationKind::PerPatient;
};

// 0.5 * (A + A^T), written so the result is symmetric bitwise and a second
// application changes nothing.
RelationMatrix symmetrize(const RelationMatrix& a, const Vocabulary& vocab);

// Group means divide by the group size; Support divides each entry by the
// number of matrices with a nonzero there instead.
enum class MeanMode { GroupSize, Support };

RelationMatrix group_mean(const std::vector<RelationMatrix>& ms, RelationKind kind,
                          MeanMode mode = MeanMode::GroupSize);

RelationMatrix weight_difference(const RelationMatrix& pos, const RelationMatrix& neg);

enum class RelationSign { Positive, Negative };

struct RankedRelation {
    std::string group_a;
    std::string group_b;
    double weight = 0.0;
    int rank = 0;
    RelationSign sign = RelationSign::Positive;
};

// Top k strictly-positive (or strictly-negative) entries over unordered
// pairs, ties broken by group labels. Self-relations are skipped unless
// asked for.
std::vector<RankedRelation> top_relations(const RelationMatrix& w, const Vocabulary& vocab,
                                          int k, RelationSign sign, bool include_self = false);

struct ExplainReport {
    RelationMatrix mean_case;
    RelationMatrix mean_control;
    RelationMatrix difference;
    std::vector<RankedRelation> top_positive;
    std::vector<RankedRelation> top_negative;
    int n_case = 0;
    int n_control = 0;
};

// Per-patient inference adjacencies, symmetrized, averaged per label group,
// differenced, and ranked. Extraction is parallel; sums are reduced in
// sample order so results never depend on the execution mode.
ExplainReport explain_cohort(const ModelParams& params, const std::vector<CohortSample>& samples,
                             const Vocabulary& vocab, int k, MeanMode mode = MeanMode::GroupSize,
                             Exec exec = Exec::Parallel);

// sign,rank,group_a_label,group_b_label,weight; positive rows then negative.
void write_relations_csv(const ExplainReport& report, const std::string& path);

// Sparse upper-triangle triplets i,j,weight (i <= j); the vocabulary file
// written alongside maps indices back to labels.
void write_weight_csv(const RelationMatrix& w, const std::string& path);
Matrix load_weight_csv(const std::string& path, int vocab_size);

}  // namespace riskgraph
