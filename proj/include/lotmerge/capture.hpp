#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lotmerge/netspec.hpp"

namespace lotmerge {

/// Small per-task sample batch used for forward-pass statistics only.
struct ExemplarSet {
    std::string task_id;
    Matrix features;  // n samples x input_dim
    std::optional<std::vector<std::uint32_t>> labels;
    int num_classes = 0;  // 0 = unlabeled / unknown
};

/// Per-task sufficient statistics for one mergeable unit.
///   MatMul: gram = X^T X (d x d), gram_delta = X^T X T_k (d x d').
///   Scale:  sq_sums[d] = sum_x x[d]^2, sq_sums_delta[d] = sq_sums[d] * T_k[d].
///   Bias:   bias_delta = copy of T_k (sample count lives on the parent).
struct UnitStats {
    UnitKind kind = UnitKind::MatMul;
    Matrix gram;
    Matrix gram_delta;
    Vector sq_sums;
    Vector sq_sums_delta;
    Vector bias_delta;
};

struct LayerStats {
    std::string task_id;
    std::string spec_hash;
    NetworkSpec spec;
    long n_samples = 0;
    std::map<std::string, UnitStats> units;
};

/// Raw input features X^l per unit, kept only when requested (drift analysis).
struct FeatureTrace {
    std::string task_id;
    std::map<std::string, Matrix> inputs;
};

/// Cross-task pooled statistics feeding the closed-form solvers.
struct PooledUnitStats {
    UnitKind kind = UnitKind::MatMul;
    Matrix gram;        // sum_k X_k^T X_k
    Matrix gram_delta;  // sum_k X_k^T X_k T_k
    Vector sq_sums;
    Vector sq_sums_delta;
    std::vector<Vector> bias_deltas;   // kept per task
    std::vector<long> bias_counts;
};

struct PooledStats {
    std::string spec_hash;
    NetworkSpec spec;
    long n_samples = 0;
    std::map<std::string, PooledUnitStats> units;
};

/// Evaluates the trunk on `batch` and returns the final features.
Matrix forward(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch);

/// Trunk evaluation keeping every unit's output (inputs are outputs shifted by
/// one; residual units read earlier entries).
struct ForwardTrace {
    std::vector<Matrix> unit_inputs;   // X^l feeding each trunk unit
    std::vector<Matrix> unit_outputs;  // f^l output of each trunk unit
    Matrix final_features;
};
ForwardTrace forward_trace(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch);

/// Trunk output multiplied by the named frozen head.
Matrix forward_logits(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch,
                      const std::string& head_id);

/// Runs the expert model (pretrained + tv) on the exemplars and accumulates
/// the input-feature statistics of every mergeable unit. Gram matrices are
/// accumulated block-wise so arbitrarily large exemplar sets stream through.
LayerStats collect_stats(const NetworkSpec& spec, const Checkpoint& pretrained,
                         const TaskVector& tv, const ExemplarSet& exemplars,
                         FeatureTrace* trace = nullptr);

PooledStats merge_stats(const std::vector<LayerStats>& stats);

}  // namespace lotmerge
