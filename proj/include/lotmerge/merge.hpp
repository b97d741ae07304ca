#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lotmerge/capture.hpp"
#include "lotmerge/netspec.hpp"

namespace lotmerge {

struct MergeConfig {
    double lambda = 1.0;
    double pinv_rel_tol = 1e-12;
};

/// Per-unit record of the solve: the minimized drift objective
/// sum_k ||X_k (T* - T_k)||_F^2 (or its scale/bias analogue), the numerical
/// rank of the pooled statistic and the pooled sample count.
struct UnitOutcome {
    std::string unit_id;
    UnitKind kind = UnitKind::MatMul;
    double residual = 0.0;
    Index rank_of_gram = 0;
    long n_samples = 0;
};

struct MergeOutcome {
    TaskVector merged_tv;
    std::vector<UnitOutcome> units;

    double total_residual() const;
    const UnitOutcome* find(const std::string& unit_id) const;
};

/// Minimum-norm minimizer of sum_k ||X_k (T - T_k)||_F^2 given the pooled
/// Gram and pooled Gram-times-delta statistics:
///   T* = pinv(sum_k X_k^T X_k) * sum_k X_k^T X_k T_k.
Matrix solve_matmul(const Matrix& pooled_gram, const Matrix& pooled_gram_delta,
                    const MergeConfig& cfg);

/// Element-wise weighted average; dimensions with zero feature energy keep a
/// zero delta:
///   T*[d] = sum_k sum_x x_k[d]^2 T_k[d] / sum_k sum_x x_k[d]^2.
Vector solve_scale(const Vector& pooled_sq_sums, const Vector& pooled_sq_sums_delta);

/// Arithmetic mean of the per-task deltas.
Vector solve_bias(const std::vector<Vector>& deltas);

/// Drift objective of a candidate delta at one mergeable unit, evaluated with
/// the per-task collected statistics:
///   MatMul: sum_k [ tr(T^T G_k T) - 2 tr(T^T G_k T_k) + tr(T_k^T G_k T_k) ]
///   Scale:  sum_k sum_d sq_k[d] (T[d] - T_k[d])^2
///   Bias:   sum_k n_k ||T - T_k||^2
double unit_objective(const Unit& unit, const std::vector<LayerStats>& per_task,
                      const std::vector<TaskVector>& tvs, const Matrix& candidate);

/// Per-unit dispatch over pooled statistics; returns the optimal task vector
/// together with its residual objective per unit.
MergeOutcome solve_optimal_tv(const NetworkSpec& spec, const std::vector<LayerStats>& per_task,
                              const std::vector<TaskVector>& tvs, const MergeConfig& cfg);

/// End-to-end pipeline: per-task feature collection, pooling, per-unit solves
/// and the final application W_pre + lambda * T*.
std::pair<Checkpoint, MergeOutcome> lot_merge(const NetworkSpec& spec,
                                              const Checkpoint& pretrained,
                                              const std::vector<TaskVector>& tvs,
                                              const std::vector<ExemplarSet>& exemplars,
                                              const MergeConfig& cfg);

/// Same, starting from precomputed per-task statistics (the CLI path).
std::pair<Checkpoint, MergeOutcome> lot_merge_from_stats(const Checkpoint& pretrained,
                                                         const std::vector<TaskVector>& tvs,
                                                         const std::vector<LayerStats>& per_task,
                                                         const MergeConfig& cfg);

/// Residual objective of an arbitrary candidate task vector per mergeable
/// unit (same statistics path as the solver, for equal-footing comparisons).
std::vector<UnitOutcome> objective_of(const NetworkSpec& spec,
                                      const std::vector<LayerStats>& per_task,
                                      const std::vector<TaskVector>& tvs,
                                      const TaskVector& candidate);

nlohmann::json outcome_report(const MergeOutcome& outcome, const std::string& method);

}  // namespace lotmerge
