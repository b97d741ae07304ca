#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lotmerge/capture.hpp"
#include "lotmerge/losses.hpp"
#include "lotmerge/netspec.hpp"

namespace lotmerge {

struct UnitDrift {
    std::string unit_id;
    UnitKind kind = UnitKind::MatMul;
    double drift_fro = 0.0;  // || f(X_k; W_pre + T_merged) - f(X_k; W_k) ||_F
    double drift_rel = 0.0;  // drift_fro / || f(X_k; W_k) ||_F (0 when the base is 0)
};

struct DriftReport {
    std::string task_id;
    std::vector<UnitDrift> units;  // mergeable units, trunk order
    // Mean per-sample cosine distance between the fully merged model's final
    // features and the expert's, in [0, 2].
    double last_layer_cosine = 0.0;
};

/// Mean over rows of 1 - cos(a_i, b_i); zero rows pair to 0 against another
/// zero row and to 1 otherwise.
double mean_cosine_distance(const Matrix& a, const Matrix& b);

/// Per-unit feature drift of a merged task vector against one expert, using
/// the expert's own input features at every unit (the convention under which
/// the layer-wise objective is both defined and minimized). `merged_tv` is
/// the final applied delta, i.e. lambda is already folded in.
DriftReport measure_drift(const NetworkSpec& spec, const Checkpoint& pretrained,
                          const TaskVector& merged_tv, const TaskVector& expert_tv,
                          const ExemplarSet& exemplars);

/// Per-task loss change L_k(merged) - L_k(expert_k) on held-out labeled data.
std::vector<double> measure_negative_transfer(const NetworkSpec& spec,
                                              const Checkpoint& merged,
                                              const std::vector<Checkpoint>& experts,
                                              const std::vector<ExemplarSet>& eval_sets,
                                              const std::vector<std::string>& head_ids,
                                              LossKind loss);

struct TaskBound {
    std::string task_id;
    double delta_loss = 0.0;   // |L_k(merged) - L_k(expert)| on the eval set
    double bound_value = 0.0;  // beta * sum_l sens_l * ||drift_l||
    double beta = 0.0;
    std::vector<std::pair<std::string, double>> gammas;  // per trunk unit
    bool satisfied = false;
};

/// Verifies the layer-wise conflict bound for one task. Gamma estimators:
/// MatMul/Frozen use the larger spectral norm of the expert and merged unit
/// weights, Scale the largest |scale|, Bias/ReLU/Residual 1, Gelu 1.13, and
/// Normalize the largest row-Jacobian norm observed on the exemplar and eval
/// batches times a 1.5 safety factor. Beta is the largest finite-difference
/// loss sensitivity at the final features of either model, times 1.5.
/// Drift enters as the RMS per-sample norm so the bound is batch-valid.
TaskBound check_bound(const NetworkSpec& spec, const Checkpoint& pretrained,
                      const TaskVector& merged_tv, const TaskVector& expert_tv,
                      const ExemplarSet& exemplars, const ExemplarSet& eval,
                      const std::string& head_id, LossKind loss);

/// Depth profile of the fully merged model: per trunk unit, the relative
/// Frobenius distance between the merged model's features and the expert's,
/// both run end to end from the input. Early perturbations compound, so the
/// profile tends to grow with depth.
std::vector<double> cumulative_drift_profile(const NetworkSpec& spec,
                                             const Checkpoint& pretrained,
                                             const TaskVector& merged_tv,
                                             const TaskVector& expert_tv,
                                             const ExemplarSet& exemplars);

struct UnitAlignment {
    std::string unit_id;
    std::vector<Index> ranks;  // effective rank per task
    // (task j, task k, ||V_j^T V_k||_F / sqrt(min rank)) for j < k
    std::vector<std::tuple<std::size_t, std::size_t, double>> overlaps;
};

struct AlignmentDiagnostic {
    std::vector<UnitAlignment> units;
};

/// Pairwise overlap of the per-task right singular subspaces of each unit's
/// input features: 0 for the orthogonal regime, 1 for a fully shared one.
AlignmentDiagnostic alignment_diagnostic(const std::vector<FeatureTrace>& traces,
                                         double rel_tol = 1e-12);

nlohmann::json drift_report_json(const DriftReport& report);
std::string drift_report_csv(const DriftReport& report);
nlohmann::json bound_report_json(const std::vector<TaskBound>& bounds);
std::string bound_report_csv(const std::vector<TaskBound>& bounds);

}  // namespace lotmerge
