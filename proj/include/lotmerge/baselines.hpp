#pragma once

#include <utility>
#include <vector>

#include "lotmerge/capture.hpp"
#include "lotmerge/merge.hpp"
#include "lotmerge/netspec.hpp"

namespace lotmerge {

/// Per-unit arithmetic mean of the expert parameters.
Checkpoint weight_average(const std::vector<Checkpoint>& experts);

/// W_pre + lambda * sum_k T_k.
Checkpoint task_arithmetic(const Checkpoint& pretrained, const std::vector<TaskVector>& tvs,
                           double lambda);

/// Direct parameter merging of linear weights:
///   W* = pinv(sum_k X_k^T X_k) * sum_k X_k^T X_k W_k.
/// Scale and Bias units fall back to weight averaging; Frozen units keep the
/// pre-trained parameters.
Checkpoint regmean_merge(const Checkpoint& pretrained, const std::vector<TaskVector>& tvs,
                         const std::vector<LayerStats>& per_task, const MergeConfig& cfg);

/// Splits the direct-merge weight of one unit into the projection of the
/// pre-trained weight and the optimal task vector:
///   W* = pinv(G) G W_pre  +  pinv(G) sum_k G_k T_k.
/// Their sum reproduces the regmean weight.
std::pair<Matrix, Matrix> decompose_direct_merge(const Matrix& pooled_gram,
                                                 const Matrix& pooled_gram_delta,
                                                 const Matrix& w_pre, const MergeConfig& cfg);

}  // namespace lotmerge
