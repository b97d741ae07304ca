#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lotmerge/linalg.hpp"

namespace lotmerge {

/// Task losses computed on head logits. CrossEntropyOnLinearHead is softmax
/// cross-entropy; Mse is the squared distance to the one-hot target, summed
/// over classes. Both are averaged over samples at the batch level.
enum class LossKind { CrossEntropyOnLinearHead, Mse };

LossKind loss_from_string(const std::string& s);
const char* to_string(LossKind k);

double sample_loss(LossKind kind, const Eigen::RowVectorXd& logits, std::uint32_t label);

/// Gradient of the per-sample loss with respect to the logits.
Eigen::RowVectorXd sample_loss_grad(LossKind kind, const Eigen::RowVectorXd& logits,
                                    std::uint32_t label);

double batch_loss(LossKind kind, const Matrix& logits, const std::vector<std::uint32_t>& labels);

}  // namespace lotmerge
