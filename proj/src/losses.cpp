#include "lotmerge/losses.hpp"

#include <cmath>

namespace lotmerge {

LossKind loss_from_string(const std::string& s) {
    if (s == "cross_entropy_on_linear_head" || s == "ce") return LossKind::CrossEntropyOnLinearHead;
    if (s == "mse") return LossKind::Mse;
    throw ArgumentError("unknown loss kind: " + s);
}

const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::CrossEntropyOnLinearHead: return "cross_entropy_on_linear_head";
        case LossKind::Mse: return "mse";
    }
    return "?";
}

namespace {

Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits) {
    Eigen::RowVectorXd shifted = logits.array() - logits.maxCoeff();
    Eigen::RowVectorXd e = shifted.array().exp();
    return e / e.sum();
}

void check_label(const Eigen::RowVectorXd& logits, std::uint32_t label) {
    if (label >= static_cast<std::uint32_t>(logits.size())) {
        throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                            std::to_string(logits.size()) + " classes");
    }
}

}  // namespace

double sample_loss(LossKind kind, const Eigen::RowVectorXd& logits, std::uint32_t label) {
    check_label(logits, label);
    switch (kind) {
        case LossKind::CrossEntropyOnLinearHead: {
            const Eigen::RowVectorXd shifted = logits.array() - logits.maxCoeff();
            const double log_z = std::log(shifted.array().exp().sum());
            return log_z - shifted(label);
        }
        case LossKind::Mse: {
            Eigen::RowVectorXd target = Eigen::RowVectorXd::Zero(logits.size());
            target(label) = 1.0;
            return (logits - target).squaredNorm();
        }
    }
    throw Error("unreachable loss kind");
}

Eigen::RowVectorXd sample_loss_grad(LossKind kind, const Eigen::RowVectorXd& logits,
                                    std::uint32_t label) {
    check_label(logits, label);
    switch (kind) {
        case LossKind::CrossEntropyOnLinearHead: {
            Eigen::RowVectorXd g = softmax(logits);
            g(label) -= 1.0;
            return g;
        }
        case LossKind::Mse: {
            Eigen::RowVectorXd target = Eigen::RowVectorXd::Zero(logits.size());
            target(label) = 1.0;
            return 2.0 * (logits - target);
        }
    }
    throw Error("unreachable loss kind");
}

double batch_loss(LossKind kind, const Matrix& logits, const std::vector<std::uint32_t>& labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw ShapeError("batch_loss: logit rows do not match label count");
    }
    double total = 0.0;
    for (Index i = 0; i < logits.rows(); ++i) {
        total += sample_loss(kind, logits.row(i), labels[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(logits.rows());
}

}  // namespace lotmerge
