#include "lotmerge/baselines.hpp"

namespace lotmerge {

Checkpoint weight_average(const std::vector<Checkpoint>& experts) {
    if (experts.empty()) throw ArgumentError("weight_average: empty expert list");
    for (const auto& e : experts) {
        if (e.spec_hash != experts.front().spec_hash) {
            throw SpecMismatchError("weight_average: experts built over different specs");
        }
    }
    Checkpoint out = experts.front();
    for (auto& [id, m] : out.params) {
        for (std::size_t k = 1; k < experts.size(); ++k) m += experts[k].params.at(id);
        m /= static_cast<double>(experts.size());
    }
    return out;
}

Checkpoint task_arithmetic(const Checkpoint& pretrained, const std::vector<TaskVector>& tvs,
                           double lambda) {
    return apply(pretrained, scale_sum(tvs, lambda), 1.0);
}

Checkpoint regmean_merge(const Checkpoint& pretrained, const std::vector<TaskVector>& tvs,
                         const std::vector<LayerStats>& per_task, const MergeConfig& cfg) {
    if (per_task.empty()) throw ArgumentError("regmean_merge: no statistics");
    if (per_task.size() != tvs.size()) {
        throw ArgumentError("regmean_merge: stats/task-vector count mismatch");
    }
    for (const auto& s : per_task) {
        if (s.spec_hash != pretrained.spec_hash) {
            throw SpecMismatchError("regmean_merge: stats spec differs from the pretrained model");
        }
    }
    const PooledStats pooled = merge_stats(per_task);
    Checkpoint out = pretrained;
    const double inv_k = 1.0 / static_cast<double>(tvs.size());
    for (const auto& u : out.spec.units) {
        if (!is_mergeable(u.kind)) continue;
        const Matrix& w_pre = pretrained.params.at(u.id);
        if (u.kind == UnitKind::MatMul) {
            // sum_k G_k W_k = (sum_k G_k) W_pre + sum_k G_k T_k
            const PooledUnitStats& pu = pooled.units.at(u.id);
            const Matrix rhs = pu.gram * w_pre + pu.gram_delta;
            out.params[u.id] = pinv(pu.gram, cfg.pinv_rel_tol) * rhs;
        } else {
            // mean_k W_k = W_pre + mean_k T_k
            Matrix mean_delta = Matrix::Zero(u.rows, u.cols);
            for (const auto& tv : tvs) {
                auto it = tv.deltas.find(u.id);
                if (it != tv.deltas.end()) mean_delta += it->second;
            }
            out.params[u.id] = w_pre + inv_k * mean_delta;
        }
    }
    return out;
}

std::pair<Matrix, Matrix> decompose_direct_merge(const Matrix& pooled_gram,
                                                 const Matrix& pooled_gram_delta,
                                                 const Matrix& w_pre, const MergeConfig& cfg) {
    const Matrix gram_pinv = pinv(pooled_gram, cfg.pinv_rel_tol);
    Matrix modified_pretrain = gram_pinv * (pooled_gram * w_pre);
    Matrix lot_term = gram_pinv * pooled_gram_delta;
    return {std::move(modified_pretrain), std::move(lot_term)};
}

}  // namespace lotmerge
