#include "lotmerge/merge.hpp"

#include <algorithm>
#include <cmath>

#include "lotmerge/parallel.hpp"

namespace lotmerge {

double MergeOutcome::total_residual() const {
    double total = 0.0;
    for (const auto& u : units) total += u.residual;
    return total;
}

const UnitOutcome* MergeOutcome::find(const std::string& unit_id) const {
    for (const auto& u : units)
        if (u.unit_id == unit_id) return &u;
    return nullptr;
}

Matrix solve_matmul(const Matrix& pooled_gram, const Matrix& pooled_gram_delta,
                    const MergeConfig& cfg) {
    if (pooled_gram.rows() != pooled_gram.cols()) {
        throw ShapeError("solve_matmul: pooled gram must be square");
    }
    if (pooled_gram.rows() != pooled_gram_delta.rows()) {
        throw ShapeError("solve_matmul: gram and gram*delta row counts differ");
    }
    return pinv(pooled_gram, cfg.pinv_rel_tol) * pooled_gram_delta;
}

Vector solve_scale(const Vector& pooled_sq_sums, const Vector& pooled_sq_sums_delta) {
    if (pooled_sq_sums.size() != pooled_sq_sums_delta.size()) {
        throw ShapeError("solve_scale: statistic lengths differ");
    }
    Vector out = Vector::Zero(pooled_sq_sums.size());
    for (Index d = 0; d < out.size(); ++d) {
        if (pooled_sq_sums(d) > 0.0) out(d) = pooled_sq_sums_delta(d) / pooled_sq_sums(d);
    }
    return out;
}

Vector solve_bias(const std::vector<Vector>& deltas) {
    if (deltas.empty()) throw ArgumentError("solve_bias: empty delta list");
    Vector sum = deltas.front();
    for (std::size_t k = 1; k < deltas.size(); ++k) {
        if (deltas[k].size() != sum.size()) throw ShapeError("solve_bias: delta lengths differ");
        sum += deltas[k];
    }
    return sum / static_cast<double>(deltas.size());
}

namespace {

Matrix delta_of(const TaskVector& tv, const Unit& u) {
    auto it = tv.deltas.find(u.id);
    if (it != tv.deltas.end()) return it->second;
    return Matrix::Zero(u.rows, u.cols);
}

}  // namespace

double unit_objective(const Unit& unit, const std::vector<LayerStats>& per_task,
                      const std::vector<TaskVector>& tvs, const Matrix& candidate) {
    double obj = 0.0;
    for (std::size_t k = 0; k < per_task.size(); ++k) {
        const UnitStats& us = per_task[k].units.at(unit.id);
        const Matrix tk = delta_of(tvs[k], unit);
        switch (unit.kind) {
            case UnitKind::MatMul: {
                // tr((T - T_k)^T G_k (T - T_k)) expanded around the stored
                // gram and gram*delta products.
                const Matrix gt = us.gram * candidate;
                obj += (candidate.array() * gt.array()).sum();
                obj -= 2.0 * (candidate.array() * us.gram_delta.array()).sum();
                obj += (tk.array() * us.gram_delta.array()).sum();
                break;
            }
            case UnitKind::Scale: {
                const Vector diff = candidate.row(0).transpose() - tk.row(0).transpose();
                obj += (us.sq_sums.array() * diff.array().square()).sum();
                break;
            }
            case UnitKind::Bias: {
                const Vector diff = candidate.row(0).transpose() - us.bias_delta;
                obj += static_cast<double>(per_task[k].n_samples) * diff.squaredNorm();
                break;
            }
            default:
                throw ArgumentError("unit_objective: '" + unit.id + "' is not mergeable");
        }
    }
    return std::max(obj, 0.0);
}

MergeOutcome solve_optimal_tv(const NetworkSpec& spec, const std::vector<LayerStats>& per_task,
                              const std::vector<TaskVector>& tvs, const MergeConfig& cfg) {
    if (per_task.empty()) throw ArgumentError("solve_optimal_tv: no statistics");
    if (per_task.size() != tvs.size()) {
        throw ArgumentError("solve_optimal_tv: stats/task-vector count mismatch");
    }
    for (const auto& tv : tvs) {
        if (tv.spec_hash != per_task.front().spec_hash) {
            throw SpecMismatchError("solve_optimal_tv: task vector spec differs from stats");
        }
    }
    const PooledStats pooled = merge_stats(per_task);

    std::vector<const Unit*> mergeable;
    for (const auto& u : spec.units)
        if (is_mergeable(u.kind)) mergeable.push_back(&u);

    std::map<std::string, Matrix> deltas;
    for (const auto* u : mergeable) deltas[u->id] = Matrix::Zero(u->rows, u->cols);

    MergeOutcome outcome;
    outcome.units.resize(mergeable.size());

    parallel_for(mergeable.size(), [&](std::size_t i) {
        const Unit& u = *mergeable[i];
        const PooledUnitStats& pu = pooled.units.at(u.id);
        UnitOutcome& rec = outcome.units[i];
        rec.unit_id = u.id;
        rec.kind = u.kind;
        rec.n_samples = pooled.n_samples;
        Matrix solution;
        try {
            switch (u.kind) {
                case UnitKind::MatMul: {
                    solution = solve_matmul(pu.gram, pu.gram_delta, cfg);
                    rec.rank_of_gram = truncated_rank(svd(pu.gram).sigma, cfg.pinv_rel_tol);
                    break;
                }
                case UnitKind::Scale: {
                    solution = solve_scale(pu.sq_sums, pu.sq_sums_delta).transpose();
                    rec.rank_of_gram = (pu.sq_sums.array() > 0.0).count();
                    break;
                }
                case UnitKind::Bias: {
                    solution = solve_bias(pu.bias_deltas).transpose();
                    rec.rank_of_gram = static_cast<Index>(pu.bias_deltas.size());
                    break;
                }
                default:
                    break;
            }
        } catch (const NumericalError& e) {
            throw NumericalError("unit '" + u.id + "': " + e.what());
        }
        deltas.at(u.id) = solution;
        rec.residual = unit_objective(u, per_task, tvs, solution);
    });

    outcome.merged_tv = make_task_vector(spec, std::move(deltas));
    return outcome;
}

std::pair<Checkpoint, MergeOutcome> lot_merge_from_stats(const Checkpoint& pretrained,
                                                         const std::vector<TaskVector>& tvs,
                                                         const std::vector<LayerStats>& per_task,
                                                         const MergeConfig& cfg) {
    for (const auto& s : per_task) {
        if (s.spec_hash != pretrained.spec_hash) {
            throw SpecMismatchError("lot_merge: stats spec differs from the pretrained model");
        }
    }
    MergeOutcome outcome = solve_optimal_tv(pretrained.spec, per_task, tvs, cfg);
    Checkpoint merged = apply(pretrained, outcome.merged_tv, cfg.lambda);
    return {std::move(merged), std::move(outcome)};
}

std::pair<Checkpoint, MergeOutcome> lot_merge(const NetworkSpec& spec,
                                              const Checkpoint& pretrained,
                                              const std::vector<TaskVector>& tvs,
                                              const std::vector<ExemplarSet>& exemplars,
                                              const MergeConfig& cfg) {
    if (tvs.empty()) throw ArgumentError("lot_merge: no task vectors");
    if (tvs.size() != exemplars.size()) {
        throw ArgumentError("lot_merge: need exactly one exemplar set per task vector");
    }
    std::vector<LayerStats> per_task(tvs.size());
    parallel_for(tvs.size(), [&](std::size_t k) {
        per_task[k] = collect_stats(spec, pretrained, tvs[k], exemplars[k]);
    });
    return lot_merge_from_stats(pretrained, tvs, per_task, cfg);
}

std::vector<UnitOutcome> objective_of(const NetworkSpec& spec,
                                      const std::vector<LayerStats>& per_task,
                                      const std::vector<TaskVector>& tvs,
                                      const TaskVector& candidate) {
    std::vector<UnitOutcome> out;
    for (const auto& u : spec.units) {
        if (!is_mergeable(u.kind)) continue;
        UnitOutcome rec;
        rec.unit_id = u.id;
        rec.kind = u.kind;
        rec.residual = unit_objective(u, per_task, tvs, delta_of(candidate, u));
        for (const auto& s : per_task) rec.n_samples += s.n_samples;
        out.push_back(std::move(rec));
    }
    return out;
}

nlohmann::json outcome_report(const MergeOutcome& outcome, const std::string& method) {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : outcome.units) {
        units.push_back({{"unit_id", u.unit_id},
                         {"kind", to_string(u.kind)},
                         {"residual", u.residual},
                         {"rank_of_gram", u.rank_of_gram},
                         {"n_samples", u.n_samples}});
    }
    return {{"method", method},
            {"total_residual", outcome.total_residual()},
            {"units", units}};
}

}  // namespace lotmerge
