#include "lotmerge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lotmerge {

namespace {

Matrix delta_or_zero(const TaskVector& tv, const Unit& u) {
    auto it = tv.deltas.find(u.id);
    if (it != tv.deltas.end()) return it->second;
    return Matrix::Zero(u.rows, u.cols);
}

/// Output of one parameterized unit under explicit parameters.
Matrix eval_param_unit(const Unit& u, const Matrix& x, const Matrix& w) {
    switch (u.kind) {
        case UnitKind::MatMul:
        case UnitKind::Frozen:
            return x * w;
        case UnitKind::Scale:
            return x.array().rowwise() * w.row(0).array();
        case UnitKind::Bias:
            return x.rowwise() + w.row(0);
        default:
            throw ArgumentError("eval_param_unit: '" + u.id + "' carries no parameters");
    }
}

struct RawDrift {
    std::vector<UnitDrift> units;
    std::vector<double> rms;  // RMS per-sample drift norm, aligned with units
};

RawDrift unit_drifts(const NetworkSpec& spec, const Checkpoint& pretrained,
                     const TaskVector& merged_tv, const TaskVector& expert_tv,
                     const Matrix& features) {
    const Checkpoint expert = apply(pretrained, expert_tv, 1.0);
    const ForwardTrace trace = forward_trace(spec, expert, features);
    RawDrift out;
    const double n = static_cast<double>(features.rows());
    for (std::size_t i = 0; i < spec.units.size(); ++i) {
        const Unit& u = spec.units[i];
        if (!is_mergeable(u.kind)) continue;
        const Matrix hybrid_w = pretrained.params.at(u.id) + delta_or_zero(merged_tv, u);
        const Matrix diff = eval_param_unit(u, trace.unit_inputs[i], hybrid_w) -
                            trace.unit_outputs[i];
        UnitDrift d;
        d.unit_id = u.id;
        d.kind = u.kind;
        d.drift_fro = diff.norm();
        const double base = trace.unit_outputs[i].norm();
        d.drift_rel = base > 0.0 ? d.drift_fro / base : 0.0;
        out.units.push_back(d);
        out.rms.push_back(std::sqrt(diff.squaredNorm() / n));
    }
    return out;
}

double normalize_jacobian_norm(const Eigen::RowVectorXd& x) {
    constexpr double eps = 1e-5;
    const double d = static_cast<double>(x.size());
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / d;
    const double s = std::sqrt(var + eps);
    const Vector y = ((x.array() - mean) / s).matrix().transpose();
    const Matrix jac =
        (Matrix::Identity(x.size(), x.size()) - Matrix::Constant(x.size(), x.size(), 1.0 / d) -
         (y * y.transpose()) / d) /
        s;
    return spectral_norm(jac);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double mean_cosine_distance(const Matrix& a, const Matrix& b) {
    double total = 0.0;
    for (Index i = 0; i < a.rows(); ++i) {
        const double na = a.row(i).norm();
        const double nb = b.row(i).norm();
        if (na == 0.0 || nb == 0.0) {
            total += (na == nb) ? 0.0 : 1.0;
        } else {
            const double dist = 1.0 - a.row(i).dot(b.row(i)) / (na * nb);
            total += std::clamp(dist, 0.0, 2.0);  // roundoff guard
        }
    }
    return total / static_cast<double>(a.rows());
}

DriftReport measure_drift(const NetworkSpec& spec, const Checkpoint& pretrained,
                          const TaskVector& merged_tv, const TaskVector& expert_tv,
                          const ExemplarSet& exemplars) {
    if (exemplars.features.rows() < 1) throw ArgumentError("measure_drift: empty exemplar set");
    DriftReport report;
    report.task_id = exemplars.task_id;
    report.units = unit_drifts(spec, pretrained, merged_tv, expert_tv, exemplars.features).units;

    const Checkpoint merged = apply(pretrained, merged_tv, 1.0);
    const Checkpoint expert = apply(pretrained, expert_tv, 1.0);
    report.last_layer_cosine = mean_cosine_distance(forward(spec, merged, exemplars.features),
                                                    forward(spec, expert, exemplars.features));
    return report;
}

std::vector<double> measure_negative_transfer(const NetworkSpec& spec, const Checkpoint& merged,
                                              const std::vector<Checkpoint>& experts,
                                              const std::vector<ExemplarSet>& eval_sets,
                                              const std::vector<std::string>& head_ids,
                                              LossKind loss) {
    if (experts.size() != eval_sets.size() || experts.size() != head_ids.size()) {
        throw ArgumentError("measure_negative_transfer: per-task argument counts differ");
    }
    std::vector<double> deltas;
    deltas.reserve(experts.size());
    for (std::size_t k = 0; k < experts.size(); ++k) {
        const ExemplarSet& ev = eval_sets[k];
        if (!ev.labels) throw ArgumentError("measure_negative_transfer: eval set lacks labels");
        const double merged_loss =
            batch_loss(loss, forward_logits(spec, merged, ev.features, head_ids[k]), *ev.labels);
        const double expert_loss = batch_loss(
            loss, forward_logits(spec, experts[k], ev.features, head_ids[k]), *ev.labels);
        deltas.push_back(merged_loss - expert_loss);
    }
    return deltas;
}

TaskBound check_bound(const NetworkSpec& spec, const Checkpoint& pretrained,
                      const TaskVector& merged_tv, const TaskVector& expert_tv,
                      const ExemplarSet& exemplars, const ExemplarSet& eval,
                      const std::string& head_id, LossKind loss) {
    if (!eval.labels) throw ArgumentError("check_bound: eval set lacks labels");
    const Checkpoint merged = apply(pretrained, merged_tv, 1.0);
    const Checkpoint expert = apply(pretrained, expert_tv, 1.0);

    TaskBound result;
    result.task_id = eval.task_id;

    // Per-unit Lipschitz estimates over the merging region.
    const ForwardTrace trace_expert = forward_trace(spec, expert, eval.features);
    const ForwardTrace trace_merged = forward_trace(spec, merged, eval.features);
    const ForwardTrace trace_exemplar_expert = forward_trace(spec, expert, exemplars.features);
    const ForwardTrace trace_exemplar_merged = forward_trace(spec, merged, exemplars.features);

    std::vector<double> gamma(spec.units.size(), 1.0);
    for (std::size_t i = 0; i < spec.units.size(); ++i) {
        const Unit& u = spec.units[i];
        switch (u.kind) {
            case UnitKind::MatMul:
            case UnitKind::Frozen:
                gamma[i] = std::max(spectral_norm(merged.params.at(u.id)),
                                    spectral_norm(expert.params.at(u.id)));
                break;
            case UnitKind::Scale:
                gamma[i] = std::max(merged.params.at(u.id).cwiseAbs().maxCoeff(),
                                    expert.params.at(u.id).cwiseAbs().maxCoeff());
                break;
            case UnitKind::Bias:
            case UnitKind::Residual:
                gamma[i] = 1.0;
                break;
            case UnitKind::Normalize: {
                double g = 0.0;
                for (const ForwardTrace* t : {&trace_expert, &trace_merged,
                                              &trace_exemplar_expert, &trace_exemplar_merged}) {
                    const Matrix& x = t->unit_inputs[i];
                    for (Index r = 0; r < x.rows(); ++r) {
                        g = std::max(g, normalize_jacobian_norm(x.row(r)));
                    }
                }
                gamma[i] = 1.5 * g;
                break;
            }
            case UnitKind::Activation:
                switch (u.activation) {
                    case ActivationTag::Relu:
                    case ActivationTag::Identity:
                        gamma[i] = 1.0;
                        break;
                    case ActivationTag::Gelu:
                        gamma[i] = 1.13;
                        break;
                }
                break;
        }
        result.gammas.emplace_back(u.id, gamma[i]);
    }

    // Sensitivity of the final output to each unit's output. On a pure chain
    // this is the product of the downstream gammas; residual units add their
    // skip path on top.
    std::vector<double> sens(spec.units.size(), 0.0);
    if (!spec.units.empty()) {
        sens[spec.units.size() - 1] = 1.0;
        for (std::size_t l = spec.units.size() - 1; l-- > 0;) {
            sens[l] = gamma[l + 1] * sens[l + 1];
            for (std::size_t r = l + 1; r < spec.units.size(); ++r) {
                if (spec.units[r].kind == UnitKind::Residual &&
                    spec.units[r].residual_from == spec.units[l].id) {
                    sens[l] += sens[r];
                }
            }
        }
    }

    // Drift measured on the same samples the loss is evaluated on.
    const RawDrift drift = unit_drifts(spec, pretrained, merged_tv, expert_tv, eval.features);
    double rhs = 0.0;
    std::size_t di = 0;
    for (std::size_t i = 0; i < spec.units.size(); ++i) {
        if (!is_mergeable(spec.units[i].kind)) continue;
        rhs += sens[i] * drift.rms[di];
        ++di;
    }

    // beta: largest finite-difference loss sensitivity at the final features
    // of either model, times a 1.5 safety factor.
    const Unit* head = spec.find_head(head_id);
    if (head == nullptr) throw ArgumentError("check_bound: unknown head '" + head_id + "'");
    const Matrix& head_w = pretrained.params.at(head_id);
    auto loss_at = [&](const Eigen::RowVectorXd& z, std::uint32_t label) {
        return sample_loss(loss, z * head_w, label);
    };
    double beta_raw = 0.0;
    constexpr double fd_eps = 1e-6;
    for (const Matrix* feats : {&trace_expert.final_features, &trace_merged.final_features}) {
        for (Index r = 0; r < feats->rows(); ++r) {
            const std::uint32_t label = (*eval.labels)[static_cast<std::size_t>(r)];
            Eigen::RowVectorXd z = feats->row(r);
            double sq = 0.0;
            for (Index j = 0; j < z.size(); ++j) {
                const double keep = z(j);
                z(j) = keep + fd_eps;
                const double up = loss_at(z, label);
                z(j) = keep - fd_eps;
                const double down = loss_at(z, label);
                z(j) = keep;
                const double g = (up - down) / (2.0 * fd_eps);
                sq += g * g;
            }
            beta_raw = std::max(beta_raw, std::sqrt(sq));
        }
    }
    result.beta = 1.5 * beta_raw;
    result.bound_value = result.beta * rhs;

    const double merged_loss =
        batch_loss(loss, forward_logits(spec, merged, eval.features, head_id), *eval.labels);
    const double expert_loss =
        batch_loss(loss, forward_logits(spec, expert, eval.features, head_id), *eval.labels);
    result.delta_loss = std::abs(merged_loss - expert_loss);
    result.satisfied = result.delta_loss <= result.bound_value;
    return result;
}

std::vector<double> cumulative_drift_profile(const NetworkSpec& spec,
                                             const Checkpoint& pretrained,
                                             const TaskVector& merged_tv,
                                             const TaskVector& expert_tv,
                                             const ExemplarSet& exemplars) {
    const Checkpoint merged = apply(pretrained, merged_tv, 1.0);
    const Checkpoint expert = apply(pretrained, expert_tv, 1.0);
    const ForwardTrace tm = forward_trace(spec, merged, exemplars.features);
    const ForwardTrace te = forward_trace(spec, expert, exemplars.features);
    std::vector<double> profile;
    profile.reserve(spec.units.size());
    for (std::size_t i = 0; i < spec.units.size(); ++i) {
        const double base = te.unit_outputs[i].norm();
        const double drift = (tm.unit_outputs[i] - te.unit_outputs[i]).norm();
        profile.push_back(base > 0.0 ? drift / base : 0.0);
    }
    return profile;
}

AlignmentDiagnostic alignment_diagnostic(const std::vector<FeatureTrace>& traces,
                                         double rel_tol) {
    if (traces.empty()) throw ArgumentError("alignment_diagnostic: no traces");
    AlignmentDiagnostic diag;
    for (const auto& [unit_id, first_x] : traces.front().inputs) {
        UnitAlignment ua;
        ua.unit_id = unit_id;
        std::vector<Matrix> right_subspaces;  // rank x d rows of V^T per task
        for (const auto& t : traces) {
            auto it = t.inputs.find(unit_id);
            if (it == t.inputs.end()) {
                throw ArgumentError("alignment_diagnostic: traces disagree on unit '" + unit_id +
                                    "'");
            }
            const SvdFactors f = svd(it->second);
            const Index rank = truncated_rank(f.sigma, rel_tol);
            ua.ranks.push_back(rank);
            right_subspaces.push_back(f.vt.topRows(rank));
        }
        for (std::size_t j = 0; j < right_subspaces.size(); ++j) {
            for (std::size_t k = j + 1; k < right_subspaces.size(); ++k) {
                const Index min_rank = std::min(ua.ranks[j], ua.ranks[k]);
                double overlap = 0.0;
                if (min_rank > 0) {
                    overlap = (right_subspaces[j] * right_subspaces[k].transpose()).norm() /
                              std::sqrt(static_cast<double>(min_rank));
                }
                ua.overlaps.emplace_back(j, k, overlap);
            }
        }
        diag.units.push_back(std::move(ua));
    }
    return diag;
}

nlohmann::json drift_report_json(const DriftReport& report) {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : report.units) {
        units.push_back({{"unit_id", u.unit_id},
                         {"kind", to_string(u.kind)},
                         {"drift_fro", u.drift_fro},
                         {"drift_rel", u.drift_rel}});
    }
    return {{"task_id", report.task_id},
            {"last_layer_cosine", report.last_layer_cosine},
            {"units", units}};
}

std::string drift_report_csv(const DriftReport& report) {
    std::ostringstream out;
    out << "task_id,unit_id,kind,drift_fro,drift_rel,last_layer_cosine\n";
    for (const auto& u : report.units) {
        out << report.task_id << ',' << u.unit_id << ',' << to_string(u.kind) << ','
            << format_double(u.drift_fro) << ',' << format_double(u.drift_rel) << ','
            << format_double(report.last_layer_cosine) << '\n';
    }
    return out.str();
}

nlohmann::json bound_report_json(const std::vector<TaskBound>& bounds) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& b : bounds) {
        nlohmann::json gammas = nlohmann::json::array();
        for (const auto& [id, g] : b.gammas) gammas.push_back({{"unit_id", id}, {"gamma", g}});
        tasks.push_back({{"task_id", b.task_id},
                         {"delta_loss", b.delta_loss},
                         {"bound_value", b.bound_value},
                         {"beta", b.beta},
                         {"bound_satisfied", b.satisfied},
                         {"gammas", gammas}});
    }
    return {{"tasks", tasks}};
}

std::string bound_report_csv(const std::vector<TaskBound>& bounds) {
    std::ostringstream out;
    out << "task_id,delta_loss,bound_value,beta,bound_satisfied\n";
    for (const auto& b : bounds) {
        out << b.task_id << ',' << format_double(b.delta_loss) << ','
            << format_double(b.bound_value) << ',' << format_double(b.beta) << ','
            << (b.satisfied ? "true" : "false") << '\n';
    }
    return out.str();
}

}  // namespace lotmerge
