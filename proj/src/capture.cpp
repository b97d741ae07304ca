#include "lotmerge/capture.hpp"

#include <cmath>
#include <sstream>

namespace lotmerge {

namespace {

constexpr double kNormalizeEps = 1e-5;
constexpr Index kStreamChunk = 1024;

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

Matrix normalize_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().sum() / d;
        y.row(r) = (x.row(r).array() - mean) / std::sqrt(var + kNormalizeEps);
    }
    return y;
}

[[noreturn]] void unit_shape_error(const Unit& u, Index got, Index want) {
    std::ostringstream msg;
    msg << "unit '" << u.id << "' (" << to_string(u.kind) << "): feature width " << got
        << " does not match " << want;
    throw ShapeError(msg.str());
}

Matrix eval_unit(const Unit& u, const Matrix& x, const Checkpoint& ckpt,
                 const std::vector<Matrix>& outputs, const Matrix& batch,
                 const NetworkSpec& spec) {
    switch (u.kind) {
        case UnitKind::MatMul:
        case UnitKind::Frozen: {
            const Matrix& w = ckpt.params.at(u.id);
            if (x.cols() != w.rows()) unit_shape_error(u, x.cols(), w.rows());
            return x * w;
        }
        case UnitKind::Scale: {
            const Matrix& w = ckpt.params.at(u.id);
            if (x.cols() != w.cols()) unit_shape_error(u, x.cols(), w.cols());
            return x.array().rowwise() * w.row(0).array();
        }
        case UnitKind::Bias: {
            const Matrix& w = ckpt.params.at(u.id);
            if (x.cols() != w.cols()) unit_shape_error(u, x.cols(), w.cols());
            return x.rowwise() + w.row(0);
        }
        case UnitKind::Normalize:
            return normalize_rows(x);
        case UnitKind::Activation:
            switch (u.activation) {
                case ActivationTag::Relu: return relu(x);
                case ActivationTag::Gelu: return gelu(x);
                case ActivationTag::Identity: return x;
            }
            return x;
        case UnitKind::Residual: {
            const Matrix* branch = &batch;
            if (!u.residual_from.empty()) {
                for (std::size_t i = 0; i < spec.units.size(); ++i) {
                    if (spec.units[i].id == u.residual_from) {
                        branch = &outputs[i];
                        break;
                    }
                }
            }
            if (branch->cols() != x.cols()) unit_shape_error(u, x.cols(), branch->cols());
            return x + *branch;
        }
    }
    throw Error("unreachable unit kind");
}

}  // namespace

ForwardTrace forward_trace(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch) {
    if (batch.cols() != spec.input_dim) {
        std::ostringstream msg;
        msg << "forward: batch width " << batch.cols() << " does not match input_dim "
            << spec.input_dim;
        throw ShapeError(msg.str());
    }
    ForwardTrace trace;
    trace.unit_inputs.reserve(spec.units.size());
    trace.unit_outputs.reserve(spec.units.size());
    Matrix cur = batch;
    for (const auto& u : spec.units) {
        trace.unit_inputs.push_back(cur);
        cur = eval_unit(u, cur, ckpt, trace.unit_outputs, batch, spec);
        trace.unit_outputs.push_back(cur);
    }
    trace.final_features = cur;
    return trace;
}

Matrix forward(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch) {
    return forward_trace(spec, ckpt, batch).final_features;
}

Matrix forward_logits(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch,
                      const std::string& head_id) {
    const Unit* head = spec.find_head(head_id);
    if (head == nullptr) throw ArgumentError("unknown head '" + head_id + "'");
    return forward(spec, ckpt, batch) * ckpt.params.at(head_id);
}

LayerStats collect_stats(const NetworkSpec& spec, const Checkpoint& pretrained,
                         const TaskVector& tv, const ExemplarSet& exemplars,
                         FeatureTrace* trace) {
    if (exemplars.features.rows() < 1) throw ArgumentError("collect_stats: empty exemplar set");
    // Features come from each expert's own forward pass, not a merged model.
    const Checkpoint expert = apply(pretrained, tv, 1.0);

    LayerStats stats;
    stats.task_id = exemplars.task_id;
    stats.spec_hash = pretrained.spec_hash;
    stats.spec = spec;
    stats.n_samples = exemplars.features.rows();

    const auto dims = spec.input_dims();
    for (std::size_t i = 0; i < spec.units.size(); ++i) {
        const Unit& u = spec.units[i];
        if (!is_mergeable(u.kind)) continue;
        auto& us = stats.units[u.id];
        us.kind = u.kind;
        if (u.kind == UnitKind::MatMul) {
            us.gram = Matrix::Zero(dims[i], dims[i]);
        } else if (u.kind == UnitKind::Scale) {
            us.sq_sums = Vector::Zero(dims[i]);
        }
    }
    if (trace != nullptr) trace->task_id = exemplars.task_id;

    const Index n = exemplars.features.rows();
    for (Index start = 0; start < n; start += kStreamChunk) {
        const Index len = std::min(kStreamChunk, n - start);
        const Matrix chunk = exemplars.features.middleRows(start, len);
        const ForwardTrace ft = forward_trace(spec, expert, chunk);
        for (std::size_t i = 0; i < spec.units.size(); ++i) {
            const Unit& u = spec.units[i];
            if (!is_mergeable(u.kind)) continue;
            const Matrix& x = ft.unit_inputs[i];
            auto& us = stats.units[u.id];
            if (u.kind == UnitKind::MatMul) {
                us.gram.noalias() += x.transpose() * x;
            } else if (u.kind == UnitKind::Scale) {
                us.sq_sums += x.array().square().colwise().sum().matrix().transpose();
            }
            if (trace != nullptr) {
                Matrix& kept = trace->inputs[u.id];
                if (kept.size() == 0) {
                    kept = x;
                } else {
                    kept.conservativeResize(kept.rows() + x.rows(), Eigen::NoChange);
                    kept.bottomRows(x.rows()) = x;
                }
            }
        }
    }

    auto delta_of = [&](const Unit& u) -> Matrix {
        auto it = tv.deltas.find(u.id);
        if (it != tv.deltas.end()) return it->second;
        return Matrix::Zero(u.rows, u.cols);
    };
    for (const auto& u : spec.units) {
        if (!is_mergeable(u.kind)) continue;
        auto& us = stats.units[u.id];
        const Matrix delta = delta_of(u);
        switch (u.kind) {
            case UnitKind::MatMul:
                us.gram = 0.5 * (us.gram + us.gram.transpose());  // enforce exact symmetry
                us.gram_delta = us.gram * delta;
                break;
            case UnitKind::Scale:
                us.sq_sums_delta = us.sq_sums.array() * delta.row(0).transpose().array();
                break;
            case UnitKind::Bias:
                us.bias_delta = delta.row(0).transpose();
                break;
            default:
                break;
        }
    }
    return stats;
}

PooledStats merge_stats(const std::vector<LayerStats>& stats) {
    if (stats.empty()) throw ArgumentError("merge_stats: empty stats list");
    for (const auto& s : stats) {
        if (s.spec_hash != stats.front().spec_hash) {
            throw SpecMismatchError("merge_stats: stats were collected over different specs");
        }
    }
    PooledStats pooled;
    pooled.spec_hash = stats.front().spec_hash;
    pooled.spec = stats.front().spec;
    for (const auto& s : stats) {
        pooled.n_samples += s.n_samples;
        for (const auto& [id, us] : s.units) {
            auto& pu = pooled.units[id];
            pu.kind = us.kind;
            switch (us.kind) {
                case UnitKind::MatMul:
                    if (pu.gram.size() == 0) {
                        pu.gram = us.gram;
                        pu.gram_delta = us.gram_delta;
                    } else {
                        pu.gram += us.gram;
                        pu.gram_delta += us.gram_delta;
                    }
                    break;
                case UnitKind::Scale:
                    if (pu.sq_sums.size() == 0) {
                        pu.sq_sums = us.sq_sums;
                        pu.sq_sums_delta = us.sq_sums_delta;
                    } else {
                        pu.sq_sums += us.sq_sums;
                        pu.sq_sums_delta += us.sq_sums_delta;
                    }
                    break;
                case UnitKind::Bias:
                    pu.bias_deltas.push_back(us.bias_delta);
                    pu.bias_counts.push_back(s.n_samples);
                    break;
                default:
                    break;
            }
        }
    }
    return pooled;
}

}  // namespace lotmerge
