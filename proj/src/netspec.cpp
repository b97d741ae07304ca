#include "lotmerge/netspec.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "lotmerge/io.hpp"

namespace lotmerge {

bool is_parameterized(UnitKind k) {
    switch (k) {
        case UnitKind::MatMul:
        case UnitKind::Scale:
        case UnitKind::Bias:
        case UnitKind::Frozen:
            return true;
        default:
            return false;
    }
}

bool is_mergeable(UnitKind k) {
    return k == UnitKind::MatMul || k == UnitKind::Scale || k == UnitKind::Bias;
}

const char* to_string(UnitKind k) {
    switch (k) {
        case UnitKind::MatMul: return "matmul";
        case UnitKind::Scale: return "scale";
        case UnitKind::Bias: return "bias";
        case UnitKind::Normalize: return "normalize";
        case UnitKind::Activation: return "activation";
        case UnitKind::Residual: return "residual";
        case UnitKind::Frozen: return "frozen";
    }
    return "?";
}

const char* to_string(ActivationTag t) {
    switch (t) {
        case ActivationTag::Relu: return "relu";
        case ActivationTag::Gelu: return "gelu";
        case ActivationTag::Identity: return "identity";
    }
    return "?";
}

UnitKind unit_kind_from_string(const std::string& s) {
    if (s == "matmul") return UnitKind::MatMul;
    if (s == "scale") return UnitKind::Scale;
    if (s == "bias") return UnitKind::Bias;
    if (s == "normalize") return UnitKind::Normalize;
    if (s == "activation") return UnitKind::Activation;
    if (s == "residual") return UnitKind::Residual;
    if (s == "frozen") return UnitKind::Frozen;
    throw FormatError(FormatError::Code::MalformedManifest, "unknown unit kind: " + s);
}

ActivationTag activation_from_string(const std::string& s) {
    if (s == "relu") return ActivationTag::Relu;
    if (s == "gelu") return ActivationTag::Gelu;
    if (s == "identity") return ActivationTag::Identity;
    throw FormatError(FormatError::Code::MalformedManifest, "unknown activation tag: " + s);
}

namespace {

bool valid_id(const std::string& id) {
    if (id.empty()) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

}  // namespace

std::vector<Index> NetworkSpec::input_dims() const {
    std::vector<Index> dims;
    dims.reserve(units.size());
    Index cur = input_dim;
    for (const auto& u : units) {
        dims.push_back(cur);
        if (u.kind == UnitKind::MatMul || u.kind == UnitKind::Frozen) cur = u.cols;
    }
    return dims;
}

Index NetworkSpec::output_dim() const {
    Index cur = input_dim;
    for (const auto& u : units) {
        if (u.kind == UnitKind::MatMul || u.kind == UnitKind::Frozen) cur = u.cols;
    }
    return cur;
}

void NetworkSpec::validate() const {
    if (input_dim <= 0) throw ArgumentError("spec: input_dim must be positive");
    std::set<std::string> ids;
    // Width of each unit's output, by id, for residual reference checks.
    std::map<std::string, Index> out_width;
    Index cur = input_dim;
    for (const auto& u : units) {
        if (!valid_id(u.id)) throw ArgumentError("spec: invalid unit id '" + u.id + "'");
        if (!ids.insert(u.id).second) throw ArgumentError("spec: duplicate unit id '" + u.id + "'");
        switch (u.kind) {
            case UnitKind::MatMul:
            case UnitKind::Frozen:
                if (u.rows != cur) {
                    std::ostringstream msg;
                    msg << "spec: unit '" << u.id << "' expects input dim " << u.rows
                        << " but receives " << cur;
                    throw ArgumentError(msg.str());
                }
                if (u.cols <= 0) throw ArgumentError("spec: unit '" + u.id + "' has empty output");
                cur = u.cols;
                break;
            case UnitKind::Scale:
            case UnitKind::Bias:
                if (u.rows != 1 || u.cols != cur) {
                    std::ostringstream msg;
                    msg << "spec: unit '" << u.id << "' parameter must be 1x" << cur;
                    throw ArgumentError(msg.str());
                }
                break;
            case UnitKind::Normalize:
            case UnitKind::Activation:
                break;
            case UnitKind::Residual: {
                Index src = 0;
                if (u.residual_from.empty()) {
                    src = input_dim;
                } else {
                    auto it = out_width.find(u.residual_from);
                    if (it == out_width.end()) {
                        throw ArgumentError("spec: residual '" + u.id +
                                            "' references unknown or later unit '" +
                                            u.residual_from + "'");
                    }
                    src = it->second;
                }
                if (src != cur) {
                    std::ostringstream msg;
                    msg << "spec: residual '" << u.id << "' adds width " << src
                        << " onto width " << cur;
                    throw ArgumentError(msg.str());
                }
                break;
            }
        }
        out_width[u.id] = cur;
    }
    for (const auto& h : heads) {
        if (!valid_id(h.id)) throw ArgumentError("spec: invalid head id '" + h.id + "'");
        if (!ids.insert(h.id).second) throw ArgumentError("spec: duplicate unit id '" + h.id + "'");
        if (h.kind != UnitKind::Frozen) {
            throw ArgumentError("spec: head '" + h.id + "' must be a frozen unit");
        }
        if (h.rows != cur) {
            std::ostringstream msg;
            msg << "spec: head '" << h.id << "' expects input dim " << h.rows << " but trunk ends at "
                << cur;
            throw ArgumentError(msg.str());
        }
    }
}

const Unit* NetworkSpec::find_unit(const std::string& id) const {
    for (const auto& u : units)
        if (u.id == id) return &u;
    return nullptr;
}

const Unit* NetworkSpec::find_head(const std::string& id) const {
    for (const auto& h : heads)
        if (h.id == id) return &h;
    return nullptr;
}

namespace {

void check_param_shape(const Unit& u, const Matrix& m) {
    if (m.rows() != u.rows || m.cols() != u.cols) {
        std::ostringstream msg;
        msg << "unit '" << u.id << "': parameter is " << m.rows() << "x" << m.cols()
            << ", expected " << u.rows << "x" << u.cols;
        throw ShapeError(msg.str());
    }
}

void require_same_spec(const std::string& a, const std::string& b, const char* what) {
    if (a != b) throw SpecMismatchError(std::string(what) + ": spec hashes differ");
}

}  // namespace

Checkpoint make_checkpoint(NetworkSpec spec, std::map<std::string, Matrix> params) {
    spec.validate();
    Checkpoint ckpt;
    ckpt.spec_hash = spec_hash_of(spec);
    auto check = [&](const Unit& u) {
        if (!u.has_params()) return;
        auto it = params.find(u.id);
        if (it == params.end()) throw ArgumentError("checkpoint: missing parameters for '" + u.id + "'");
        check_param_shape(u, it->second);
        require_finite(it->second, "checkpoint parameter '" + u.id + "'");
    };
    for (const auto& u : spec.units) check(u);
    for (const auto& h : spec.heads) check(h);
    std::size_t expected = 0;
    for (const auto& u : spec.units) expected += u.has_params() ? 1 : 0;
    expected += spec.heads.size();
    if (params.size() != expected) {
        throw ArgumentError("checkpoint: parameter entries do not match the spec's units");
    }
    ckpt.spec = std::move(spec);
    ckpt.params = std::move(params);
    return ckpt;
}

TaskVector make_task_vector(NetworkSpec spec, std::map<std::string, Matrix> deltas) {
    spec.validate();
    TaskVector tv;
    tv.spec_hash = spec_hash_of(spec);
    for (const auto& [id, m] : deltas) {
        const Unit* u = spec.find_unit(id);
        if (u == nullptr || !is_mergeable(u->kind)) {
            throw ArgumentError("task vector: '" + id + "' is not a mergeable unit");
        }
        check_param_shape(*u, m);
        require_finite(m, "task vector delta '" + id + "'");
    }
    tv.spec = std::move(spec);
    tv.deltas = std::move(deltas);
    return tv;
}

TaskVector task_vector(const Checkpoint& expert, const Checkpoint& pretrained) {
    require_same_spec(expert.spec_hash, pretrained.spec_hash, "task_vector");
    TaskVector tv;
    tv.spec = pretrained.spec;
    tv.spec_hash = pretrained.spec_hash;
    for (const auto& u : tv.spec.units) {
        if (!is_mergeable(u.kind)) continue;
        tv.deltas[u.id] = expert.params.at(u.id) - pretrained.params.at(u.id);
    }
    return tv;
}

Checkpoint apply(const Checkpoint& pretrained, const TaskVector& tv, double lambda) {
    require_same_spec(pretrained.spec_hash, tv.spec_hash, "apply");
    Checkpoint out = pretrained;
    for (const auto& u : out.spec.units) {
        if (!is_mergeable(u.kind)) continue;  // Frozen copied unchanged
        auto it = tv.deltas.find(u.id);
        if (it == tv.deltas.end()) continue;  // absent delta == zero
        out.params[u.id] += lambda * it->second;
    }
    return out;
}

TaskVector scale_sum(const std::vector<TaskVector>& tvs, double lambda) {
    if (tvs.empty()) throw ArgumentError("scale_sum: empty task vector list");
    for (const auto& tv : tvs) require_same_spec(tvs.front().spec_hash, tv.spec_hash, "scale_sum");
    TaskVector out = tvs.front();
    for (std::size_t k = 1; k < tvs.size(); ++k) {
        for (auto& [id, m] : out.deltas) m += tvs[k].deltas.at(id);
    }
    for (auto& [id, m] : out.deltas) m *= lambda;
    return out;
}

TaskVector zero_task_vector(const NetworkSpec& spec) {
    std::map<std::string, Matrix> deltas;
    for (const auto& u : spec.units) {
        if (is_mergeable(u.kind)) deltas[u.id] = Matrix::Zero(u.rows, u.cols);
    }
    return make_task_vector(spec, std::move(deltas));
}

}  // namespace lotmerge
