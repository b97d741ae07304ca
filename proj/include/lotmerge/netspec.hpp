#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lotmerge/linalg.hpp"

namespace lotmerge {

/// Minimal computational units. MatMul / Scale / Bias carry mergeable
/// parameters; Frozen carries parameters excluded from merging (it evaluates
/// as a matrix multiplication, e.g. a per-task classification head);
/// Normalize / Activation / Residual are parameter-free.
enum class UnitKind { MatMul, Scale, Bias, Normalize, Activation, Residual, Frozen };

enum class ActivationTag { Relu, Gelu, Identity };

bool is_parameterized(UnitKind k);
bool is_mergeable(UnitKind k);
const char* to_string(UnitKind k);
const char* to_string(ActivationTag t);
UnitKind unit_kind_from_string(const std::string& s);
ActivationTag activation_from_string(const std::string& s);

struct Unit {
    std::string id;
    UnitKind kind = UnitKind::Activation;
    // Parameter shape. MatMul/Frozen: d_in x d_out. Scale/Bias: 1 x d.
    // Parameter-free kinds: 0 x 0.
    Index rows = 0;
    Index cols = 0;
    ActivationTag activation = ActivationTag::Identity;
    // Residual only: id of the unit whose output is added ("" = network input).
    std::string residual_from;

    bool has_params() const { return is_parameterized(kind); }
};

/// Ordered computation graph. `units` form the trunk evaluated front to back;
/// `heads` are Frozen linear maps applied to the trunk output, selected by id
/// at evaluation time (they never take part in the trunk flow).
struct NetworkSpec {
    Index input_dim = 0;
    std::vector<Unit> units;
    std::vector<Unit> heads;

    Index output_dim() const;

    /// Feature dimension entering each trunk unit, index-aligned with `units`.
    std::vector<Index> input_dims() const;

    /// Throws ArgumentError unless unit shapes compose, ids are unique and
    /// residual references point at an earlier unit of matching width.
    void validate() const;

    const Unit* find_unit(const std::string& id) const;
    const Unit* find_head(const std::string& id) const;
};

/// Named parameter tensors for one network. Scale/Bias entries are 1 x d.
struct Checkpoint {
    NetworkSpec spec;
    std::string spec_hash;
    std::map<std::string, Matrix> params;
};

/// Per-unit parameter deltas T_k = W_k - W_pre over the mergeable units.
/// Frozen units carry no delta (treated as zero).
struct TaskVector {
    NetworkSpec spec;
    std::string spec_hash;
    std::map<std::string, Matrix> deltas;
};

/// Validating constructor: every parameterized unit must have exactly one
/// finite parameter entry of matching shape.
Checkpoint make_checkpoint(NetworkSpec spec, std::map<std::string, Matrix> params);

/// Validating constructor for task vectors; deltas cover the mergeable units.
TaskVector make_task_vector(NetworkSpec spec, std::map<std::string, Matrix> deltas);

TaskVector task_vector(const Checkpoint& expert, const Checkpoint& pretrained);

/// W_pre + lambda * T per mergeable unit; Frozen units copied unchanged.
Checkpoint apply(const Checkpoint& pretrained, const TaskVector& tv, double lambda);

/// Element-wise lambda * sum of the task vectors.
TaskVector scale_sum(const std::vector<TaskVector>& tvs, double lambda);

/// All-zero task vector over the spec's mergeable units.
TaskVector zero_task_vector(const NetworkSpec& spec);

}  // namespace lotmerge
