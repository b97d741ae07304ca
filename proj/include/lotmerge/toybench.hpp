#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lotmerge/capture.hpp"
#include "lotmerge/losses.hpp"
#include "lotmerge/netspec.hpp"

namespace lotmerge {

/// Deterministic generator: mt19937_64 plus explicit uniform / Box-Muller
/// mappings, so sequences do not depend on the standard library's
/// distribution implementations.
struct Rng {
    explicit Rng(std::uint64_t seed) : engine(seed) {}

    double uniform();                    // [0, 1)
    double uniform(double a, double b);  // [a, b)
    double gaussian();                   // standard normal
    std::uint32_t uniform_int(std::uint32_t n);  // [0, n)

    std::mt19937_64 engine;
};

enum class TaskGenerator { GaussianClusters, RotatedSharedClusters, DisjointSubspace };

TaskGenerator generator_from_string(const std::string& s);
const char* to_string(TaskGenerator g);

struct SyntheticTaskSpec {
    std::string task_id;
    std::uint64_t seed = 0;
    int input_dim = 8;
    int num_classes = 4;
    int n_train = 256;
    int n_exemplar = 64;
    int n_test = 256;
    TaskGenerator generator = TaskGenerator::GaussianClusters;
};

struct TaskData {
    ExemplarSet train;
    ExemplarSet exemplars;
    ExemplarSet test;
};

/// Deterministic synthetic tasks; exemplar and test sets are disjoint draws.
/// DisjointSubspace assigns task i the i-th of |specs| coordinate blocks.
std::vector<TaskData> generate_tasks(const std::vector<SyntheticTaskSpec>& specs);

struct TrainConfig {
    int steps = 500;
    double learning_rate = 0.05;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

/// Default desk-scale trunk: MatMul(d x h), Bias, ReLU, Normalize, Scale,
/// Bias, MatMul(h x h), Residual (from the ReLU), ReLU, plus one frozen head
/// per task named "head_<task_id>".
NetworkSpec make_toy_spec(Index input_dim, Index hidden_dim,
                          const std::vector<std::string>& task_ids, Index num_classes);

/// Random initial parameters: scaled-gaussian weights and heads, unit scales,
/// zero biases.
Checkpoint init_checkpoint(const NetworkSpec& spec, Rng& rng);

struct TrainResult {
    Checkpoint pretrained;
    std::vector<Checkpoint> experts;
};

/// Brief SGD pre-training on the pooled tasks, then an independent fine-tune
/// per task against its frozen head (cross-entropy). Throws NumericalError
/// with the step index if the loss diverges.
TrainResult pretrain_and_finetune(const NetworkSpec& spec, const std::vector<TaskData>& tasks,
                                  const TrainConfig& cfg);

/// Per-unit parameter gradients of the mean loss on a labeled batch.
std::map<std::string, Matrix> analytic_gradients(const NetworkSpec& spec, const Checkpoint& ckpt,
                                                 const Matrix& batch,
                                                 const std::vector<std::uint32_t>& labels,
                                                 const std::string& head_id, LossKind loss);

double batch_loss_of(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch,
                     const std::vector<std::uint32_t>& labels, const std::string& head_id,
                     LossKind loss);

/// Classification accuracy; argmax ties resolve to the lowest class index.
double evaluate(const NetworkSpec& spec, const Checkpoint& ckpt, const ExemplarSet& test,
                const std::string& head_id);

}  // namespace lotmerge
