#include "lotmerge/toybench.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lotmerge/parallel.hpp"

namespace lotmerge {

double Rng::uniform() {
    return static_cast<double>(engine() >> 11) * 0x1p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double Rng::gaussian() {
    // Box-Muller on explicit uniforms; u1 stays strictly positive.
    const double u1 = static_cast<double>((engine() >> 11) + 1) * 0x1p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t Rng::uniform_int(std::uint32_t n) {
    return n == 0 ? 0 : static_cast<std::uint32_t>(engine() % n);
}

TaskGenerator generator_from_string(const std::string& s) {
    if (s == "gaussian_clusters") return TaskGenerator::GaussianClusters;
    if (s == "rotated_shared_clusters") return TaskGenerator::RotatedSharedClusters;
    if (s == "disjoint_subspace") return TaskGenerator::DisjointSubspace;
    throw ArgumentError("unknown task generator: " + s);
}

const char* to_string(TaskGenerator g) {
    switch (g) {
        case TaskGenerator::GaussianClusters: return "gaussian_clusters";
        case TaskGenerator::RotatedSharedClusters: return "rotated_shared_clusters";
        case TaskGenerator::DisjointSubspace: return "disjoint_subspace";
    }
    return "?";
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    return x;
}

Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double scale) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = scale * rng.gaussian();
    return m;
}

Matrix random_rotation(Rng& rng, Index d) {
    const Matrix g = gaussian_matrix(rng, d, d, 1.0);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    // Fix signs so the factorization is unique-ish and proper.
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index c = 0; c < d; ++c) {
        if (r(c, c) < 0) q.col(c) = -q.col(c);
    }
    return q;
}

Matrix cluster_means(Rng& rng, Index num_classes, Index dim, double spread) {
    return gaussian_matrix(rng, num_classes, dim, spread);
}

ExemplarSet sample_clusters(Rng& rng, const Matrix& means, Index n, double noise,
                            const std::string& task_id, int num_classes) {
    ExemplarSet out;
    out.task_id = task_id;
    out.num_classes = num_classes;
    out.features = Matrix(n, means.cols());
    std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const auto c = static_cast<Index>(i % means.rows());
        labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(c);
        for (Index j = 0; j < means.cols(); ++j) {
            out.features(i, j) = means(c, j) + noise * rng.gaussian();
        }
    }
    out.labels = std::move(labels);
    return out;
}

}  // namespace

std::vector<TaskData> generate_tasks(const std::vector<SyntheticTaskSpec>& specs) {
    if (specs.empty()) throw ArgumentError("generate_tasks: empty spec list");
    const auto num_tasks = static_cast<Index>(specs.size());

    std::vector<TaskData> out(specs.size());
    for (std::size_t t = 0; t < specs.size(); ++t) {
        const SyntheticTaskSpec& ts = specs[t];
        if (ts.input_dim < 1 || ts.num_classes < 1 || ts.n_train < 1 || ts.n_exemplar < 1 ||
            ts.n_test < 1) {
            throw ArgumentError("generate_tasks: counts must be positive");
        }
        const Index d = ts.input_dim;
        Rng rng(mix_seed(ts.seed, 0));
        Matrix means;
        // Clusters overlap on purpose: a pooled model juggling several tasks
        // should stay clearly below each expert's ceiling.
        double noise = 0.75;
        switch (ts.generator) {
            case TaskGenerator::GaussianClusters:
                means = cluster_means(rng, ts.num_classes, d, 1.6);
                break;
            case TaskGenerator::RotatedSharedClusters: {
                // All tasks share the cluster layout of the first spec's seed;
                // each task sees it through its own rotation.
                Rng base_rng(mix_seed(specs.front().seed, 0x517ed));
                const Matrix base = cluster_means(base_rng, ts.num_classes, d, 1.6);
                Rng rot_rng(mix_seed(ts.seed, 0x707a7eULL));
                means = base * random_rotation(rot_rng, d);
                break;
            }
            case TaskGenerator::DisjointSubspace: {
                // Task t only populates its own coordinate block.
                const Index block = d / num_tasks;
                if (block < 1) {
                    throw ArgumentError("generate_tasks: input_dim too small for disjoint blocks");
                }
                const Index offset = static_cast<Index>(t) * block;
                means = Matrix::Zero(ts.num_classes, d);
                means.middleCols(offset, block) = cluster_means(rng, ts.num_classes, block, 1.6);
                break;
            }
        }
        TaskData data;
        data.train = sample_clusters(rng, means, ts.n_train, noise, ts.task_id, ts.num_classes);
        data.exemplars =
            sample_clusters(rng, means, ts.n_exemplar, noise, ts.task_id, ts.num_classes);
        data.test = sample_clusters(rng, means, ts.n_test, noise, ts.task_id, ts.num_classes);
        if (ts.generator == TaskGenerator::DisjointSubspace) {
            // Keep the off-block noise at exactly zero so the feature spans
            // stay orthogonal across tasks.
            const Index block = d / num_tasks;
            const Index offset = static_cast<Index>(t) * block;
            for (ExemplarSet* set : {&data.train, &data.exemplars, &data.test}) {
                Matrix masked = Matrix::Zero(set->features.rows(), d);
                masked.middleCols(offset, block) = set->features.middleCols(offset, block);
                set->features = std::move(masked);
            }
        }
        out[t] = std::move(data);
    }
    return out;
}

NetworkSpec make_toy_spec(Index input_dim, Index hidden_dim,
                          const std::vector<std::string>& task_ids, Index num_classes) {
    NetworkSpec spec;
    spec.input_dim = input_dim;
    spec.units = {
        {"fc1", UnitKind::MatMul, input_dim, hidden_dim},
        {"fc1_bias", UnitKind::Bias, 1, hidden_dim},
        {"act1", UnitKind::Activation, 0, 0, ActivationTag::Relu},
        {"norm1", UnitKind::Normalize, 0, 0},
        {"norm1_scale", UnitKind::Scale, 1, hidden_dim},
        {"norm1_bias", UnitKind::Bias, 1, hidden_dim},
        {"fc2", UnitKind::MatMul, hidden_dim, hidden_dim},
        {"res1", UnitKind::Residual, 0, 0, ActivationTag::Identity, "act1"},
        {"act2", UnitKind::Activation, 0, 0, ActivationTag::Relu},
    };
    for (const auto& id : task_ids) {
        spec.heads.push_back({"head_" + id, UnitKind::Frozen, hidden_dim, num_classes});
    }
    spec.validate();
    return spec;
}

Checkpoint init_checkpoint(const NetworkSpec& spec, Rng& rng) {
    std::map<std::string, Matrix> params;
    auto init_unit = [&](const Unit& u) {
        switch (u.kind) {
            case UnitKind::MatMul:
            case UnitKind::Frozen:
                params[u.id] =
                    gaussian_matrix(rng, u.rows, u.cols, 1.0 / std::sqrt(double(u.rows)));
                break;
            case UnitKind::Scale:
                params[u.id] = Matrix::Ones(1, u.cols);
                break;
            case UnitKind::Bias:
                params[u.id] = Matrix::Zero(1, u.cols);
                break;
            default:
                break;
        }
    };
    for (const auto& u : spec.units) init_unit(u);
    for (const auto& h : spec.heads) init_unit(h);
    return make_checkpoint(spec, std::move(params));
}

namespace {

Matrix gelu_grad(const Matrix& x) {
    return x.unaryExpr([](double v) {
        const double phi = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        return cdf + v * phi;
    });
}

Matrix normalize_backward(const Matrix& x, const Matrix& g) {
    constexpr double eps = 1e-5;
    Matrix dx(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().sum() / d;
        const double s = std::sqrt(var + eps);
        const Eigen::RowVectorXd y = (x.row(r).array() - mean) / s;
        const double g_mean = g.row(r).mean();
        const double gy_mean = (g.row(r).array() * y.array()).mean();
        dx.row(r) = (g.row(r).array() - g_mean - y.array() * gy_mean) / s;
    }
    return dx;
}

}  // namespace

std::map<std::string, Matrix> analytic_gradients(const NetworkSpec& spec, const Checkpoint& ckpt,
                                                 const Matrix& batch,
                                                 const std::vector<std::uint32_t>& labels,
                                                 const std::string& head_id, LossKind loss) {
    const Unit* head = spec.find_head(head_id);
    if (head == nullptr) throw ArgumentError("analytic_gradients: unknown head '" + head_id + "'");
    const ForwardTrace trace = forward_trace(spec, ckpt, batch);
    const Matrix& head_w = ckpt.params.at(head_id);
    const Matrix logits = trace.final_features * head_w;

    const double inv_n = 1.0 / static_cast<double>(batch.rows());
    Matrix g_logits(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        g_logits.row(i) =
            inv_n * sample_loss_grad(loss, logits.row(i), labels[static_cast<std::size_t>(i)]);
    }

    std::map<std::string, Matrix> grads;
    grads[head_id] = trace.final_features.transpose() * g_logits;

    const std::size_t n_units = spec.units.size();
    std::vector<Matrix> out_grad(n_units);
    if (n_units == 0) return grads;
    out_grad[n_units - 1] = g_logits * head_w.transpose();

    for (std::size_t l = n_units; l-- > 0;) {
        const Unit& u = spec.units[l];
        const Matrix& x = trace.unit_inputs[l];
        const Matrix& g = out_grad[l];
        Matrix dx;
        switch (u.kind) {
            case UnitKind::MatMul:
            case UnitKind::Frozen: {
                const Matrix& w = ckpt.params.at(u.id);
                grads[u.id] = x.transpose() * g;
                dx = g * w.transpose();
                break;
            }
            case UnitKind::Scale: {
                const Matrix& w = ckpt.params.at(u.id);
                grads[u.id] = (x.array() * g.array()).colwise().sum().matrix();
                dx = g.array().rowwise() * w.row(0).array();
                break;
            }
            case UnitKind::Bias:
                grads[u.id] = g.colwise().sum();
                dx = g;
                break;
            case UnitKind::Normalize:
                dx = normalize_backward(x, g);
                break;
            case UnitKind::Activation:
                switch (u.activation) {
                    case ActivationTag::Relu:
                        dx = (x.array() > 0.0).cast<double>() * g.array();
                        break;
                    case ActivationTag::Gelu:
                        dx = gelu_grad(x).array() * g.array();
                        break;
                    case ActivationTag::Identity:
                        dx = g;
                        break;
                }
                break;
            case UnitKind::Residual: {
                dx = g;
                if (!u.residual_from.empty()) {
                    for (std::size_t j = 0; j < l; ++j) {
                        if (spec.units[j].id == u.residual_from) {
                            if (out_grad[j].size() == 0) {
                                out_grad[j] = g;
                            } else {
                                out_grad[j] += g;
                            }
                            break;
                        }
                    }
                }
                break;
            }
        }
        if (l > 0) {
            if (out_grad[l - 1].size() == 0) {
                out_grad[l - 1] = dx;
            } else {
                out_grad[l - 1] += dx;
            }
        }
    }
    return grads;
}

double batch_loss_of(const NetworkSpec& spec, const Checkpoint& ckpt, const Matrix& batch,
                     const std::vector<std::uint32_t>& labels, const std::string& head_id,
                     LossKind loss) {
    return batch_loss(loss, forward_logits(spec, ckpt, batch, head_id), labels);
}

namespace {

void sgd_steps(const NetworkSpec& spec, Checkpoint& ckpt, const std::vector<TaskData>& tasks,
               const std::vector<std::size_t>& task_choices, const TrainConfig& cfg, Rng& rng,
               const char* phase) {
    for (std::size_t step = 0; step < task_choices.size(); ++step) {
        const TaskData& task = tasks[task_choices[step]];
        const ExemplarSet& train = task.train;
        const auto n = static_cast<std::uint32_t>(train.features.rows());
        const auto bs = static_cast<Index>(std::min<std::uint32_t>(
            n, static_cast<std::uint32_t>(std::max(1, cfg.batch_size))));
        Matrix batch(bs, train.features.cols());
        std::vector<std::uint32_t> labels(static_cast<std::size_t>(bs));
        for (Index i = 0; i < bs; ++i) {
            const std::uint32_t pick = rng.uniform_int(n);
            batch.row(i) = train.features.row(pick);
            labels[static_cast<std::size_t>(i)] = (*train.labels)[pick];
        }
        const std::string head_id = "head_" + train.task_id;
        const auto grads = analytic_gradients(spec, ckpt, batch, labels, head_id,
                                              LossKind::CrossEntropyOnLinearHead);
        const double loss = batch_loss_of(spec, ckpt, batch, labels, head_id,
                                          LossKind::CrossEntropyOnLinearHead);
        if (!std::isfinite(loss)) {
            throw NumericalError(std::string(phase) + " diverged at step " +
                                 std::to_string(step));
        }
        for (const auto& u : spec.units) {
            if (!is_mergeable(u.kind)) continue;
            ckpt.params[u.id] -= cfg.learning_rate * grads.at(u.id);
        }
    }
}

}  // namespace

TrainResult pretrain_and_finetune(const NetworkSpec& spec, const std::vector<TaskData>& tasks,
                                  const TrainConfig& cfg) {
    if (tasks.empty()) throw ArgumentError("pretrain_and_finetune: no tasks");
    for (const auto& t : tasks) {
        if (!t.train.labels) throw ArgumentError("pretrain_and_finetune: train set lacks labels");
        if (spec.find_head("head_" + t.train.task_id) == nullptr) {
            throw ArgumentError("pretrain_and_finetune: spec lacks head for task '" +
                                t.train.task_id + "'");
        }
    }
    Rng init_rng(mix_seed(cfg.seed, 0));
    TrainResult result{init_checkpoint(spec, init_rng), {}};

    // Brief pooled pre-training: every step draws a task, then a minibatch.
    const int pre_steps = cfg.steps / 8;
    Rng pre_rng(mix_seed(cfg.seed, 1));
    std::vector<std::size_t> choices(static_cast<std::size_t>(std::max(0, pre_steps)));
    for (auto& c : choices) c = pre_rng.uniform_int(static_cast<std::uint32_t>(tasks.size()));
    sgd_steps(spec, result.pretrained, tasks, choices, cfg, pre_rng, "pre-training");

    result.experts.assign(tasks.size(), result.pretrained);
    parallel_for(tasks.size(), [&](std::size_t k) {
        Rng task_rng(mix_seed(cfg.seed, 2 + k));
        std::vector<std::size_t> own(static_cast<std::size_t>(std::max(0, cfg.steps)), k);
        sgd_steps(spec, result.experts[k], tasks, own, cfg, task_rng, "fine-tuning");
    });
    return result;
}

double evaluate(const NetworkSpec& spec, const Checkpoint& ckpt, const ExemplarSet& test,
                const std::string& head_id) {
    if (!test.labels) throw ArgumentError("evaluate: test set lacks labels");
    const Matrix logits = forward_logits(spec, ckpt, test.features, head_id);
    long correct = 0;
    for (Index i = 0; i < logits.rows(); ++i) {
        Index best = 0;
        for (Index c = 1; c < logits.cols(); ++c) {
            if (logits(i, c) > logits(i, best)) best = c;  // ties keep the lowest index
        }
        if (static_cast<std::uint32_t>(best) == (*test.labels)[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace lotmerge
