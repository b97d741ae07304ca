// lotmerge: merge fine-tuned experts into one network and analyze the result.
//
// Subcommands: capture, merge, drift, bound, toybench. Exit codes: 0 success,
// 2 usage error, 3 input format error, 4 numerical failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>

#include "lotmerge/analysis.hpp"
#include "lotmerge/baselines.hpp"
#include "lotmerge/io.hpp"
#include "lotmerge/merge.hpp"
#include "lotmerge/toybench.hpp"

namespace fs = std::filesystem;
using namespace lotmerge;

namespace {

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        const fs::path p(out_path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        write_text_file(p, text);
    }
}

struct CaptureArgs {
    std::string model, task_vector, exemplars, out;
};

int run_capture(const CaptureArgs& args) {
    const Checkpoint model = load_checkpoint(args.model);
    const TaskVector tv = load_task_vector(args.task_vector);
    const ExemplarSet ex = load_exemplars(args.exemplars);
    const LayerStats stats = collect_stats(model.spec, model, tv, ex);
    save_layer_stats(stats, args.out);
    return 0;
}

struct MergeArgs {
    std::string method = "lot";
    std::string pretrained;
    std::vector<std::string> task_vectors;
    std::vector<std::string> stats;
    double lambda = 1.0;
    double pinv_tol = 1e-12;
    std::string out;
    std::string report;
};

int run_merge(const MergeArgs& args) {
    const Checkpoint pretrained = load_checkpoint(args.pretrained);
    std::vector<TaskVector> tvs;
    for (const auto& p : args.task_vectors) tvs.push_back(load_task_vector(p));
    if (tvs.empty()) throw ArgumentError("merge: at least one --task-vector is required");

    MergeConfig cfg;
    cfg.lambda = args.lambda;
    cfg.pinv_rel_tol = args.pinv_tol;

    std::vector<LayerStats> per_task;
    if (args.method == "lot" || args.method == "regmean") {
        if (args.stats.size() != tvs.size()) {
            throw ArgumentError("merge: --method " + args.method +
                                " needs one --stats per --task-vector");
        }
        for (const auto& p : args.stats) per_task.push_back(load_layer_stats(p));
    }

    Checkpoint merged = pretrained;
    nlohmann::json report;
    if (args.method == "lot") {
        auto [ckpt, outcome] = lot_merge_from_stats(pretrained, tvs, per_task, cfg);
        merged = std::move(ckpt);
        report = outcome_report(outcome, "lot");
        report["lambda"] = cfg.lambda;
    } else if (args.method == "ta") {
        merged = task_arithmetic(pretrained, tvs, cfg.lambda);
        report = {{"method", "ta"}, {"lambda", cfg.lambda}, {"num_tasks", tvs.size()}};
    } else if (args.method == "avg") {
        std::vector<Checkpoint> experts;
        for (const auto& tv : tvs) experts.push_back(apply(pretrained, tv, 1.0));
        merged = weight_average(experts);
        report = {{"method", "avg"}, {"num_tasks", tvs.size()}};
    } else if (args.method == "regmean") {
        merged = regmean_merge(pretrained, tvs, per_task, cfg);
        report = {{"method", "regmean"},
                  {"pinv_rel_tol", cfg.pinv_rel_tol},
                  {"num_tasks", tvs.size()}};
    } else {
        throw ArgumentError("merge: unknown --method '" + args.method + "'");
    }
    save_checkpoint(merged, args.out);
    emit(canonical_dump(report), args.report);
    return 0;
}

struct DriftArgs {
    std::string pretrained, merged_tv, expert_tv, exemplars;
    std::string format = "json";
    std::string out;
};

int run_drift(const DriftArgs& args) {
    const Checkpoint pretrained = load_checkpoint(args.pretrained);
    const TaskVector merged = load_task_vector(args.merged_tv);
    const TaskVector expert = load_task_vector(args.expert_tv);
    const ExemplarSet ex = load_exemplars(args.exemplars);
    const DriftReport report = measure_drift(pretrained.spec, pretrained, merged, expert, ex);
    emit(args.format == "csv" ? drift_report_csv(report)
                              : canonical_dump(drift_report_json(report)),
         args.out);
    return 0;
}

struct BoundArgs {
    std::string pretrained, merged_tv;
    std::vector<std::string> expert_tvs, exemplars, evals, heads;
    std::string loss = "ce";
    std::string format = "json";
    std::string out;
};

int run_bound(const BoundArgs& args) {
    const Checkpoint pretrained = load_checkpoint(args.pretrained);
    const TaskVector merged = load_task_vector(args.merged_tv);
    const std::size_t n = args.expert_tvs.size();
    if (args.exemplars.size() != n || args.evals.size() != n || args.heads.size() != n || n == 0) {
        throw ArgumentError(
            "bound: --expert-tv, --exemplars, --eval and --head must be given once per task");
    }
    const LossKind loss = loss_from_string(args.loss);
    std::vector<TaskBound> bounds;
    for (std::size_t k = 0; k < n; ++k) {
        const TaskVector expert = load_task_vector(args.expert_tvs[k]);
        const ExemplarSet ex = load_exemplars(args.exemplars[k]);
        const ExemplarSet ev = load_exemplars(args.evals[k]);
        bounds.push_back(check_bound(pretrained.spec, pretrained, merged, expert, ex, ev,
                                     args.heads[k], loss));
    }
    emit(args.format == "csv" ? bound_report_csv(bounds)
                              : canonical_dump(bound_report_json(bounds)),
         args.out);
    return 0;
}

struct ToybenchArgs {
    std::uint64_t seed = 1;
    int num_tasks = 3;
    std::string generator = "gaussian_clusters";
    int input_dim = 8;
    int hidden_dim = 16;
    int classes = 8;
    int steps = 600;
    double learning_rate = 0.05;
    int batch_size = 32;
    int exemplars = 64;
    double lambda = 1.0;
    std::vector<std::string> methods = {"lot", "ta", "avg", "regmean"};
    std::string out;
    std::string report;
    std::string format = "json";
    std::string plot_data;
};

int run_toybench(const ToybenchArgs& args) {
    std::vector<SyntheticTaskSpec> specs;
    std::vector<std::string> ids;
    for (int t = 0; t < args.num_tasks; ++t) {
        SyntheticTaskSpec s;
        s.task_id = "t" + std::to_string(t);
        s.seed = args.seed * 100 + static_cast<std::uint64_t>(t);
        s.input_dim = args.input_dim;
        s.num_classes = args.classes;
        s.n_train = 256;
        s.n_exemplar = args.exemplars;
        s.n_test = 256;
        s.generator = generator_from_string(args.generator);
        specs.push_back(s);
        ids.push_back(s.task_id);
    }
    const auto tasks = generate_tasks(specs);
    const NetworkSpec spec =
        make_toy_spec(args.input_dim, args.hidden_dim, ids, args.classes);
    TrainConfig cfg;
    cfg.steps = args.steps;
    cfg.learning_rate = args.learning_rate;
    cfg.batch_size = args.batch_size;
    cfg.seed = args.seed;
    const TrainResult trained = pretrain_and_finetune(spec, tasks, cfg);

    std::vector<TaskVector> tvs;
    std::vector<ExemplarSet> exemplar_sets;
    std::vector<LayerStats> per_task;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        tvs.push_back(task_vector(trained.experts[k], trained.pretrained));
        exemplar_sets.push_back(tasks[k].exemplars);
        per_task.push_back(collect_stats(spec, trained.pretrained, tvs[k], exemplar_sets[k]));
    }

    auto mean_accuracy = [&](const Checkpoint& ckpt, nlohmann::json& per_task_out) {
        double mean = 0.0;
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            const double acc = evaluate(spec, ckpt, tasks[k].test, "head_" + ids[k]);
            per_task_out[ids[k]] = acc;
            mean += acc / static_cast<double>(tasks.size());
        }
        return mean;
    };

    MergeConfig mcfg;
    mcfg.lambda = args.lambda;

    nlohmann::json accuracy;
    nlohmann::json pretrained_acc;
    accuracy["pretrained"] = {{"mean", mean_accuracy(trained.pretrained, pretrained_acc)},
                              {"per_task", pretrained_acc}};
    nlohmann::json expert_acc;
    double expert_mean = 0.0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const double acc = evaluate(spec, trained.experts[k], tasks[k].test, "head_" + ids[k]);
        expert_acc[ids[k]] = acc;
        expert_mean += acc / static_cast<double>(tasks.size());
    }
    accuracy["expert"] = {{"mean", expert_mean}, {"per_task", expert_acc}};

    std::optional<MergeOutcome> lot_outcome;
    std::map<std::string, Checkpoint> merged_by_method;
    for (const auto& method : args.methods) {
        Checkpoint merged = trained.pretrained;
        if (method == "lot") {
            auto [ckpt, outcome] = lot_merge_from_stats(trained.pretrained, tvs, per_task, mcfg);
            merged = std::move(ckpt);
            lot_outcome = std::move(outcome);
        } else if (method == "ta") {
            merged = task_arithmetic(trained.pretrained, tvs, mcfg.lambda);
        } else if (method == "avg") {
            merged = weight_average(trained.experts);
        } else if (method == "regmean") {
            merged = regmean_merge(trained.pretrained, tvs, per_task, mcfg);
        } else {
            throw ArgumentError("toybench: unknown method '" + method + "'");
        }
        nlohmann::json per_task_acc;
        const double mean = mean_accuracy(merged, per_task_acc);
        accuracy[method] = {{"mean", mean}, {"per_task", per_task_acc}};
        merged_by_method[method] = std::move(merged);
    }

    nlohmann::json report = {
        {"seed", args.seed},
        {"config",
         {{"num_tasks", args.num_tasks},
          {"generator", args.generator},
          {"input_dim", args.input_dim},
          {"hidden_dim", args.hidden_dim},
          {"classes", args.classes},
          {"steps", args.steps},
          {"learning_rate", args.learning_rate},
          {"batch_size", args.batch_size},
          {"exemplars_per_task", args.exemplars},
          {"lambda", args.lambda}}},
        {"accuracy", accuracy},
    };
    if (lot_outcome) {
        report["lot_units"] = outcome_report(*lot_outcome, "lot")["units"];
        // cumulative drift of the task-arithmetic merge per trunk unit,
        // averaged over tasks: the depth profile of the merged model
        const TaskVector ta = scale_sum(tvs, mcfg.lambda);
        std::vector<double> rel_by_unit;
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            const std::vector<double> rel = cumulative_drift_profile(
                spec, trained.pretrained, ta, tvs[k], exemplar_sets[k]);
            if (rel_by_unit.empty()) rel_by_unit.assign(rel.size(), 0.0);
            for (std::size_t i = 0; i < rel.size(); ++i) {
                rel_by_unit[i] += rel[i] / static_cast<double>(tasks.size());
            }
        }
        nlohmann::json depth_profile = nlohmann::json::array();
        for (double rel : rel_by_unit) depth_profile.push_back(rel);
        // monotonicity judged at the matmul outputs, the layer boundaries
        bool non_decreasing = true;
        double prev = -1.0;
        for (std::size_t i = 0; i < rel_by_unit.size(); ++i) {
            if (spec.units[i].kind != UnitKind::MatMul) continue;
            if (prev >= 0.0 && rel_by_unit[i] < prev) non_decreasing = false;
            prev = rel_by_unit[i];
        }
        report["ta_drift_depth_profile"] = depth_profile;
        report["ta_drift_monotone_with_depth"] = non_decreasing;
    }

    if (!args.out.empty()) {
        const fs::path base(args.out);
        save_checkpoint(trained.pretrained, base / "pretrained");
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            save_checkpoint(trained.experts[k], base / ("expert_" + ids[k]));
            save_task_vector(tvs[k], base / ("task_vector_" + ids[k]));
            save_exemplars(tasks[k].exemplars, base / ("exemplars_" + ids[k]));
            save_exemplars(tasks[k].test, base / ("test_" + ids[k]));
            save_layer_stats(per_task[k], base / ("stats_" + ids[k]));
        }
        for (const auto& [method, ckpt] : merged_by_method) {
            save_checkpoint(ckpt, base / ("merged_" + method));
        }
        report["artifact_dir"] = args.out;
    }

    if (!args.plot_data.empty()) {
        // Scatter columns: per task and task-arithmetic lambda, the last-layer
        // cosine drift against the accuracy drop relative to the expert.
        std::ostringstream csv;
        csv << "task_id,lambda,last_layer_cosine,accuracy_drop\n";
        char buf[64];
        for (int li = 1; li <= 10; ++li) {
            const double lambda = 0.1 * li;
            const Checkpoint ta = task_arithmetic(trained.pretrained, tvs, lambda);
            const TaskVector ta_tv = scale_sum(tvs, lambda);
            for (std::size_t k = 0; k < tasks.size(); ++k) {
                const DriftReport d =
                    measure_drift(spec, trained.pretrained, ta_tv, tvs[k], exemplar_sets[k]);
                const double acc_expert =
                    evaluate(spec, trained.experts[k], tasks[k].test, "head_" + ids[k]);
                const double acc_ta = evaluate(spec, ta, tasks[k].test, "head_" + ids[k]);
                std::snprintf(buf, sizeof buf, "%.3g", lambda);
                csv << ids[k] << ',' << buf << ',';
                std::snprintf(buf, sizeof buf, "%.17g", d.last_layer_cosine);
                csv << buf << ',';
                std::snprintf(buf, sizeof buf, "%.17g", acc_expert - acc_ta);
                csv << buf << '\n';
            }
        }
        emit(csv.str(), args.plot_data);
    }

    if (args.format == "csv") {
        std::ostringstream csv;
        csv << "method,task_id,accuracy\n";
        char buf[40];
        for (const auto& [method, block] : accuracy.items()) {
            for (const auto& [task, acc] : block["per_task"].items()) {
                std::snprintf(buf, sizeof buf, "%.17g", acc.get<double>());
                csv << method << ',' << task << ',' << buf << '\n';
            }
        }
        emit(csv.str(), args.report);
    } else {
        emit(canonical_dump(report), args.report);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layer-wise optimal task vector merging toolkit"};
    app.require_subcommand(1);

    CaptureArgs capture_args;
    auto* capture = app.add_subcommand("capture", "collect per-unit feature statistics");
    capture->add_option("--model", capture_args.model, "pretrained checkpoint directory")
        ->required();
    capture->add_option("--task-vector", capture_args.task_vector, "task vector directory")
        ->required();
    capture->add_option("--exemplars", capture_args.exemplars, "exemplar directory")->required();
    capture->add_option("--out", capture_args.out, "output statistics directory")->required();

    MergeArgs merge_args;
    auto* merge = app.add_subcommand("merge", "merge experts into one checkpoint");
    merge->add_option("--method", merge_args.method, "lot | ta | avg | regmean")
        ->check(CLI::IsMember({"lot", "ta", "avg", "regmean"}));
    merge->add_option("--pretrained", merge_args.pretrained, "pretrained checkpoint directory")
        ->required();
    merge->add_option("--task-vector", merge_args.task_vectors, "task vector directory (repeat)")
        ->required();
    merge->add_option("--stats", merge_args.stats, "statistics directory (repeat, lot/regmean)");
    merge->add_option("--lambda", merge_args.lambda, "scaling factor applied to the merged vector");
    merge->add_option("--pinv-tol", merge_args.pinv_tol, "relative pseudoinverse truncation");
    merge->add_option("--out", merge_args.out, "merged checkpoint directory")->required();
    merge->add_option("--report", merge_args.report, "report path (stdout when omitted)");

    DriftArgs drift_args;
    auto* drift = app.add_subcommand("drift", "per-unit feature drift of a merged vector");
    drift->add_option("--pretrained", drift_args.pretrained)->required();
    drift->add_option("--merged-tv", drift_args.merged_tv)->required();
    drift->add_option("--expert-tv", drift_args.expert_tv)->required();
    drift->add_option("--exemplars", drift_args.exemplars)->required();
    drift->add_option("--format", drift_args.format)->check(CLI::IsMember({"json", "csv"}));
    drift->add_option("--out", drift_args.out, "report path (stdout when omitted)");

    BoundArgs bound_args;
    auto* bound = app.add_subcommand("bound", "verify the layer-wise conflict bound");
    bound->add_option("--pretrained", bound_args.pretrained)->required();
    bound->add_option("--merged-tv", bound_args.merged_tv)->required();
    bound->add_option("--expert-tv", bound_args.expert_tvs, "per-task expert vector (repeat)")
        ->required();
    bound->add_option("--exemplars", bound_args.exemplars, "per-task exemplars (repeat)")
        ->required();
    bound->add_option("--eval", bound_args.evals, "per-task labeled eval set (repeat)")
        ->required();
    bound->add_option("--head", bound_args.heads, "per-task frozen head id (repeat)")->required();
    bound->add_option("--loss", bound_args.loss, "ce | mse")
        ->check(CLI::IsMember({"ce", "mse", "cross_entropy_on_linear_head"}));
    bound->add_option("--format", bound_args.format)->check(CLI::IsMember({"json", "csv"}));
    bound->add_option("--out", bound_args.out, "report path (stdout when omitted)");

    ToybenchArgs toy_args;
    auto* toy = app.add_subcommand("toybench", "desk-scale end-to-end experiment");
    toy->add_option("--seed", toy_args.seed)->required();
    toy->add_option("--num-tasks", toy_args.num_tasks)->check(CLI::PositiveNumber);
    toy->add_option("--generator", toy_args.generator)
        ->check(CLI::IsMember(
            {"gaussian_clusters", "rotated_shared_clusters", "disjoint_subspace"}));
    toy->add_option("--input-dim", toy_args.input_dim)->check(CLI::PositiveNumber);
    toy->add_option("--hidden-dim", toy_args.hidden_dim)->check(CLI::PositiveNumber);
    toy->add_option("--classes", toy_args.classes)->check(CLI::PositiveNumber);
    toy->add_option("--steps", toy_args.steps)->check(CLI::NonNegativeNumber);
    toy->add_option("--learning-rate", toy_args.learning_rate)->check(CLI::PositiveNumber);
    toy->add_option("--batch-size", toy_args.batch_size)->check(CLI::PositiveNumber);
    toy->add_option("--exemplars", toy_args.exemplars, "exemplar budget per task")
        ->check(CLI::PositiveNumber);
    toy->add_option("--lambda", toy_args.lambda);
    toy->add_option("--methods", toy_args.methods, "merge methods to run")->delimiter(',');
    toy->add_option("--out", toy_args.out, "directory for generated checkpoints");
    toy->add_option("--report", toy_args.report, "report path (stdout when omitted)");
    toy->add_option("--format", toy_args.format)->check(CLI::IsMember({"json", "csv"}));
    toy->add_option("--plot-data", toy_args.plot_data,
                    "CSV path for the drift/accuracy scatter columns");

    try {
        app.parse(argc, argv);
        if (capture->parsed()) return run_capture(capture_args);
        if (merge->parsed()) return run_merge(merge_args);
        if (drift->parsed()) return run_drift(drift_args);
        if (bound->parsed()) return run_bound(bound_args);
        if (toy->parsed()) return run_toybench(toy_args);
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const SpecMismatchError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
