// cmm - merge sequential feed-forward networks by layer-wise closed-form
// regression, with chained activation-statistics updates and a Gaussian
// Frechet-distance diagnostic for the induced covariate shift.

#include "cmm/errors.hpp"
#include "cmm/harness.hpp"
#include "cmm/io.hpp"
#include "cmm/mcs.hpp"
#include "cmm/merge.hpp"
#include "cmm/rng.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) {
            parts.push_back(item);
        }
    }
    return parts;
}

struct MergeFlags {
    double tikhonov = cmm::kDefaultLambdaRel;
    double rank_eps = cmm::kDefaultRankEps;
    bool normalize = true;
    std::size_t max_samples = 500;
    double weight_floor = 1e-6;

    void attach(CLI::App* cmd) {
        cmd->add_option("--tikhonov", tikhonov, "Relative Tikhonov regularization strength");
        cmd->add_option("--rank-eps", rank_eps, "Relative eigenvalue cutoff for rank deficiency");
        cmd->add_flag("--normalize,!--no-normalize", normalize,
                      "Cosine-normalize activations before Gram computation");
        cmd->add_option("--max-samples", max_samples, "Cap on samples used per task");
        cmd->add_option("--weight-floor", weight_floor,
                        "Relative floor for sensitivity weights");
    }

    cmm::MergeConfig to_config(cmm::MergeMethod method) const {
        cmm::MergeConfig cfg;
        cfg.method = method;
        cfg.lambda_rel = tikhonov;
        cfg.rank_eps = rank_eps;
        cfg.normalize = normalize;
        cfg.max_samples_per_task = max_samples;
        cfg.weight_floor_rel = weight_floor;
        return cfg;
    }
};

std::vector<cmm::TaskBundle> load_bundles(const std::vector<std::string>& model_dirs,
                                          const std::vector<std::string>& data_files) {
    std::vector<cmm::TaskBundle> bundles;
    bundles.reserve(model_dirs.size());
    for (std::size_t i = 0; i < model_dirs.size(); ++i) {
        cmm::SequentialModel model = cmm::io::load_checkpoint(model_dirs[i]);
        cmm::DenseMatrix samples = cmm::io::load_matrix(data_files[i]);
        std::string name = std::filesystem::path(model_dirs[i]).filename().string();
        if (name.empty()) {
            name = std::filesystem::path(model_dirs[i]).parent_path().filename().string();
        }
        if (name.empty()) {
            name = "task" + std::to_string(i);
        }
        bundles.emplace_back(std::move(model), std::move(samples), std::move(name));
    }
    return bundles;
}

cmm::SyntheticTask regen_task(std::uint64_t seed, std::size_t task_index, std::size_t dim,
                              std::size_t classes, std::size_t samples) {
    auto tasks = cmm::gen_tasks(seed, task_index + 1, dim, classes, samples);
    return std::move(tasks[task_index]);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"merge feed-forward networks via chained closed-form regression"};
    app.require_subcommand(1);

    // --- train-toy -----------------------------------------------------
    auto* train_cmd = app.add_subcommand(
        "train-toy", "Generate a blob task and fine-tune a model on it");
    std::uint64_t train_seed = 42;
    std::size_t train_task_index = 0, train_dim = 16, train_classes = 4, train_depth = 3,
                train_hidden = 32, train_samples = 500, train_epochs = 40, train_batch = 32;
    double train_lr = 0.05;
    std::string train_activation = "relu";
    std::string train_out;
    train_cmd->add_option("--seed", train_seed, "Master seed");
    train_cmd->add_option("--task-index", train_task_index,
                          "Task index derived from the master seed");
    train_cmd->add_option("--dim", train_dim, "Input dimension");
    train_cmd->add_option("--classes", train_classes, "Number of classes");
    train_cmd->add_option("--depth", train_depth, "Number of linear layers");
    train_cmd->add_option("--hidden", train_hidden, "Hidden width");
    train_cmd->add_option("--samples", train_samples, "Samples per split");
    train_cmd->add_option("--epochs", train_epochs, "Training epochs");
    train_cmd->add_option("--lr", train_lr, "Learning rate");
    train_cmd->add_option("--batch", train_batch, "Mini-batch size");
    train_cmd->add_option("--activation", train_activation, "Hidden activation");
    train_cmd->add_option("--out", train_out, "Output checkpoint directory")->required();

    // --- merge ----------------------------------------------------------
    auto* merge_cmd = app.add_subcommand("merge", "Merge task checkpoints into one model");
    std::string merge_method = "com";
    std::vector<std::string> merge_models, merge_datas;
    std::string merge_out;
    MergeFlags merge_flags;
    merge_cmd->add_option("--method", merge_method, "average|regmean|com|com-weighted");
    merge_cmd->add_option("--model", merge_models, "Checkpoint directory (repeat per task)");
    merge_cmd->add_option("--data", merge_datas, "Sample matrix file (repeat per task)");
    merge_cmd->add_option("--out", merge_out, "Merged checkpoint directory")->required();
    merge_flags.attach(merge_cmd);

    // --- mcs -------------------------------------------------------------
    auto* mcs_cmd =
        app.add_subcommand("mcs", "Measure per-layer activation shift of a merged model");
    std::string mcs_merged;
    std::vector<std::string> mcs_models, mcs_datas;
    std::string mcs_label = "merged";
    std::string mcs_out;
    mcs_cmd->add_option("--merged", mcs_merged, "Merged checkpoint directory")->required();
    mcs_cmd->add_option("--model", mcs_models, "Task checkpoint directory (repeat per task)");
    mcs_cmd->add_option("--data", mcs_datas, "Sample matrix file (repeat per task)");
    mcs_cmd->add_option("--label", mcs_label, "Method label recorded in the report");
    mcs_cmd->add_option("--out", mcs_out, "Also write the report to this file");

    // --- eval ------------------------------------------------------------
    auto* eval_cmd =
        app.add_subcommand("eval", "Evaluate a checkpoint on a regenerated blob task");
    std::string eval_model;
    std::uint64_t eval_seed = 42;
    std::size_t eval_task_index = 0, eval_dim = 16, eval_classes = 4, eval_samples = 500;
    eval_cmd->add_option("--model", eval_model, "Checkpoint directory")->required();
    eval_cmd->add_option("--seed", eval_seed, "Master seed");
    eval_cmd->add_option("--task-index", eval_task_index, "Task index");
    eval_cmd->add_option("--dim", eval_dim, "Input dimension");
    eval_cmd->add_option("--classes", eval_classes, "Number of classes");
    eval_cmd->add_option("--samples", eval_samples, "Samples per split");

    // --- experiment --------------------------------------------------------
    auto* exp_cmd = app.add_subcommand(
        "experiment", "Train, merge with every method, and report normalized scores");
    cmm::ExperimentSpec defaults;
    std::uint64_t exp_seed = defaults.seed;
    std::size_t exp_tasks = defaults.num_tasks, exp_dim = defaults.input_dim,
                exp_classes = defaults.num_classes, exp_depth = defaults.depth,
                exp_hidden = defaults.hidden_dim,
                exp_samples_split = defaults.samples_per_split,
                exp_merge_samples = defaults.samples_for_merging,
                exp_pre_epochs = defaults.pretrain.epochs,
                exp_epochs = defaults.finetune.epochs, exp_batch = defaults.finetune.batch_size;
    double exp_lr = defaults.finetune.learning_rate;
    std::string exp_methods = "avg,regmean,com,com-weighted";
    std::string exp_sweep;
    std::string exp_activation = to_string(defaults.hidden_activation);
    std::string exp_out = "report.json";
    MergeFlags exp_flags;
    exp_cmd->add_option("--seed", exp_seed, "Master seed");
    exp_cmd->add_option("--tasks", exp_tasks, "Number of tasks");
    exp_cmd->add_option("--dim", exp_dim, "Input dimension");
    exp_cmd->add_option("--classes", exp_classes, "Number of classes");
    exp_cmd->add_option("--depth", exp_depth, "Number of linear layers");
    exp_cmd->add_option("--hidden", exp_hidden, "Hidden width");
    exp_cmd->add_option("--samples-per-split", exp_samples_split, "Samples per task split");
    exp_cmd->add_option("--merge-samples", exp_merge_samples, "Samples used for merging");
    exp_cmd->add_option("--pretrain-epochs", exp_pre_epochs, "Pooled pretraining epochs");
    exp_cmd->add_option("--epochs", exp_epochs, "Fine-tuning epochs per task");
    exp_cmd->add_option("--lr", exp_lr, "Learning rate");
    exp_cmd->add_option("--batch", exp_batch, "Mini-batch size");
    exp_cmd->add_option("--activation", exp_activation, "Hidden activation");
    exp_cmd->add_option("--methods", exp_methods, "Comma-separated merge methods");
    exp_cmd->add_option("--sweep", exp_sweep,
                        "Comma-separated sample counts for a com merge sweep");
    exp_cmd->add_option("--out", exp_out, "Report file");
    exp_flags.attach(exp_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help
        }
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return kExitUsage;
    }

    try {
        if (*train_cmd) {
            cmm::SyntheticTask task =
                regen_task(train_seed, train_task_index, train_dim, train_classes, train_samples);
            const std::vector<std::size_t> hidden(train_depth - 1, train_hidden);
            const cmm::SequentialModel init =
                cmm::make_mlp(train_dim, hidden, train_classes,
                              cmm::activation_from_string(train_activation), true,
                              cmm::splitmix64_mix(train_seed + 0x11));
            cmm::TrainHyper hyper{train_lr, train_epochs, train_batch,
                                  cmm::splitmix64_mix(train_seed + 0x33 + train_task_index)};
            const cmm::SequentialModel model = cmm::train_model(init, task, hyper);
            cmm::io::save_checkpoint(model, train_out);
            cmm::io::save_matrix(task.train_inputs,
                                 std::filesystem::path(train_out) / "samples.cmmx");
            std::cout << cmm::io::eval_result_to_json(cmm::evaluate(model, task)).dump(2)
                      << std::endl;
            return kExitOk;
        }

        if (*merge_cmd) {
            if (merge_models.empty() || merge_models.size() != merge_datas.size()) {
                std::cerr << "error: --model and --data must be given once per task, in pairs\n";
                return kExitUsage;
            }
            const cmm::MergeConfig cfg =
                merge_flags.to_config(cmm::merge_method_from_string(merge_method));
            const cmm::MergeOutcome outcome =
                cmm::merge(load_bundles(merge_models, merge_datas), cfg);
            cmm::io::save_checkpoint(outcome.merged, merge_out);
            cmm::io::ordered_json diag = cmm::io::merge_diagnostics_to_json(outcome, cfg.method);
            diag["output"] = merge_out;
            std::cout << diag.dump(2) << std::endl;
            return kExitOk;
        }

        if (*mcs_cmd) {
            if (mcs_models.empty() || mcs_models.size() != mcs_datas.size()) {
                std::cerr << "error: --model and --data must be given once per task, in pairs\n";
                return kExitUsage;
            }
            const cmm::SequentialModel merged = cmm::io::load_checkpoint(mcs_merged);
            const cmm::MCSReport report =
                cmm::mcs_report(load_bundles(mcs_models, mcs_datas), merged, mcs_label);
            const cmm::io::ordered_json json = cmm::io::mcs_report_to_json(report);
            if (!mcs_out.empty()) {
                cmm::io::write_json_file(json, mcs_out);
            }
            std::cout << json.dump(2) << std::endl;
            return kExitOk;
        }

        if (*eval_cmd) {
            const cmm::SequentialModel model = cmm::io::load_checkpoint(eval_model);
            const cmm::SyntheticTask task =
                regen_task(eval_seed, eval_task_index, eval_dim, eval_classes, eval_samples);
            std::cout << cmm::io::eval_result_to_json(cmm::evaluate(model, task)).dump(2)
                      << std::endl;
            return kExitOk;
        }

        if (*exp_cmd) {
            cmm::ExperimentSpec spec;
            spec.seed = exp_seed;
            spec.num_tasks = exp_tasks;
            spec.input_dim = exp_dim;
            spec.num_classes = exp_classes;
            spec.depth = exp_depth;
            spec.hidden_dim = exp_hidden;
            spec.samples_per_split = exp_samples_split;
            spec.samples_for_merging = exp_merge_samples;
            spec.hidden_activation = cmm::activation_from_string(exp_activation);
            spec.pretrain.epochs = exp_pre_epochs;
            spec.finetune.learning_rate = exp_lr;
            spec.finetune.epochs = exp_epochs;
            spec.finetune.batch_size = exp_batch;
            spec.merge_cfg = exp_flags.to_config(cmm::MergeMethod::com);
            spec.methods.clear();
            for (const std::string& name : split_csv(exp_methods)) {
                spec.methods.push_back(cmm::merge_method_from_string(name));
            }
            for (const std::string& count : split_csv(exp_sweep)) {
                spec.sweep_sample_counts.push_back(std::stoull(count));
            }

            const cmm::ExperimentReport report = cmm::run_experiment(spec);
            const cmm::io::ordered_json json = cmm::io::experiment_report_to_json(report);
            cmm::io::write_json_file(json, exp_out);

            cmm::io::ordered_json summary;
            summary["report"] = exp_out;
            summary["methods"] = cmm::io::ordered_json::array();
            for (const cmm::MethodReport& method : report.methods) {
                cmm::io::ordered_json entry;
                entry["method"] = to_string(method.method);
                entry["average_normalized_score"] = method.average_normalized_score;
                entry["mcs_grand_total"] = method.mcs.grand_total;
                summary["methods"].push_back(std::move(entry));
            }
            std::cout << summary.dump(2) << std::endl;
            return kExitOk;
        }
    } catch (const cmm::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
