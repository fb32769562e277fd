#include "cmm/errors.hpp"
#include "cmm/harness.hpp"
#include "cmm/rng.hpp"

#include "support/test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using cmm::ActivationKind;
using cmm::DenseMatrix;
using cmm::SequentialModel;
using cmm::SyntheticTask;
using cmm::TrainHyper;

namespace {

cmm::ExperimentSpec small_spec(std::uint64_t seed) {
    cmm::ExperimentSpec spec;
    spec.seed = seed;
    spec.num_tasks = 2;
    spec.input_dim = 8;
    spec.num_classes = 3;
    spec.depth = 3;
    spec.hidden_dim = 12;
    spec.samples_per_split = 150;
    spec.samples_for_merging = 96;
    spec.finetune.epochs = 12;
    return spec;
}

} // namespace

// ---------------------------------------------------------------------------
// gen_tasks
// ---------------------------------------------------------------------------

TEST_CASE("task generation is bit-deterministic") {
    const auto a = cmm::gen_tasks(123, 3, 6, 4, 50);
    const auto b = cmm::gen_tasks(123, 3, 6, 4, 50);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        CHECK(a[t].train_inputs.data() == b[t].train_inputs.data());
        CHECK(a[t].test_inputs.data() == b[t].test_inputs.data());
        CHECK(a[t].train_labels == b[t].train_labels);
        CHECK(a[t].seed == b[t].seed);
    }
}

TEST_CASE("blob tasks are separable by a trained linear probe") {
    const auto tasks = cmm::gen_tasks(5, 1, 8, 2, 200);
    const SyntheticTask& task = tasks[0];
    const SequentialModel probe = cmm::make_mlp(8, {}, 2, ActivationKind::identity, true, 6);
    const SequentialModel trained = cmm::train_model(probe, task, {0.1, 30, 32, 7});
    CHECK(cmm::evaluate(trained, task).accuracy >= 0.9);
}

TEST_CASE("different task indices produce different data") {
    const auto tasks = cmm::gen_tasks(99, 3, 5, 3, 40);
    CHECK(tasks[0].train_inputs.data() != tasks[1].train_inputs.data());
    CHECK(tasks[1].train_inputs.data() != tasks[2].train_inputs.data());
    CHECK(tasks[0].seed != tasks[1].seed);
}

TEST_CASE("labels are in range and splits have the requested size") {
    const auto tasks = cmm::gen_tasks(7, 2, 4, 3, 33);
    for (const SyntheticTask& task : tasks) {
        CHECK(task.train_inputs.cols() == 33);
        CHECK(task.test_inputs.cols() == 33);
        for (std::size_t label : task.train_labels) {
            CHECK(label < 3);
        }
    }
}

// ---------------------------------------------------------------------------
// train_model
// ---------------------------------------------------------------------------

TEST_CASE("training reduces the loss") {
    const auto tasks = cmm::gen_tasks(0, 1, 8, 3, 120);
    const SequentialModel init = cmm::make_mlp(8, {10}, 3, ActivationKind::relu, true, 0);
    const SequentialModel trained = cmm::train_model(init, tasks[0], TrainHyper{});
    const double before =
        cmm::softmax_ce_loss(init, tasks[0].train_inputs, tasks[0].train_labels);
    const double after =
        cmm::softmax_ce_loss(trained, tasks[0].train_inputs, tasks[0].train_labels);
    CHECK(after < before);
}

TEST_CASE("zero learning rate leaves the model bitwise unchanged") {
    const auto tasks = cmm::gen_tasks(1, 1, 5, 2, 40);
    const SequentialModel init = cmm::make_mlp(5, {6}, 2, ActivationKind::tanh, true, 2);
    const SequentialModel out = cmm::train_model(init, tasks[0], {0.0, 3, 16, 3});
    for (std::size_t l = 0; l < init.layer_count(); ++l) {
        CHECK(out.layer(l).weight.data() == init.layer(l).weight.data());
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    const auto tasks = cmm::gen_tasks(11, 1, 5, 3, 24);
    const SequentialModel model = cmm::make_mlp(5, {8}, 3, ActivationKind::tanh, true, 12);
    const DenseMatrix& x = tasks[0].train_inputs;
    const std::vector<std::size_t>& y = tasks[0].train_labels;

    const cmm::BatchGradients grads = cmm::softmax_ce_gradients(model, x, y);

    cmm::SplitMix64 rng(13);
    const double h = 1e-5;
    for (int probe = 0; probe < 10; ++probe) {
        const std::size_t l = rng.next_below(model.layer_count());
        const std::size_t r = rng.next_below(model.layer(l).weight.rows());
        const std::size_t c = rng.next_below(model.layer(l).weight.cols());

        auto loss_with = [&](double delta) {
            std::vector<cmm::LinearLayer> layers = model.layers_copy();
            layers[l].weight(r, c) += delta;
            const SequentialModel perturbed(model.input_dim(), std::move(layers));
            return cmm::softmax_ce_loss(perturbed, x, y);
        };
        const double fd = (loss_with(h) - loss_with(-h)) / (2.0 * h);
        const double analytic = grads.weight_grads[l](r, c);
        CHECK(std::abs(fd - analytic) <= 1e-5 * std::max(std::abs(analytic), 1e-4));
    }
}

TEST_CASE("training rejects mismatched shapes") {
    const auto tasks = cmm::gen_tasks(14, 1, 5, 3, 20);
    const SequentialModel wrong_in = cmm::make_mlp(4, {6}, 3, ActivationKind::relu, true, 15);
    CHECK_THROWS_AS(cmm::train_model(wrong_in, tasks[0], TrainHyper{}), cmm::InvalidShape);
    const SequentialModel wrong_out = cmm::make_mlp(5, {6}, 2, ActivationKind::relu, true, 16);
    CHECK_THROWS_AS(cmm::train_model(wrong_out, tasks[0], TrainHyper{}), cmm::InvalidShape);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

TEST_CASE("uniform logits break ties toward class zero") {
    const auto tasks = cmm::gen_tasks(17, 1, 4, 2, 25);
    std::vector<cmm::LinearLayer> layers(1);
    layers[0] = {"fc1", DenseMatrix(2, 4), false, ActivationKind::identity};  // all-zero weights
    const SequentialModel uniform(4, std::move(layers));

    std::size_t zeros = 0;
    for (std::size_t label : tasks[0].test_labels) {
        zeros += label == 0 ? 1 : 0;
    }
    const double want = static_cast<double>(zeros) / 25.0;
    CHECK(cmm::evaluate(uniform, tasks[0]).accuracy == want);
}

TEST_CASE("the seed-42 trained checkpoint accuracy is frozen") {
    const auto tasks = cmm::gen_tasks(42, 1, 8, 4, 150);
    const SequentialModel init = cmm::make_mlp(8, {16}, 4, ActivationKind::relu, true, 42);
    const SequentialModel trained = cmm::train_model(init, tasks[0], {0.1, 20, 32, 42});
    const cmm::EvalResult eval = cmm::evaluate(trained, tasks[0]);
    MESSAGE("seed-42 accuracy: ", eval.accuracy, " loss: ", eval.loss);
    CHECK(eval.accuracy > 0.25);
}

TEST_CASE("a one-hot oracle model scores perfect accuracy") {
    SyntheticTask task;
    task.name = "onehot";
    task.num_classes = 2;
    task.test_inputs = DenseMatrix(2, 4);
    task.test_labels = {0, 1, 1, 0};
    for (std::size_t j = 0; j < 4; ++j) {
        task.test_inputs(task.test_labels[j], j) = 1.0;
    }
    task.train_inputs = task.test_inputs;
    task.train_labels = task.test_labels;

    std::vector<cmm::LinearLayer> layers(1);
    layers[0] = {"fc1", DenseMatrix::identity(2), false, ActivationKind::identity};
    const SequentialModel model(2, std::move(layers));
    CHECK(cmm::evaluate(model, task).accuracy == 1.0);
}

// ---------------------------------------------------------------------------
// experiments
// ---------------------------------------------------------------------------

TEST_CASE("merging a single task is the identity for every method") {
    cmm::ExperimentSpec spec = small_spec(3);
    spec.num_tasks = 1;
    const cmm::ExperimentReport report = cmm::run_experiment(spec);
    REQUIRE(report.methods.size() == 4);
    for (const cmm::MethodReport& method : report.methods) {
        CHECK(std::abs(method.average_normalized_score - 1.0) <= 1e-6);
    }
}

TEST_CASE("prepared experiments are deterministic") {
    const cmm::ExperimentSpec spec = small_spec(21);
    const cmm::PreparedExperiment a = cmm::prepare_experiment(spec);
    const cmm::PreparedExperiment b = cmm::prepare_experiment(spec);
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        for (std::size_t l = 0; l < a.finetuned[t].layer_count(); ++l) {
            CHECK(a.finetuned[t].layer(l).weight.data() == b.finetuned[t].layer(l).weight.data());
        }
        CHECK(a.finetuned_eval[t].accuracy == b.finetuned_eval[t].accuracy);
    }
}

TEST_CASE("fine-tuned models beat chance on their own tasks") {
    const cmm::PreparedExperiment prep = cmm::prepare_experiment(small_spec(31));
    for (const cmm::EvalResult& eval : prep.finetuned_eval) {
        CHECK(eval.accuracy > 1.0 / 3.0);
    }
}

TEST_CASE("small experiment report is fully populated") {
    cmm::ExperimentSpec spec = small_spec(37);
    spec.sweep_sample_counts = {2, 16};
    const cmm::ExperimentReport report = cmm::run_experiment(spec);

    REQUIRE(report.finetuned.size() == 2);
    REQUIRE(report.methods.size() == 4);
    for (const cmm::MethodReport& method : report.methods) {
        CHECK(method.per_task.size() == 2);
        CHECK(method.normalized_scores.size() == 2);
        CHECK(method.per_layer_omega.size() == 3);
        CHECK(method.mcs.per_layer.size() == 3);
        for (double d : method.mcs.per_layer[0].per_task) {
            CHECK(d == 0.0);
        }
    }
    REQUIRE(report.sweep.size() == 2);
    CHECK(report.sweep[0].samples == 2);
    for (const cmm::SweepPoint& point : report.sweep) {
        CHECK(point.average_normalized_score > 0.0);
    }
}

TEST_CASE("experiment spec validation") {
    cmm::ExperimentSpec spec;
    spec.num_classes = 1;
    CHECK_THROWS_AS(spec.validate(), cmm::InvalidConfig);
    spec = cmm::ExperimentSpec{};
    spec.methods.clear();
    CHECK_THROWS_AS(spec.validate(), cmm::InvalidConfig);
    spec = cmm::ExperimentSpec{};
    spec.sweep_sample_counts = {1};
    CHECK_THROWS_AS(spec.validate(), cmm::InvalidConfig);
}

TEST_CASE("hyper parameter validation") {
    TrainHyper hyper;
    hyper.learning_rate = -0.1;
    CHECK_THROWS_AS(hyper.validate(), cmm::InvalidConfig);
    hyper = TrainHyper{};
    hyper.epochs = 0;
    CHECK_THROWS_AS(hyper.validate(), cmm::InvalidConfig);
}
