#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "lotmerge/capture.hpp"
#include "lotmerge/io.hpp"

using namespace lotmerge;

namespace {

NetworkSpec matmul_only_spec(Index d) {
    NetworkSpec spec;
    spec.input_dim = d;
    spec.units = {{"w", UnitKind::MatMul, d, d}};
    spec.validate();
    return spec;
}

ExemplarSet exemplars_of(const Matrix& features, const std::string& task_id = "t") {
    ExemplarSet ex;
    ex.task_id = task_id;
    ex.features = features;
    return ex;
}

}  // namespace

TEST_CASE("forward through an identity matmul is the input") {
    const auto spec = matmul_only_spec(3);
    const auto ckpt = make_checkpoint(spec, {{"w", Matrix::Identity(3, 3)}});
    Rng rng(2);
    const Matrix batch = helpers::random_matrix(rng, 5, 3);
    CHECK((forward(spec, ckpt, batch) - batch).norm() == 0.0);
}

TEST_CASE("scale unit multiplies per dimension") {
    NetworkSpec spec;
    spec.input_dim = 2;
    spec.units = {{"s", UnitKind::Scale, 1, 2}};
    spec.validate();
    Matrix w(1, 2);
    w << 2, 3;
    const auto ckpt = make_checkpoint(spec, {{"s", w}});
    Matrix batch(1, 2);
    batch << 1, 1;
    const Matrix out = forward(spec, ckpt, batch);
    CHECK(out(0, 0) == 2.0);
    CHECK(out(0, 1) == 3.0);
}

TEST_CASE("matmul plus bias equals the hand-composed pipeline") {
    NetworkSpec spec;
    spec.input_dim = 3;
    spec.units = {{"w", UnitKind::MatMul, 3, 4}, {"b", UnitKind::Bias, 1, 4}};
    spec.validate();
    Rng rng(3);
    const Matrix w = helpers::random_matrix(rng, 3, 4);
    const Matrix b = helpers::random_matrix(rng, 1, 4);
    const auto ckpt = make_checkpoint(spec, {{"w", w}, {"b", b}});
    const Matrix batch = helpers::random_matrix(rng, 6, 3);
    const Matrix expect = (batch * w).rowwise() + b.row(0);
    CHECK((forward(spec, ckpt, batch) - expect).norm() <= 1e-14 * expect.norm());
}

TEST_CASE("normalize standardizes each row") {
    NetworkSpec spec;
    spec.input_dim = 4;
    spec.units = {{"n", UnitKind::Normalize, 0, 0}};
    spec.validate();
    const auto ckpt = make_checkpoint(spec, {});
    Rng rng(5);
    const Matrix batch = helpers::random_matrix(rng, 3, 4, 2.0);
    const Matrix out = forward(spec, ckpt, batch);
    for (Index r = 0; r < out.rows(); ++r) {
        CHECK(out.row(r).mean() == doctest::Approx(0.0).epsilon(1e-12));
        const double var = out.row(r).squaredNorm() / 4.0;
        CHECK(var <= 1.0);  // eps shrinks the variance slightly below 1
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("residual adds the referenced unit output") {
    NetworkSpec spec;
    spec.input_dim = 2;
    spec.units = {
        {"w1", UnitKind::MatMul, 2, 2},
        {"w2", UnitKind::MatMul, 2, 2},
        {"res", UnitKind::Residual, 0, 0, ActivationTag::Identity, "w1"},
    };
    spec.validate();
    Rng rng(7);
    const Matrix w1 = helpers::random_matrix(rng, 2, 2);
    const Matrix w2 = helpers::random_matrix(rng, 2, 2);
    const auto ckpt = make_checkpoint(spec, {{"w1", w1}, {"w2", w2}});
    const Matrix batch = helpers::random_matrix(rng, 4, 2);
    const Matrix expect = batch * w1 * w2 + batch * w1;
    CHECK((forward(spec, ckpt, batch) - expect).norm() <= 1e-13 * expect.norm());
}

TEST_CASE("forward names the failing unit on a shape mismatch") {
    const auto spec = matmul_only_spec(3);
    const auto ckpt = make_checkpoint(spec, {{"w", Matrix::Identity(3, 3)}});
    try {
        forward(spec, ckpt, Matrix::Zero(2, 5));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("input_dim") != std::string::npos);
    }
}

TEST_CASE("collect_stats rejects an empty exemplar set") {
    const auto spec = matmul_only_spec(3);
    const auto ckpt = make_checkpoint(spec, {{"w", Matrix::Identity(3, 3)}});
    ExemplarSet empty;
    empty.task_id = "t";
    empty.features = Matrix(0, 3);
    CHECK_THROWS_AS(collect_stats(spec, ckpt, zero_task_vector(spec), empty), ArgumentError);
}

TEST_CASE("collect_stats on an identity batch gives the identity gram") {
    const auto spec = matmul_only_spec(4);
    Rng rng(11);
    const auto pre = make_checkpoint(spec, {{"w", helpers::random_matrix(rng, 4, 4)}});
    const auto tv = zero_task_vector(spec);
    const LayerStats stats = collect_stats(spec, pre, tv, exemplars_of(Matrix::Identity(4, 4)));
    CHECK((stats.units.at("w").gram - Matrix::Identity(4, 4)).norm() <= 1e-14);
    CHECK(stats.n_samples == 4);
}

TEST_CASE("duplicated exemplars double the gram") {
    const auto spec = matmul_only_spec(3);
    Rng rng(13);
    const auto pre = make_checkpoint(spec, {{"w", helpers::random_matrix(rng, 3, 3)}});
    const auto tv = zero_task_vector(spec);
    const Matrix x = helpers::random_matrix(rng, 5, 3);
    Matrix doubled(10, 3);
    doubled << x, x;
    const Matrix g1 = collect_stats(spec, pre, tv, exemplars_of(x)).units.at("w").gram;
    const Matrix g2 = collect_stats(spec, pre, tv, exemplars_of(doubled)).units.at("w").gram;
    CHECK((g2 - 2.0 * g1).norm() <= 1e-12 * g1.norm());
}

TEST_CASE("streamed gram matches the trace recomputation") {
    Rng rng(17);
    const auto spec = helpers::small_spec();
    const auto pre = helpers::random_checkpoint(spec, rng);
    const auto expert = helpers::random_checkpoint(spec, rng);
    const TaskVector tv = task_vector(expert, pre);
    const Matrix batch = helpers::random_matrix(rng, 20, 3);
    FeatureTrace trace;
    const LayerStats stats = collect_stats(spec, pre, tv, exemplars_of(batch), &trace);
    for (const auto& [id, us] : stats.units) {
        const Matrix& x = trace.inputs.at(id);
        if (us.kind == UnitKind::MatMul) {
            const Matrix expect = x.transpose() * x;
            CHECK((us.gram - expect).norm() <= 1e-10 * std::max(1.0, expect.norm()));
            const Matrix gd = expect * tv.deltas.at(id);
            CHECK((us.gram_delta - gd).norm() <= 1e-10 * std::max(1.0, gd.norm()));
        } else if (us.kind == UnitKind::Scale) {
            const Vector expect = x.array().square().colwise().sum().matrix().transpose();
            CHECK((us.sq_sums - expect).norm() <= 1e-10 * std::max(1.0, expect.norm()));
        } else if (us.kind == UnitKind::Bias) {
            CHECK((us.bias_delta.transpose() - tv.deltas.at(id)).norm() == 0.0);
        }
    }
}

TEST_CASE("collected features come from the expert forward pass") {
    const auto spec = matmul_only_spec(2);
    // expert weight differs from the pretrained one; with a two-unit chain the
    // second unit would see expert features, here we check the stats use the
    // expert model by construction of gram_delta
    Matrix w_pre(2, 2), delta(2, 2);
    w_pre << 1, 0, 0, 1;
    delta << 0.5, 0, 0, -0.25;
    const auto pre = make_checkpoint(spec, {{"w", w_pre}});
    const auto tv = make_task_vector(spec, {{"w", delta}});
    Rng rng(19);
    const Matrix x = helpers::random_matrix(rng, 8, 2);
    const LayerStats stats = collect_stats(spec, pre, tv, exemplars_of(x));
    // first unit input features are the raw exemplars for any parameters
    CHECK((stats.units.at("w").gram - x.transpose() * x).norm() <= 1e-12);
    CHECK((stats.units.at("w").gram_delta - x.transpose() * x * delta).norm() <= 1e-12);
}

TEST_CASE("grams stay positive semi-definite") {
    Rng rng(23);
    const auto spec = helpers::small_spec();
    const auto pre = helpers::random_checkpoint(spec, rng);
    const auto tv = task_vector(helpers::random_checkpoint(spec, rng), pre);
    const LayerStats stats =
        collect_stats(spec, pre, tv, exemplars_of(helpers::random_matrix(rng, 16, 3)));
    for (const auto& [id, us] : stats.units) {
        if (us.kind != UnitKind::MatMul) continue;
        CHECK((us.gram - us.gram.transpose()).norm() <= 1e-10 * std::max(1.0, us.gram.norm()));
        for (int trial = 0; trial < 20; ++trial) {
            const Vector v = helpers::random_matrix(rng, us.gram.rows(), 1);
            const double q = v.dot(us.gram * v);
            CHECK(q >= -1e-8 * us.gram.norm() * v.squaredNorm());
        }
    }
}

TEST_CASE("gram is invariant under sample reordering") {
    const auto spec = matmul_only_spec(3);
    Rng rng(29);
    const auto pre = make_checkpoint(spec, {{"w", helpers::random_matrix(rng, 3, 3)}});
    const auto tv = zero_task_vector(spec);
    const Matrix x = helpers::random_matrix(rng, 6, 3);
    Matrix reversed(6, 3);
    for (Index r = 0; r < 6; ++r) reversed.row(r) = x.row(5 - r);
    const Matrix g1 = collect_stats(spec, pre, tv, exemplars_of(x)).units.at("w").gram;
    const Matrix g2 = collect_stats(spec, pre, tv, exemplars_of(reversed)).units.at("w").gram;
    CHECK((g1 - g2).norm() <= 1e-12 * std::max(1.0, g1.norm()));
}

TEST_CASE("merge_stats pools across tasks") {
    const auto spec = matmul_only_spec(4);
    Rng rng(31);
    const auto pre = make_checkpoint(spec, {{"w", helpers::random_matrix(rng, 4, 4)}});
    const auto tv = zero_task_vector(spec);

    SUBCASE("single input is an identity pooling") {
        const LayerStats s = collect_stats(spec, pre, tv, exemplars_of(Matrix::Identity(4, 4)));
        const PooledStats pooled = merge_stats({s});
        CHECK((pooled.units.at("w").gram - s.units.at("w").gram).norm() == 0.0);
        CHECK(pooled.n_samples == s.n_samples);
    }

    SUBCASE("two identity grams pool to 2I") {
        const LayerStats s = collect_stats(spec, pre, tv, exemplars_of(Matrix::Identity(4, 4)));
        const PooledStats pooled = merge_stats({s, s});
        CHECK((pooled.units.at("w").gram - 2.0 * Matrix::Identity(4, 4)).norm() <= 1e-14);
        CHECK(pooled.n_samples == 2 * s.n_samples);
    }

    SUBCASE("pooling three tasks equals the concatenated recomputation") {
        std::vector<LayerStats> stats;
        std::vector<Matrix> batches;
        for (int k = 0; k < 3; ++k) {
            batches.push_back(helpers::random_matrix(rng, 5 + k, 4));
            stats.push_back(collect_stats(spec, pre, tv, exemplars_of(batches.back())));
        }
        Matrix all(batches[0].rows() + batches[1].rows() + batches[2].rows(), 4);
        all << batches[0], batches[1], batches[2];
        const PooledStats pooled = merge_stats(stats);
        const Matrix expect = all.transpose() * all;
        CHECK((pooled.units.at("w").gram - expect).norm() <= 1e-10 * expect.norm());
        CHECK(pooled.n_samples == all.rows());
    }
}

TEST_CASE("layer stats file round trip") {
    Rng rng(37);
    const auto spec = helpers::small_spec();
    const auto pre = helpers::random_checkpoint(spec, rng);
    const auto tv = task_vector(helpers::random_checkpoint(spec, rng), pre);
    const LayerStats stats =
        collect_stats(spec, pre, tv, exemplars_of(helpers::random_matrix(rng, 12, 3), "task_a"));
    const auto dir = helpers::temp_dir("layer_stats");
    save_layer_stats(stats, dir);
    const LayerStats loaded = load_layer_stats(dir);
    CHECK(loaded.task_id == "task_a");
    CHECK(loaded.n_samples == 12);
    CHECK(loaded.spec_hash == stats.spec_hash);
    for (const auto& [id, us] : stats.units) {
        const UnitStats& lu = loaded.units.at(id);
        CHECK(lu.kind == us.kind);
        if (us.kind == UnitKind::MatMul) {
            CHECK((lu.gram - us.gram).norm() == 0.0);
            CHECK((lu.gram_delta - us.gram_delta).norm() == 0.0);
        } else if (us.kind == UnitKind::Scale) {
            CHECK((lu.sq_sums - us.sq_sums).norm() == 0.0);
            CHECK((lu.sq_sums_delta - us.sq_sums_delta).norm() == 0.0);
        } else {
            CHECK((lu.bias_delta - us.bias_delta).norm() == 0.0);
        }
    }
}
