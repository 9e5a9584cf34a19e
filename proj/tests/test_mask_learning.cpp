#include <doctest.h>

#include <cmath>

#include "depthprune/errors.hpp"
#include "depthprune/mask_learning.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/optim.hpp"

using namespace depthprune;

namespace {

Tensor one_hot_logits(std::size_t n, std::size_t hot, double height = 60.0) {
    std::vector<double> v(n, 0.0);
    v[hot] = height;
    return Tensor::vector(v, true);
}

TrainConfig small_config(std::size_t steps) {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch = 16;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("pruning_loss") {
    Tape t(false);
    const Tensor a = Tensor::matrix(1, 4, {0.5, -1.0, 2.0, 0.0});
    const Tensor b = Tensor::matrix(1, 4, {1.5, -0.5, 1.0, 0.25});
    const Tensor y = Tensor::matrix(1, 4, {0.0, 0.3, -2.0, 1.0});
    TrainConfig cfg;
    CHECK(pruning_loss(t, a, a, a, cfg).item() == 0.0);

    double mse = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        mse += (a.at(i) - y.at(i)) * (a.at(i) - y.at(i));
        l1 += std::abs(a.at(i) - b.at(i));
    }
    CHECK(pruning_loss(t, a, b, y, cfg).item() == doctest::Approx(mse / 4 + l1 / 4).epsilon(1e-14));
    cfg.lambda_task = 0.0;
    CHECK(pruning_loss(t, a, b, y, cfg).item() == doctest::Approx(l1 / 4).epsilon(1e-14));
    CHECK_THROWS_AS(pruning_loss(t, a, Tensor::zeros({1, 3}), y, cfg), ContractError);
}

TEST_CASE("tau schedule") {
    const TauSchedule flat{1.0, 1.0};
    CHECK(flat.at(0, 10) == 1.0);
    CHECK(flat.at(9, 10) == 1.0);
    const TauSchedule ramp{2.0, 0.5};
    CHECK(ramp.at(0, 11) == 2.0);
    CHECK(ramp.at(10, 11) == doctest::Approx(0.5));
    CHECK(ramp.at(5, 11) == doctest::Approx(1.25));
}

TEST_CASE("disabled activation samples stay in the valid subspace") {
    const BlockPartition part{12, 4, 2};
    const OptionTable table(part);
    PruningDistribution dist = PruningDistribution::uniform(part);
    const MarginalProfile pi = marginal_profile(dist, table);
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
        Tape t;
        const TrainingMask s = sample_training_mask(t, dist, table, pi, rng, false);
        CHECK(in_valid_subspace(PruneMask::from_tensor(s.mask), part));
        CHECK(s.trace.transforms.empty());
    }
}

TEST_CASE("identity-forced transforms reproduce the disabled path") {
    const BlockPartition part{12, 4, 2};
    const OptionTable table(part);
    PruningDistribution dist = PruningDistribution::uniform(part);
    for (Tensor& q : dist.transform_logits) q = one_hot_logits(3, 1);
    const MarginalProfile pi = marginal_profile(dist, table);
    for (std::uint64_t i = 0; i < 200; ++i) {
        Rng a(i), b(i);
        Tape t;
        const TrainingMask on = sample_training_mask(t, dist, table, pi, a, true);
        const TrainingMask off = sample_training_mask(t, dist, table, pi, b, false);
        CHECK(on.trace.block_choices == off.trace.block_choices);
        CHECK(PruneMask::from_tensor(on.mask) == PruneMask::from_tensor(off.mask));
    }
}

TEST_CASE("sampled masks conserve the budget and leave the valid subspace") {
    const BlockPartition part{12, 4, 2};
    const OptionTable table(part);
    PruningDistribution dist = PruningDistribution::uniform(part);
    const MarginalProfile pi = marginal_profile(dist, table);
    Rng rng(3);
    bool outside = false;
    for (int i = 0; i < 1000; ++i) {
        Tape t;
        const PruneMask m = PruneMask::from_tensor(sample_training_mask(t, dist, table, pi, rng, true).mask);
        CHECK(m.popcount() == 6);
        outside = outside || !in_valid_subspace(m, part);
    }
    CHECK(outside);
}

TEST_CASE("both logit families receive gradients") {
    const BlockPartition part{12, 4, 2};
    const OptionTable table(part);
    PruningDistribution dist = PruningDistribution::uniform(part);
    const MarginalProfile pi = marginal_profile(dist, table);
    Rng rng(4);
    Rng wr(5);
    std::vector<double> w(12);
    for (double& v : w) v = wr.normal();
    double block_norm = 0.0, transform_norm = 0.0;
    for (int i = 0; i < 20; ++i) {
        Tape t;
        const TrainingMask s = sample_training_mask(t, dist, table, pi, rng, true);
        t.backward(ops::sum(t, ops::mul(t, s.mask, Tensor::vector(w))));
    }
    for (const Tensor& l : dist.block_logits) block_norm += grad_norm(std::vector<Tensor>{l});
    for (const Tensor& l : dist.transform_logits) transform_norm += grad_norm(std::vector<Tensor>{l});
    CHECK(block_norm > 0.0);
    CHECK(transform_norm > 0.0);
}

TEST_CASE("total_mask_probability") {
    const BlockPartition one{4, 4, 2};
    PruningDistribution single = PruningDistribution::uniform(one);
    single.block_logits[0] = Tensor::vector({1.0, 0.0, 0.0, 0.0, 0.0, 2.0}, true);
    SampleTrace tr;
    tr.block_choices = {5};
    const double z = std::exp(1.0) + 4.0 + std::exp(2.0);
    CHECK(total_mask_probability(single, tr) == doctest::Approx(std::exp(2.0) / z).epsilon(1e-14));

    const BlockPartition part{8, 4, 2};
    PruningDistribution uni = PruningDistribution::uniform(part);
    SampleTrace u{{0, 3}, {Transform::Expand}, {false}};
    CHECK(total_mask_probability(uni, u) == doctest::Approx(1.0 / 108.0).epsilon(1e-14));

    Rng rng(6);
    PruningDistribution dist = PruningDistribution::uniform(part);
    for (Tensor& l : dist.block_logits) {
        for (double& v : l.mutable_data()) v = rng.uniform(-2.0, 2.0);
    }
    for (double& v : dist.transform_logits[0].mutable_data()) v = rng.uniform(-2.0, 2.0);
    double total = 0.0;
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = 0; b < 6; ++b) {
            for (std::size_t q = 0; q < 3; ++q) {
                total += total_mask_probability(dist, {{a, b}, {static_cast<Transform>(q)}, {false}});
            }
        }
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("transformed marginals keep the expected retained count") {
    const BlockPartition part{8, 4, 2};
    const OptionTable table(part);
    PruningDistribution dist = PruningDistribution::uniform(part);
    const auto pi = transformed_marginal_profile(dist, table).pi;
    double sum = 0.0;
    for (double p : pi) sum += p;
    CHECK(sum == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(transformed_marginal_profile(dist, table, 10), DomainError);
}

TEST_CASE("decide_mask") {
    const BlockPartition part{12, 4, 2};
    const OptionTable table(part);

    PruningDistribution onehot = PruningDistribution::uniform(part);
    const std::vector<std::size_t> choices{2, 5, 0};
    for (std::size_t j = 0; j < 3; ++j) onehot.block_logits[j] = one_hot_logits(6, choices[j]);
    CHECK(decide_mask(onehot, table).mask == compose_mask(choices, table));

    PruningDistribution uni = PruningDistribution::uniform(part);
    const MaskDecision d = decide_mask(uni, table);
    CHECK(d.mask.to_string() == "110011001100");
    CHECK(d.log.size() == 2);
}

TEST_CASE("decide_mask with expansion matches exhaustive scoring") {
    const BlockPartition part{8, 4, 2};
    const OptionTable table(part);
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        PruningDistribution dist = PruningDistribution::uniform(part);
        for (Tensor& l : dist.block_logits) {
            for (double& v : l.mutable_data()) v = rng.uniform(-2.0, 2.0);
        }
        dist.transform_logits[0] = Tensor::vector({0.0, 0.0, 3.0}, true);
        const auto pi = marginal_profile(dist, table).pi;
        const PruneMask got = decide_mask(dist, table).mask;

        double best = -1.0;
        PruneMask want;
        for (unsigned bits = 0; bits < 256; ++bits) {
            PruneMask m(8);
            for (std::size_t i = 0; i < 8; ++i) m.set(i, (bits >> i) & 1u);
            if (m.count(0, 4) != 1 || m.count(4, 8) != 3) continue;
            double score = 0.0;
            for (std::size_t i = 0; i < 8; ++i) score += m[i] ? pi[i] : 0.0;
            if (score > best) {
                best = score;
                want = m;
            }
        }
        CHECK(got == want);
    }
}

TEST_CASE("train_mask") {
    const LayeredNet teacher = init_net(8, 8, kTaskCondDim, 1);
    const TaskData data = make_task_data(2, 256);

    const MaskLearningResult none = train_mask(teacher, data.train, small_config(0));
    CHECK(none.history.empty());
    for (const Tensor& l : none.dist.block_logits) {
        for (double v : l.data()) CHECK(v == 0.0);
    }
    for (const LowRankDelta& d : none.deltas) {
        for (double v : d.w_in.b.data()) CHECK(v == 0.0);
        for (double v : d.w_out.b.data()) CHECK(v == 0.0);
    }

    const MaskLearningResult a = train_mask(teacher, data.train, small_config(15));
    const MaskLearningResult b = train_mask(teacher, data.train, small_config(15));
    CHECK(a.history.size() == 15);
    CHECK(a.history == b.history);
    CHECK(to_checkpoint(a).encode() == to_checkpoint(b).encode());

    const PruningDistribution back = distribution_from_checkpoint(to_checkpoint(a));
    CHECK(decide_mask(back, OptionTable(back.partition)).mask ==
          decide_mask(a.dist, OptionTable(a.dist.partition)).mask);

    TrainConfig bad = small_config(1);
    bad.block_size = 3;
    CHECK_THROWS(train_mask(teacher, data.train, bad));
}
