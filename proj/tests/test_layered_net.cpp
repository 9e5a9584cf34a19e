#include <doctest.h>

#include "depthprune/errors.hpp"
#include "depthprune/gradcheck.hpp"
#include "depthprune/layered_net.hpp"
#include "depthprune/ops.hpp"
#include "depthprune/rng.hpp"

using namespace depthprune;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::matrix(r, c, std::move(v));
}

// init_net leaves modulation at zero; give every parameter a random value.
LayeredNet random_net(std::size_t n, std::size_t d, std::size_t c, std::uint64_t seed) {
    LayeredNet net = init_net(n, d, c, seed);
    Rng rng(seed + 1000);
    for (Tensor& p : base_parameters(net)) {
        for (double& v : p.mutable_data()) v = 0.4 * rng.normal();
    }
    return net;
}

Tensor projection_only(const LayeredNet& net, const Tensor& x) {
    Tape t(false);
    Tensor h = ops::add_row(t, ops::matmul(t, x, net.in_w), net.in_b);
    return ops::add_row(t, ops::matmul(t, h, net.out_w), net.out_b);
}

double sup_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.at(i) != b.at(i)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("init_net shapes and determinism") {
    LayeredNet net = init_net(12, 16, 8, 80);
    CHECK(net.n_layers() == 12);
    CHECK(net.layers[0].w_in.shape() == Shape{16, 64});
    CHECK(net.layers[0].w_out.shape() == Shape{64, 16});
    CHECK(net.layers[3].modulation.has_value());
    CHECK(net.needs_cond());

    LayeredNet tiny = init_net(1, 2, 0, 7);
    CHECK(tiny.n_layers() == 1);
    CHECK_FALSE(tiny.layers[0].modulation.has_value());
    CHECK_FALSE(tiny.needs_cond());

    CHECK(parameter_checksum(init_net(12, 16, 8, 80)) == parameter_checksum(net));
    CHECK(parameter_checksum(init_net(12, 16, 8, 81)) != parameter_checksum(net));

    CHECK_THROWS_AS(init_net(0, 4, 0, 1), DomainError);
    CHECK_THROWS_AS(init_net(2, 1, 0, 1), DomainError);
}

TEST_CASE("copies of a net are deep") {
    LayeredNet a = init_net(2, 4, 0, 1);
    LayeredNet b = a;
    b.layers[0].w_in.mutable_data()[0] += 1.0;
    CHECK(a.layers[0].w_in.at(0) != b.layers[0].w_in.at(0));
}

TEST_CASE("gated forward: all-zero and all-one masks") {
    Rng rng(1);
    LayeredNet net = random_net(5, 4, 3, 2);
    Tensor x = random_matrix(rng, 6, 8), cond = random_matrix(rng, 6, 3);
    Tape t(false);
    Tensor skipped = forward_gated(t, net, Tensor::zeros({5}), x, &cond);
    CHECK(bit_equal(skipped, projection_only(net, x)));
    CHECK(bit_equal(forward_gated(t, net, Tensor::full({5}, 1.0), x, &cond), forward(t, net, x, &cond)));
}

TEST_CASE("half mask mixes the layer output and its input") {
    Rng rng(2);
    LayeredNet net = random_net(3, 4, 0, 3);
    Tensor x = random_matrix(rng, 4, 8);
    Tensor mask = Tensor::vector({1.0, 0.5, 1.0});
    const auto states = hidden_states(net, mask, x, nullptr);
    Tape t(false);
    Tensor phi = layer_forward(t, net.layers[1], nullptr, states[1], nullptr);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        CHECK(states[2].at(i) == doctest::Approx(0.5 * phi.at(i) + 0.5 * states[1].at(i)).epsilon(1e-15));
    }
}

TEST_CASE("gated forward contract errors") {
    LayeredNet net = init_net(3, 4, 2, 1);
    Tensor x = Tensor::zeros({2, 8}), cond = Tensor::zeros({2, 2});
    Tape t(false);
    CHECK_THROWS_AS(forward_gated(t, net, Tensor::zeros({2}), x, &cond), ContractError);
    CHECK_THROWS_AS(forward_gated(t, net, Tensor::full({3}, 1.5), x, &cond), ContractError);
    CHECK_THROWS_AS(forward_gated(t, net, Tensor::zeros({3}), x, nullptr), ContractError);
}

TEST_CASE("soft-mask gradient matches finite differences") {
    Rng rng(4);
    LayeredNet net = random_net(4, 4, 2, 5);
    Tensor x = random_matrix(rng, 3, 8), cond = random_matrix(rng, 3, 2);
    Tensor w = random_matrix(rng, 3, 8);
    const double err = finite_diff_check(
        [&](Tape& t, const Tensor& m) { return ops::sum(t, ops::mul(t, forward_gated(t, net, m, x, &cond), w)); },
        Tensor::vector({0.3, 0.8, 0.5, 0.1}));
    CHECK(err < 1e-4);
}

TEST_CASE("extraction matches the gated forward") {
    Rng rng(6);
    LayeredNet net = random_net(8, 6, 0, 7);
    attach_deltas(net, 2, 2.0, 9);
    for (Tensor& p : delta_parameters(net)) {
        for (double& v : p.mutable_data()) v = 0.2 * rng.normal();
    }
    const PruneMask mask = PruneMask::from_string("10110010");
    LayeredNet sub = extract_subnetwork(net, mask);
    CHECK(sub.n_layers() == 4);
    CHECK_FALSE(sub.deltas.has_value());
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_matrix(rng, 2, 8);
        Tape t(false);
        CHECK(sup_diff(forward_gated(t, net, mask.to_tensor(), x, nullptr), forward(t, sub, x, nullptr)) < 1e-12);
    }

    LayeredNet full = extract_subnetwork(net, PruneMask::ones(8));
    CHECK(parameter_checksum(full) == parameter_checksum(merge_deltas(net)));

    LayeredNet none = extract_subnetwork(net, PruneMask(8));
    CHECK(none.n_layers() == 0);
    Tensor x = random_matrix(rng, 2, 8);
    Tape t(false);
    CHECK(bit_equal(forward(t, none, x, nullptr), projection_only(net, x)));
}

TEST_CASE("fresh deltas change no output bit") {
    Rng rng(8);
    LayeredNet net = random_net(3, 4, 2, 10);
    Tensor x = random_matrix(rng, 5, 8), cond = random_matrix(rng, 5, 2);
    Tape t(false);
    Tensor before = forward(t, net, x, &cond);
    attach_deltas(net, 4, 4.0, 11);
    CHECK(bit_equal(before, forward(t, net, x, &cond)));
}

TEST_CASE("pre-caching is bit-exact and ignores later conditioning") {
    Rng rng(12);
    LayeredNet net = random_net(4, 6, 3, 13);
    Tensor c = Tensor::vector({0.3, -0.7, 1.1});
    LayeredNet cached = precache_modulation(net, c);
    CHECK_FALSE(cached.needs_cond());
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_matrix(rng, 3, 8);
        std::vector<double> rows;
        for (int r = 0; r < 3; ++r) rows.insert(rows.end(), c.data().begin(), c.data().end());
        Tensor cond = Tensor::matrix(3, 3, rows);
        Tensor other = random_matrix(rng, 3, 3);
        Tape t(false);
        Tensor want = forward(t, net, x, &cond);
        CHECK(bit_equal(forward(t, cached, x, nullptr), want));
        CHECK(bit_equal(forward(t, cached, x, &other), want));
    }

    // zero conditioning on zero-initialised modulation caches the identity
    LayeredNet fresh = precache_modulation(init_net(2, 4, 3, 1), Tensor::zeros({3}));
    for (double v : fresh.layers[0].modulation->cached->scale.data()) CHECK(v == 0.0);
    for (double v : fresh.layers[0].modulation->cached->shift.data()) CHECK(v == 0.0);

    // a second call overwrites the cache
    Tensor c2 = Tensor::vector({-1.0, 0.0, 0.5});
    LayeredNet twice = precache_modulation(cached, c2);
    LayeredNet once = precache_modulation(net, c2);
    CHECK(parameter_checksum(twice) == parameter_checksum(once));

    CHECK_THROWS_AS(precache_modulation(net, Tensor::zeros({2})), ContractError);
}

TEST_CASE("strip_conditioning") {
    Rng rng(14);
    LayeredNet net = random_net(4, 6, 8, 15);
    LayeredNet stripped = strip_conditioning(net);
    CHECK(stripped.c == 0);
    CHECK(parameter_count(stripped) < parameter_count(net));
    for (const LayerBlock& l : stripped.layers) {
        REQUIRE(l.modulation.has_value());
        CHECK_FALSE(l.modulation->w_cond.defined());
        CHECK(l.modulation->cached.has_value());
    }
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = random_matrix(rng, 1, 8);
        Tensor zeros = Tensor::zeros({1, 8});
        Tape t(false);
        CHECK(bit_equal(forward(t, stripped, x, nullptr), forward(t, net, x, &zeros)));
    }
    LayeredNet again = strip_conditioning(stripped);
    CHECK(parameter_checksum(again) == parameter_checksum(stripped));

    LayeredNet plain = init_net(2, 4, 0, 3);
    CHECK(parameter_checksum(strip_conditioning(plain)) == parameter_checksum(plain));
}

TEST_CASE("checkpoint round trip keeps every parameter") {
    LayeredNet net = random_net(3, 4, 2, 20);
    attach_deltas(net, 2, 2.0, 21);
    LayeredNet back = net_from_checkpoint(to_checkpoint(net));
    CHECK(parameter_checksum(back) == parameter_checksum(net));
    CHECK(to_checkpoint(back).encode() == to_checkpoint(net).encode());
    CHECK(to_checkpoint(net).contains("layer.0.w_in"));
    CHECK(to_checkpoint(strip_conditioning(net)).contains("mod.1.cached.scale"));
}
