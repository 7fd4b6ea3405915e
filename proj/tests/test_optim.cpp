#include <doctest.h>


#include "dbf/errors.hpp"
#include "dbf/optim.hpp"
#include "support.hpp"

using namespace dbf;
using dbf::testing::random_tensor;

namespace {

Tensor vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Parameter param(ParamId id, std::vector<double> v) { return {id, 0, "weight", vec(std::move(v))}; }

SgdConfig plain(double momentum = 0.0, double wd = 0.0) {
    SgdConfig c;
    c.momentum = momentum;
    c.weight_decay = wd;
    return c;
}

}  // namespace

TEST_SUITE("clip_gradients") {
    TEST_CASE("below the threshold nothing changes") {
        const Gradients g{{0, vec({3, 4})}};
        CHECK(global_norm(g) == 5.0);
        CHECK(clip_gradients(g, 35.0).at(0).bit_equal(g.at(0)));
    }

    TEST_CASE("norm 70 against 35 halves every entry") {
        const Gradients g{{0, vec({42})}, {1, vec({56})}};
        CHECK(global_norm(g) == 70.0);
        const Gradients c = clip_gradients(g, 35.0);
        for (const auto& [id, t] : g) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                CHECK(c.at(id)[i] == doctest::Approx(t[i] / 2).epsilon(1e-14));
            }
        }
    }

    TEST_CASE("empty gradients pass through") { CHECK(clip_gradients({}, 35.0).empty()); }

    TEST_CASE("max_norm must be positive") { CHECK_THROWS_AS(clip_gradients({}, 0.0), ConfigError); }

    TEST_CASE("property: clipped norm bounded and clipping idempotent") {
        for (std::uint64_t trial = 0; trial < 200; ++trial) {
            KeyedStream rng(derive_key(31, trial));
            Gradients g;
            const std::size_t n = 1 + rng.below(4);
            const double scale = rng.uniform(0.0, 40.0);
            for (ParamId id = 0; id < n; ++id) g.emplace(id, random_tensor(rng, {1 + rng.below(5)}, -scale, scale));
            const double m = rng.uniform(0.5, 35.0);
            const Gradients once = clip_gradients(g, m);
            const Gradients twice = clip_gradients(once, m);
            CHECK(global_norm(once) <= m + 1e-12);
            for (const auto& [id, t] : once) {
                if (global_norm(g) <= m) {
                    CHECK(twice.at(id).bit_equal(t));
                } else {
                    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(twice.at(id)[i] - t[i]) <= 1e-12);
                }
            }
        }
    }
}

TEST_SUITE("sgd_step") {
    TEST_CASE("vanilla step") {
        std::vector<Parameter> p{param(0, {1.0})};
        OptimState s;
        sgd_step(p, {{0, vec({0.5})}}, s, 0.1, plain());
        CHECK(p[0].value[0] == 0.95);
    }

    TEST_CASE("weight decay applies to a present zero gradient") {
        std::vector<Parameter> p{param(0, {1.0})};
        OptimState s;
        sgd_step(p, {{0, vec({0.0})}}, s, 0.1, plain(0.0, 0.0001));
        CHECK(p[0].value[0] == doctest::Approx(0.99999).epsilon(1e-15));
    }

    TEST_CASE("absent parameters and their velocity are untouched") {
        std::vector<Parameter> p{param(0, {1.0, 2.0}), param(1, {3.0})};
        OptimState s;
        const SgdConfig cfg;
        sgd_step(p, {{0, vec({0.1, 0.2})}, {1, vec({0.3})}}, s, 0.01, cfg);
        const Tensor w1 = p[1].value, v1 = s.velocity.at(1);
        for (int i = 0; i < 5; ++i) sgd_step(p, {{0, vec({0.1, 0.2})}}, s, 0.01, cfg);
        CHECK(p[1].value.bit_equal(w1));
        CHECK(s.velocity.at(1).bit_equal(v1));
    }

    TEST_CASE("velocity is created lazily") {
        std::vector<Parameter> p{param(0, {1.0}), param(1, {1.0})};
        OptimState s;
        sgd_step(p, {{1, vec({1.0})}}, s, 0.1, SgdConfig{});
        CHECK(s.velocity.count(0) == 0);
        CHECK(s.velocity.count(1) == 1);
    }

    TEST_CASE("momentum accumulates against a hand-rolled recurrence") {
        std::vector<Parameter> p{param(0, {0.7, -1.2})};
        OptimState s;
        const SgdConfig cfg;  // momentum 0.9, weight decay 1e-4
        double w[2] = {0.7, -1.2}, v[2] = {0.0, 0.0};
        const double grads[3][2] = {{0.5, -0.25}, {0.1, 0.3}, {-0.4, 0.0}};
        for (const auto& g : grads) {
            sgd_step(p, {{0, vec({g[0], g[1]})}}, s, 0.05, cfg);
            for (int i = 0; i < 2; ++i) {
                const double gi = g[i] + 1e-4 * w[i];
                v[i] = 0.9 * v[i] + gi;
                w[i] -= 0.05 * v[i];
            }
        }
        CHECK(p[0].value[0] == w[0]);
        CHECK(p[0].value[1] == w[1]);
    }

    TEST_CASE("errors") {
        std::vector<Parameter> p{param(0, {1.0})};
        OptimState s;
        CHECK_THROWS_AS(sgd_step(p, {{0, vec({1.0, 2.0})}}, s, 0.1, SgdConfig{}), ShapeError);
        CHECK_THROWS_AS(sgd_step(p, {{0, vec({1.0})}}, s, 0.0, SgdConfig{}), ConfigError);
        SgdConfig bad;
        bad.momentum = 1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = {};
        bad.clip_max_norm = 0.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }

    TEST_CASE("defaults") {
        const SgdConfig c;
        CHECK(c.momentum == 0.9);
        CHECK(c.weight_decay == 1e-4);
        CHECK(c.clip_max_norm == 35.0);
        CHECK(c.batch_size == 8);
        CHECK_FALSE(c.reset_velocity_on_unfreeze);
    }
}
