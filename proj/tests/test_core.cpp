#include <doctest.h>

#include <cmath>

#include "growthsim/core.hpp"
#include "growthsim/rng.hpp"

using namespace growthsim;

TEST_SUITE("core") {

TEST_CASE("logistic curve hits half cover at the midpoint") {
  CHECK(logistic_cc(20.0, {1.0, 0.2, 20.0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(logistic_cc(20.0, {0.8, 0.3, 20.0}) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("logistic curve value five days past the midpoint") {
  CHECK(logistic_cc(25.0, {1.0, 0.2, 20.0}) ==
        doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("inverse recovers the day for a given cover") {
  const GrowthParams p{1.0, 0.2, 20.0};
  CHECK(inverse_logistic(0.5, p) == doctest::Approx(20.0).epsilon(1e-12));
  // closed form 20 - ln(97/3)/0.2; cross-checked by evaluating the curve there
  const double t = inverse_logistic(0.03, p);
  CHECK(t == doctest::Approx(2.619506550823961).epsilon(1e-12));
  CHECK(logistic_cc(t, p) == doctest::Approx(0.03).epsilon(1e-9));
}

TEST_CASE("inverse rejects cover outside (0, cc_max)") {
  const GrowthParams p{1.0, 0.2, 20.0};
  CHECK_THROWS_AS(inverse_logistic(1.0, p), std::domain_error);
  CHECK_THROWS_AS(inverse_logistic(0.0, p), std::domain_error);
  CHECK_THROWS_AS(inverse_logistic(-0.1, p), std::domain_error);
  CHECK_THROWS_AS(inverse_logistic(0.9, GrowthParams{0.8, 0.3, 20.0}),
                  std::domain_error);
}

TEST_CASE("inverse composed with the curve is the identity") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    GrowthParams p{rng.uniform(0.1, 1.0), rng.uniform(0.05, 2.0),
                   rng.uniform(1.0, 60.0)};
    const double cc = rng.uniform(1e-6, 1.0) * p.cc_max;
    if (cc <= 0.0 || cc >= p.cc_max) continue;
    const double t = inverse_logistic(cc, p);
    CHECK(std::fabs(logistic_cc(t, p) - cc) < 1e-12);
    // stay off the saturated tails, where cover is no longer representable
    // distinctly from cc_max and the inverse loses meaning
    const double t2 = p.t0 + rng.uniform(-10.0, 10.0) / p.k;
    CHECK(std::fabs(inverse_logistic(logistic_cc(t2, p), p) - t2) < 1e-9);
  }
}

TEST_CASE("curve is monotone in t and symmetric about the midpoint") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    GrowthParams p{rng.uniform(0.2, 1.0), rng.uniform(0.05, 2.0),
                   rng.uniform(5.0, 50.0)};
    // strict monotonicity is only numerically visible off the flat tails
    const double t = p.t0 + rng.uniform(-10.0, 10.0) / p.k;
    CHECK(logistic_cc(t + 1e-3, p) > logistic_cc(t, p));
    CHECK(logistic_cc(t, p) + logistic_cc(2.0 * p.t0 - t, p) ==
          doctest::Approx(p.cc_max).epsilon(1e-12));
    // steeper k raises late cover and lowers early cover
    GrowthParams steeper = p;
    steeper.k += 0.01;
    if (t > p.t0 + 1e-3) CHECK(logistic_cc(t, steeper) > logistic_cc(t, p));
    if (t < p.t0 - 1e-3) CHECK(logistic_cc(t, steeper) < logistic_cc(t, p));
  }
}

TEST_CASE("reward is zero at the target and negative elsewhere") {
  const RewardConfig cfg{0.3, 100.0};
  CHECK(reward(0.3, cfg) == 0.0);
  CHECK(reward(0.4, cfg) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(reward(0.2, cfg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("reward is non-positive and symmetric about the target") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const RewardConfig cfg{rng.uniform(0.05, 1.0), rng.uniform(1.0, 500.0)};
    const double d = rng.uniform(0.0, 2.0);
    CHECK(reward(cfg.k_target + d, cfg) <= 0.0);
    CHECK(reward(cfg.k_target + d, cfg) ==
          doctest::Approx(reward(cfg.k_target - d, cfg)).epsilon(1e-12));
    CHECK((reward(cfg.k_target + d, cfg) == 0.0) == (d == 0.0));
  }
}

}  // TEST_SUITE
