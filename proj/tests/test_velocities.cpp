#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dfm/velocities.hpp"

using namespace dfm;

namespace {

const SpaceSpec kMasked2{.d = 2, .has_mask = true, .positions = 1};
const SpaceSpec kPlain3{.d = 3, .has_mask = false, .positions = 1};

// Exact factor posteriors for one masked position under a convex path:
// a masked state has seen nothing, so the data posterior is the target
// marginal; an unmasked state pins the data token. The noise side is always
// the mask delta.
struct MaskedConvexPosterior : PosteriorProvider {
  TokenPMF q;  // over the full alphabet, zero mass on the mask

  TokenPMF factor_posterior(std::size_t factor, std::size_t,
                            const Sequence& z, double) const override {
    if (factor == 1) return delta_pmf(2, 3);
    if (z[0] == 2) return q;
    return delta_pmf(z[0], 3);
  }
  bool time_independent() const override { return true; }
};

// Exact factor posteriors for one position with a uniform source and an
// independent coupling: p_t(z) = (1-kappa)/d + kappa*q(z) with
// p(x1 | z) = q(x1) * ((1-kappa)/d + kappa*[x1 == z]) / p_t(z) and
// p(x0 | z) = (1/d) * ((1-kappa)*[x0 == z] + kappa*q(z)) / p_t(z).
struct UniformConvexPosterior : PosteriorProvider {
  ScalarScheduler kappa = ScalarScheduler::linear();
  TokenPMF q;

  TokenPMF factor_posterior(std::size_t factor, std::size_t,
                            const Sequence& z, double t) const override {
    const double k = kappa.eval(t).kappa;
    const double d = static_cast<double>(q.size());
    const double pt = (1.0 - k) / d + k * q[z[0]];
    TokenPMF out(q.size());
    for (std::size_t x = 0; x < q.size(); ++x) {
      if (factor == 0) {
        out[x] = q[x] * ((1.0 - k) / d + k * (x == z[0] ? 1.0 : 0.0)) / pt;
      } else {
        out[x] =
            (1.0 / d) * ((1.0 - k) * (x == z[0] ? 1.0 : 0.0) + k * q[z[0]]) / pt;
      }
    }
    return out;
  }
};

double rate_sum(const RateVector& v) {
  double acc = 0.0;
  for (double r : v.rates) acc += r;
  return acc;
}

}  // namespace

TEST_CASE("velocity coefficients factor out the shrinking component") {
  const auto mix = MixtureScheduler::two_component(ScalarScheduler::linear());

  // Forward: pivot is the source component, a = [kd/(1-k), 0].
  const auto fwd = velocity_coefficients(mix, 0.25, 0, Direction::forward);
  CHECK(fwd.pivot == 1);
  CHECK(fwd.b == doctest::Approx(-1.0 / 0.75).epsilon(1e-9));
  CHECK(fwd.a[0] == doctest::Approx(1.0 + 0.25 / 0.75).epsilon(1e-9));
  CHECK(fwd.a[1] == doctest::Approx(0.0));

  // Backward: pivot flips to the growing target component.
  const auto bwd = velocity_coefficients(mix, 0.25, 0, Direction::backward);
  CHECK(bwd.pivot == 0);
  CHECK(bwd.b == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(bwd.a[0] == doctest::Approx(0.0));
  CHECK(bwd.a[1] == doctest::Approx(-1.0 - 0.75 * 4.0).epsilon(1e-9));

  // Endpoints are clamped rather than singular.
  CHECK(std::isfinite(velocity_coefficients(mix, 0.0, 0, Direction::forward).b));
  CHECK(std::isfinite(velocity_coefficients(mix, 1.0, 0, Direction::forward).b));
}

TEST_CASE("convex conditional velocity reduces to endpoint deltas") {
  const auto path = ConditionalPath::convex(ScalarScheduler::cubic_poly(0.0, 2.0));
  const Sequence x0{2};
  const Sequence x1{1};
  for (double t : {0.2, 0.5, 0.8}) {
    const auto value = path.scheduler().base().eval(t);
    for (TokenId cur : {0u, 1u, 2u}) {
      const Sequence z{cur};
      const auto cond =
          conditional_velocity(path, kMasked2, Direction::forward, t, 0, z, x0, x1);
      // kappa_dot/(1-kappa) * (delta_{x1} - delta_z)
      const double scale = value.kappa_dot / (1.0 - value.kappa);
      for (TokenId k = 0; k < 3; ++k) {
        const double expected =
            scale * ((k == 1 ? 1.0 : 0.0) - (k == cur ? 1.0 : 0.0));
        CHECK(cond.rates[k] == doctest::Approx(expected).epsilon(1e-12));
      }
      CHECK(std::fabs(rate_sum(cond)) <= 1e-12);
      CHECK(validate_rates(cond, cur, Direction::forward));

      // The same reduction holds for the denoiser form.
      const auto dn = denoiser_velocity(path.scheduler().base(), kMasked2,
                                        delta_pmf(1, 3), t, 0, z);
      for (TokenId k = 0; k < 3; ++k)
        CHECK(dn.rates[k] == doctest::Approx(cond.rates[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("convex backward velocity reduces to the noise form") {
  const auto path = ConditionalPath::convex(ScalarScheduler::linear());
  const Sequence x0{2};
  const Sequence x1{0};
  for (double t : {0.3, 0.6, 0.9}) {
    for (TokenId cur : {0u, 2u}) {
      const Sequence z{cur};
      const auto cond = conditional_velocity(path, kMasked2, Direction::backward,
                                             t, 0, z, x0, x1);
      const auto np = noise_pred_velocity(ScalarScheduler::linear(), kMasked2,
                                          delta_pmf(2, 3), t, 0, z);
      for (TokenId k = 0; k < 3; ++k)
        CHECK(cond.rates[k] == doctest::Approx(np.rates[k]).epsilon(1e-12));
      CHECK(validate_rates(cond, cur, Direction::backward));
    }
  }
}

TEST_CASE("masked marginal velocity from the data posterior") {
  MaskedConvexPosterior posterior;
  posterior.q = TokenPMF{0.3, 0.7, 0.0};
  const auto path = ConditionalPath::convex(ScalarScheduler::linear());
  const Sequence masked{2};

  const auto u = marginal_velocity(path, kMasked2, posterior,
                                   Direction::forward, 0.5, 0, masked);
  CHECK(u.rates[0] == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(u.rates[1] == doctest::Approx(1.4).epsilon(1e-9));
  CHECK(u.rates[2] == doctest::Approx(-2.0).epsilon(1e-9));

  // Unmasked states are absorbing: the posterior collapses to the state.
  const auto frozen = marginal_velocity(path, kMasked2, posterior,
                                        Direction::forward, 0.5, 0, Sequence{1});
  for (double r : frozen.rates) CHECK(r == doctest::Approx(0.0));

  // Denoiser shortcut with a fifty-fifty posterior at kappa = 3/4.
  const auto dn = denoiser_velocity(ScalarScheduler::linear(), kMasked2,
                                    TokenPMF{0.5, 0.5, 0.0}, 0.75, 0, masked);
  CHECK(dn.rates[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(dn.rates[1] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(dn.rates[2] == doctest::Approx(-4.0).epsilon(1e-9));
}

TEST_CASE("marginal velocity averages conditional velocities by the posterior") {
  // With an all-mask source the pair posterior is the target conditional, so
  // the mixture identity can be checked directly against enumeration.
  MaskedConvexPosterior provider;
  provider.q = TokenPMF{0.15, 0.85, 0.0};
  const auto path = ConditionalPath::convex(ScalarScheduler::cubic_poly(0.0, 2.0));
  const Sequence masked{2};
  const Sequence x0{2};

  for (double t : {0.2, 0.5, 0.8}) {
    const auto marginal = marginal_velocity(path, kMasked2, provider,
                                            Direction::forward, t, 0, masked);
    std::vector<double> blended(3, 0.0);
    for (TokenId x1 = 0; x1 < 2; ++x1) {
      const auto cond = conditional_velocity(path, kMasked2, Direction::forward,
                                             t, 0, masked, x0, Sequence{x1});
      for (TokenId k = 0; k < 3; ++k)
        blended[k] += provider.q[x1] * cond.rates[k];
    }
    for (TokenId k = 0; k < 3; ++k)
      CHECK(marginal.rates[k] == doctest::Approx(blended[k]).epsilon(1e-12));
  }
}

TEST_CASE("conditional continuity equation holds on the uniform-noise path") {
  // d/dt p_t(x | x0, x1) must equal the rate inflow under the conditional
  // velocity; checked by central differences on a single position.
  const auto path =
      ConditionalPath::uniform_noise(ScalarScheduler::linear(), 0.5);
  const SpaceSpec space{.d = 3, .has_mask = true, .positions = 1};
  const Sequence x0{3};
  const Sequence x1{1};
  const double t = 0.5;
  const double h = 1e-5;

  for (TokenId x = 0; x < 4; ++x) {
    const auto plus = cond_path_token_pmf(path, space, t + h, 0, x0, x1);
    const auto minus = cond_path_token_pmf(path, space, t - h, 0, x0, x1);
    const double dpdt = (plus[x] - minus[x]) / (2.0 * h);
    double inflow = 0.0;
    for (TokenId zt = 0; zt < 4; ++zt) {
      const Sequence z{zt};
      const auto u = conditional_velocity(path, space, Direction::forward, t, 0,
                                          z, x0, x1);
      inflow += cond_path_token_pmf(path, space, t, 0, x0, x1)[zt] * u.rates[x];
    }
    CHECK(std::fabs(dpdt - inflow) <= 1e-6);
  }
}

TEST_CASE("zero-weight noise factor reduces to the convex path") {
  const auto noisy = ConditionalPath::uniform_noise(ScalarScheduler::linear(), 0.0);
  const auto convex = ConditionalPath::convex(ScalarScheduler::linear());
  const Sequence x0{2};
  const Sequence x1{0};
  for (double t : {0.1, 0.5, 0.9}) {
    for (TokenId cur : {0u, 1u, 2u}) {
      const Sequence z{cur};
      const auto a = conditional_velocity(noisy, kMasked2, Direction::forward, t,
                                          0, z, x0, x1);
      const auto b = conditional_velocity(convex, kMasked2, Direction::forward,
                                          t, 0, z, x0, x1);
      for (TokenId k = 0; k < 3; ++k)
        CHECK(a.rates[k] == doctest::Approx(b.rates[k]).epsilon(1e-9));
      const auto coeffs = velocity_coefficients(noisy.scheduler(), t, 0,
                                                Direction::forward);
      CHECK(coeffs.pivot != 1);  // the dead component is never the pivot
    }
  }
}

TEST_CASE("posterior-free backward velocity on an iid source") {
  const auto u = simple_backward_velocity(ScalarScheduler::linear(),
                                          SpaceSpec{2, false, 1},
                                          TokenPMF{0.5, 0.5}, 0.5, 0,
                                          Sequence{0});
  CHECK(u.rates[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(u.rates[1] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(validate_rates(u, 0, Direction::backward));

  const CouplingSpec prefix{CouplingSpec::Kind::conditional_prefix};
  CHECK_THROWS_AS(
      simple_backward_velocity(ScalarScheduler::linear(), kMasked2,
                               SourceSpec::all_mask(), prefix, 0.5, 0,
                               Sequence{2}),
      config_error);
}

TEST_CASE("posterior-free and posterior backward velocities induce the same flow") {
  // Their difference must be divergence-free against the marginal law; for a
  // single position that is a plain weighted sum over states.
  UniformConvexPosterior posterior;
  posterior.kappa = ScalarScheduler::cubic_poly(0.0, 2.0);
  posterior.q = TokenPMF{0.2, 0.5, 0.3};
  const TokenPMF uniform{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  for (double t : {0.2, 0.5, 0.8}) {
    const double k = posterior.kappa.eval(t).kappa;
    for (TokenId x = 0; x < 3; ++x) {
      double net = 0.0;
      for (TokenId zt = 0; zt < 3; ++zt) {
        const Sequence z{zt};
        const double pt = (1.0 - k) / 3.0 + k * posterior.q[zt];
        const auto simple = simple_backward_velocity(
            posterior.kappa, kPlain3, uniform, t, 0, z);
        const auto exact = noise_pred_velocity(posterior.kappa, kPlain3,
                                               posterior, t, 0, z);
        net += pt * (simple.rates[x] - exact.rates[x]);
      }
      CHECK(std::fabs(net) <= 1e-12);
    }
  }
}

TEST_CASE("corrector velocity blends forward and backward rates") {
  MaskedConvexPosterior posterior;
  posterior.q = TokenPMF{0.3, 0.7, 0.0};
  const Sequence masked{2};
  const auto fwd = denoiser_velocity(ScalarScheduler::linear(), kMasked2,
                                     posterior, 0.5, 0, masked);
  const auto bwd = noise_pred_velocity(ScalarScheduler::linear(), kMasked2,
                                       posterior, 0.5, 0, masked);
  const auto mixed = corrector_velocity(fwd, bwd, 2.0, 1.0);
  CHECK(mixed.rates[0] == doctest::Approx(1.2).epsilon(1e-9));
  CHECK(mixed.rates[1] == doctest::Approx(2.8).epsilon(1e-9));
  CHECK(mixed.rates[2] == doctest::Approx(-4.0).epsilon(1e-9));
  CHECK(std::fabs(rate_sum(mixed)) <= 1e-12);

  CHECK_THROWS_AS(corrector_velocity(fwd, bwd, 0.0, 1.0), config_error);
  CHECK_THROWS_AS(corrector_velocity(fwd, bwd, 1.0, -0.5), config_error);
}

TEST_CASE("rate validation enforces signs and zero sum") {
  RateVector good{0, {0.6, 1.4, -2.0}};
  CHECK(validate_rates(good, 2, Direction::forward));
  CHECK_FALSE(validate_rates(good, 2, Direction::backward));

  RateVector unbalanced{0, {0.5, 0.0, -2.0}};
  CHECK_FALSE(validate_rates(unbalanced, 2, Direction::forward));

  RateVector negative_off{0, {-0.5, 2.5, -2.0}};
  CHECK_FALSE(validate_rates(negative_off, 2, Direction::forward));

  RateVector backward_ok{0, {-0.5, -0.5, 1.0}};
  CHECK(validate_rates(backward_ok, 2, Direction::backward));
}

TEST_CASE("remapped posterior queries the trained schedule's clock") {
  UniformConvexPosterior trained;
  trained.kappa = ScalarScheduler::cubic_poly(0.0, 2.0);
  trained.q = TokenPMF{0.2, 0.5, 0.3};
  const RemappedPosterior remapped(trained, trained.kappa,
                                   ScalarScheduler::linear());
  const Sequence z{1};
  for (double t : {0.04, 0.25, 0.64, 0.81}) {
    // kappa(t') = t'^2 matches the linear schedule's value t at t' = sqrt(t).
    const auto direct = trained.factor_posterior(0, 0, z, std::sqrt(t));
    const auto mapped = remapped.factor_posterior(0, 0, z, t);
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(mapped[k] == doctest::Approx(direct[k]).epsilon(1e-9));
  }
}
