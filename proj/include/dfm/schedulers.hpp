#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfm/errors.hpp"

namespace dfm {

struct SchedulerValue {
  double kappa = 0.0;
  double kappa_dot = 0.0;
};

// Monotone interpolation coefficient kappa: [0,1] -> [0,1] with kappa(0) = 0
// and kappa(1) = 1, evaluated together with its derivative.
class ScalarScheduler {
 public:
  enum class Kind { linear, cubic_poly, cosine };

  static ScalarScheduler linear();
  // Cubic with endpoint derivatives a at t=0 and b at t=1. (0, 0) is the
  // smoothstep; (0, 2) is exactly t^2; (1, 1) degenerates to linear.
  static ScalarScheduler cubic_poly(double a, double b);
  static ScalarScheduler cosine();

  SchedulerValue eval(double t) const;

  Kind kind() const { return kind_; }
  double a() const { return a_; }
  double b() const { return b_; }
  std::string describe() const;

 private:
  ScalarScheduler(Kind kind, double a, double b);
  void check_shape() const;

  Kind kind_ = Kind::linear;
  double a_ = 0.0;
  double b_ = 0.0;
};

// Per-component interpolation weights of a mixture path. Component 0 always
// multiplies the target delta and the last component the source delta; an
// optional middle component multiplies a fixed noise distribution. Weights
// form a probability vector at every t, so the derivatives sum to zero.
class MixtureScheduler {
 public:
  enum class Kind { two_component, uniform_noise_triple };

  // [kappa, 1 - kappa] over (target, source).
  static MixtureScheduler two_component(ScalarScheduler base);
  // [kappa, c*kappa*(1-kappa), (1-kappa)*(1-c*kappa)] over
  // (target, noise, source).
  static MixtureScheduler uniform_noise_triple(ScalarScheduler base, double c);

  std::size_t components() const;
  // `position` is reserved for per-position schedules; the built-in kinds are
  // shared across positions and ignore it.
  std::vector<SchedulerValue> eval(double t, std::size_t position = 0) const;

  Kind kind() const { return kind_; }
  const ScalarScheduler& base() const { return base_; }
  double c() const { return c_; }

 private:
  MixtureScheduler(Kind kind, ScalarScheduler base, double c);

  Kind kind_;
  ScalarScheduler base_;
  double c_ = 0.0;
};

// Overshoot schedule for corrector sampling: alpha_t = 1 + alpha*t^a*(1-t)^b
// and beta_t = alpha_t - 1.
struct CorrectorSchedule {
  double alpha = 12.0;
  double a = 2.0;
  double b = 0.25;

  struct Value {
    double alpha_t = 1.0;
    double beta_t = 0.0;
  };

  Value eval(double t) const;
  void validate() const;
};

// Sampling temperature, optionally decaying as tau*(1-t)^2.
struct TemperatureSchedule {
  double tau = 1.0;
  bool decay = false;

  double eval(double t) const;
  void validate() const;
};

// Solves kappa(t') = kappa_prime(t) for t' by bisection (interval width
// 1e-12, at most 200 halvings). Lets a model trained under `kappa` sample
// under `kappa_prime`. Requires strictly increasing kappa.
double scheduler_time_remap(const ScalarScheduler& kappa,
                            const ScalarScheduler& kappa_prime, double t);

}  // namespace dfm
