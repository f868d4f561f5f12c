#include "dfm/schedulers.hpp"

#include <cmath>
#include <numbers>

namespace dfm {
namespace {

constexpr double kBoundaryTol = 1e-12;
constexpr int kShapeGridSteps = 1000;

void check_time_argument(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw contract_error("scheduler evaluated outside [0, 1] at t = " +
                         std::to_string(t));
}

}  // namespace

ScalarScheduler::ScalarScheduler(Kind kind, double a, double b)
    : kind_(kind), a_(a), b_(b) {
  check_shape();
}

ScalarScheduler ScalarScheduler::linear() {
  return ScalarScheduler(Kind::linear, 0.0, 0.0);
}

ScalarScheduler ScalarScheduler::cubic_poly(double a, double b) {
  return ScalarScheduler(Kind::cubic_poly, a, b);
}

ScalarScheduler ScalarScheduler::cosine() {
  return ScalarScheduler(Kind::cosine, 0.0, 0.0);
}

SchedulerValue ScalarScheduler::eval(double t) const {
  check_time_argument(t);
  switch (kind_) {
    case Kind::linear:
      return {t, 1.0};
    case Kind::cubic_poly: {
      const double t2 = t * t;
      const double t3 = t2 * t;
      const double kappa =
          -2.0 * t3 + 3.0 * t2 + a_ * (t3 - 2.0 * t2 + t) + b_ * (t3 - t2);
      const double kappa_dot = -6.0 * t2 + 6.0 * t +
                               a_ * (3.0 * t2 - 4.0 * t + 1.0) +
                               b_ * (3.0 * t2 - 2.0 * t);
      return {kappa, kappa_dot};
    }
    case Kind::cosine: {
      const double half_pi = 0.5 * std::numbers::pi;
      return {1.0 - std::cos(half_pi * t), half_pi * std::sin(half_pi * t)};
    }
  }
  throw contract_error("unreachable scheduler kind");
}

std::string ScalarScheduler::describe() const {
  switch (kind_) {
    case Kind::linear:
      return "linear";
    case Kind::cubic_poly:
      return "cubic_poly(a=" + std::to_string(a_) + ",b=" + std::to_string(b_) +
             ")";
    case Kind::cosine:
      return "cosine";
  }
  return "unknown";
}

void ScalarScheduler::check_shape() const {
  const double at0 = eval(0.0).kappa;
  const double at1 = eval(1.0).kappa;
  if (std::fabs(at0) > kBoundaryTol || std::fabs(at1 - 1.0) > kBoundaryTol)
    throw config_error("scheduler must run from 0 to 1, got kappa(0) = " +
                       std::to_string(at0) + ", kappa(1) = " +
                       std::to_string(at1));
  double previous = at0;
  for (int i = 1; i <= kShapeGridSteps; ++i) {
    const double t = static_cast<double>(i) / kShapeGridSteps;
    const double current = eval(t).kappa;
    if (current < previous - kBoundaryTol)
      throw config_error("scheduler is not monotone near t = " +
                         std::to_string(t));
    previous = current;
  }
}

MixtureScheduler::MixtureScheduler(Kind kind, ScalarScheduler base, double c)
    : kind_(kind), base_(base), c_(c) {
  if (kind_ == Kind::uniform_noise_triple && !(c_ >= 0.0 && c_ <= 1.0))
    throw config_error("noise weight c must lie in [0, 1], got " +
                       std::to_string(c_));
}

MixtureScheduler MixtureScheduler::two_component(ScalarScheduler base) {
  return MixtureScheduler(Kind::two_component, base, 0.0);
}

MixtureScheduler MixtureScheduler::uniform_noise_triple(ScalarScheduler base,
                                                        double c) {
  return MixtureScheduler(Kind::uniform_noise_triple, base, c);
}

std::size_t MixtureScheduler::components() const {
  return kind_ == Kind::two_component ? 2 : 3;
}

std::vector<SchedulerValue> MixtureScheduler::eval(double t,
                                                   std::size_t) const {
  const SchedulerValue base = base_.eval(t);
  const double k = base.kappa;
  const double kd = base.kappa_dot;
  if (kind_ == Kind::two_component) return {{k, kd}, {1.0 - k, -kd}};
  const double noise = c_ * k * (1.0 - k);
  const double noise_dot = c_ * kd * (1.0 - 2.0 * k);
  const double source = (1.0 - k) * (1.0 - c_ * k);
  const double source_dot = -kd * (1.0 + c_ * (1.0 - 2.0 * k));
  return {{k, kd}, {noise, noise_dot}, {source, source_dot}};
}

CorrectorSchedule::Value CorrectorSchedule::eval(double t) const {
  check_time_argument(t);
  const double bump = alpha * std::pow(t, a) * std::pow(1.0 - t, b);
  return {1.0 + bump, bump};
}

void CorrectorSchedule::validate() const {
  if (!(alpha >= 0.0))
    throw config_error("corrector overshoot alpha must be >= 0");
  if (!(a >= 0.0) || !(b >= 0.0))
    throw config_error("corrector exponents must be >= 0");
}

double TemperatureSchedule::eval(double t) const {
  check_time_argument(t);
  return decay ? tau * (1.0 - t) * (1.0 - t) : tau;
}

void TemperatureSchedule::validate() const {
  if (!(tau > 0.0)) throw config_error("temperature tau must be positive");
}

double scheduler_time_remap(const ScalarScheduler& kappa,
                            const ScalarScheduler& kappa_prime, double t) {
  check_time_argument(t);
  double previous = kappa.eval(0.0).kappa;
  for (int i = 1; i <= kShapeGridSteps; ++i) {
    const double s = static_cast<double>(i) / kShapeGridSteps;
    const double current = kappa.eval(s).kappa;
    if (current <= previous)
      throw config_error(
          "time remap requires a strictly increasing schedule, flat near t = " +
          std::to_string(s));
    previous = current;
  }

  const double target = kappa_prime.eval(t).kappa;
  if (target <= 0.0) return 0.0;
  if (target >= 1.0) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200 && (hi - lo) > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (kappa.eval(mid).kappa < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace dfm
