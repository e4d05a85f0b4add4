#pragma once

#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

namespace gmflow {

struct TauValue {
  double tau = 0.0;
  double tau_dot = 0.0;  // right-hand slope at knots
};

/// Two-phase dilation on [0, 2]: slope kappa/sqrt(d) on [0,1], then linear to 1.
TauValue tau_two_mode(double t, double kappa, int d);

/// Multi-scale dilation on [0, 1] for mode norms |r_1| <= ... <= |r_m|. The
/// first m pieces (each 1/(m+1) long) resolve the modes from the largest norm
/// down; the last piece carries tau linearly to 1. Equal norms are merged.
TauValue tau_multi_mode(double t, double kappa, std::span<const double> norms);

enum class ScheduleKind { identity, two_mode_dilated, multi_mode };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

/// Immutable time reparameterization tau(t) with alpha = 1 - tau, beta = tau.
class TimeSchedule {
 public:
  static TimeSchedule identity();
  static TimeSchedule two_mode(double kappa, int d);
  static TimeSchedule multi_mode(double kappa, std::vector<double> norms);

  ScheduleKind kind() const { return kind_; }
  double kappa() const { return kappa_; }
  int d() const { return d_; }
  /// Distinct ascending norms actually used (multi_mode only).
  const std::vector<double>& norms() const { return norms_; }

  double t_begin() const { return 0.0; }
  double t_end() const { return kind_ == ScheduleKind::two_mode_dilated ? 2.0 : 1.0; }
  bool contains(double t) const { return t >= t_begin() && t <= t_end(); }

  TauValue tau(double t) const;

  /// Piece boundaries including both domain endpoints.
  std::vector<double> knots() const;

  /// Uniform grid of `points` times spanning the domain.
  std::vector<double> uniform_grid(int points) const;

 private:
  ScheduleKind kind_ = ScheduleKind::identity;
  double kappa_ = 0.0;
  int d_ = 0;
  std::vector<double> norms_;
};

struct InterpolantCoeffs {
  double alpha = 1.0;
  double beta = 0.0;
  double alpha_dot = -1.0;
  double beta_dot = 1.0;
};

InterpolantCoeffs coeffs_at(const TimeSchedule& schedule, double t);

/// {"kind": ..., "kappa": ..., "d": ...} or {"kind": "multi_mode", "kappa": ..., "norms": [...]}.
nlohmann::json schedule_to_json(const TimeSchedule& schedule);
/// `default_d` fills a missing "d" for two_mode_dilated (usually the mixture dimension).
TimeSchedule schedule_from_json(const nlohmann::json& j, int default_d = 0);

}  // namespace gmflow
