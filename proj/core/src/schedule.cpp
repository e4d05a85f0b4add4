#include "gmflow/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "gmflow/errors.hpp"

namespace gmflow {
namespace {

void check_time(double t, double lo, double hi) {
  if (!(t >= lo && t <= hi))
    throw ValidationError("t", "time " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                   std::to_string(hi) + "]");
}

std::vector<double> distinct_norms(std::span<const double> norms) {
  if (norms.empty()) throw ValidationError("norms", "at least one mode norm is required");
  std::vector<double> out;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) throw ValidationError("norms", "norms must be positive");
    if (i > 0 && norms[i] < norms[i - 1]) throw ValidationError("norms", "norms must be ascending");
    if (out.empty() || norms[i] != out.back()) out.push_back(norms[i]);
  }
  return out;
}

}  // namespace

TauValue tau_two_mode(double t, double kappa, int d) {
  if (d < 1) throw ValidationError("d", "dimension must be positive");
  if (!(kappa > 0.0)) throw ValidationError("kappa", "must be positive");
  const double scale = kappa / std::sqrt(static_cast<double>(d));
  if (scale >= 1.0) throw ValidationError("kappa", "kappa/sqrt(d) must be below 1");
  check_time(t, 0.0, 2.0);
  if (t < 1.0) return {scale * t, scale};
  return {scale + (1.0 - scale) * (t - 1.0), 1.0 - scale};
}

TauValue tau_multi_mode(double t, double kappa, std::span<const double> norms) {
  if (!(kappa > 0.0)) throw ValidationError("kappa", "must be positive");
  const std::vector<double> r = distinct_norms(norms);
  double total = 0.0;
  for (double v : r) total += kappa / v;
  if (total >= 1.0) throw ValidationError("norms", "kappa * sum(1/|r_i|) must be below 1");
  check_time(t, 0.0, 1.0);

  const auto m = static_cast<int>(r.size());
  const double pieces = m + 1.0;
  // Piece j (0-based, j < m) resolves the norm r[m-1-j].
  const int j = std::min(static_cast<int>(std::floor(t * pieces)), m);
  double start = 0.0;
  for (int i = 0; i < j; ++i) start += kappa / r[m - 1 - i];
  const double local = t * pieces - j;
  if (j < m) {
    const double slope = kappa * pieces / r[m - 1 - j];
    return {start + slope * local / pieces, slope};
  }
  const double slope = (1.0 - total) * pieces;
  return {total + (1.0 - total) * local, slope};
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::identity:
      return "identity";
    case ScheduleKind::two_mode_dilated:
      return "two_mode_dilated";
    case ScheduleKind::multi_mode:
      return "multi_mode";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "identity") return ScheduleKind::identity;
  if (s == "two_mode_dilated") return ScheduleKind::two_mode_dilated;
  if (s == "multi_mode") return ScheduleKind::multi_mode;
  throw ValidationError("schedule.kind", "unknown schedule kind '" + s + "'");
}

TimeSchedule TimeSchedule::identity() { return {}; }

TimeSchedule TimeSchedule::two_mode(double kappa, int d) {
  tau_two_mode(0.0, kappa, d);  // validates
  TimeSchedule s;
  s.kind_ = ScheduleKind::two_mode_dilated;
  s.kappa_ = kappa;
  s.d_ = d;
  return s;
}

TimeSchedule TimeSchedule::multi_mode(double kappa, std::vector<double> norms) {
  tau_multi_mode(0.0, kappa, norms);  // validates
  TimeSchedule s;
  s.kind_ = ScheduleKind::multi_mode;
  s.kappa_ = kappa;
  s.norms_ = distinct_norms(norms);
  return s;
}

TauValue TimeSchedule::tau(double t) const {
  switch (kind_) {
    case ScheduleKind::identity:
      check_time(t, 0.0, 1.0);
      return {t, 1.0};
    case ScheduleKind::two_mode_dilated:
      return tau_two_mode(t, kappa_, d_);
    case ScheduleKind::multi_mode:
      return tau_multi_mode(t, kappa_, norms_);
  }
  return {};
}

std::vector<double> TimeSchedule::knots() const {
  switch (kind_) {
    case ScheduleKind::identity:
      return {0.0, 1.0};
    case ScheduleKind::two_mode_dilated:
      return {0.0, 1.0, 2.0};
    case ScheduleKind::multi_mode: {
      std::vector<double> k;
      const auto pieces = static_cast<double>(norms_.size() + 1);
      for (std::size_t i = 0; i <= norms_.size() + 1; ++i) k.push_back(static_cast<double>(i) / pieces);
      return k;
    }
  }
  return {};
}

std::vector<double> TimeSchedule::uniform_grid(int points) const {
  if (points < 2) throw ValidationError("grid_points", "need at least 2 grid points");
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i) grid[i] = t_end() * static_cast<double>(i) / (points - 1);
  grid.back() = t_end();
  return grid;
}

InterpolantCoeffs coeffs_at(const TimeSchedule& schedule, double t) {
  const TauValue v = schedule.tau(t);
  return {1.0 - v.tau, v.tau, -v.tau_dot, v.tau_dot};
}

nlohmann::json schedule_to_json(const TimeSchedule& schedule) {
  nlohmann::json j;
  j["kind"] = to_string(schedule.kind());
  if (schedule.kind() != ScheduleKind::identity) j["kappa"] = schedule.kappa();
  if (schedule.kind() == ScheduleKind::two_mode_dilated) j["d"] = schedule.d();
  if (schedule.kind() == ScheduleKind::multi_mode) j["norms"] = schedule.norms();
  return j;
}

TimeSchedule schedule_from_json(const nlohmann::json& j, int default_d) {
  if (!j.is_object()) throw ValidationError("schedule", "must be an object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw ValidationError("schedule.kind", "missing");
  const ScheduleKind kind = schedule_kind_from_string(j["kind"].get<std::string>());
  if (kind == ScheduleKind::identity) return TimeSchedule::identity();
  if (!j.contains("kappa") || !j["kappa"].is_number()) throw ValidationError("schedule.kappa", "missing");
  const double kappa = j["kappa"].get<double>();
  try {
    if (kind == ScheduleKind::two_mode_dilated) {
      const int d = j.contains("d") ? j["d"].get<int>() : default_d;
      return TimeSchedule::two_mode(kappa, d);
    }
    if (!j.contains("norms") || !j["norms"].is_array()) throw ValidationError("schedule.norms", "missing");
    return TimeSchedule::multi_mode(kappa, j["norms"].get<std::vector<double>>());
  } catch (const ValidationError& e) {
    if (e.field().rfind("schedule.", 0) == 0) throw;
    throw ValidationError("schedule." + e.field(), e.what());
  }
}

}  // namespace gmflow
