#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scslit/errors.hpp"
#include "scslit/sc_core.hpp"

namespace scslit {

/// Growth prescription for one slit.
struct SlitPlanEntry {
  cplx base_point{0.0, 0.0};
  double base_prevertex = 0.0;
  double sigma1 = -0.5;
  double sigma2 = -0.5;
  /// Constant speed ratio v_i / v_ref; only ratios between entries matter.
  double ratio = 1.0;
  cplx direction{0.0, 1.0};
};

/// Growth plan for one stage. The independent variable is the length of
/// slit `primary`.
struct SlitPlan {
  std::vector<SlitPlanEntry> slits;
  std::size_t primary = 0;
  double target_length = 1.0;
  double epsilon = 1e-12;
  double merge_tol = 1e-9;
  double cluster_tol = 1e-4;
  double ode_tol = 1e-10;

  void validate() const;
};

/// Control coefficients C_i (normalized to sum 1) with the rescale factor
/// that turns the ODE variable into the primary slit length.
struct ControlVector {
  std::vector<double> weights;
  double scale = 1.0;

  double scaled(std::size_t i) const { return scale * weights[i]; }
  std::size_t size() const { return weights.size(); }
};

/// Time derivative of every accessory parameter.
struct StateDerivative {
  cplx dc{0.0, 0.0};
  std::vector<double> dfixed;
  /// Per slit: d a_i1, d lambda_i, d a_i2.
  std::vector<std::array<double, 3>> dslits;
  /// (1/c) dc/dt, always real.
  double log_rate = 0.0;
};

/// A_r: the product that converts the control C_r into the tip speed,
/// |d Lambda_r / dt| = |c| A_r C_r.
double speed_factor(const AccessoryState& state, std::size_t r);

/// Normalized control holding v_j / v_k = ratio_j / ratio_k.
ControlVector control_from_speed_factors(std::span<const double> speed_factors,
                                         std::span<const double> ratios);

/// Two-slit closed form C1 = a A2 / (A1 + a A2), C2 = A1 / (A1 + a A2)
/// with a = v1 / v2.
std::array<double, 2> two_slit_control(double A1, double A2, double ratio);

ControlVector control_coefficients(const AccessoryState& state, const SlitPlan& plan);

/// Multiplies the control by 1 / (|c| A_p C_p) so that dL_p/dt = 1.
ControlVector rescale_for_length_param(const ControlVector& control,
                                       const AccessoryState& state, std::size_t primary = 0);

/// Loewner-flow right-hand side for the prevertices and the multiplier,
/// driven by the already rescaled control `control.scaled(i)`.
StateDerivative ode_rhs(const AccessoryState& state, const ControlVector& control);

/// Both sides of the identity the right-hand side is derived from, evaluated
/// at z: the log-derivative time variation of f' against the Loewner
/// transport term. Returns |lhs - rhs| / (sum of absolute term sizes).
double residue_identity_mismatch(const AccessoryState& state, const ControlVector& control,
                                 const StateDerivative& deriv, cplx z);

/// Splits each coincident slit triple into (lambda - eps, lambda, lambda + eps).
AccessoryState regularize_initial(const AccessoryState& state0, const SlitPlan& plan);

struct SeriesCoefficients {
  double q = 0.0;
  double lambda1 = 0.0;
  double a1_1 = 0.0;
  double a2_1 = 0.0;
};

struct SeriesStart {
  std::vector<SeriesCoefficients> slits;
  /// First-order coefficients of the fixed prevertices (all zero).
  std::vector<double> fixed;
};

/// First-order coefficients of the expansion in sqrt(t) at slit birth for a
/// control with leading values `control.scaled(i)`.
SeriesStart series_first_order(const AccessoryState& state0, const ControlVector& control);

enum class Termination { ReachedTarget, Degenerate };

struct TraceStep {
  AccessoryState state;
  std::vector<double> slit_lengths;
  std::vector<double> control;  // rescaled control used at this state
  double step = 0.0;
  double error = 0.0;
};

struct Trace {
  std::vector<TraceStep> steps;
  Termination termination = Termination::ReachedTarget;
  std::string degeneracy_report;
};

/// Step-size collapse during evolve; carries the trace up to the last
/// accepted step.
class EvolveError : public StiffnessError {
 public:
  EvolveError(const std::string& what, Trace partial);
  const Trace& partial() const { return partial_; }

 private:
  Trace partial_;
};

struct EvolveOptions {
  MapOptions map{};
  /// Record slit lengths with sc_map at every accepted step.
  bool record_lengths = true;
  double initial_step = 0.0;  // 0 selects 10 * epsilon
};

/// Integrates the accessory parameters with t = length of the primary slit,
/// from state0.t to plan.target_length. Stops early with
/// Termination::Degenerate once a shrinking prevertex gap drops below
/// plan.merge_tol.
Trace evolve(const AccessoryState& state0, const SlitPlan& plan, const EvolveOptions& opts = {});

/// ODE state packing used by evolve: |c|, fixed prevertices, slit triples.
std::vector<double> pack_state(const AccessoryState& state);
AccessoryState unpack_state(const AccessoryState& like, double t, std::span<const double> y);

struct MergedPrevertex {
  double x = 0.0;
  double sigma = 0.0;
  std::vector<std::string> members;
  std::optional<std::size_t> vertex;
};

struct MergedParameters {
  cplx c{1.0, 0.0};
  std::vector<MergedPrevertex> prevertices;  // increasing, includes zero and one
  std::vector<std::string> warnings;
  /// Clustering with every ambiguous gap flipped, when any was ambiguous.
  std::optional<std::vector<MergedPrevertex>> alternative;
};

/// Replaces each run of prevertices with consecutive gaps below cluster_tol
/// by one prevertex at the exponent-weighted centroid carrying the summed
/// exponent.
MergedParameters merge_degenerate(const AccessoryState& final_state, double cluster_tol);

/// Slit-free state of the limiting map, for grids or a following stage.
AccessoryState merged_state(const MergedParameters& merged, const AccessoryState& like,
                            const MapOptions& opts = {});

}  // namespace scslit
