#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scslit/quadrature.hpp"

namespace scslit {

/// Target or initial polygon, vertices in boundary order (interior on the
/// left). Vertex `base_vertex_index` is the image of prevertex 0, the next
/// one the image of 1 and the one after that the image of infinity.
struct PolygonSpec {
  std::vector<std::optional<cplx>> vertices;  // nullopt marks a vertex at infinity
  std::vector<double> alphas;                 // interior angle / pi
  std::size_t base_vertex_index = 0;

  std::size_t size() const { return vertices.size(); }
  std::size_t index_of_one() const { return (base_vertex_index + 1) % size(); }
  std::size_t index_of_infinity() const { return (base_vertex_index + 2) % size(); }
  double alpha_infinity() const { return alphas[index_of_infinity()]; }

  /// Throws ConfigError on a malformed polygon.
  void validate() const;
};

/// A finite prevertex a_k (k <= n-3) with its exponent sigma_k = alpha_k - 1.
struct Prevertex {
  double x = 0.0;
  double sigma = 0.0;
  /// Index of the polygon vertex this prevertex maps to, when known.
  std::optional<std::size_t> vertex;
};

/// One slit: prevertices of the two base prime ends and of the tip.
struct SlitGroup {
  double a1 = 0.0;
  double lambda = 0.0;
  double a2 = 0.0;
  double sigma1 = -0.5;
  double sigma2 = -0.5;
  cplx base_point{0.0, 0.0};
  cplx direction{0.0, 1.0};
};

/// Where a boundary prevertex comes from.
enum class PrevertexRole { Fixed, SlitLeft, SlitTip, SlitRight, Zero, One };

struct BoundaryPoint {
  double x = 0.0;
  double sigma = 0.0;
  PrevertexRole role = PrevertexRole::Fixed;
  std::size_t index = 0;  // into fixed_prevertices or slits
};

/// Full parameter set of the map
///
///   f(z) = A + c * int_0^z prod (zeta - lambda_l) prod (zeta - a_ij)^sigma_ij
///                           prod (zeta - a_k)^sigma_k dzeta
///
/// with prevertices 0 and 1 carrying `sigma_zero` and `sigma_one` and
/// infinity carrying alpha_infinity.
struct AccessoryState {
  double t = 0.0;
  cplx c{1.0, 0.0};
  cplx base_value{0.0, 0.0};  // A_{n-2} = f(0)
  double sigma_zero = 0.0;
  double sigma_one = 0.0;
  double alpha_infinity = -1.0;
  std::vector<Prevertex> fixed_prevertices;  // increasing, all < 0
  std::vector<SlitGroup> slits;              // ordered along the axis
  std::shared_ptr<const PolygonSpec> polygon;

  /// All finite prevertices in increasing order (slit tips carry +1).
  std::vector<BoundaryPoint> boundary_points() const;

  /// Sum of finite exponents minus (-1 - alpha_infinity); zero for a
  /// consistent state.
  double exponent_sum_residual() const;

  /// Smallest gap between consecutive boundary points; negative when the
  /// ordering is broken.
  double min_gap() const;

  /// Throws InvariantError when boundary points are not strictly increasing
  /// or the moving ones are not all negative.
  void check_ordering() const;
};

/// Labels such as "a1", "a11", "lambda2", "a22" used in tables and traces.
std::string label(const BoundaryPoint& p);

/// The map f(z, t) = c(t) * z with no vertices: the identity for c = 1.
AccessoryState half_plane_state(cplx c = {1.0, 0.0});

/// arg(z - p) on the branch cut downward from p, in [-pi/2, 3pi/2).
double branch_arg(cplx w);

struct MapOptions {
  double tol_map = 1e-9;
  SingularIntegralOptions quadrature{};
};

/// Precomputed view of the integrand of one state.
class ScIntegrand {
 public:
  explicit ScIntegrand(const AccessoryState& state);

  /// c * prod (z - p)^sigma; throws DomainError at a singular prevertex.
  cplx derivative(cplx z) const;

  /// Integral of the derivative along the straight segment from -> to. Either
  /// end may sit on a prevertex; its factor is then absorbed by the rule.
  IntegrationResult integrate(cplx from, cplx to, const MapOptions& opts = {}) const;

  /// f(z) along the module's singularity-avoiding path from 0.
  cplx map(cplx z, const MapOptions& opts = {}) const;

  std::span<const double> points() const { return points_; }
  std::span<const double> sigmas() const { return sigmas_; }
  cplx c() const { return c_; }
  cplx base_value() const { return base_value_; }

 private:
  // Prevertex index at exactly z, if any (nonzero exponent only).
  std::optional<std::size_t> singular_at(cplx z) const;
  cplx product(cplx z, std::optional<std::size_t> skip_a,
               std::optional<std::size_t> skip_b) const;
  // Same at z = anchor + offset, differences formed from the anchor.
  cplx product(cplx anchor, cplx offset, std::optional<std::size_t> skip_a,
               std::optional<std::size_t> skip_b) const;

  cplx c_;
  cplx base_value_;
  std::vector<double> points_;  // nonzero-exponent prevertices, increasing
  std::vector<double> sigmas_;
  std::vector<cplx> singular_;  // same points as complex numbers
};

cplx sc_derivative(const AccessoryState& state, cplx z);
cplx sc_map(const AccessoryState& state, cplx z, const MapOptions& opts = {});

/// Real x in [lo, hi] with f(x) = boundary_point. The image of the bracket
/// must lie on a single side.
double locate_prevertex(const AccessoryState& state, cplx boundary_point,
                        double lo, double hi, const MapOptions& opts = {});

cplx slit_endpoint(const AccessoryState& state, std::size_t i,
                   const MapOptions& opts = {});
double slit_length(const AccessoryState& state, std::size_t i,
                   const MapOptions& opts = {});

/// Direction of f' on the open real interval just right of x (x not a
/// singular point or slightly left of one). Uses only the exponent phases.
cplx boundary_tangent(const AccessoryState& state, double x);

struct GridSpec {
  double x_min = -4.0;
  double x_max = 4.0;
  double y_min = 0.05;
  double y_max = 4.0;
  double spacing = 0.25;
  int samples_per_line = 200;
  /// Negative selects 1e-6 times the prevertex spread.
  double exclusion_radius = -1.0;
};

enum class GridOrientation { Horizontal, Vertical };

struct GridLine {
  GridOrientation orientation = GridOrientation::Horizontal;
  double coordinate = 0.0;
  std::vector<cplx> points;
};

struct GridImage {
  std::vector<GridLine> polylines;
  /// Preimage points dropped for lying within the exclusion radius.
  std::vector<cplx> skipped;
};

GridImage grid_image(const AccessoryState& state, const GridSpec& grid,
                     const MapOptions& opts = {});

}  // namespace scslit
