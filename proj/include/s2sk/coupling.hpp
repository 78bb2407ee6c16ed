#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "s2sk/grid.hpp"
#include "s2sk/vq.hpp"

namespace s2sk {

// Which sphere receives information. Rows of a cost matrix or plan index
// the receiving (target) sites, columns the source sites.
enum class Direction { b_to_a, a_to_b };

std::string_view to_string(Direction d);

enum class CouplingKind { optimal_transport, cross_attention, none };

std::string_view to_string(CouplingKind k);
CouplingKind parse_coupling_kind(std::string_view s);

struct CostMatrix {
  Matrix values;  // [G_target, G_source], entries in [0, 2]
  Direction direction = Direction::b_to_a;
};

struct TransportPlan {
  Matrix plan;  // [G_target, G_source], non-negative
  double epsilon = 0.0;
  int iterations = 0;
  bool converged = false;
  double marginal_error = 0.0;  // max violation over rows and columns
  Direction direction = Direction::b_to_a;
};

// C[i, j] = 1 - cos(F_target[:, i], F_source[:, j]). Zero-norm sites have
// similarity 0, i.e. cost 1. Features are [d_f, G] column-per-site.
CostMatrix cosine_cost(const Matrix& f_target, const Matrix& f_source,
                       Direction direction = Direction::b_to_a);

struct SinkhornOptions {
  double epsilon = 0.05;
  int max_iter = 1000;
  double tol = 1e-6;
};

// Entropic OT in the log domain. Potentials f, g are updated alternately;
// the plan is exp((f_i + g_j - C_ij) / eps). Iteration stops when the row
// marginal violation (columns are exact after each g update) falls below
// tol, or at max_iter with converged = false.
TransportPlan sinkhorn(const CostMatrix& cost, std::span<const double> a, std::span<const double> b,
                       const SinkhornOptions& options = {});

std::vector<double> uniform_marginal(std::size_t n);
// cos(lat)-proportional marginal over the cells of `grid`, summing to 1.
std::vector<double> latitude_marginal(const GridSpec& grid);

// target + gain * G_target * (source * plan^T): each target site gains the
// transport-weighted mixture of source features. Rows of an OT plan with
// uniform marginals sum to 1/G_target, so the factor turns each row into a
// convex combination. Requires a shared feature dimension.
Matrix apply_coupling(const Matrix& target, const Matrix& source, const Matrix& plan, double gain);

// softmax(F_target^T F_source / sqrt(d_f)) row-wise, divided by G_target so
// that it drops into apply_coupling in place of a transport plan.
Matrix cross_attention_plan(const Matrix& f_target, const Matrix& f_source);

// Parameters for one coupling direction. For B->A the target sphere is A:
// extract_target maps [noisy; current; previous] of A (3*C_A rows) to d_f
// features, extract_source does the same for B, and value maps the d_f
// source features to C_A latent channels.
struct DirectionParams {
  Matrix extract_target;
  Matrix extract_source;
  Matrix value;
  double gain = 0.1;
};

struct OtbParams {
  std::size_t feature_dim = 8;
  CouplingKind kind = CouplingKind::optimal_transport;
  SinkhornOptions sinkhorn;
  std::vector<double> marginal_a;  // empty: uniform
  std::vector<double> marginal_b;
  DirectionParams b_to_a;
  DirectionParams a_to_b;

  // Seeded Gaussian linear extractors, one independent set per direction.
  static OtbParams reference(std::size_t channels_a, std::size_t channels_b, std::size_t feature_dim,
                             std::uint64_t seed, double gain = 0.1);
};

// The two conditioning states of each sphere, [C, G] per block.
struct OtbConditioning {
  const Matrix& a_current;
  const Matrix& a_previous;
  const Matrix& b_current;
  const Matrix& b_previous;
};

struct OtbOutput {
  Matrix a_out;
  Matrix b_out;
  TransportPlan b_to_a;
  TransportPlan a_to_b;
};

// One coupling block: per-sphere feature extraction, independent cost and
// plan for each direction, transport-weighted exchange with residual.
OtbOutput otb_block(const Matrix& noisy_a, const Matrix& noisy_b, const OtbConditioning& cond,
                    const OtbParams& params);

// Weighted mean influencing distance of a B->A plan on `grid` (both spheres
// share the grid). Influence of source cell j is the plan mass it sends to
// target rows inside `region`; influences are centred on their mean, cells
// below the `percentile` of the centred values or with non-positive centred
// influence are dropped, and the remaining centred influences weight the
// great-circle distance from each source cell to the nearest region cell.
double wmid(const Matrix& plan_b_to_a, const GridSpec& grid, const RegionBox& region, double percentile = 50.0);

}  // namespace s2sk
