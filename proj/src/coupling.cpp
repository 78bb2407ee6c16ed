#include "s2sk/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "s2sk/error.hpp"
#include "s2sk/rng.hpp"
#include "s2sk/stats.hpp"

namespace s2sk {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Largest cost range over epsilon solved with plain kernel scaling.
constexpr double kScalingRange = 200.0;

void check_marginal(std::span<const double> m, std::size_t n, const char* name) {
  if (m.size() != n)
    throw ValidationError(std::string("marginal ") + name + " has " + std::to_string(m.size()) +
                          " entries, expected " + std::to_string(n));
  double sum = 0.0;
  for (double v : m) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError(std::string("marginal ") + name + " has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError(std::string("marginal ") + name + " has mass " + std::to_string(sum) +
                          ", expected 1");
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sd, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  return m;
}

// F = W [x; current; previous] without materialising the stacked input.
Matrix extract(const Matrix& w, const Matrix& x, const Matrix& current, const Matrix& previous) {
  const Eigen::Index c = x.rows();
  if (w.cols() != 3 * c || current.rows() != c || previous.rows() != c ||
      current.cols() != x.cols() || previous.cols() != x.cols())
    throw ValidationError("feature extractor does not match the block shapes");
  return w.leftCols(c) * x + w.middleCols(c, c) * current + w.rightCols(c) * previous;
}

TransportPlan solve(const Matrix& f_target, const Matrix& f_source, std::span<const double> m_target,
                    std::span<const double> m_source, Direction dir, const OtbParams& p) {
  if (p.kind == CouplingKind::cross_attention) {
    TransportPlan t;
    t.plan = cross_attention_plan(f_target, f_source);
    t.converged = true;
    t.direction = dir;
    return t;
  }
  const auto cost = cosine_cost(f_target, f_source, dir);
  return sinkhorn(cost, m_target, m_source, p.sinkhorn);
}

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::b_to_a ? "b_to_a" : "a_to_b"; }

std::string_view to_string(CouplingKind k) {
  switch (k) {
    case CouplingKind::optimal_transport: return "optimal_transport";
    case CouplingKind::cross_attention: return "cross_attention";
    case CouplingKind::none: return "none";
  }
  return "none";
}

CouplingKind parse_coupling_kind(std::string_view s) {
  if (s == "optimal_transport" || s == "ot") return CouplingKind::optimal_transport;
  if (s == "cross_attention" || s == "cross-attention") return CouplingKind::cross_attention;
  if (s == "none") return CouplingKind::none;
  throw ValidationError("unknown coupling kind '" + std::string(s) + "'");
}

CostMatrix cosine_cost(const Matrix& f_target, const Matrix& f_source, Direction direction) {
  if (f_target.rows() != f_source.rows())
    throw ValidationError("cosine cost: feature dimensions " + std::to_string(f_target.rows()) +
                          " and " + std::to_string(f_source.rows()) + " differ");
  Eigen::VectorXd nt = f_target.colwise().norm().transpose();
  Eigen::VectorXd ns = f_source.colwise().norm().transpose();
  for (auto* v : {&nt, &ns})
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = (*v)[i] > 0.0 ? 1.0 / (*v)[i] : 0.0;
  Matrix sim = f_target.transpose() * f_source;
  CostMatrix c;
  c.direction = direction;
  c.values.resize(sim.rows(), sim.cols());
  for (Eigen::Index i = 0; i < sim.rows(); ++i)
    for (Eigen::Index j = 0; j < sim.cols(); ++j)
      c.values(i, j) = 1.0 - std::clamp(sim(i, j) * nt[i] * ns[j], -1.0, 1.0);
  return c;
}

TransportPlan sinkhorn(const CostMatrix& cost, std::span<const double> a, std::span<const double> b,
                       const SinkhornOptions& options) {
  const Matrix& c = cost.values;
  const auto rows = static_cast<std::size_t>(c.rows());
  const auto cols = static_cast<std::size_t>(c.cols());
  if (rows == 0 || cols == 0) throw ValidationError("sinkhorn: empty cost matrix");
  if (!(options.epsilon > 0.0)) throw ValidationError("sinkhorn: epsilon must be > 0");
  if (options.max_iter < 1) throw ValidationError("sinkhorn: max_iter must be >= 1");
  if (!c.allFinite()) throw ValidationError("sinkhorn: cost matrix has non-finite entries");
  check_marginal(a, rows, "a");
  check_marginal(b, cols, "b");

  const double eps = options.epsilon;
  std::vector<double> log_a(rows), log_b(cols);
  for (std::size_t i = 0; i < rows; ++i) log_a[i] = a[i] > 0.0 ? std::log(a[i]) : kNegInf;
  for (std::size_t j = 0; j < cols; ++j) log_b[j] = b[j] > 0.0 ? std::log(b[j]) : kNegInf;

  std::vector<double> f(rows, 0.0), g(cols, 0.0);
  std::vector<double> lse_row(rows), col_max(cols), col_sum(cols);

  auto nan_guard = [&](const std::vector<double>& v) {
    for (double x : v)
      if (std::isnan(x))
        throw NumericalError("sinkhorn diverged (NaN potentials) at epsilon=" + std::to_string(eps) +
                             "; epsilon is too small for the cost scale");
  };

  TransportPlan out;
  out.epsilon = eps;
  out.direction = cost.direction;
  int it = 0;
  bool converged = false;

  // Same iteration on u = exp(f / eps), v = exp(g / eps) with a shifted
  // kernel, used while the kernel's dynamic range stays well inside double.
  const double c_min = c.minCoeff();
  if ((c.maxCoeff() - c_min) / eps <= kScalingRange) {
    const Matrix k = (-(c.array() - c_min) / eps).exp().matrix();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
    Eigen::VectorXd v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(cols));
    for (;; ++it) {
      const Eigen::VectorXd kv = k * v;
      double row_err = 0.0;
      if (it > 0)
        for (std::size_t i = 0; i < rows; ++i) {
          const auto e = static_cast<Eigen::Index>(i);
          row_err = std::max(row_err, std::abs(u[e] * kv[e] - a[i]));
        }
      if (it > 0 && row_err < options.tol) {
        converged = true;
        break;
      }
      if (it >= options.max_iter) break;
      for (std::size_t i = 0; i < rows; ++i) {
        const auto e = static_cast<Eigen::Index>(i);
        u[e] = a[i] / kv[e];
      }
      const Eigen::VectorXd ku = k.transpose() * u;
      for (std::size_t j = 0; j < cols; ++j) {
        const auto e = static_cast<Eigen::Index>(j);
        v[e] = b[j] / ku[e];
      }
      if (!u.allFinite() || !v.allFinite())
        throw NumericalError("sinkhorn diverged (non-finite scalings) at epsilon=" + std::to_string(eps) +
                             "; epsilon is too small for the cost scale");
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const double ui = u[static_cast<Eigen::Index>(i)];
      f[i] = ui > 0.0 ? eps * std::log(ui) + c_min : kNegInf;
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const double vj = v[static_cast<Eigen::Index>(j)];
      g[j] = vj > 0.0 ? eps * std::log(vj) : kNegInf;
    }
  } else {
    for (;; ++it) {
      // Row log-sum-exp of (g_j - C_ij) / eps; gives the current row sums.
      double row_err = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* ci = c.data() + i * cols;
        double m = kNegInf;
        for (std::size_t j = 0; j < cols; ++j) m = std::max(m, (g[j] - ci[j]) / eps);
        double s = 0.0;
        if (m != kNegInf)
          for (std::size_t j = 0; j < cols; ++j) s += std::exp((g[j] - ci[j]) / eps - m);
        lse_row[i] = m == kNegInf ? kNegInf : m + std::log(s);
        if (it > 0) {
          const double r = (f[i] == kNegInf || lse_row[i] == kNegInf) ? 0.0 : std::exp(f[i] / eps + lse_row[i]);
          row_err = std::max(row_err, std::abs(r - a[i]));
        }
      }
      if (it > 0 && row_err < options.tol) {
        converged = true;
        break;
      }
      if (it >= options.max_iter) break;

      for (std::size_t i = 0; i < rows; ++i)
        f[i] = (log_a[i] == kNegInf || lse_row[i] == kNegInf) ? kNegInf : eps * (log_a[i] - lse_row[i]);
      nan_guard(f);

      std::fill(col_max.begin(), col_max.end(), kNegInf);
      for (std::size_t i = 0; i < rows; ++i) {
        if (f[i] == kNegInf) continue;
        const double* ci = c.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) col_max[j] = std::max(col_max[j], (f[i] - ci[j]) / eps);
      }
      std::fill(col_sum.begin(), col_sum.end(), 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        if (f[i] == kNegInf) continue;
        const double* ci = c.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) col_sum[j] += std::exp((f[i] - ci[j]) / eps - col_max[j]);
      }
      for (std::size_t j = 0; j < cols; ++j) {
        const double lse = col_max[j] == kNegInf ? kNegInf : col_max[j] + std::log(col_sum[j]);
        g[j] = (log_b[j] == kNegInf || lse == kNegInf) ? kNegInf : eps * (log_b[j] - lse);
      }
      nan_guard(g);
    }
  }

  out.plan.resize(c.rows(), c.cols());
  std::vector<double> row_sum(rows, 0.0), colsum(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = (f[i] == kNegInf || g[j] == kNegInf) ? 0.0 : std::exp((f[i] + g[j] - c(i, j)) / eps);
      if (std::isnan(v))
        throw NumericalError("sinkhorn produced NaN plan entries at epsilon=" + std::to_string(eps));
      out.plan(i, j) = v;
      row_sum[i] += v;
      colsum[j] += v;
    }
  }
  double err = 0.0;
  for (std::size_t i = 0; i < rows; ++i) err = std::max(err, std::abs(row_sum[i] - a[i]));
  for (std::size_t j = 0; j < cols; ++j) err = std::max(err, std::abs(colsum[j] - b[j]));
  out.iterations = it;
  out.marginal_error = err;
  out.converged = converged && err < options.tol;
  return out;
}

std::vector<double> uniform_marginal(std::size_t n) {
  if (n == 0) throw ValidationError("uniform marginal of size 0");
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> latitude_marginal(const GridSpec& grid) { return cell_weights(grid, nullptr); }

Matrix apply_coupling(const Matrix& target, const Matrix& source, const Matrix& plan, double gain) {
  if (plan.rows() != target.cols() || plan.cols() != source.cols())
    throw ValidationError("apply coupling: plan is " + std::to_string(plan.rows()) + "x" +
                          std::to_string(plan.cols()) + ", expected " + std::to_string(target.cols()) +
                          "x" + std::to_string(source.cols()));
  if (target.rows() != source.rows())
    throw ValidationError("apply coupling: target and source feature dimensions differ");
  if (gain == 0.0) return target;
  const double scale = gain * static_cast<double>(target.cols());
  return target + scale * (source * plan.transpose());
}

Matrix cross_attention_plan(const Matrix& f_target, const Matrix& f_source) {
  if (f_target.rows() != f_source.rows())
    throw ValidationError("cross attention: feature dimensions differ");
  Matrix logits = (f_target.transpose() * f_source) / std::sqrt(static_cast<double>(f_target.rows()));
  const double inv_rows = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    logits.row(i) *= inv_rows / logits.row(i).sum();
  }
  return logits;
}

OtbParams OtbParams::reference(std::size_t channels_a, std::size_t channels_b, std::size_t feature_dim,
                               std::uint64_t seed, double gain) {
  if (channels_a == 0 || channels_b == 0 || feature_dim == 0)
    throw ValidationError("OTB parameters need non-empty blocks and feature_dim >= 1");
  const auto ca = static_cast<Eigen::Index>(channels_a);
  const auto cb = static_cast<Eigen::Index>(channels_b);
  const auto df = static_cast<Eigen::Index>(feature_dim);
  OtbParams p;
  p.feature_dim = feature_dim;
  auto sd_in = [](Eigen::Index c) { return 1.0 / std::sqrt(3.0 * static_cast<double>(c)); };
  const double sd_value = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  p.b_to_a.extract_target = gaussian_matrix(df, 3 * ca, sd_in(ca), derive_seed(seed, stream_id("b_to_a/extract_a")));
  p.b_to_a.extract_source = gaussian_matrix(df, 3 * cb, sd_in(cb), derive_seed(seed, stream_id("b_to_a/extract_b")));
  p.b_to_a.value = gaussian_matrix(ca, df, sd_value, derive_seed(seed, stream_id("b_to_a/value")));
  p.b_to_a.gain = gain;
  p.a_to_b.extract_target = gaussian_matrix(df, 3 * cb, sd_in(cb), derive_seed(seed, stream_id("a_to_b/extract_b")));
  p.a_to_b.extract_source = gaussian_matrix(df, 3 * ca, sd_in(ca), derive_seed(seed, stream_id("a_to_b/extract_a")));
  p.a_to_b.value = gaussian_matrix(cb, df, sd_value, derive_seed(seed, stream_id("a_to_b/value")));
  p.a_to_b.gain = gain;
  return p;
}

OtbOutput otb_block(const Matrix& noisy_a, const Matrix& noisy_b, const OtbConditioning& cond,
                    const OtbParams& p) {
  if (noisy_a.cols() != noisy_b.cols())
    throw ValidationError("OTB: atmosphere and boundary blocks must share the site grid");
  OtbOutput out;
  out.b_to_a.direction = Direction::b_to_a;
  out.a_to_b.direction = Direction::a_to_b;
  if (p.kind == CouplingKind::none) {
    out.a_out = noisy_a;
    out.b_out = noisy_b;
    out.b_to_a.converged = out.a_to_b.converged = true;
    return out;
  }
  const auto sites = static_cast<std::size_t>(noisy_a.cols());
  const auto ma = p.marginal_a.empty() ? uniform_marginal(sites) : p.marginal_a;
  const auto mb = p.marginal_b.empty() ? uniform_marginal(sites) : p.marginal_b;

  // B -> A
  const Matrix fa_ba = extract(p.b_to_a.extract_target, noisy_a, cond.a_current, cond.a_previous);
  const Matrix fb_ba = extract(p.b_to_a.extract_source, noisy_b, cond.b_current, cond.b_previous);
  out.b_to_a = solve(fa_ba, fb_ba, ma, mb, Direction::b_to_a, p);
  out.a_out = apply_coupling(noisy_a, p.b_to_a.value * fb_ba, out.b_to_a.plan, p.b_to_a.gain);

  // A -> B
  const Matrix fb_ab = extract(p.a_to_b.extract_target, noisy_b, cond.b_current, cond.b_previous);
  const Matrix fa_ab = extract(p.a_to_b.extract_source, noisy_a, cond.a_current, cond.a_previous);
  out.a_to_b = solve(fb_ab, fa_ab, mb, ma, Direction::a_to_b, p);
  out.b_out = apply_coupling(noisy_b, p.a_to_b.value * fa_ab, out.a_to_b.plan, p.a_to_b.gain);
  return out;
}

double wmid(const Matrix& plan, const GridSpec& grid, const RegionBox& region, double percentile) {
  const auto cells = static_cast<Eigen::Index>(grid.cells());
  if (plan.rows() != cells || plan.cols() != cells)
    throw ValidationError("wmid: plan is " + std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()) +
                          ", grid has " + std::to_string(cells) + " cells");
  const Mask inside = region_mask(grid, region);
  std::vector<double> influence(grid.cells(), 0.0);
  for (std::size_t i = 0; i < grid.cells(); ++i) {
    if (!inside[i]) continue;
    for (std::size_t j = 0; j < grid.cells(); ++j)
      influence[j] += plan(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const double m = mean(influence);
  std::vector<double> centred(influence.size());
  for (std::size_t j = 0; j < centred.size(); ++j) centred[j] = influence[j] - m;
  const double threshold = empirical_quantile(centred, percentile);

  std::vector<double> weight(centred.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < centred.size(); ++j) {
    if (centred[j] >= threshold && centred[j] > 0.0) {
      weight[j] = centred[j];
      total += centred[j];
    }
  }
  if (!(total > 0.0)) throw ValidationError("wmid: all influence was filtered out");

  std::vector<LatLon> region_cells;
  for (std::size_t k = 0; k < grid.cells(); ++k)
    if (inside[k]) region_cells.push_back({grid.lat(k / grid.n_lon), grid.lon(k % grid.n_lon)});

  double result = 0.0;
  for (std::size_t j = 0; j < weight.size(); ++j) {
    if (weight[j] == 0.0 || inside[j]) continue;
    const LatLon p{grid.lat(j / grid.n_lon), grid.lon(j % grid.n_lon)};
    double d = std::numeric_limits<double>::infinity();
    for (const auto& q : region_cells) d = std::min(d, great_circle_km(p, q));
    result += (weight[j] / total) * d;
  }
  return result;
}

}  // namespace s2sk
