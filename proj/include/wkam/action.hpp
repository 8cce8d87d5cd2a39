#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <tuple>
#include <type_traits>

#include "wkam/grid_field.hpp"
#include "wkam/hamiltonian.hpp"

namespace wkam {

/// Discretized minimizing curve for A_t(x, y).
template <int D>
struct ActionPath {
  std::vector<double> times;
  std::vector<Vec<D>> lifted;  // continuous lift, starts at the (wrapped) source point
  int segments = 0;

  Vec<D> point(std::size_t i, double period) const { return wrap<D>(lifted[i], period); }
  /// Lifted position at time s by linear interpolation between nodes.
  Vec<D> at(double s) const {
    if (s <= times.front()) return lifted.front();
    if (s >= times.back()) return lifted.back();
    const double ds = times[1] - times[0];
    const auto i = std::min<std::size_t>(static_cast<std::size_t>((s - times.front()) / ds), times.size() - 2);
    const double f = (s - times[i]) / ds;
    return (1.0 - f) * lifted[i] + f * lifted[i + 1];
  }
};

template <int D>
struct ActionResult {
  double value = 0.0;
  ActionPath<D> path;
  Vec<D> momentum_out = Vec<D>::Zero();  // D_y A_t(x, y)
  Vec<D> momentum_in = Vec<D>::Zero();   // -D_x A_t(x, y)
  bool converged = false;
  double el_residual = 0.0;  // max discrete Euler-Lagrange residual over interior nodes
  int iterations = 0;
};

inline int default_segments(double t) { return std::max(8, static_cast<int>(std::ceil(t / 0.01 - 1e-9))); }

namespace detail {

/// Symmetric block-tridiagonal solve: diag[j], upper[j] couples j and j+1.
template <int D>
std::vector<Vec<D>> block_tridiagonal_solve(std::vector<Mat<D>> diag, const std::vector<Mat<D>>& upper,
                                            std::vector<Vec<D>> rhs, bool* ok) {
  const std::size_t m = diag.size();
  *ok = true;
  for (std::size_t j = 1; j < m; ++j) {
    const Eigen::LDLT<Mat<D>> prev(diag[j - 1]);
    if (prev.info() != Eigen::Success || !prev.isPositive()) *ok = false;
    const Mat<D> M = upper[j - 1].transpose() * prev.solve(Mat<D>::Identity());
    diag[j] -= M * upper[j - 1];
    rhs[j] -= M * rhs[j - 1];
  }
  std::vector<Vec<D>> x(m);
  {
    const Eigen::LDLT<Mat<D>> last(diag[m - 1]);
    if (last.info() != Eigen::Success || !last.isPositive()) *ok = false;
    x[m - 1] = last.solve(rhs[m - 1]);
  }
  for (std::size_t j = m - 1; j-- > 0;) x[j] = diag[j].ldlt().solve(rhs[j] - upper[j] * x[j + 1]);
  return x;
}

}  // namespace detail

/// Minimizes the midpoint-rule discrete action over curves from the lifted point `x` to the
/// lifted point `y` in time t, by damped Newton on the discrete Euler-Lagrange system.
template <int D>
ActionResult<D> minimize_action(const LagrangianSpec<D>& L, double t, const std::type_identity_t<Vec<D>>& x,
                                const std::type_identity_t<Vec<D>>& y,
                                int segments = 0, const std::vector<Vec<D>>* initial = nullptr) {
  if (!(t > 0.0)) throw DegenerateTime("fundamental solution needs t > 0, got " + std::to_string(t));
  const int N = segments > 0 ? segments : default_segments(t);
  if (N < 4) throw InvalidArgument("fundamental solution needs at least 4 segments");
  const double ds = t / N;
  std::vector<Vec<D>> xi(N + 1);
  if (initial && static_cast<int>(initial->size()) == N + 1) {
    xi = *initial;
  } else {
    for (int i = 0; i <= N; ++i) xi[i] = x + (y - x) * (static_cast<double>(i) / N);
  }
  xi.front() = x;
  xi.back() = y;

  using Deriv = typename LagrangianSpec<D>::Derivatives;
  std::vector<Deriv> seg(N);
  auto action = [&](const std::vector<Vec<D>>& path) {
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += L.value(0.5 * (path[i] + path[i + 1]), (path[i + 1] - path[i]) / ds);
    return s * ds;
  };
  auto eval = [&](const std::vector<Vec<D>>& path) {
    double s = 0.0;
    for (int i = 0; i < N; ++i) {
      seg[i] = L.derivatives(0.5 * (path[i] + path[i + 1]), (path[i + 1] - path[i]) / ds);
      s += seg[i].value;
    }
    return s * ds;
  };

  ActionResult<D> res;
  double S = eval(xi);
  const int m = N - 1;
  std::vector<Vec<D>> grad(m);
  std::vector<Mat<D>> diag(m), upper(std::max(0, m - 1));
  double residual = 0.0;
  int it = 0;
  constexpr int kMaxIter = 100;
  for (;; ++it) {
    // dS_i/da = 0.5 ds L_x - L_v,  dS_i/db = 0.5 ds L_x + L_v for segment i = (a, b).
    residual = 0.0;
    for (int j = 1; j <= m; ++j) {
      const Deriv& l = seg[j - 1];
      const Deriv& r = seg[j];
      grad[j - 1] = 0.5 * ds * (l.lx + r.lx) + l.lv - r.lv;
      residual = std::max(residual, grad[j - 1].cwiseAbs().maxCoeff() / ds);
    }
    if (residual <= 1e-9 || it >= kMaxIter) break;
    auto block = [&](const Deriv& d, double ba, double bb) -> Mat<D> {
      // ds * [a_a a_b Lxx + a_a b_b Lxv + b_a a_b Lvx + b_a b_b Lvv], both midpoint weights 1/2.
      return ds * (0.25 * d.lxx + 0.5 * bb * d.lxv + 0.5 * ba * d.lxv.transpose() + ba * bb * d.lvv);
    };
    const double ia = -1.0 / ds, ib = 1.0 / ds;
    for (int j = 1; j <= m; ++j) {
      diag[j - 1] = block(seg[j - 1], ib, ib) + block(seg[j], ia, ia);
      if (j < m) upper[j - 1] = block(seg[j], ia, ib);
    }
    bool ok = true;
    std::vector<Vec<D>> step = m > 0 ? detail::block_tridiagonal_solve<D>(diag, upper, grad, &ok)
                                     : std::vector<Vec<D>>{};
    double slope = 0.0;
    for (int j = 0; j < m; ++j) slope -= grad[j].dot(step[j]);
    if (!ok || !(slope < 0.0)) {
      // Not a descent direction: fall back to a scaled gradient step.
      for (int j = 0; j < m; ++j) step[j] = grad[j] * ds;
      slope = 0.0;
      for (int j = 0; j < m; ++j) slope -= grad[j].dot(step[j]);
    }
    double alpha = 1.0;
    std::vector<Vec<D>> trial = xi;
    double St = S;
    for (int ls = 0; ls < 40; ++ls) {
      for (int j = 1; j <= m; ++j) trial[j] = xi[j] - alpha * step[j - 1];
      St = action(trial);
      if (St <= S + 1e-4 * alpha * slope || St <= S) break;
      alpha *= 0.5;
    }
    if (St > S) break;
    xi.swap(trial);
    S = eval(xi);
  }

  res.value = S;
  res.el_residual = residual;
  res.converged = residual <= 1e-7;
  res.iterations = it;
  res.path.segments = N;
  res.path.lifted = xi;
  res.path.times.resize(N + 1);
  for (int i = 0; i <= N; ++i) res.path.times[i] = ds * i;
  res.momentum_out = 0.5 * ds * seg[N - 1].lx + seg[N - 1].lv;
  res.momentum_in = seg[0].lv - 0.5 * ds * seg[0].lx;
  return res;
}

/// A_t(x, y) on the torus: the minimum over the 3^D nearest lifts of y. Ties go to the
/// lexicographically smallest lift offset.
template <int D>
ActionResult<D> fundamental_solution(const LagrangianSpec<D>& L, double t, const std::type_identity_t<Vec<D>>& x,
                                     const std::type_identity_t<Vec<D>>& y,
                                     int segments = 0) {
  const double P = L.hamiltonian().period();
  const Vec<D> xs = wrap<D>(x, P);
  const Vec<D> base = xs + torus_delta<D>(xs, y, P);
  ActionResult<D> best;
  bool have = false;
  const int lifts = D == 1 ? 3 : 9;
  for (int k = 0; k < lifts; ++k) {
    Vec<D> off;
    if constexpr (D == 1) {
      off[0] = (k - 1) * P;
    } else {
      off = vec2((k / 3 - 1) * P, (k % 3 - 1) * P);
    }
    auto r = minimize_action<D>(L, t, xs, base + off, segments);
    if (!have || r.value < best.value - 1e-12) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

/// Nearest-lift solve (the only lift that matters within the short-time radius).
template <int D>
ActionResult<D> fundamental_solution_nearest(const LagrangianSpec<D>& L, double t,
                                             const std::type_identity_t<Vec<D>>& x,
                                             const std::type_identity_t<Vec<D>>& y, int segments = 0) {
  const double P = L.hamiltonian().period();
  const Vec<D> xs = wrap<D>(x, P);
  return minimize_action<D>(L, t, xs, xs + torus_delta<D>(xs, y, P), segments);
}

/// Independent route to A_t: shooting on the Hamiltonian flow for the initial momentum
/// that lands on the lifted target, with the action accumulated along the orbit.
template <int D>
struct ShootingResult {
  double value = 0.0;
  Vec<D> initial_momentum = Vec<D>::Zero();
  Vec<D> final_momentum = Vec<D>::Zero();
  bool converged = false;
};

template <int D>
ShootingResult<D> shooting_action(const HamiltonianSpec<D>& H, double t, const Vec<D>& x, const Vec<D>& y_lift,
                                  int steps = 400) {
  const LagrangianSpec<D> L(H);
  struct Out {
    Vec<D> x, p;
    double S;
  };
  auto integrate = [&](const Vec<D>& p0) {
    Vec<D> q = x, p = p0;
    double S = 0.0;
    const double h = t / steps;
    auto lag = [&](const Vec<D>& qq, const Vec<D>& pp) { return pp.dot(H.grad_p(qq, pp)) - H.value(qq, pp); };
    for (int k = 0; k < steps; ++k) {
      const Vec<D> k1x = H.grad_p(q, p), k1p = -H.grad_x(q, p);
      const double k1s = lag(q, p);
      const Vec<D> q2 = q + 0.5 * h * k1x, p2 = p + 0.5 * h * k1p;
      const Vec<D> k2x = H.grad_p(q2, p2), k2p = -H.grad_x(q2, p2);
      const double k2s = lag(q2, p2);
      const Vec<D> q3 = q + 0.5 * h * k2x, p3 = p + 0.5 * h * k2p;
      const Vec<D> k3x = H.grad_p(q3, p3), k3p = -H.grad_x(q3, p3);
      const double k3s = lag(q3, p3);
      const Vec<D> q4 = q + h * k3x, p4 = p + h * k3p;
      const Vec<D> k4x = H.grad_p(q4, p4), k4p = -H.grad_x(q4, p4);
      const double k4s = lag(q4, p4);
      q += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
      S += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
    }
    return Out{q, p, S};
  };
  ShootingResult<D> res;
  Vec<D> p0 = L.grad_v(x, (y_lift - x) / t);
  for (int it = 0; it < 50; ++it) {
    const Out o = integrate(p0);
    const Vec<D> r = o.x - y_lift;
    res.value = o.S;
    res.initial_momentum = p0;
    res.final_momentum = o.p;
    if (r.norm() < 1e-12) {
      res.converged = true;
      break;
    }
    Mat<D> J;
    for (int j = 0; j < D; ++j) {
      Vec<D> e = Vec<D>::Zero();
      e[j] = 1e-6;
      J.col(j) = (integrate(p0 + e).x - integrate(p0 - e).x) / 2e-6;
    }
    p0 -= J.partialPivLu().solve(r);
  }
  if (!res.converged) {
    const Out o = integrate(p0);
    res.value = o.S;
    res.converged = (o.x - y_lift).norm() < 1e-9;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Short-time constants.

struct ShortTimeConstants {
  double C1 = 0.0;            // semiconcavity constant of phi
  double C2 = 0.0;            // A_t is C2/t-convex near the diagonal at the chosen step
  double lambda = 1.0;        // speed bound lambda_0 + 1
  double lipschitz = 0.0;     // Lip(phi) used for lambda_0
  double tau_phi_step = 0.0;  // admissible step with C1 - C2/tau < 0
  std::vector<std::pair<double, double>> c2_probes;  // (t, t * min Hessian eigenvalue)
};

/// sup |H_p(x, p)| over grid nodes (subsampled) and |p| <= pmax.
template <int D>
double speed_bound(const HamiltonianSpec<D>& H, const Grid<D>& grid, double pmax) {
  double lam = 0.0;
  const std::size_t stride = std::max<std::size_t>(1, grid.size() / 64);
  for (std::size_t f = 0; f < grid.size(); f += stride) {
    const Vec<D> x = grid.node(f);
    if constexpr (D == 1) {
      for (int k = -10; k <= 10; ++k) lam = std::max(lam, H.grad_p(x, vec1(pmax * k / 10.0)).norm());
    } else {
      for (int r = 0; r <= 4; ++r)
        for (int a = 0; a < 16; ++a) {
          const double ang = kTwoPi * a / 16.0;
          lam = std::max(lam, H.grad_p(x, pmax * r / 4.0 * vec2(std::cos(ang), std::sin(ang))).norm());
        }
    }
  }
  return lam;
}

template <int D>
ShortTimeConstants short_time_constants(const GridField<D>& phi, const LagrangianSpec<D>& L) {
  const Grid<D>& grid = phi.grid();
  if (grid.n() < 8) throw EmptyProbe("short_time_constants needs at least 8 grid points per axis");
  ShortTimeConstants c;
  c.C1 = phi.semiconcavity_constant();
  c.lipschitz = phi.lipschitz();
  c.lambda = speed_bound<D>(L.hamiltonian(), grid, c.lipschitz + 1.0) + 1.0;
  const double P = grid.period();
  const double tmax = std::min(0.5, P / (4.0 * c.lambda));

  auto c2_at = [&](double t) {
    double cmin = std::numeric_limits<double>::infinity();
    constexpr double kStep = 1e-4;
    for (int k = 0; k < 4; ++k) {
      const Vec<D> x = Vec<D>::Constant(P * (0.1 + 0.23 * k));
      for (double frac : {0.0, 0.5}) {
        Vec<D> dir = Vec<D>::Zero();
        dir[0] = 1.0;
        const Vec<D> y = x + frac * c.lambda * t * dir;
        Mat<D> hess;
        for (int j = 0; j < D; ++j) {
          Vec<D> e = Vec<D>::Zero();
          e[j] = kStep;
          const auto rp = minimize_action<D>(L, t, x, y + e);
          const auto rm = minimize_action<D>(L, t, x, y - e);
          hess.col(j) = (rp.momentum_out - rm.momentum_out) / (2.0 * kStep);
        }
        Eigen::SelfAdjointEigenSolver<Mat<D>> es(0.5 * (hess + hess.transpose()));
        cmin = std::min(cmin, t * es.eigenvalues().minCoeff());
      }
    }
    return cmin;
  };

  for (double t = tmax; t > 1e-7; t *= 0.5) {
    const double c2 = c2_at(t);
    c.c2_probes.emplace_back(t, c2);
    if (c2 > 0.0 && c.C1 - c2 / t < -0.1 * c2 / t) {
      c.C2 = c2;
      c.tau_phi_step = t;
      return c;
    }
  }
  throw EmptyProbe("no admissible short-time step found (C1 = " + std::to_string(c.C1) + ")");
}

// ---------------------------------------------------------------------------
// Kernel tables: A_t(x_i, x_i + k h) for grid nodes x_i and lattice offsets |k|_inf <= R.

template <int D>
class KernelTable {
 public:
  KernelTable(Grid<D> grid, double t, int radius) : grid_(grid), t_(t), radius_(radius) {
    width_ = 2 * radius + 1;
    offsets_ = 1;
    for (int a = 0; a < D; ++a) offsets_ *= static_cast<std::size_t>(width_);
  }

  /// Builds the table by solving one discrete action problem per (node, offset).
  static std::shared_ptr<KernelTable> build(const LagrangianSpec<D>& L, Grid<D> grid, double t, int radius,
                                            int threads = 1) {
    auto table = std::make_shared<KernelTable>(grid, t, radius);
    const auto& H = L.hamiltonian();
    if constexpr (D > 1) {
      if (H.separable()) {
        table->separable_ = true;
        for (int a = 0; a < D; ++a) {
          const LagrangianSpec<1> La(H.axis_factor(a));
          auto axis = KernelTable<1>::build(La, Grid<1>(grid.n(), grid.period()), t, radius, threads);
          table->axis_values_[a] = axis->raw();
        }
        return table;
      }
    }
    const double h = grid.spacing();
    table->values_.assign(grid.size() * table->offsets_, 0.0);
    parallel_for(grid.size(), threads, [&](std::size_t f) {
      const Vec<D> x = grid.node(f);
      for (std::size_t k = 0; k < table->offsets_; ++k) {
        const Vec<D> off = table->offset_vector(k) * h;
        table->values_[f * table->offsets_ + k] = minimize_action<D>(L, t, x, x + off).value;
      }
    });
    return table;
  }

  const Grid<D>& grid() const { return grid_; }
  double time() const { return t_; }
  int radius() const { return radius_; }
  int width() const { return width_; }
  std::size_t offsets() const { return offsets_; }
  bool separable() const { return separable_; }
  const std::vector<double>& raw() const { return values_; }
  /// Per-axis (node, offset) tables of a separable kernel.
  const std::vector<double>& axis_raw(int axis) const { return axis_values_[axis]; }

  /// Offset multi-index (each component in [-R, R]) of flat offset k, axis 0 fastest.
  Vec<D> offset_vector(std::size_t k) const {
    Vec<D> o;
    for (int a = 0; a < D; ++a) {
      o[a] = static_cast<double>(static_cast<int>(k % static_cast<std::size_t>(width_)) - radius_);
      k /= static_cast<std::size_t>(width_);
    }
    return o;
  }
  std::array<int, D> offset_index(std::size_t k) const {
    std::array<int, D> o{};
    for (int a = 0; a < D; ++a) {
      o[a] = static_cast<int>(k % static_cast<std::size_t>(width_)) - radius_;
      k /= static_cast<std::size_t>(width_);
    }
    return o;
  }
  std::size_t offset_flat(const std::array<int, D>& o) const {
    std::size_t k = 0, stride = 1;
    for (int a = 0; a < D; ++a) {
      k += static_cast<std::size_t>(o[a] + radius_) * stride;
      stride *= static_cast<std::size_t>(width_);
    }
    return k;
  }

  /// A_t(x_f, x_f + o h).
  double operator()(std::size_t f, const std::array<int, D>& o) const {
    if constexpr (D > 1) {
      if (separable_) {
        const auto idx = grid_.unflat(f);
        double s = 0.0;
        for (int a = 0; a < D; ++a)
          s += axis_values_[a][static_cast<std::size_t>(idx[a]) * width_ + static_cast<std::size_t>(o[a] + radius_)];
        return s;
      }
    }
    return values_[f * offsets_ + offset_flat(o)];
  }
  double at_flat(std::size_t f, std::size_t k) const {
    if constexpr (D > 1) {
      if (separable_) return (*this)(f, offset_index(k));
    }
    return values_[f * offsets_ + k];
  }

  /// Row-major (node, offset) matrix; materializes separable tables.
  std::vector<double> dense() const {
    if (!separable_) return values_;
    std::vector<double> out(grid_.size() * offsets_);
    for (std::size_t f = 0; f < grid_.size(); ++f)
      for (std::size_t k = 0; k < offsets_; ++k) out[f * offsets_ + k] = at_flat(f, k);
    return out;
  }
  void set_dense(std::vector<double> v) {
    if (v.size() != grid_.size() * offsets_) throw SizeMismatch("kernel table payload size mismatch");
    values_ = std::move(v);
    separable_ = false;
  }

 private:
  Grid<D> grid_;
  double t_;
  int radius_;
  int width_ = 1;
  std::size_t offsets_ = 1;
  bool separable_ = false;
  std::vector<double> values_;
  std::array<std::vector<double>, D> axis_values_;
};

/// On-disk layout: "WKAMKT01", u32 dim, u32 n, u32 radius, u32 descriptor length, f64 t,
/// f64 period, u64 rows, u64 cols, descriptor bytes, then rows*cols f64 in row-major order.
template <int D>
void save_kernel_table(const KernelTable<D>& table, const std::string& descriptor,
                       const std::filesystem::path& path) {
  const auto data = table.dense();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InvalidArgument("cannot open " + tmp.string());
    out.write("WKAMKT01", 8);
    const std::uint32_t hdr[4] = {static_cast<std::uint32_t>(D), static_cast<std::uint32_t>(table.grid().n()),
                                  static_cast<std::uint32_t>(table.radius()),
                                  static_cast<std::uint32_t>(descriptor.size())};
    out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    const double f64[2] = {table.time(), table.grid().period()};
    out.write(reinterpret_cast<const char*>(f64), sizeof(f64));
    const std::uint64_t dims[2] = {table.grid().size(), table.offsets()};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(descriptor.data(), static_cast<std::streamsize>(descriptor.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  std::filesystem::rename(tmp, path);
}

template <int D>
std::shared_ptr<KernelTable<D>> load_kernel_table(const std::filesystem::path& path, std::string* descriptor = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return nullptr;
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "WKAMKT01", 8) != 0) return nullptr;
  std::uint32_t hdr[4];
  double f64[2];
  std::uint64_t dims[2];
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  in.read(reinterpret_cast<char*>(f64), sizeof(f64));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || hdr[0] != static_cast<std::uint32_t>(D)) return nullptr;
  std::string desc(hdr[3], '\0');
  in.read(desc.data(), hdr[3]);
  auto table = std::make_shared<KernelTable<D>>(Grid<D>(static_cast<int>(hdr[1]), f64[1]), f64[0],
                                                static_cast<int>(hdr[2]));
  std::vector<double> data(dims[0] * dims[1]);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) return nullptr;
  table->set_dense(std::move(data));
  if (descriptor) *descriptor = desc;
  return table;
}

/// Memoizing cache of kernel tables keyed by (t, radius): concurrent readers, exclusive insertion.
template <int D>
class KernelCache {
 public:
  KernelCache(LagrangianSpec<D> L, Grid<D> grid, int threads = 1, std::filesystem::path disk_dir = {})
      : L_(std::move(L)), grid_(grid), threads_(threads), disk_dir_(std::move(disk_dir)) {}

  std::shared_ptr<const KernelTable<D>> get(double t, int radius) const {
    const auto key = std::make_pair(std::llround(t * 1e12), radius);
    {
      std::shared_lock lock(mutex_);
      if (auto it = tables_.find(key); it != tables_.end()) return it->second;
    }
    std::shared_ptr<const KernelTable<D>> table;
    const auto file = disk_path(t, radius);
    if (!file.empty()) {
      std::string desc;
      auto loaded = load_kernel_table<D>(file, &desc);
      if (loaded && desc == L_.hamiltonian().descriptor() && loaded->grid() == grid_) table = loaded;
    }
    if (!table) {
      auto built = KernelTable<D>::build(L_, grid_, t, radius, threads_);
      if (!file.empty()) save_kernel_table<D>(*built, L_.hamiltonian().descriptor(), file);
      table = built;
    }
    std::unique_lock lock(mutex_);
    if (tables_.size() > 48) tables_.clear();
    return tables_.emplace(key, table).first->second;
  }

  const LagrangianSpec<D>& lagrangian() const { return L_; }
  const Grid<D>& grid() const { return grid_; }

 private:
  std::filesystem::path disk_path(double t, int radius) const {
    if (disk_dir_.empty()) return {};
    const std::string key = L_.hamiltonian().descriptor() + "|" + std::to_string(grid_.n()) + "|" +
                            std::to_string(grid_.period()) + "|" + std::to_string(std::llround(t * 1e12)) + "|" +
                            std::to_string(radius) + "|" + std::to_string(D);
    std::filesystem::create_directories(disk_dir_);
    return disk_dir_ / ("kernel_" + std::to_string(std::hash<std::string>{}(key)) + ".bin");
  }

  LagrangianSpec<D> L_;
  Grid<D> grid_;
  int threads_;
  std::filesystem::path disk_dir_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::pair<long long, int>, std::shared_ptr<const KernelTable<D>>> tables_;
};

}  // namespace wkam
