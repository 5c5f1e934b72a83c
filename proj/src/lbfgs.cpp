#include "optree/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "optree/rng.hpp"

namespace optree {

namespace {

struct Objective {
  const OperationTree& tree;
  const FuncImage& img;
  const MeshGrid& grid;
  const OperatorVocab& vocab;
  int nc;

  // returns MSE over image-finite entries, +inf if the candidate produces a
  // non-finite value anywhere the target is finite
  double eval(const std::vector<double>& c, std::vector<double>* grad) const {
    ConstVec cv = ConstVec::visible(c);
    double sse = 0;
    std::size_t m_total = 0;
    if (grad) grad->assign(nc, 0.0);
    for (int s = 0; s < grid.n_channels(); ++s) {
      auto points = grid.channel_points(s);
      auto g = grad_consts(tree, cv, points, grid.dims, vocab);
      for (int e = 0; e < img.entries; ++e) {
        if (!img.finite_mask[static_cast<std::size_t>(s) * img.entries + e]) continue;
        ++m_total;
        if (!g.finite[e]) return std::numeric_limits<double>::infinity();
        double r = g.value[e] - img.at(s, e);
        sse += r * r;
        if (grad)
          for (int k = 0; k < nc; ++k) (*grad)[k] += 2.0 * r * g.jac[e][k];
      }
    }
    if (m_total == 0) return std::numeric_limits<double>::infinity();
    if (grad)
      for (auto& v : *grad) v /= static_cast<double>(m_total);
    return sse / static_cast<double>(m_total);
  }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// strong Wolfe line search; non-finite trial values shrink the step
bool line_search(const Objective& obj, const std::vector<double>& x, double f0,
                 const std::vector<double>& g0, const std::vector<double>& d, double c1,
                 double c2, std::vector<double>& x_out, double& f_out,
                 std::vector<double>& g_out) {
  const int nc = static_cast<int>(x.size());
  double d0 = dot(g0, d);
  if (d0 >= 0) return false;
  auto phi = [&](double a, std::vector<double>* grad, double& dphi) {
    std::vector<double> xt(nc);
    for (int i = 0; i < nc; ++i) xt[i] = x[i] + a * d[i];
    double f = obj.eval(xt, grad);
    dphi = grad && std::isfinite(f) ? dot(*grad, d) : 0.0;
    x_out = std::move(xt);
    return f;
  };

  double lo = 0, hi = -1, flo = f0, a = 1.0;
  std::vector<double> grad(nc);
  for (int it = 0; it < 60; ++it) {
    double dphi;
    double f = phi(a, &grad, dphi);
    bool armijo = std::isfinite(f) && f <= f0 + c1 * a * d0;
    if (!armijo) {
      hi = a;  // backtrack; also rejects non-finite iterates
    } else if (std::fabs(dphi) <= c2 * std::fabs(d0)) {
      f_out = f;
      g_out = grad;
      return true;
    } else if (dphi >= 0) {
      hi = a;
      lo = a;
      flo = f;
      // derivative crossed zero; bisection below narrows from both sides
    } else {
      lo = a;
      flo = f;
    }
    a = hi < 0 ? a * 2.0 : 0.5 * (lo + hi);
    if (hi >= 0 && hi - lo < 1e-14) break;
  }
  // fall back to the best sufficient-decrease point if curvature never met
  if (flo < f0 && lo > 0) {
    double dphi;
    f_out = phi(lo, &grad, dphi);
    g_out = grad;
    return std::isfinite(f_out) && f_out < f0;
  }
  return false;
}

struct RunResult {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
  int iters = 0;
  bool first_step_failed = false;
};

RunResult minimize(const Objective& obj, std::vector<double> x, const FitOptions& opts) {
  const int nc = static_cast<int>(x.size());
  RunResult out;
  std::vector<double> g(nc);
  double f = obj.eval(x, &g);
  if (!std::isfinite(f)) {
    out.first_step_failed = true;
    return out;
  }
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  for (int it = 0; it < opts.max_iters; ++it) {
    double gmax = 0;
    for (double v : g) gmax = std::max(gmax, std::fabs(v));
    if (gmax < opts.grad_tol) break;

    // two-loop recursion
    std::vector<double> q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * dot(s_hist[i], q);
      for (int k = 0; k < nc; ++k) q[k] -= alpha[i] * y_hist[i][k];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) {
      double yy = dot(y_hist.back(), y_hist.back());
      if (yy > 0) gamma = dot(s_hist.back(), y_hist.back()) / yy;
    }
    for (auto& v : q) v *= gamma;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      double beta = rho_hist[i] * dot(y_hist[i], q);
      for (int k = 0; k < nc; ++k) q[k] += (alpha[i] - beta) * s_hist[i][k];
    }
    std::vector<double> d(nc);
    for (int k = 0; k < nc; ++k) d[k] = -q[k];

    std::vector<double> x_new(nc), g_new(nc);
    double f_new;
    if (!line_search(obj, x, f, g, d, opts.c1, opts.c2, x_new, f_new, g_new)) {
      if (it == 0) {
        // retry steepest descent before declaring failure
        for (int k = 0; k < nc; ++k) d[k] = -g[k];
        if (!line_search(obj, x, f, g, d, opts.c1, opts.c2, x_new, f_new, g_new)) {
          out.first_step_failed = true;
          break;
        }
      } else {
        break;
      }
    }
    std::vector<double> s(nc), y(nc);
    for (int k = 0; k < nc; ++k) {
      s[k] = x_new[k] - x[k];
      y[k] = g_new[k] - g[k];
    }
    if (dot(s, y) > 1e-16) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / dot(s, y));
      if (static_cast<int>(s_hist.size()) > opts.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    out.iters = it + 1;
  }
  out.x = std::move(x);
  out.f = f;
  return out;
}

}  // namespace

FitResult fit_constants_lbfgs(const Ots& skeleton, const FuncImage& img, const MeshGrid& grid,
                              const ConstVec& init, const OperatorVocab& vocab,
                              const FitOptions& opts) {
  OperationTree tree = ots_to_tree(skeleton, init, vocab);
  int nc = tree.n_consts;
  if (grid.n_channels() != img.n_channels || grid.entries_per_channel() != img.entries)
    throw ShapeError("grid does not match target image");
  Objective obj{tree, img, grid, vocab, nc};

  if (nc == 0) {
    FitResult r;
    r.consts = ConstVec::visible({});
    r.mse = obj.eval({}, nullptr);
    return r;
  }

  FitResult best;
  best.mse = std::numeric_limits<double>::infinity();
  bool any_descended = false;
  int n_starts = std::max(1, opts.restarts);
  for (int r = 0; r < n_starts; ++r) {
    std::vector<double> x0(nc);
    if (r == 0) {
      for (int k = 0; k < nc; ++k) x0[k] = k < init.true_len ? init.values[k] : 0.0;
    } else {
      Rng rng(mix64(opts.seed, 0x1bf65ULL, static_cast<std::uint64_t>(r)));
      for (int k = 0; k < nc; ++k) x0[k] = rng.uniform(-2.0, 2.0);
    }
    auto run = minimize(obj, std::move(x0), opts);
    if (!run.first_step_failed) any_descended = true;
    if (run.f < best.mse) {
      best.mse = run.f;
      best.consts = ConstVec::visible(run.x);
      best.iters = run.iters;
      best.restarts_used = r + 1;
    }
  }
  if (!any_descended)
    throw NoDescentError("line search failed at the first iteration of every restart");
  return best;
}

}  // namespace optree
