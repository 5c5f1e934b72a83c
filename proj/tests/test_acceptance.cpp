// End-to-end acceptance checks. Each numbered criterion prints one PASS/FAIL
// line; the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "optree/checkpoint.hpp"
#include "optree/distsim.hpp"
#include "optree/formula.hpp"
#include "optree/funcimg.hpp"
#include "optree/lbfgs.hpp"
#include "optree/losses.hpp"
#include "optree/metrics.hpp"
#include "optree/model.hpp"
#include "optree/report.hpp"
#include "optree/rng.hpp"
#include "optree/trainer.hpp"
#include "optree/tree.hpp"

using namespace optree;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void verdict(int criterion, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", criterion, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<Triple> gen_triples(int n, int node_min, int node_max, const MeshGrid& grid,
                                int k_max, double sigma, std::uint64_t seed,
                                int min_consts = 0, int max_consts = 8) {
  auto vocab = OperatorVocab::standard(1);
  GenConfig gc;
  gc.node_min = node_min;
  gc.node_max = node_max;
  gc.max_consts = max_consts;
  std::vector<Triple> out;
  Rng r(seed);
  while (static_cast<int>(out.size()) < n) {
    auto tree = sample_tree(vocab, gc, r.next_u64());
    if (tree.n_consts < min_consts || tree.n_consts > max_consts) continue;
    ConstVec consts;
    consts.true_len = tree.n_consts;
    consts.mask.assign(tree.n_consts, true);
    for (int i = 0; i < tree.n_consts; ++i) consts.values.push_back(r.uniform(-2.0, 2.0));
    Triple t;
    try {
      t.img = render_image(tree, consts, grid, sigma, r.next_u64(), vocab);
    } catch (const DegenerateImageError&) {
      continue;
    }
    t.ots = tree_to_ots(tree, vocab, k_max);
    t.consts = consts;
    t.formula = tree_to_formula(tree, consts, vocab);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Triple> pick_batch(const std::vector<Triple>& data, int b, std::uint64_t seed,
                               std::int64_t step) {
  Rng r(mix64(seed, 0xBA7C4ULL, static_cast<std::uint64_t>(step)));
  std::vector<Triple> out;
  for (int i = 0; i < b; ++i) out.push_back(data[r.next_index(data.size())]);
  return out;
}

// ---------------------------------------------------------------------------

void criterion_1_roundtrip() {
  auto t0 = Clock::now();
  auto vocab = OperatorVocab::standard(1);
  GenConfig gc;
  gc.node_min = 5;
  gc.node_max = 15;
  int ok = 0;
  const int N = 10000;
  Rng r(1001);
  for (int i = 0; i < N; ++i) {
    auto tree = sample_tree(vocab, gc, r.next_u64());
    auto ots = tree_to_ots(tree, vocab, 24);
    ConstVec c = ConstVec::visible(std::vector<double>(tree.n_consts, 0.0));
    auto rec = try_reconstruct(ots, c, vocab);
    if (rec.ok() && rec.tree->structurally_equal(tree)) ++ok;
  }
  double dt = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "tree/sequence round-trip: %d/%d identical, %.1fs (budget 60s)",
                ok, N, dt);
  verdict(1, ok == N && dt < 60.0, buf);
}

void criterion_2_parser() {
  auto vocab = OperatorVocab::standard(1);
  GenConfig gc;
  gc.node_min = 5;
  gc.node_max = 15;
  Rng r(1002);
  int parsed = 0, agreed = 0;
  const int N = 1000;
  double worst = 0;
  for (int i = 0; i < N; ++i) {
    auto tree = sample_tree(vocab, gc, r.next_u64());
    ConstVec c;
    c.true_len = tree.n_consts;
    c.mask.assign(tree.n_consts, true);
    for (int k = 0; k < tree.n_consts; ++k) c.values.push_back(r.uniform(-2.0, 2.0));
    auto text = tree_to_formula(tree, c, vocab);
    try {
      auto [back, bc] = parse_formula(text, vocab);
      ++parsed;
      std::vector<double> pts(100);
      for (auto& p : pts) p = r.uniform(-2.0, 2.0);
      auto a = eval_tree(tree, c, pts, 1, vocab);
      auto b = eval_tree(back, bc, pts, 1, vocab);
      bool same = true;
      for (int j = 0; j < 100; ++j) {
        bool fa = std::isfinite(a[j]), fb = std::isfinite(b[j]);
        if (fa != fb) same = false;
        if (fa && fb) {
          worst = std::max(worst, std::fabs(a[j] - b[j]));
          if (std::fabs(a[j] - b[j]) >= 1e-9) same = false;
        }
      }
      if (same) ++agreed;
    } catch (const ParseError&) {
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "emit-then-parse: %d/%d parsed, %d/%d agree on 100 points (worst %.2e)",
                parsed, N, agreed, N, worst);
  verdict(2, parsed == N && agreed == N, buf);
}

int lev_ref_memo(const std::string& a, const std::string& b,
                 std::map<std::pair<std::string, std::string>, int>& memo) {
  if (a.empty()) return static_cast<int>(b.size());
  if (b.empty()) return static_cast<int>(a.size());
  auto key = std::make_pair(a, b);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int del = lev_ref_memo(a.substr(1), b, memo) + 1;
  int ins = lev_ref_memo(a, b.substr(1), memo) + 1;
  int sub = lev_ref_memo(a.substr(1), b.substr(1), memo) + (a[0] == b[0] ? 0 : 1);
  int v = std::min({del, ins, sub});
  memo[key] = v;
  return v;
}

void criterion_3_levenshtein() {
  std::vector<std::string> words;
  for (int len = 0; len <= 6; ++len) {
    int count = 1;
    for (int i = 0; i < len; ++i) count *= 3;
    for (int v = 0; v < count; ++v) {
      std::string s;
      int x = v;
      for (int i = 0; i < len; ++i) {
        s.push_back(static_cast<char>('a' + x % 3));
        x /= 3;
      }
      words.push_back(s);
    }
  }
  long long checked = 0, mismatched = 0;
  for (std::size_t i = 0; i < words.size(); ++i)
    for (std::size_t j = i; j < words.size(); ++j) {
      std::map<std::pair<std::string, std::string>, int> memo;
      int dp = levenshtein(words[i], words[j]);
      int rec = lev_ref_memo(words[i], words[j], memo);
      ++checked;
      if (dp != rec) ++mismatched;
    }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "edit distance vs recursive reference: %lld pairs (len<=6, 3 symbols), %lld mismatches",
                checked, mismatched);
  verdict(3, mismatched == 0, buf);
}

void criterion_4_closed_forms() {
  bool ok = true;
  MatchBatch mb;
  mb.logits = {{0.0, 0.0}};
  mb.positive = {true};
  ok = ok && std::fabs(loss_fom(mb) - std::log(2.0)) < 1e-12;
  mb.positive = {false};
  ok = ok && std::fabs(loss_fom(mb) - std::log(2.0)) < 1e-12;

  int k_max = 8, nv = 19;
  Ots o;
  o.ids = {2, 5, 18, 19, 3, 1, 1, 1};
  o.true_len = 5;
  std::vector<double> uniform(static_cast<std::size_t>(k_max - 1) * nv, 0.125);
  double om = loss_om({uniform}, {o}, k_max, nv);
  ok = ok && std::fabs(om - (o.true_len - 1) * std::log(double(nv))) < 1e-12 * 4;
  ok = ok && std::fabs(loss_som({uniform}, {o}, k_max, nv) - om) < 1e-12;

  for (int n_neg : {1, 4, 64}) {
    std::vector<double> negs(n_neg, 0.42);
    double v = infonce_term(0.42, negs, 0.07, 0.07);
    ok = ok && std::fabs(v - std::log(1.0 + n_neg)) < 1e-12;
  }
  verdict(4, ok,
          "match loss at zero logits = ln 2; token loss at uniform logits = ln(vocab); "
          "contrastive terms at equal similarities = ln(1+n_neg), all within 1e-12");
}

void criterion_5_gradients() {
  NetConfig net;
  net.d_f = 16;
  net.layers = 2;
  net.heads = 4;
  net.k_max = 12;
  net.c_max = 4;
  net.image_channels = 3;
  net.image_entries = 16;
  net.patch_size = 4;
  net.teacher_width = 12;
  net.teacher_embed_hidden = 16;
  Model model(net);
  auto grid = build_meshgrid({0.5, 1.0, 2.0}, 1, 16);
  auto data = gen_triples(2, 3, 7, grid, net.k_max, 0.001, 5001);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.queue_capacity = 8;
  cfg.n_neg = 4;
  cfg.seed = 17;
  TrainState state = TrainState::init(net, cfg);
  HashTeacher teacher(net.teacher_width, 3);
  auto loss = [&](bool with_grad) {
    return pretrain_loss_grad(model, data, state, teacher, cfg, with_grad);
  };
  auto rep = gradcheck(model.params(), loss, 1e-4, 220, 1005);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "analytic vs central-difference gradients of the full loss (width 16): "
                "%d coordinates, max rel err %.2e (tol 1e-4)",
                rep.total_checked, rep.max_err);
  verdict(5, rep.passed && rep.total_checked >= 200, buf);
}

// shared between criteria 6 and 7
struct AlignmentRun {
  Model model{NetConfig{}};
  std::vector<Triple> data;
  SimilarityReport report;
  double top1 = 0;
  std::int64_t steps = 0;
  double seconds = 0;
};

// The short-run recipe anchors both encoders to the frozen teacher first
// (distillation only), then adds the contrastive term once that anchor holds.
// Without the anchor the queue-negative contrastive loss collapses every
// pooled feature onto one direction at this scale: the batch-mean pull toward
// the partner modality has no live counter-gradient, so the sample-common
// output direction absorbs the whole layer-norm budget within a few hundred
// steps. The teacher targets are fixed and well spread, which both breaks
// that symmetry and gives the contrastive phase hard, stable negatives. The
// teacher adapter and the temperature are held fixed for the same reason:
// either one, if free, re-opens a collapse shortcut (the adapter can drag the
// targets onto the student cloud; a shrinking temperature hides the raw
// cosine margin this criterion measures).
AlignmentRun run_alignment() {
  AlignmentRun out;
  auto t0 = Clock::now();
  NetConfig net;  // desk defaults
  net.pool_mean = true;  // all-token summaries separate far better than token 0 here
  auto grid = build_meshgrid({0.5, 1.0, 2.0}, 1, 64);
  out.data = gen_triples(200, 3, 7, grid, net.k_max, 0.001, 6001);
  out.model = Model(net);
  out.model.params().at("temp.tau").trainable = false;
  for (const auto& name : out.model.params().order())
    if (name.rfind("emb.", 0) == 0) out.model.params().at(name).trainable = false;
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.batch = 48;
  cfg.total_steps = 2000;
  cfg.lr_max = 3e-3;
  cfg.decay = 1.0;  // hold the plateau rate for the whole short run
  cfg.weights = {0, 0, 0, 1};
  const std::int64_t switch_step = 1200;
  TrainState state = TrainState::init(net, cfg);
  HashTeacher teacher(net.teacher_width, 7);
  std::vector<Triple> held(out.data.begin(), out.data.begin() + 50);
  while (state.step < cfg.total_steps) {
    if (state.step == switch_step) {
      cfg.weights = {1, 0, 0, 1};
      cfg.lr_max = 5e-4;
      cfg.lr_warm_start = 5e-4;
    }
    pretrain_step(out.model, pick_batch(out.data, cfg.batch, cfg.seed, state.step), state,
                  teacher, cfg);
    if (state.step >= switch_step + 400 && state.step % 100 == 0) {
      out.report = similarity_report(out.model, held, teacher);
      out.top1 = top1_retrieval(out.report.img_ots, out.report.n);
      double gap = out.report.sum_img_ots.diag_mean - out.report.sum_img_ots.offdiag_mean;
      if (gap >= 0.5 && out.top1 >= 0.85 &&
          out.report.sum_img_formula.diag_mean - out.report.sum_img_formula.offdiag_mean >= 0.3)
        break;  // comfortably past both thresholds; stop early
    }
  }
  out.report = similarity_report(out.model, held, teacher);
  out.top1 = top1_retrieval(out.report.img_ots, out.report.n);
  out.steps = state.step;
  out.seconds = seconds_since(t0);
  return out;
}

void criterion_6_alignment(const AlignmentRun& run) {
  double gap = run.report.sum_img_ots.diag_mean - run.report.sum_img_ots.offdiag_mean;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "image/sequence alignment after %lld steps: diag-offdiag %.3f (>=0.3), "
                "top-1 retrieval %.0f%% (>=80%%), %.0fs (budget 900s)",
                static_cast<long long>(run.steps), gap, 100 * run.top1, run.seconds);
  verdict(6, gap >= 0.3 && run.top1 >= 0.8 && run.steps <= 2000 && run.seconds < 900, buf);
}

void criterion_7_kd(const AlignmentRun& run) {
  double gap =
      run.report.sum_img_formula.diag_mean - run.report.sum_img_formula.offdiag_mean;

  // Negative control: a constant teacher gives the distillation loss nothing
  // to latch onto. Mirror the training setup (frozen adapter, distillation
  // only). The teacher queue starts with random fill and only holds the single
  // repeated teacher vector once capacity/batch pushes have happened, so the
  // baseline loss is read after that point; from there every stored negative
  // equals the positive and the loss is pinned at its chance level.
  NetConfig net;
  net.pool_mean = true;
  Model model(net);
  model.params().at("temp.tau").trainable = false;
  for (const auto& name : model.params().order())
    if (name.rfind("emb.", 0) == 0) model.params().at(name).trainable = false;
  TrainConfig cfg;
  cfg.seed = 43;
  cfg.batch = 48;
  cfg.total_steps = 300;
  cfg.lr_max = 3e-3;
  cfg.decay = 1.0;
  cfg.weights = {0, 0, 0, 1};
  TrainState state = TrainState::init(net, cfg);
  ConstantTeacher stub(net.teacher_width, 5, 9);
  const int refresh = (cfg.queue_capacity + cfg.batch - 1) / cfg.batch + 2;
  double first_kd = -1, min_kd = 1e300;
  for (int s = 0; s < 300; ++s) {
    auto res =
        pretrain_step(model, pick_batch(run.data, cfg.batch, cfg.seed, state.step), state,
                      stub, cfg);
    if (s < refresh) continue;
    if (first_kd < 0) first_kd = res.parts.kd;
    min_kd = std::min(min_kd, res.parts.kd);
  }
  bool control_ok = min_kd > 0.9 * first_kd;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "distillation: image/teacher diag-offdiag %.3f (>=0.2); constant-teacher "
                "control keeps the loss at %.0f%% of its start (>90%%)",
                gap, 100 * min_kd / first_kd);
  verdict(7, gap >= 0.2 && control_ok, buf);
}

// rms distance between candidate and truth renders over truth-finite entries;
// candidate non-finite where truth finite counts as a large difference
double render_dist(const OperationTree& tree, const std::vector<double>& base,
                   const std::vector<bool>& base_fin, const ConstVec& cand,
                   const MeshGrid& grid, const OperatorVocab& vocab) {
  double sse = 0;
  int m = 0;
  int epc = grid.entries_per_channel();
  for (int s = 0; s < grid.n_channels(); ++s) {
    auto v = eval_tree(tree, cand, grid.channel_points(s), grid.dims, vocab);
    for (int e = 0; e < epc; ++e) {
      std::size_t idx = static_cast<std::size_t>(s) * epc + e;
      if (!base_fin[idx]) continue;
      ++m;
      double d = std::isfinite(v[e]) ? v[e] - base[idx] : 10.0;
      sse += d * d;
    }
  }
  return m ? std::sqrt(sse / m) : 1e9;
}

// Recovery to a fixed tolerance is only a fair ask when the sampled instance
// determines its constants at the noise level. Reject instances where some
// constant has a distant near-equivalent setting (sign symmetries under even
// operators, periodic aliases through trig), where the render is insensitive
// to a constant, where a combination of constants is flat (rank-deficient
// jacobian), or where the raw surface reaches magnitudes that reduce the
// noisy target to relative garbage.
bool identifiable(const OperationTree& tree, const ConstVec& truth, const MeshGrid& grid,
                  const OperatorVocab& vocab) {
  int nc = tree.n_consts;
  int epc = grid.entries_per_channel();
  std::vector<double> base(static_cast<std::size_t>(grid.n_channels()) * epc);
  std::vector<bool> fin(base.size());
  for (int s = 0; s < grid.n_channels(); ++s) {
    auto v = eval_tree(tree, truth, grid.channel_points(s), grid.dims, vocab);
    for (int e = 0; e < epc; ++e) {
      std::size_t idx = static_cast<std::size_t>(s) * epc + e;
      base[idx] = v[e];
      fin[idx] = std::isfinite(v[e]);
      if (fin[idx] && std::fabs(v[e]) > 1e3) return false;
    }
  }
  // per-constant scan for alternate solutions / flat directions; coarse pass
  // plus local refinement so sharp symmetry minima are not missed
  for (int k = 0; k < nc; ++k) {
    auto dist_at = [&](double c) {
      ConstVec cand = truth;
      cand.values[k] = c;
      return render_dist(tree, base, fin, cand, grid, vocab);
    };
    const double step = 0.005;
    double prev2 = 1e9, prev = 1e9, prev_c = -4.0;
    for (double c = -4.0; c <= 4.0 + 1e-12; c += step) {
      double d = dist_at(c);
      bool away = std::fabs(c - truth.values[k]) > 0.01;
      if (away && d < 0.005) return false;
      if (prev2 >= prev && prev <= d && prev < 0.5 &&
          std::fabs(prev_c - truth.values[k]) > 0.01) {
        double lo = prev_c - step, hi = prev_c + step;
        for (int it = 0; it < 60; ++it) {
          double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
          if (dist_at(m1) < dist_at(m2))
            hi = m2;
          else
            lo = m1;
        }
        double cm = 0.5 * (lo + hi);
        if (std::fabs(cm - truth.values[k]) > 0.01 && dist_at(cm) < 0.005) return false;
      }
      prev2 = prev;
      prev = d;
      prev_c = c;
    }
  }
  // gram matrix of the constant jacobian: flat combined directions
  std::vector<std::vector<double>> G(nc, std::vector<double>(nc, 0.0));
  int m = 0;
  for (int s = 0; s < grid.n_channels(); ++s) {
    auto g = grad_consts(tree, truth, grid.channel_points(s), grid.dims, vocab);
    for (int e = 0; e < epc; ++e) {
      if (!g.finite[e]) continue;
      ++m;
      for (int a = 0; a < nc; ++a)
        for (int b = 0; b < nc; ++b) G[a][b] += g.jac[e][a] * g.jac[e][b];
    }
  }
  if (m == 0) return false;
  for (auto& row : G)
    for (auto& x : row) x /= m;
  // per-constant sensitivity floor, then a scale-free rank check: huge
  // jacobians near poles would otherwise drown exact rank deficiency in
  // floating-point cancellation
  for (int k = 0; k < nc; ++k)
    if (std::sqrt(G[k][k]) < 0.05) return false;
  {
    std::vector<double> d(nc);
    for (int k = 0; k < nc; ++k) d[k] = 1.0 / std::sqrt(G[k][k]);
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < nc; ++b) G[a][b] *= d[a] * d[b];
  }
  // smallest eigenvalue via cyclic jacobi sweeps (nc <= 3)
  for (int sweep = 0; sweep < 32; ++sweep)
    for (int p = 0; p < nc; ++p)
      for (int q = p + 1; q < nc; ++q) {
        if (std::fabs(G[p][q]) < 1e-18) continue;
        double theta = 0.5 * std::atan2(2 * G[p][q], G[q][q] - G[p][p]);
        double c = std::cos(theta), s2 = std::sin(theta);
        for (int i = 0; i < nc; ++i) {
          double gp = G[i][p], gq = G[i][q];
          G[i][p] = c * gp - s2 * gq;
          G[i][q] = s2 * gp + c * gq;
        }
        for (int i = 0; i < nc; ++i) {
          double gp = G[p][i], gq = G[q][i];
          G[p][i] = c * gp - s2 * gq;
          G[q][i] = s2 * gp + c * gq;
        }
      }
  double mineig = G[0][0];
  for (int i = 1; i < nc; ++i) mineig = std::min(mineig, G[i][i]);
  return mineig >= 1e-3;
}

void criterion_8_lbfgs() {
  auto vocab = OperatorVocab::standard(1);
  auto grid = build_meshgrid({0.5, 1.0, 2.0}, 1, 64);
  GenConfig gc;
  gc.node_min = 3;
  gc.node_max = 7;
  gc.max_consts = 3;
  Rng r(8001);
  int ok = 0, trials = 0;
  double worst_pass = 0;
  while (trials < 100) {
    auto tree = sample_tree(vocab, gc, r.next_u64());
    if (tree.n_consts < 1) continue;
    ConstVec truth;
    truth.true_len = tree.n_consts;
    truth.mask.assign(tree.n_consts, true);
    for (int k = 0; k < tree.n_consts; ++k) truth.values.push_back(r.uniform(-2.0, 2.0));
    RenderOptions raw;
    raw.standardize = false;
    FuncImage img;
    try {
      img = render_image(tree, truth, grid, 0.001, r.next_u64(), vocab, raw);
    } catch (const DegenerateImageError&) {
      continue;
    }
    if (!identifiable(tree, truth, grid, vocab)) continue;
    ++trials;
    auto skel = tree_to_ots(tree, vocab, 24);
    FitOptions opts;
    opts.seed = r.next_u64();
    try {
      auto fit = fit_constants_lbfgs(skel, img, grid,
                                     ConstVec::visible(std::vector<double>(tree.n_consts, 0.0)),
                                     vocab, opts);
      double err = 0;
      for (int k = 0; k < tree.n_consts; ++k)
        err = std::max(err, std::fabs(fit.consts.values[k] - truth.values[k]));
      if (err < 1e-2) {
        ++ok;
        worst_pass = std::max(worst_pass, err);
      }
    } catch (const NoDescentError&) {
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "constant recovery (<=3 constants, noise 1e-3, identifiable instances): "
                "%d/100 within 1e-2 (need >=90), worst accepted err %.1e",
                ok, worst_pass);
  verdict(8, ok >= 90, buf);
}

void criterion_9_distributed(const std::vector<Triple>& data) {
  NetConfig net;
  Model model(net);
  TrainConfig cfg;
  cfg.seed = 44;
  TrainState state = TrainState::init(net, cfg);
  HashTeacher teacher(net.teacher_width, 7);
  auto batch = pick_batch(data, 8, cfg.seed, 0);
  auto mono = pretrain_forward(model, batch, state, teacher, cfg);
  bool ok = true;
  double worst = 0;
  bool bit_identical = false;
  for (int k : {1, 2, 4}) {
    WorkerTopology topo;
    topo.n_model_workers = k;
    topo.teacher_worker = k;
    auto dist = dist_sim_run(topo, batch, model, state, teacher, cfg);
    double d = std::max({std::fabs(dist.losses.foc - mono.foc),
                         std::fabs(dist.losses.fom - mono.fom),
                         std::fabs(dist.losses.om - mono.om),
                         std::fabs(dist.losses.kd - mono.kd)});
    worst = std::max(worst, d);
    if (d >= 1e-6) ok = false;
    if (k == 1)
      bit_identical = dist.losses.foc == mono.foc && dist.losses.fom == mono.fom &&
                      dist.losses.om == mono.om && dist.losses.kd == mono.kd;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "sharded forward for 1/2/4 workers: worst deviation %.2e (tol 1e-6), "
                "single worker bit-identical: %s",
                worst, bit_identical ? "yes" : "no");
  verdict(9, ok && bit_identical, buf);
}

void criterion_10_finetune() {
  NetConfig net;
  auto grid = build_meshgrid({0.5, 1.0, 2.0}, 1, 64);
  auto data = gen_triples(100, 3, 7, grid, net.k_max, 0.001, 10001);
  HashTeacher teacher(net.teacher_width, 7);
  auto vocab = OperatorVocab::standard(1);

  auto evaluate = [&](Model& m) {
    std::vector<Ots> pred, target;
    std::vector<ConstVec> pc, tc;
    int exact = 0;
    for (const auto& t : data) {
      auto cond = m.teacher_embed(teacher.extract(t.formula));
      auto out = generate_ots(m, cond);
      if (out.depadded() == t.ots.depadded()) ++exact;
      pred.push_back(out);
      target.push_back(t.ots);
      pc.push_back(ConstVec::visible(std::vector<double>(net.c_max, 0.0)));
      tc.push_back(t.consts);
    }
    auto rep = metric_suite(pred, target, pc, tc, vocab);
    return std::make_pair(exact, rep.s_rl_tilde);
  };

  Model untrained(net);
  auto [exact0, srl0] = evaluate(untrained);

  Model model(net);
  TrainConfig cfg;
  cfg.seed = 45;
  cfg.total_steps = 1500;
  cfg.lr_max = 1e-3;
  cfg.lr_warm_start = 1e-4;
  finetune_formula_ots(model, data, teacher, cfg);
  auto [exact1, srl1] = evaluate(model);

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "text-to-sequence fine-tune on 100 formulas: exact match %d%% (>=70%%, "
                "untrained %d%%), gated score %.3f vs %.3f untrained (gain >=0.4)",
                exact1, exact0, srl1, srl0);
  verdict(10, exact1 >= 70 && srl1 - srl0 >= 0.4, buf);
}

void criterion_11_schedule() {
  TrainConfig c;  // defaults: 1e-6 -> 1e-4, 2000 steps, 25 steps/epoch
  int w = c.warmup_steps();
  bool ok = lr_schedule(0, c) == 1e-6 && lr_schedule(w, c) == 1e-4;
  for (std::int64_t step = w; step < w + 100 * c.steps_per_epoch; ++step) {
    std::int64_t epoch = (step - w) / c.steps_per_epoch;
    double want = 1e-4 * std::pow(0.9, static_cast<double>(epoch / 5));
    if (lr_schedule(step, c) != want) ok = false;
  }
  verdict(11, ok,
          "learning rate: 1e-6 at step 0, 1e-4 at warmup end, stepwise 0.9 decay every 5 "
          "epochs verified pointwise over 100 epochs");
}

void criterion_12_checkpoint(const std::vector<Triple>& data) {
  namespace fs = std::filesystem;
  NetConfig net;
  TrainConfig cfg;
  cfg.seed = 46;
  HashTeacher teacher(net.teacher_width, 7);
  auto path = (fs::temp_directory_path() / "optree_acceptance_ck.bin").string();

  Model a(net);
  TrainState sa = TrainState::init(net, cfg);
  while (sa.step < 20)
    pretrain_step(a, pick_batch(data, cfg.batch, cfg.seed, sa.step), sa, teacher, cfg);

  Model b(net);
  TrainState sb = TrainState::init(net, cfg);
  while (sb.step < 10)
    pretrain_step(b, pick_batch(data, cfg.batch, cfg.seed, sb.step), sb, teacher, cfg);
  save_checkpoint(b, sb, path);

  Model c(checkpoint_config(path));
  TrainState sc = TrainState::init(net, cfg);
  load_checkpoint(c, sc, path);
  while (sc.step < 20)
    pretrain_step(c, pick_batch(data, cfg.batch, cfg.seed, sc.step), sc, teacher, cfg);

  bool same = sa.step == sc.step && sa.qi.buffer() == sc.qi.buffer() &&
              sa.qo.buffer() == sc.qo.buffer() && sa.qs.buffer() == sc.qs.buffer();
  for (const auto& name : a.params().order()) {
    if (a.params().at(name).value.a != c.params().at(name).value.a) same = false;
    if (a.params().at(name).adam_m.a != c.params().at(name).adam_m.a) same = false;
    if (a.params().at(name).adam_v.a != c.params().at(name).adam_v.a) same = false;
  }
  fs::remove(path);
  verdict(12, same,
          "10 steps + checkpoint + 10 resumed steps equals 20 straight steps bit-exactly "
          "(tensors, optimizer moments, queues, step counter)");
}

}  // namespace

int main() {
  criterion_1_roundtrip();
  criterion_2_parser();
  criterion_3_levenshtein();
  criterion_4_closed_forms();
  criterion_5_gradients();
  auto run = run_alignment();
  criterion_6_alignment(run);
  criterion_7_kd(run);
  criterion_8_lbfgs();
  criterion_9_distributed(run.data);
  criterion_10_finetune();
  criterion_11_schedule();
  criterion_12_checkpoint(run.data);
  std::printf("%d of 12 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
