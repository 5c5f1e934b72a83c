#include "optree/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include "optree/rng.hpp"

namespace optree {

void TrainConfig::validate() const {
  if (batch < 1 || total_steps < 1 || steps_per_epoch < 1 || queue_capacity < 1 || n_neg < 1)
    throw ConfigError("TrainConfig counts must be positive");
  if (lr_warm_start <= 0 || lr_max <= 0 || lr_warm_start > lr_max)
    throw ConfigError("warmup start must be in (0, lr_max]");
  if (decay <= 0 || decay > 1 || decay_every_epochs < 1)
    throw ConfigError("invalid decay settings");
  if (warmup_frac < 0 || warmup_frac >= 1) throw ConfigError("warmup_frac must be in [0,1)");
  if (n_neg > queue_capacity) throw ConfigError("n_neg exceeds queue capacity");
}

int TrainConfig::warmup_steps() const {
  return std::max(1, static_cast<int>(std::llround(warmup_frac * total_steps)));
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  int w = cfg.warmup_steps();
  if (step < w)
    return cfg.lr_warm_start +
           (cfg.lr_max - cfg.lr_warm_start) * static_cast<double>(step) / w;
  std::int64_t epoch = (step - w) / cfg.steps_per_epoch;
  return cfg.lr_max * std::pow(cfg.decay, static_cast<double>(epoch / cfg.decay_every_epochs));
}

TrainState TrainState::init(const NetConfig& net, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.qi = FeatureQueue(cfg.queue_capacity, net.d_f, mix64(cfg.seed, 0x5149ULL));
  s.qo = FeatureQueue(cfg.queue_capacity, net.d_f, mix64(cfg.seed, 0x514fULL));
  s.qs = FeatureQueue(cfg.queue_capacity, net.d_f, mix64(cfg.seed, 0x5153ULL));
  return s;
}

namespace {

PooledFeature pool_value(const Model& model, const FeatureMatrix& h) {
  return model.config().pool_mean ? pool_mean(h) : pool_first_token(h);
}

Mat negs_to_mat(const std::vector<PooledFeature>& negs) {
  Mat m(static_cast<int>(negs.size()), static_cast<int>(negs[0].v.size()));
  for (std::size_t k = 0; k < negs.size(); ++k)
    for (std::size_t j = 0; j < negs[k].v.size(); ++j) m.at(static_cast<int>(k), static_cast<int>(j)) = negs[k].v[j];
  return m;
}

// -(pos/tau_num - logsumexp([pos, negs]/tau_den)); all handles are tape nodes
int graph_infonce(Tape& t, int pos, int neg_sims, int inv_tau_num, int inv_tau_den) {
  int row = t.concat_cols({pos, neg_sims});
  int lse = t.logsumexp_row(t.scale_by(row, inv_tau_den));
  return t.sub(lse, t.scale_by(pos, inv_tau_num));
}

std::uint64_t batch_pick_seed(std::uint64_t seed) { return mix64(seed, 0xBA7C4ULL); }

std::vector<int> pick_batch(int data_size, int batch, std::uint64_t seed, std::int64_t step) {
  Rng r(mix64(batch_pick_seed(seed), static_cast<std::uint64_t>(step)));
  std::vector<int> idx(batch);
  for (int b = 0; b < batch; ++b) idx[b] = static_cast<int>(r.next_index(data_size));
  return idx;
}

std::vector<StepLog> finetune_loop(Model& model, const std::vector<Triple>& data,
                                   const Teacher* teacher, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("empty fine-tuning dataset");
  if (!cfg.train_encoder)
    for (const auto& name : model.params().order())
      if (name.rfind("img.", 0) == 0) model.params().at(name).trainable = false;
  std::vector<StepLog> log;
  int km = model.config().k_max, nv = model.config().vocab_size;
  for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
    double lr = lr_schedule(step, cfg);
    auto idx = pick_batch(static_cast<int>(data.size()), cfg.batch, cfg.seed, step);
    Tape t;
    std::vector<int> terms;
    for (int b : idx) {
      const Triple& x = data[static_cast<std::size_t>(b)];
      int cond = teacher ? model.teacher_embed_node(t, teacher->extract(x.formula))
                         : model.encode_funcimg_node(t, x.img);
      int logits =
          model.decode_logits_node(t, x.ots, ConstVec::fully_masked(x.consts.true_len), cond);
      std::vector<int> targets(static_cast<std::size_t>(km - 1), 0);
      for (int k = 0; k < x.ots.true_len - 1; ++k) targets[k] = x.ots.ids[k + 1] - 1;
      terms.push_back(t.cross_entropy_rows(logits, std::move(targets), x.ots.true_len - 1));
    }
    int loss = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) loss = t.add(loss, terms[i]);
    loss = t.scale(loss, 1.0 / static_cast<double>(terms.size()));
    double value = t.val(loss).a[0];
    if (!std::isfinite(value)) throw NonFiniteLossError("fine-tune loss is not finite");
    model.params().zero_grads();
    t.backward(loss);
    t.flush_param_grads(model.params());
    model.params().adam_step(lr, 0.9, 0.999, 1e-8, step + 1);
    (void)nv;
    log.push_back({step, lr, value});
  }
  return log;
}

}  // namespace

namespace {

struct PretrainGraph {
  std::vector<int> gi, go, gs;
  int total = -1;  // -1 when every weight is zero
  LossParts parts;
};

PretrainGraph build_pretrain_graph(Model& model, const std::vector<Triple>& batch,
                                   const TrainState& state, const Teacher& teacher,
                                   const TrainConfig& cfg, Tape& t) {
  const int B = static_cast<int>(batch.size());
  const std::uint64_t step_seed = mix64(cfg.seed, static_cast<std::uint64_t>(state.step));
  const auto& w = cfg.weights;
  int km = model.config().k_max;
  PretrainGraph out;
  std::vector<int> img_nodes(B);
  auto& gi = out.gi;
  auto& go = out.go;
  auto& gs = out.gs;
  gi.resize(B);
  go.resize(B);
  gs.resize(B);
  std::vector<ConstVec> masked(B);
  for (int j = 0; j < B; ++j) {
    masked[j] = ConstVec::fully_masked(batch[j].consts.true_len);
    img_nodes[j] = model.encode_funcimg_node(t, batch[j].img);
    gi[j] = model.pool_node(t, img_nodes[j]);
    go[j] = model.pool_node(t, model.encode_ots_node(t, batch[j].ots, masked[j]));
    gs[j] = model.pool_node(t, model.teacher_embed_node(t, teacher.extract(batch[j].formula)));
  }
  int inv_tau = t.reciprocal(model.tau_node(t));
  int inv_tau_p = t.reciprocal(model.tau_prime_node(t));

  std::vector<int> weighted;

  if (w.foc != 0) {
    int neg_o = t.constant(negs_to_mat(state.qo.sample(cfg.n_neg, foc_neg_seed_o(step_seed))));
    int neg_i = t.constant(negs_to_mat(state.qi.sample(cfg.n_neg, foc_neg_seed_i(step_seed))));
    int neg_o_t = t.transpose(neg_o), neg_i_t = t.transpose(neg_i);
    int sum = -1;
    for (int j = 0; j < B; ++j) {
      int pos = t.dot_all(gi[j], go[j]);
      int a = graph_infonce(t, pos, t.matmul(gi[j], neg_o_t), inv_tau, inv_tau);
      int b = graph_infonce(t, pos, t.matmul(go[j], neg_i_t), inv_tau, inv_tau);
      int term = t.add(a, b);
      sum = sum < 0 ? term : t.add(sum, term);
    }
    int foc = t.scale(sum, 1.0 / B);
    out.parts.foc = t.val(foc).a[0];
    weighted.push_back(t.scale(foc, w.foc));
  }

  if (w.fom != 0) {
    int sum = -1;
    for (int j = 0; j < B; ++j) {
      int pos_h = model.encode_ots_node(t, batch[j].ots, masked[j], img_nodes[j]);
      int pos_ce = t.cross_entropy_rows(model.match_logits_node(t, pos_h), {0}, 1);
      int neg_h = model.encode_ots_node(t, batch[(j + 1) % B].ots, masked[(j + 1) % B],
                                        img_nodes[j]);
      int neg_ce = t.cross_entropy_rows(model.match_logits_node(t, neg_h), {1}, 1);
      int term = t.add(pos_ce, neg_ce);
      sum = sum < 0 ? term : t.add(sum, term);
    }
    int fom = t.scale(sum, 1.0 / (2.0 * B));
    out.parts.fom = t.val(fom).a[0];
    weighted.push_back(t.scale(fom, w.fom));
  }

  if (w.om != 0) {
    int sum = -1;
    for (int j = 0; j < B; ++j) {
      int logits = model.decode_logits_node(t, batch[j].ots, masked[j], img_nodes[j]);
      std::vector<int> targets(static_cast<std::size_t>(km - 1), 0);
      for (int k = 0; k < batch[j].ots.true_len - 1; ++k) targets[k] = batch[j].ots.ids[k + 1] - 1;
      int term = t.cross_entropy_rows(logits, std::move(targets), batch[j].ots.true_len - 1);
      sum = sum < 0 ? term : t.add(sum, term);
    }
    int om = t.scale(sum, 1.0 / B);
    out.parts.om = t.val(om).a[0];
    weighted.push_back(t.scale(om, w.om));
  }

  if (w.kd != 0) {
    int neg_s = t.constant(negs_to_mat(state.qs.sample(cfg.n_neg, kd_neg_seed(step_seed))));
    int neg_s_t = t.transpose(neg_s);
    int sum = -1;
    for (int j = 0; j < B; ++j) {
      int a = graph_infonce(t, t.dot_all(gi[j], gs[j]), t.matmul(gi[j], neg_s_t), inv_tau,
                            inv_tau_p);
      int b = graph_infonce(t, t.dot_all(go[j], gs[j]), t.matmul(go[j], neg_s_t), inv_tau,
                            inv_tau_p);
      int term = t.add(a, b);
      sum = sum < 0 ? term : t.add(sum, term);
    }
    int kd = t.scale(sum, 1.0 / B);
    out.parts.kd = t.val(kd).a[0];
    weighted.push_back(t.scale(kd, w.kd));
  }

  for (int node : weighted) out.total = out.total < 0 ? node : t.add(out.total, node);
  return out;
}

}  // namespace

StepResult pretrain_step(Model& model, const std::vector<Triple>& batch, TrainState& state,
                         const Teacher& teacher, const TrainConfig& cfg) {
  cfg.validate();
  const int B = static_cast<int>(batch.size());
  const double lr = lr_schedule(state.step, cfg);

  Tape t;
  PretrainGraph g = build_pretrain_graph(model, batch, state, teacher, cfg, t);

  StepResult res;
  res.lr = lr;
  res.parts = g.parts;
  res.total = g.total < 0 ? 0.0 : t.val(g.total).a[0];
  if (!std::isfinite(res.total))
    throw NonFiniteLossError("pre-training loss is not finite at step " +
                             std::to_string(state.step));

  if (g.total >= 0) {
    model.params().zero_grads();
    t.backward(g.total);
    t.flush_param_grads(model.params());
    model.params().adam_step(lr, 0.9, 0.999, 1e-8, state.step + 1);
    model.clamp_temperatures();
  }

  // queue updates come after the optimizer update, with this step's features
  std::vector<PooledFeature> pi(B), po(B), ps(B);
  for (int j = 0; j < B; ++j) {
    pi[j].v = t.val(g.gi[j]).a;
    po[j].v = t.val(g.go[j]).a;
    ps[j].v = t.val(g.gs[j]).a;
  }
  state.qi.push(pi);
  state.qo.push(po);
  state.qs.push(ps);
  state.step += 1;
  return res;
}

double pretrain_loss_grad(Model& model, const std::vector<Triple>& batch,
                          const TrainState& state, const Teacher& teacher,
                          const TrainConfig& cfg, bool with_grad) {
  Tape t;
  PretrainGraph g = build_pretrain_graph(model, batch, state, teacher, cfg, t);
  if (g.total < 0) return 0.0;
  if (with_grad) {
    model.params().zero_grads();
    t.backward(g.total);
    t.flush_param_grads(model.params());
  }
  return t.val(g.total).a[0];
}

ShardSums pretrain_shard_sums(Model& model, const std::vector<Triple>& batch, int begin, int end,
                              const TrainState& state, const Teacher& teacher,
                              const TrainConfig& cfg, std::uint64_t step_seed) {
  const int B = static_cast<int>(batch.size());
  auto temps = model.temperatures();
  auto neg_o = state.qo.sample(cfg.n_neg, foc_neg_seed_o(step_seed));
  auto neg_i = state.qi.sample(cfg.n_neg, foc_neg_seed_i(step_seed));
  auto neg_s = state.qs.sample(cfg.n_neg, kd_neg_seed(step_seed));
  auto sims = [](const PooledFeature& a, const std::vector<PooledFeature>& negs) {
    std::vector<double> s(negs.size());
    for (std::size_t k = 0; k < negs.size(); ++k) s[k] = cosine_sim(a, negs[k]);
    return s;
  };
  int km = model.config().k_max, nv = model.config().vocab_size;

  ShardSums out;
  for (int j = begin; j < end; ++j) {
    const Triple& x = batch[j];
    ConstVec masked = ConstVec::fully_masked(x.consts.true_len);
    FeatureMatrix hi = model.encode_funcimg(x.img);
    PooledFeature gi = pool_value(model, hi);
    PooledFeature go = pool_value(model, model.encode_ots(x.ots, masked));
    PooledFeature gs =
        pool_value(model, model.teacher_embed(teacher.extract(x.formula)));

    double pos = cosine_sim(gi, go);
    out.foc += infonce_term(pos, sims(gi, neg_o), temps.tau, temps.tau,
                            cfg.positive_in_denominator);
    out.foc += infonce_term(pos, sims(go, neg_i), temps.tau, temps.tau,
                            cfg.positive_in_denominator);

    MatchBatch mb;
    int jn = (j + 1) % B;
    mb.logits.push_back(model.match_logits(model.encode_ots(x.ots, masked, &hi)));
    mb.positive.push_back(true);
    mb.logits.push_back(model.match_logits(model.encode_ots(
        batch[jn].ots, ConstVec::fully_masked(batch[jn].consts.true_len), &hi)));
    mb.positive.push_back(false);
    out.fom += loss_fom(mb) * 2.0;
    out.n_match_rows += 2;

    out.om += loss_om({model.decode_logits(x.ots, masked, hi)}, {x.ots}, km, nv);

    out.kd += infonce_term(cosine_sim(gi, gs), sims(gi, neg_s), temps.tau, temps.tau_prime,
                           cfg.positive_in_denominator);
    out.kd += infonce_term(cosine_sim(go, gs), sims(go, neg_s), temps.tau, temps.tau_prime,
                           cfg.positive_in_denominator);
    out.n_samples += 1;
  }
  return out;
}

LossParts reduce_shards(const std::vector<ShardSums>& shards) {
  double foc = 0, fom = 0, om = 0, kd = 0;
  int n = 0, rows = 0;
  for (const auto& s : shards) {
    foc += s.foc;
    fom += s.fom;
    om += s.om;
    kd += s.kd;
    n += s.n_samples;
    rows += s.n_match_rows;
  }
  LossParts p;
  p.foc = foc / n;
  p.fom = fom / rows;
  p.om = om / n;
  p.kd = kd / n;
  return p;
}

LossParts pretrain_forward(Model& model, const std::vector<Triple>& batch,
                           const TrainState& state, const Teacher& teacher,
                           const TrainConfig& cfg) {
  const std::uint64_t step_seed = mix64(cfg.seed, static_cast<std::uint64_t>(state.step));
  return reduce_shards({pretrain_shard_sums(model, batch, 0, static_cast<int>(batch.size()),
                                            state, teacher, cfg, step_seed)});
}

void write_loss_csv(const std::vector<StepLog>& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write loss log: " + path);
  f << "step,lr,loss\n";
  f.precision(17);
  for (const auto& l : log) f << l.step << "," << l.lr << "," << l.loss << "\n";
}

std::vector<StepLog> finetune_funcimg_ots(Model& model, const std::vector<Triple>& data,
                                          const TrainConfig& cfg) {
  return finetune_loop(model, data, nullptr, cfg);
}

std::vector<StepLog> finetune_formula_ots(Model& model, const std::vector<Triple>& data,
                                          const Teacher& teacher, const TrainConfig& cfg) {
  return finetune_loop(model, data, &teacher, cfg);
}

Ots generate_ots(Model& model, const FeatureMatrix& cond, DecodeMode mode, int beam_width) {
  const auto& cfg = model.config();
  const int bos = 2, eos = 3, kmax = cfg.k_max;
  ConstVec no_consts = ConstVec::fully_masked(0);
  auto pad_to_kmax = [&](const std::vector<int>& ids) {
    Ots o;
    o.ids.assign(static_cast<std::size_t>(kmax), 1);
    for (std::size_t i = 0; i < ids.size(); ++i) o.ids[i] = ids[i];
    o.true_len = static_cast<int>(ids.size());
    return o;
  };

  struct Hyp {
    std::vector<int> ids;
    double logp = 0;
    bool done = false;
  };
  int width = mode == DecodeMode::greedy ? 1 : std::max(1, beam_width);
  std::vector<Hyp> beams{{{bos}, 0.0, false}};
  while (true) {
    bool any_open = false;
    std::vector<Hyp> next;
    for (const auto& h : beams) {
      if (h.done || static_cast<int>(h.ids.size()) >= kmax - 1) {
        next.push_back(h);
        continue;
      }
      any_open = true;
      auto logits = model.decode_logits(pad_to_kmax(h.ids), no_consts, cond);
      int pos = static_cast<int>(h.ids.size()) - 1;
      const double* row = logits.data() + static_cast<std::size_t>(pos) * cfg.vocab_size;
      double mx = row[0];
      for (int n = 1; n < cfg.vocab_size; ++n) mx = std::max(mx, row[n]);
      double sum = 0;
      for (int n = 0; n < cfg.vocab_size; ++n) sum += std::exp(row[n] - mx);
      double lse = mx + std::log(sum);
      for (int n = 0; n < cfg.vocab_size; ++n) {
        Hyp h2 = h;
        h2.ids.push_back(n + 1);
        h2.logp += row[n] - lse;
        h2.done = (n + 1) == eos;
        next.push_back(std::move(h2));
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
    if (static_cast<int>(next.size()) > width) next.resize(static_cast<std::size_t>(width));
    beams = std::move(next);
    if (!any_open) break;
  }
  auto& best = beams.front();
  if (!best.done && static_cast<int>(best.ids.size()) < kmax) best.ids.push_back(eos);
  return pad_to_kmax(best.ids);
}

}  // namespace optree
