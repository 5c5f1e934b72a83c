#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "optree/checkpoint.hpp"
#include "optree/distsim.hpp"
#include "optree/formula.hpp"
#include "optree/lbfgs.hpp"
#include "optree/model.hpp"
#include "optree/rng.hpp"
#include "optree/trainer.hpp"

using namespace optree;

namespace {

NetConfig small_net() {
  NetConfig c;
  c.d_f = 16;
  c.layers = 1;
  c.heads = 2;
  c.k_max = 10;
  c.c_max = 4;
  c.image_channels = 2;
  c.image_entries = 16;
  c.patch_size = 4;
  c.teacher_width = 12;
  c.teacher_embed_hidden = 16;
  c.init_seed = 7;
  return c;
}

TrainConfig small_train(std::uint64_t seed = 11) {
  TrainConfig c;
  c.batch = 2;
  c.queue_capacity = 8;
  c.n_neg = 4;
  c.seed = seed;
  c.total_steps = 20;
  c.steps_per_epoch = 4;
  return c;
}

FuncImage image_for(const NetConfig& cfg, std::uint64_t seed) {
  FuncImage img;
  img.n_channels = cfg.image_channels;
  img.entries = cfg.image_entries;
  Rng r(seed);
  img.values = r.normal_vec(static_cast<std::size_t>(img.n_channels) * img.entries);
  img.finite_mask.assign(img.values.size(), 1);
  return img;
}

std::vector<Triple> make_data(const NetConfig& net, int n) {
  std::vector<Triple> out(n);
  const char* forms[] = {"sin(x1)", "(x1+0.5)", "(x1*x1)", "cos((x1*2.5))"};
  for (int i = 0; i < n; ++i) {
    Ots o;
    o.ids = {2, 5, 18, 19, 3};
    o.true_len = 5;
    if (i % 2 == 1) {
      o.ids[1] = 7;  // alternate add/mul skeletons
    }
    o.ids.resize(static_cast<std::size_t>(net.k_max), 1);
    out[i].ots = o;
    out[i].consts = ConstVec::visible({0.25 * (i + 1)});
    out[i].img = image_for(net, 100 + i);
    out[i].formula = forms[i % 4];
  }
  return out;
}

bool params_equal(const ParamStore& a, const ParamStore& b) {
  if (a.order() != b.order()) return false;
  for (const auto& name : a.order())
    if (a.at(name).value.a != b.at(name).value.a) return false;
  return true;
}

std::vector<Triple> batch_at(const std::vector<Triple>& data, int b, std::uint64_t seed,
                             std::int64_t step) {
  Rng r(mix64(seed, 777ULL, static_cast<std::uint64_t>(step)));
  std::vector<Triple> out;
  for (int i = 0; i < b; ++i) out.push_back(data[r.next_index(data.size())]);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("lr schedule: warmup endpoints and stepwise decay") {
  TrainConfig c = small_train();
  c.total_steps = 2000;
  c.steps_per_epoch = 25;
  int w = c.warmup_steps();
  CHECK(w == 100);
  CHECK(lr_schedule(0, c) == c.lr_warm_start);
  CHECK(lr_schedule(w, c) == c.lr_max);
  // closed form after warmup: lr_max * decay^((epoch)/every) with integer division
  for (std::int64_t step : {100, 101, 124, 125, 225, 2000, 5000}) {
    std::int64_t epoch = (step - w) / c.steps_per_epoch;
    double want = c.lr_max * std::pow(c.decay, static_cast<double>(epoch / c.decay_every_epochs));
    CHECK(lr_schedule(step, c) == want);
  }
  // mid-warmup linear interpolation
  CHECK(lr_schedule(50, c) ==
        doctest::Approx(c.lr_warm_start + 0.5 * (c.lr_max - c.lr_warm_start)));
}

TEST_CASE("train config validation") {
  TrainConfig c = small_train();
  c.n_neg = c.queue_capacity + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_train();
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_train();
  c.warmup_frac = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("one pre-training step is bit-deterministic") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);

  Model a(net), b(net);
  TrainState sa = TrainState::init(net, cfg), sb = TrainState::init(net, cfg);
  auto batch = batch_at(data, cfg.batch, cfg.seed, 0);
  auto ra = pretrain_step(a, batch, sa, teacher, cfg);
  auto rb = pretrain_step(b, batch, sb, teacher, cfg);
  CHECK(ra.total == rb.total);
  CHECK(ra.parts.foc == rb.parts.foc);
  CHECK(params_equal(a.params(), b.params()));
  CHECK(sa.qi.buffer() == sb.qi.buffer());
  CHECK(sa.step == 1);
  CHECK(ra.total > 0.0);
  CHECK(ra.lr == lr_schedule(0, cfg));
}

TEST_CASE("zero loss weights: parameters frozen, queues still refreshed") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  cfg.weights = {0, 0, 0, 0};
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);
  Model m(net);
  TrainState state = TrainState::init(net, cfg);
  auto before_params = m.params().at("ots.tok_emb").value.a;
  auto before_queue = state.qi.buffer();
  auto res = pretrain_step(m, batch_at(data, cfg.batch, cfg.seed, 0), state, teacher, cfg);
  CHECK(res.total == 0.0);
  CHECK(m.params().at("ots.tok_emb").value.a == before_params);
  CHECK(state.qi.buffer() != before_queue);
  CHECK(state.step == 1);
}

TEST_CASE("single-loss weighting leaves unrelated heads untouched") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  cfg.weights = {1, 0, 0, 0};  // contrastive only
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);
  Model m(net);
  TrainState state = TrainState::init(net, cfg);
  auto lm_before = m.params().at("head.lm.w").value.a;
  auto match_before = m.params().at("head.match.w").value.a;
  auto tok_before = m.params().at("ots.tok_emb").value.a;
  auto res = pretrain_step(m, batch_at(data, cfg.batch, cfg.seed, 0), state, teacher, cfg);
  CHECK(res.parts.fom == 0.0);
  CHECK(res.parts.om == 0.0);
  CHECK(res.parts.kd == 0.0);
  CHECK(res.total == doctest::Approx(res.parts.foc));
  CHECK(m.params().at("head.lm.w").value.a == lm_before);
  CHECK(m.params().at("head.match.w").value.a == match_before);
  CHECK(m.params().at("ots.tok_emb").value.a != tok_before);
}

TEST_CASE("non-finite loss raises before any update") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);
  Model m(net);
  TrainState state = TrainState::init(net, cfg);
  m.params().at("img.patch_w").value.a[0] = std::nan("");
  auto tok_before = m.params().at("ots.tok_emb").value.a;
  auto queue_before = state.qi.buffer();
  CHECK_THROWS_AS(pretrain_step(m, batch_at(data, cfg.batch, cfg.seed, 0), state, teacher, cfg),
                  NonFiniteLossError);
  CHECK(m.params().at("ots.tok_emb").value.a == tok_before);
  CHECK(state.qi.buffer() == queue_before);
  CHECK(state.step == 0);
}

TEST_CASE("monolithic forward matches the step losses without updating") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);
  Model a(net), b(net);
  TrainState sa = TrainState::init(net, cfg), sb = TrainState::init(net, cfg);
  auto batch = batch_at(data, cfg.batch, cfg.seed, 0);
  auto parts = pretrain_forward(a, batch, sa, teacher, cfg);
  auto res = pretrain_step(b, batch, sb, teacher, cfg);
  CHECK(parts.foc == doctest::Approx(res.parts.foc).epsilon(1e-12));
  CHECK(parts.fom == doctest::Approx(res.parts.fom).epsilon(1e-12));
  CHECK(parts.om == doctest::Approx(res.parts.om).epsilon(1e-12));
  CHECK(parts.kd == doctest::Approx(res.parts.kd).epsilon(1e-12));
  CHECK(params_equal(a.params(), Model(net).params()));
  CHECK(sa.step == 0);
}

TEST_CASE("distributed simulation reproduces the monolithic losses") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  cfg.batch = 4;
  auto data = make_data(net, 8);
  HashTeacher teacher(net.teacher_width, 3);
  Model m(net);
  TrainState state = TrainState::init(net, cfg);
  auto batch = batch_at(data, 4, cfg.seed, 0);
  auto mono = pretrain_forward(m, batch, state, teacher, cfg);

  for (int k : {1, 2, 4}) {
    WorkerTopology topo;
    topo.n_model_workers = k;
    topo.teacher_worker = k;
    auto dist = dist_sim_run(topo, batch, m, state, teacher, cfg);
    if (k == 1) {
      CHECK(dist.losses.foc == mono.foc);
      CHECK(dist.losses.fom == mono.fom);
      CHECK(dist.losses.om == mono.om);
      CHECK(dist.losses.kd == mono.kd);
    } else {
      CHECK(std::fabs(dist.losses.foc - mono.foc) < 1e-6);
      CHECK(std::fabs(dist.losses.fom - mono.fom) < 1e-6);
      CHECK(std::fabs(dist.losses.om - mono.om) < 1e-6);
      CHECK(std::fabs(dist.losses.kd - mono.kd) < 1e-6);
    }
    // total = every logged message: strings up, features down, plus the
    // boundary pairing and loss messages between model workers
    std::uint64_t logged = 0;
    for (const auto& msg : topo.log) logged += msg.bytes;
    CHECK(dist.transfer_bytes_total == logged);
    CHECK(dist.transfer_bytes_total >= dist.transfer_bytes_up + dist.transfer_bytes_down);
    if (k == 1)
      CHECK(dist.transfer_bytes_total == dist.transfer_bytes_up + dist.transfer_bytes_down);
    CHECK(!topo.log.empty());
  }
}

TEST_CASE("teacher transfer volume scales linearly with the batch") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);
  Model m(net);
  TrainState state = TrainState::init(net, cfg);
  auto batch = batch_at(data, 2, cfg.seed, 0);
  std::vector<Triple> twice = batch;
  twice.insert(twice.end(), batch.begin(), batch.end());

  WorkerTopology t1, t2;
  t1.n_model_workers = t2.n_model_workers = 2;
  t1.teacher_worker = t2.teacher_worker = 2;
  cfg.batch = 2;
  auto a = dist_sim_run(t1, batch, m, state, teacher, cfg);
  cfg.batch = 4;
  auto b = dist_sim_run(t2, twice, m, state, teacher, cfg);
  CHECK(b.transfer_bytes_up == 2 * a.transfer_bytes_up);
  CHECK(b.transfer_bytes_down == 2 * a.transfer_bytes_down);
}

TEST_CASE("bad worker topologies are rejected") {
  WorkerTopology t;
  t.n_model_workers = 0;
  t.teacher_worker = 1;
  CHECK_THROWS_AS(t.validate(), TopologyError);
  t.n_model_workers = 2;
  t.teacher_worker = 1;  // collides with a model worker
  CHECK_THROWS_AS(t.validate(), TopologyError);
  t.teacher_worker = 2;
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("greedy decode is deterministic and equals width-1 beam") {
  NetConfig net = small_net();
  Model m(net);
  auto cond = m.encode_funcimg(image_for(net, 51));
  auto g1 = generate_ots(m, cond, DecodeMode::greedy);
  auto g2 = generate_ots(m, cond, DecodeMode::greedy);
  auto b1 = generate_ots(m, cond, DecodeMode::beam, 1);
  CHECK(g1.ids == g2.ids);
  CHECK(g1.ids == b1.ids);
  CHECK(g1.ids[0] == 2);  // BOS
  CHECK(static_cast<int>(g1.ids.size()) == net.k_max);
  CHECK(g1.true_len <= net.k_max);
  // every emitted id is a valid vocabulary id
  for (int id : g1.depadded()) {
    CHECK(id >= 1);
    CHECK(id <= net.vocab_size);
  }
  auto b4 = generate_ots(m, cond, DecodeMode::beam, 4);
  CHECK(static_cast<int>(b4.ids.size()) == net.k_max);
}

TEST_CASE("fine-tuning is deterministic and reduces the training loss") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  cfg.total_steps = 40;
  cfg.lr_max = 1e-3;
  cfg.lr_warm_start = 1e-4;
  auto data = make_data(net, 4);
  Model a(net), b(net);
  auto la = finetune_funcimg_ots(a, data, cfg);
  auto lb = finetune_funcimg_ots(b, data, cfg);
  REQUIRE(la.size() == 40);
  CHECK(la.back().loss == lb.back().loss);
  CHECK(params_equal(a.params(), b.params()));
  CHECK(la.back().loss < la.front().loss);

  HashTeacher teacher(net.teacher_width, 3);
  Model c(net);
  auto lc = finetune_formula_ots(c, data, teacher, cfg);
  CHECK(lc.back().loss < lc.front().loss);
}

TEST_CASE("frozen encoder stays frozen during fine-tuning") {
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  cfg.total_steps = 5;
  cfg.train_encoder = false;
  auto data = make_data(net, 4);
  Model m(net);
  auto img_before = m.params().at("img.patch_w").value.a;
  auto lm_before = m.params().at("head.lm.w").value.a;
  finetune_funcimg_ots(m, data, cfg);
  CHECK(m.params().at("img.patch_w").value.a == img_before);
  CHECK(m.params().at("head.lm.w").value.a != lm_before);
}

TEST_CASE("checkpoint round-trip is byte-identical and resume matches") {
  namespace fs = std::filesystem;
  NetConfig net = small_net();
  TrainConfig cfg = small_train();
  auto data = make_data(net, 4);
  HashTeacher teacher(net.teacher_width, 3);
  auto p1 = (fs::temp_directory_path() / "optree_ck1.bin").string();
  auto p2 = (fs::temp_directory_path() / "optree_ck2.bin").string();

  // straight-through run of 20 steps
  Model a(net);
  TrainState sa = TrainState::init(net, cfg);
  while (sa.step < 20)
    pretrain_step(a, batch_at(data, cfg.batch, cfg.seed, sa.step), sa, teacher, cfg);

  // 10 steps, checkpoint, reload into a fresh model, 10 more steps
  Model b(net);
  TrainState sb = TrainState::init(net, cfg);
  while (sb.step < 10)
    pretrain_step(b, batch_at(data, cfg.batch, cfg.seed, sb.step), sb, teacher, cfg);
  save_checkpoint(b, sb, p1);

  CHECK(checkpoint_config(p1).d_f == net.d_f);
  Model c(checkpoint_config(p1));
  TrainState sc = TrainState::init(net, cfg);
  load_checkpoint(c, sc, p1);
  CHECK(sc.step == 10);
  CHECK(params_equal(b.params(), c.params()));
  save_checkpoint(c, sc, p2);
  CHECK(slurp(p1) == slurp(p2));

  while (sc.step < 20)
    pretrain_step(c, batch_at(data, cfg.batch, cfg.seed, sc.step), sc, teacher, cfg);
  CHECK(params_equal(a.params(), c.params()));
  CHECK(sa.qs.buffer() == sc.qs.buffer());

  // loading into a mismatched architecture must fail
  NetConfig other = net;
  other.d_f = 32;
  Model wrong(other);
  TrainState sw = TrainState::init(other, cfg);
  CHECK_THROWS_AS(load_checkpoint(wrong, sw, p1), VersionError);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("constant fitting recovers a linear coefficient exactly") {
  auto vocab = OperatorVocab::standard(1);
  auto grid = build_meshgrid({2.0}, 1, 33);
  Ots skel;
  skel.ids = {2, 7, 19, 18, 3, 1, 1, 1};  // BOS mul C x1 EOS
  skel.true_len = 5;

  auto [tree, cv] = parse_formula("(1.7*x1)", vocab);
  RenderOptions raw;
  raw.standardize = false;
  auto target = render_image(tree, cv, grid, 0.0, 99, vocab, raw);

  auto fit = fit_constants_lbfgs(skel, target, grid, ConstVec::visible({0.0}), vocab);
  CHECK(std::fabs(fit.consts.values[0] - 1.7) < 1e-6);
  CHECK(fit.mse < 1e-12);

  // starting at the optimum terminates immediately with zero loss
  auto at_truth = fit_constants_lbfgs(skel, target, grid, ConstVec::visible({1.7}), vocab);
  CHECK(at_truth.mse < 1e-20);
  CHECK(at_truth.iters <= 1);

  // no constants: nothing to fit
  Ots plain;
  plain.ids = {2, 12, 18, 3, 1, 1, 1, 1};  // sin(x1)
  plain.true_len = 4;
  auto [t2, c2] = parse_formula("sin(x1)", vocab);
  auto img2 = render_image(t2, c2, grid, 0.0, 98, vocab, raw);
  auto none = fit_constants_lbfgs(plain, img2, grid, ConstVec::visible({}), vocab);
  CHECK(none.mse < 1e-20);
  CHECK(none.iters == 0);
}
