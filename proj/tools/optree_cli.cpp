#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "optree/checkpoint.hpp"
#include "optree/dataset.hpp"
#include "optree/distsim.hpp"
#include "optree/formula.hpp"
#include "optree/lbfgs.hpp"
#include "optree/metrics.hpp"
#include "optree/report.hpp"
#include "optree/rng.hpp"
#include "optree/trainer.hpp"

using namespace optree;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("OPTREE_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

// flat JSON object; any present key overrides the matching flag value
void apply_config_file(const std::string& path, NetConfig& net, TrainConfig& train,
                       GenConfig& gen) {
  if (path.empty()) return;
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file: " + path);
  nlohmann::json j;
  f >> j;
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("d_f", net.d_f);
  get("layers", net.layers);
  get("heads", net.heads);
  get("k_max", net.k_max);
  get("c_max", net.c_max);
  get("image_channels", net.image_channels);
  get("image_entries", net.image_entries);
  get("patch_size", net.patch_size);
  get("teacher_width", net.teacher_width);
  get("teacher_embed_hidden", net.teacher_embed_hidden);
  get("pool_mean", net.pool_mean);
  get("init_seed", net.init_seed);
  get("lambda_foc", train.weights.foc);
  get("lambda_fom", train.weights.fom);
  get("lambda_om", train.weights.om);
  get("lambda_kd", train.weights.kd);
  get("batch", train.batch);
  get("total_steps", train.total_steps);
  get("steps_per_epoch", train.steps_per_epoch);
  get("lr_warm_start", train.lr_warm_start);
  get("lr_max", train.lr_max);
  get("decay", train.decay);
  get("decay_every_epochs", train.decay_every_epochs);
  get("warmup_frac", train.warmup_frac);
  get("queue_capacity", train.queue_capacity);
  get("n_neg", train.n_neg);
  get("seed", train.seed);
  get("train_encoder", train.train_encoder);
  get("node_min", gen.node_min);
  get("node_max", gen.node_max);
  get("var_count", gen.var_count);
  get("p_const_leaf", gen.p_const_leaf);
  get("max_consts", gen.max_consts);
}

std::unique_ptr<Teacher> make_teacher(const std::string& import_dir, int width,
                                      std::uint64_t seed) {
  if (!import_dir.empty()) return std::make_unique<TeacherStore>(import_dir);
  return std::make_unique<HashTeacher>(width, seed);
}

FuncImage standardized_copy(FuncImage img) {
  if (img.standardized) return img;
  for (int s = 0; s < img.n_channels; ++s) {
    double sum = 0, sum2 = 0;
    int n = 0;
    for (int e = 0; e < img.entries; ++e) {
      std::size_t idx = static_cast<std::size_t>(s) * img.entries + e;
      if (!img.finite_mask[idx]) continue;
      sum += img.values[idx];
      sum2 += img.values[idx] * img.values[idx];
      ++n;
    }
    if (n == 0) continue;
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    for (int e = 0; e < img.entries; ++e) {
      std::size_t idx = static_cast<std::size_t>(s) * img.entries + e;
      if (img.finite_mask[idx]) img.values[idx] = (img.values[idx] - mean) / sd;
    }
  }
  img.standardized = true;
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"operation-tree multimodal alignment toolkit"};
  app.require_subcommand(1);

  NetConfig net;
  TrainConfig train;
  GenConfig gen;
  train.seed = default_seed();
  gen.seed = train.seed;
  std::string config_file, data_dir, out_path, ckpt_path, resume_path, log_path;
  std::string task = "funcimg-ots", teacher_dir, image_prefix, formulas_file;
  std::vector<double> scales{0.5, 1.0, 2.0};
  int dims = 1, points = 64, n_skeletons = 500, images_per = 4, report_n = 50;
  double sigma = 0.001;
  int teacher_width = 48;
  std::uint64_t teacher_seed = 17;
  bool do_metrics = false, do_similarity = false;
  std::string export_dir, import_dir;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_file, "JSON file whose keys override flags");
    c->add_option("--seed", train.seed, "global seed (default from OPTREE_SEED)");
  };

  auto* cgen = app.add_subcommand("gen", "generate a dataset");
  add_common(cgen);
  cgen->add_option("--out", out_path)->required();
  cgen->add_option("--skeletons", n_skeletons);
  cgen->add_option("--images-per", images_per);
  cgen->add_option("--node-min", gen.node_min);
  cgen->add_option("--node-max", gen.node_max);
  cgen->add_option("--var-count", gen.var_count);
  cgen->add_option("--p-const", gen.p_const_leaf);
  cgen->add_option("--max-consts", gen.max_consts);
  cgen->add_option("--sigma", sigma);
  cgen->add_option("--k-max", net.k_max);
  cgen->add_option("--scales", scales);
  cgen->add_option("--dims", dims);
  cgen->add_option("--points", points);

  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--steps", train.total_steps);
    c->add_option("--batch", train.batch);
    c->add_option("--steps-per-epoch", train.steps_per_epoch);
    c->add_option("--queue", train.queue_capacity);
    c->add_option("--n-neg", train.n_neg);
    c->add_option("--lr-max", train.lr_max);
    c->add_option("--d-f", net.d_f);
    c->add_option("--layers", net.layers);
    c->add_option("--heads", net.heads);
    c->add_option("--log", log_path);
  };

  auto* cpre = app.add_subcommand("pretrain", "Algorithm-1 pre-training");
  add_common(cpre);
  cpre->add_option("--data", data_dir)->required();
  cpre->add_option("--out", out_path)->required();
  cpre->add_option("--resume", resume_path);
  cpre->add_option("--lambda-foc", train.weights.foc);
  cpre->add_option("--lambda-fom", train.weights.fom);
  cpre->add_option("--lambda-om", train.weights.om);
  cpre->add_option("--lambda-kd", train.weights.kd);
  cpre->add_option("--teacher-width", teacher_width);
  cpre->add_option("--teacher-seed", teacher_seed);
  cpre->add_option("--teacher-import", teacher_dir);
  add_train_opts(cpre);

  auto* cft = app.add_subcommand("finetune", "next-token fine-tuning");
  add_common(cft);
  cft->add_option("--task", task)->check(CLI::IsMember({"funcimg-ots", "formula-ots"}));
  cft->add_option("--data", data_dir)->required();
  cft->add_option("--ckpt", ckpt_path)->required();
  cft->add_option("--out", out_path)->required();
  cft->add_flag("--freeze-encoder", [&](std::int64_t) { train.train_encoder = false; });
  cft->add_option("--teacher-width", teacher_width);
  cft->add_option("--teacher-seed", teacher_seed);
  cft->add_option("--teacher-import", teacher_dir);
  add_train_opts(cft);

  auto* ceval = app.add_subcommand("eval", "metric evaluation");
  add_common(ceval);
  ceval->add_flag("--metrics", do_metrics);
  ceval->add_option("--task", task)->check(CLI::IsMember({"funcimg-ots", "formula-ots"}));
  ceval->add_option("--data", data_dir)->required();
  ceval->add_option("--ckpt", ckpt_path)->required();
  ceval->add_option("--teacher-width", teacher_width);
  ceval->add_option("--teacher-seed", teacher_seed);
  ceval->add_option("--teacher-import", teacher_dir);
  ceval->add_option("--limit", report_n);

  auto* cinf = app.add_subcommand("infer", "image -> skeleton -> constants -> formula");
  add_common(cinf);
  cinf->add_option("--image", image_prefix)->required();
  cinf->add_option("--ckpt", ckpt_path)->required();
  cinf->add_option("--scales", scales);
  cinf->add_option("--dims", dims);
  cinf->add_option("--points", points);
  cinf->add_option("--var-count", gen.var_count);

  auto* crep = app.add_subcommand("report", "similarity matrices");
  add_common(crep);
  crep->add_flag("--similarity", do_similarity);
  crep->add_option("--data", data_dir)->required();
  crep->add_option("--ckpt", ckpt_path)->required();
  crep->add_option("--out", out_path)->required();
  crep->add_option("--n", report_n);
  crep->add_option("--teacher-width", teacher_width);
  crep->add_option("--teacher-seed", teacher_seed);
  crep->add_option("--teacher-import", teacher_dir);

  auto* ctea = app.add_subcommand("teacher", "export or inspect teacher features");
  add_common(ctea);
  ctea->add_option("--export", export_dir, "write features for --formulas to this directory");
  ctea->add_option("--import", import_dir, "read features back and report their shapes");
  ctea->add_option("--formulas", formulas_file, "one formula per line");
  ctea->add_option("--teacher-width", teacher_width);
  ctea->add_option("--teacher-seed", teacher_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    apply_config_file(config_file, net, train, gen);
    gen.seed = train.seed;

    if (cgen->parsed()) {
      auto grid = build_meshgrid(scales, dims, points);
      auto m = dataset_generate(gen, grid, n_skeletons, images_per, sigma, net.k_max, out_path);
      std::cout << "records=" << m.n_records << " content_hash=" << m.content_hash << "\n";
      return 0;
    }

    if (cpre->parsed()) {
      auto data = load_dataset(data_dir);
      auto manifest = load_manifest(data_dir);
      net.k_max = manifest.k_max;
      net.image_channels = manifest.grid.n_channels();
      net.image_entries = manifest.grid.entries_per_channel();
      Model model(net);
      TrainState state = TrainState::init(net, train);
      if (!resume_path.empty()) load_checkpoint(model, state, resume_path);
      auto teacher = make_teacher(teacher_dir, teacher_width, teacher_seed);
      std::vector<StepLog> log;
      while (state.step < train.total_steps) {
        std::vector<Triple> batch;
        Rng r(mix64(train.seed, 0xBA7C4ULL, static_cast<std::uint64_t>(state.step)));
        for (int b = 0; b < train.batch; ++b)
          batch.push_back(data[r.next_index(data.size())]);
        auto res = pretrain_step(model, batch, state, *teacher, train);
        log.push_back({state.step - 1, res.lr, res.total});
        if (state.step % 100 == 0)
          std::cout << "step " << state.step << " loss " << res.total << "\n";
      }
      save_checkpoint(model, state, out_path);
      if (!log_path.empty()) write_loss_csv(log, log_path);
      return 0;
    }

    if (cft->parsed()) {
      auto data = load_dataset(data_dir);
      Model model(checkpoint_config(ckpt_path));
      TrainState state = TrainState::init(model.config(), train);
      load_checkpoint(model, state, ckpt_path);
      std::vector<StepLog> log;
      if (task == "funcimg-ots") {
        log = finetune_funcimg_ots(model, data, train);
      } else {
        auto teacher = make_teacher(teacher_dir, teacher_width, teacher_seed);
        log = finetune_formula_ots(model, data, *teacher, train);
      }
      state.step = 0;
      save_checkpoint(model, state, out_path);
      if (!log_path.empty()) write_loss_csv(log, log_path);
      std::cout << "final loss " << log.back().loss << "\n";
      return 0;
    }

    if (ceval->parsed()) {
      if (!do_metrics) throw ConfigError("eval requires --metrics");
      auto data = load_dataset(data_dir);
      if (static_cast<int>(data.size()) > report_n) data.resize(report_n);
      Model model(checkpoint_config(ckpt_path));
      TrainState state = TrainState::init(model.config(), train);
      load_checkpoint(model, state, ckpt_path);
      auto vocab = OperatorVocab::standard(gen.var_count);
      std::unique_ptr<Teacher> teacher;
      if (task == "formula-ots") teacher = make_teacher(teacher_dir, teacher_width, teacher_seed);
      std::vector<Ots> pred, target;
      std::vector<ConstVec> pred_c, target_c;
      for (const auto& x : data) {
        FeatureMatrix cond = task == "funcimg-ots"
                                 ? model.encode_funcimg(x.img)
                                 : model.teacher_embed(teacher->extract(x.formula));
        pred.push_back(generate_ots(model, cond));
        target.push_back(x.ots);
        pred_c.push_back(ConstVec::visible(std::vector<double>(model.config().c_max, 0.0)));
        target_c.push_back(x.consts);
      }
      auto rep = metric_suite(pred, target, pred_c, target_c, vocab);
      std::cout << "acc_r=" << rep.acc_r << " s_rl=" << rep.s_rl
                << " s_rl_tilde=" << rep.s_rl_tilde << " n=" << rep.n_samples << "\n";
      return 0;
    }

    if (cinf->parsed()) {
      FuncImage img = load_image(image_prefix);
      auto grid = build_meshgrid(scales, dims, points);
      Model model(checkpoint_config(ckpt_path));
      TrainState state = TrainState::init(model.config(), train);
      load_checkpoint(model, state, ckpt_path);
      auto vocab = OperatorVocab::standard(gen.var_count);
      Ots skel = generate_ots(model, model.encode_funcimg(standardized_copy(img)));
      ConstVec init = ConstVec::visible(std::vector<double>(model.config().c_max, 0.0));
      auto rec = try_reconstruct(skel, init, vocab);
      if (!rec.ok()) {
        std::cout << "skeleton did not reconstruct: " << to_string(rec.reason) << "\n";
        return 1;
      }
      FitOptions fopts;
      fopts.seed = train.seed;
      auto fit = fit_constants_lbfgs(skel, img, grid, init, vocab, fopts);
      std::cout << "formula: " << tree_to_formula(*rec.tree, fit.consts, vocab) << "\n";
      std::cout << "mse: " << fit.mse << "\n";
      return 0;
    }

    if (crep->parsed()) {
      if (!do_similarity) throw ConfigError("report requires --similarity");
      auto data = load_dataset(data_dir);
      if (static_cast<int>(data.size()) > report_n) data.resize(report_n);
      Model model(checkpoint_config(ckpt_path));
      TrainState state = TrainState::init(model.config(), train);
      load_checkpoint(model, state, ckpt_path);
      auto teacher = make_teacher(teacher_dir, teacher_width, teacher_seed);
      auto rep = similarity_report(model, data, *teacher);
      write_similarity_csv(rep, out_path);
      std::cout << "img_ots diag=" << rep.sum_img_ots.diag_mean
                << " offdiag=" << rep.sum_img_ots.offdiag_mean << "\n";
      return 0;
    }

    if (ctea->parsed()) {
      if (!export_dir.empty()) {
        if (formulas_file.empty()) throw ConfigError("--export requires --formulas");
        std::ifstream f(formulas_file);
        if (!f) throw IoError("cannot read " + formulas_file);
        std::vector<std::string> formulas;
        std::string line;
        while (std::getline(f, line))
          if (!line.empty()) formulas.push_back(line);
        HashTeacher t(teacher_width, teacher_seed);
        TeacherStore::export_teacher(t, formulas, export_dir);
        std::cout << "exported " << formulas.size() << " formulas\n";
      } else if (!import_dir.empty()) {
        TeacherStore store(import_dir);
        std::cout << "teacher " << store.id() << " width " << store.hidden_width() << "\n";
        if (!formulas_file.empty()) {
          std::ifstream f(formulas_file);
          std::string line;
          while (std::getline(f, line)) {
            if (line.empty()) continue;
            auto h = store.extract(line);
            std::cout << line << " -> " << h.rows << "x" << h.cols << "\n";
          }
        }
      } else {
        throw ConfigError("teacher requires --export or --import");
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
