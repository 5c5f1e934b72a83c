#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "optree/autodiff.hpp"
#include "optree/feature.hpp"
#include "optree/funcimg.hpp"
#include "optree/teacher.hpp"
#include "optree/tree.hpp"

namespace optree {

struct NetConfig {
  int d_f = 32;
  int layers = 2;
  int heads = 4;
  int k_max = 24;   // max OTS length including framing
  int c_max = 8;    // max constant slots
  int vocab_size = 19;
  int image_channels = 3;
  int image_entries = 64;  // per channel
  int patch_size = 8;
  int teacher_width = 48;      // D_m'
  int teacher_embed_hidden = 64;
  double dropout = 0.0;  // reserved; forward passes are deterministic
  bool pool_mean = false;  // contrastive pooling: first token (default) or mean
  std::uint64_t init_seed = 7;

  int n_patches() const { return image_channels * (image_entries / patch_size); }
  int n_img_tokens() const { return 1 + n_patches(); }
  int n_ots_tokens() const { return k_max + c_max; }

  std::string to_json() const;
  static NetConfig from_json(const std::string& text);
  std::uint64_t hash() const;
};

// Encoder/decoder stacks over one shared OTS backbone (weight tying), an
// image encoder, the two heads, the teacher embedder, and the temperatures.
class Model {
 public:
  explicit Model(const NetConfig& cfg);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Temperatures temperatures() const;
  void clamp_temperatures(double floor = 1e-3);

  // graph builders
  int encode_funcimg_node(Tape& t, const FuncImage& img);
  int encode_ots_node(Tape& t, const Ots& o, const ConstVec& c, int cond = -1);
  int decode_logits_node(Tape& t, const Ots& o_prefix, const ConstVec& c, int cond);
  int match_logits_node(Tape& t, int h_with_cond);
  int teacher_embed_node(Tape& t, const TeacherHidden& th);
  int pool_node(Tape& t, int h);
  int tau_node(Tape& t) { return t.param(params_, "temp.tau"); }
  // the secondary temperature is tied to tau: same graph node, so the
  // distillation denominator and numerator share one balanced gradient. The
  // stored temp.tau_prime tensor tracks the value for checkpoints/reports.
  int tau_prime_node(Tape& t) { return t.param(params_, "temp.tau"); }

  // eval-mode conveniences (fresh local tape, no gradients kept)
  FeatureMatrix encode_funcimg(const FuncImage& img);
  FeatureMatrix encode_ots(const Ots& o, const ConstVec& c,
                           const FeatureMatrix* cond = nullptr);
  std::vector<double> decode_logits(const Ots& o_prefix, const ConstVec& c,
                                    const FeatureMatrix& cond);
  std::array<double, 2> match_logits(const FeatureMatrix& h);
  FeatureMatrix teacher_embed(const TeacherHidden& th);

  int feature_node_from_matrix(Tape& t, const FeatureMatrix& m);
  FeatureMatrix matrix_from_node(Tape& t, int h, Modality tag);

 private:
  NetConfig cfg_;
  ParamStore params_;
  Mat causal_mask_;  // (k_max+c_max)^2 additive

  void build_params();
  int attention(Tape& t, int q_in, int kv_in, const std::string& prefix, const Mat* mask);
  int block(Tape& t, int x, const std::string& prefix, const Mat* mask, int cond,
            bool has_cross);
  int backbone(Tape& t, int x, const std::string& base, const Mat* mask, int cond,
               bool has_cross);
  int ots_tokens_node(Tape& t, const Ots& o, const ConstVec& c);
};

struct GradCheckReport {
  struct Item {
    std::string tensor;
    double max_err = 0;  // relative with absolute floor
    int checked = 0;
  };
  std::vector<Item> items;
  double max_err = 0;
  int total_checked = 0;
  bool passed = false;
};

// loss(true) must (re)compute the loss and leave fresh analytic gradients in
// ps; loss(false) must return the loss value without touching gradients.
GradCheckReport gradcheck(ParamStore& ps, const std::function<double(bool)>& loss,
                          double tol, int n_coords, std::uint64_t seed,
                          double abs_tol = 1e-8, double h = 1e-4);

// throwing variant listing offending tensors
void require_gradcheck(ParamStore& ps, const std::function<double(bool)>& loss, double tol,
                       int n_coords, std::uint64_t seed);

}  // namespace optree
