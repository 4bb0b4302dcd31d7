#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relcat/encoding.hpp"

namespace relcat {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_seq_len = 128;
  std::size_t n_labels = 2;
  bool use_marker_states = true;
  bool use_pooled_output = true;
  double dropout_rate = 0.1;
  std::size_t head_hidden = 128;
  double init_std = 0.02;

  std::size_t feature_dim() const {
    return d_model * (2 + 2 * static_cast<std::size_t>(use_marker_states) + static_cast<std::size_t>(use_pooled_output));
  }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class FreezeMode { AllFrozen, AllUnfrozen, LastLayerUnfrozen };
FreezeMode parse_freeze_mode(const std::string& s);
std::string to_string(FreezeMode m);

struct LayerParams {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln1_g, ln1_b;
  Mat w1, b1, w2, b2;
  Mat ln2_g, ln2_b;
};

// Which part of the network a tensor belongs to; drives the freeze policy.
struct ParamTag {
  enum Kind { Embedding, Layer, Pooler, Head } kind;
  std::size_t layer = 0;
};

// Parameter tensors in declared (serialization) order. Also used to hold gradients
// and optimizer moments with identical shapes.
struct Params {
  Mat tok_emb, pos_emb, emb_ln_g, emb_ln_b;
  std::vector<LayerParams> layers;
  Mat pool_w, pool_b;
  Mat head1_w, head1_b, head2_w, head2_b;

  static Params zeros(const ModelConfig& c);

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& p, F& f) {
    f("tok_emb", p.tok_emb, ParamTag{ParamTag::Embedding});
    f("pos_emb", p.pos_emb, ParamTag{ParamTag::Embedding});
    f("emb_ln_g", p.emb_ln_g, ParamTag{ParamTag::Embedding});
    f("emb_ln_b", p.emb_ln_b, ParamTag{ParamTag::Embedding});
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
      auto& l = p.layers[i];
      const std::string pre = "layer" + std::to_string(i) + ".";
      const ParamTag t{ParamTag::Layer, i};
      f(pre + "wq", l.wq, t);
      f(pre + "bq", l.bq, t);
      f(pre + "wk", l.wk, t);
      f(pre + "bk", l.bk, t);
      f(pre + "wv", l.wv, t);
      f(pre + "bv", l.bv, t);
      f(pre + "wo", l.wo, t);
      f(pre + "bo", l.bo, t);
      f(pre + "ln1_g", l.ln1_g, t);
      f(pre + "ln1_b", l.ln1_b, t);
      f(pre + "w1", l.w1, t);
      f(pre + "b1", l.b1, t);
      f(pre + "w2", l.w2, t);
      f(pre + "b2", l.b2, t);
      f(pre + "ln2_g", l.ln2_g, t);
      f(pre + "ln2_b", l.ln2_b, t);
    }
    f("pool_w", p.pool_w, ParamTag{ParamTag::Pooler});
    f("pool_b", p.pool_b, ParamTag{ParamTag::Pooler});
    f("head1_w", p.head1_w, ParamTag{ParamTag::Head});
    f("head1_b", p.head1_b, ParamTag{ParamTag::Head});
    f("head2_w", p.head2_w, ParamTag{ParamTag::Head});
    f("head2_b", p.head2_b, ParamTag{ParamTag::Head});
  }
};

bool is_trainable(const ParamTag& tag, FreezeMode mode, std::size_t n_layers);

struct RelModel {
  ModelConfig config;
  FreezeMode freeze = FreezeMode::AllUnfrozen;
  Params params;
  Vocab vocab;
  LabelSpace labels;
  EncoderSettings encoder;

  // Weights ~ N(0, init_std), biases 0, layer-norm gains 1.
  static RelModel init(const ModelConfig& config, FreezeMode freeze, Vocab vocab, LabelSpace labels,
                       EncoderSettings encoder, std::uint64_t seed);
  bool all_finite() const;
};

struct LnCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

struct LayerCache {
  Mat x, q, k, v;
  std::vector<Mat> attn;
  Mat ctx, attn_mask;
  LnCache ln1;
  Mat x1, f1, g, ffn_mask;
  LnCache ln2;
};

struct InstanceCache {
  std::vector<TokenId> ids;
  LnCache emb_ln;
  Mat emb_mask;
  std::vector<LayerCache> layers;
  Mat h;
  std::vector<Eigen::Index> arg_e1, arg_e2;
  RowVec pool, feature, feature_mask, z1, hidden_mask, hidden;
};

struct ForwardResult {
  Mat logits;  // batch x n_labels
  std::vector<InstanceCache> caches;
};

// Tokens past attention_len are masked padding and never enter the computation.
// Dropout is applied only when train_mode is set; it then requires `rng`.
ForwardResult forward(const RelModel& model, const std::vector<EncodedInstance>& batch, bool train_mode,
                      Rng* rng = nullptr);

Mat softmax_rows(const Mat& logits);

struct LossResult {
  double loss = 0.0;
  Params grads;  // zero for parameters frozen under model.freeze
};

// Mean over the batch of w[y] * cross-entropy.
LossResult loss_and_grads(const RelModel& model, const std::vector<EncodedInstance>& batch,
                          const std::vector<double>& class_weights, bool train_mode = false, Rng* rng = nullptr);

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Params m, v;
  std::uint64_t step = 0;

  static AdamState for_model(const RelModel& model);
};

// One bias-corrected Adam update of a single tensor; `step` is the 1-based step index.
void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v, std::uint64_t step, const AdamSettings& s);

// Updates every trainable tensor; frozen tensors are left untouched.
void adam_step(RelModel& model, const Params& grads, AdamState& state, const AdamSettings& s);

void save_model(const RelModel& model, const std::string& path, const AdamState* optimizer = nullptr);

struct LoadedModel {
  RelModel model;
  std::optional<AdamState> optimizer;
};
// When expected_vocab_hash is given the embedded vocabulary must match it.
LoadedModel load_model(const std::string& path, std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

}  // namespace relcat
