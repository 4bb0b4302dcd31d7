#include "relcat/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace relcat {

namespace {

constexpr double kLnEps = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, LnCache& c) {
  const Eigen::Index n = x.rows(), d = x.cols();
  c.xhat.resize(n, d);
  c.inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    c.inv_std(i) = inv;
    c.xhat.row(i) = (x.row(i).array() - mu) * inv;
  }
  Mat y = c.xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

// Returns dL/dx; accumulates gain/bias gradients when requested.
Mat layer_norm_backward(const Mat& dy, const Mat& g, const LnCache& c, Mat* dg, Mat* db) {
  if (dg) *dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db) *db += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * g.row(0).array();
  Mat dx(dy.rows(), dy.cols());
  const double d = static_cast<double>(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i) = c.inv_std(i) * (dxhat.row(i).array() - mean_dxhat - c.xhat.row(i).array() * mean_dxhat_xhat);
  }
  return dx;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, bool train, Rng* rng) {
  if (!train || rate <= 0.0) return Mat();
  Mat m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < rate ? 0.0 : keep;
  return m;
}

void apply_mask(Mat& x, const Mat& mask) {
  if (mask.size()) x.array() *= mask.array();
}
void apply_mask(RowVec& x, const Mat& mask) {
  if (mask.size()) x.array() *= mask.row(0).array();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void init_normal(Mat& m, std::size_t rows, std::size_t cols, double std, Rng& rng) {
  m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
}

Mat affine(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

bool encoder_trainable(FreezeMode mode) { return mode != FreezeMode::AllFrozen; }

void check_instance(const EncodedInstance& e, const ModelConfig& c) {
  const std::size_t L = e.attention_len;
  if (L == 0 || L > e.token_ids.size() || L > c.max_seq_len)
    throw InternalError("attention_len out of range for the model");
  if (e.e1_span.size() == 0 || e.e1_span.end > L || e.e2_span.size() == 0 || e.e2_span.end > L)
    throw InternalError("entity span index >= attention_len");
  if (c.use_marker_states) {
    if (!e.marker_idx) throw InternalError("model uses marker states but instance has no markers");
    for (auto m : *e.marker_idx)
      if (m >= L) throw InternalError("marker index >= attention_len");
  }
  for (std::size_t i = 0; i < L; ++i)
    if (e.token_ids[i] < 0 || static_cast<std::size_t>(e.token_ids[i]) >= c.vocab_size)
      throw InternalError("token id outside the vocabulary");
}

void span_max(const Mat& h, const TokenSpan& span, RowVec& out, std::vector<Eigen::Index>& arg) {
  const Eigen::Index d = h.cols();
  out.resize(d);
  arg.assign(static_cast<std::size_t>(d), static_cast<Eigen::Index>(span.start));
  for (Eigen::Index j = 0; j < d; ++j) {
    double best = h(static_cast<Eigen::Index>(span.start), j);
    for (std::size_t r = span.start + 1; r < span.end; ++r) {
      if (h(static_cast<Eigen::Index>(r), j) > best) {
        best = h(static_cast<Eigen::Index>(r), j);
        arg[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(r);
      }
    }
    out(j) = best;
  }
}

RowVec forward_one(const RelModel& model, const EncodedInstance& e, bool train, Rng* rng, InstanceCache& c) {
  const ModelConfig& cfg = model.config;
  const Params& p = model.params;
  const auto L = static_cast<Eigen::Index>(e.attention_len);
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto n_heads = static_cast<Eigen::Index>(cfg.n_heads);
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double rate = cfg.dropout_rate;

  c.ids.assign(e.token_ids.begin(), e.token_ids.begin() + L);
  Mat x(L, d);
  for (Eigen::Index i = 0; i < L; ++i) x.row(i) = p.tok_emb.row(c.ids[static_cast<std::size_t>(i)]) + p.pos_emb.row(i);
  x = layer_norm(x, p.emb_ln_g, p.emb_ln_b, c.emb_ln);
  c.emb_mask = dropout_mask(L, d, rate, train, rng);
  apply_mask(x, c.emb_mask);

  c.layers.resize(cfg.n_layers);
  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const LayerParams& lp = p.layers[li];
    LayerCache& lc = c.layers[li];
    lc.x = x;
    lc.q = affine(x, lp.wq, lp.bq);
    lc.k = affine(x, lp.wk, lp.bk);
    lc.v = affine(x, lp.wv, lp.bv);
    lc.ctx.resize(L, d);
    lc.attn.resize(static_cast<std::size_t>(n_heads));
    for (Eigen::Index h = 0; h < n_heads; ++h) {
      Mat s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
      for (Eigen::Index i = 0; i < L; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      lc.ctx.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
      lc.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat o = affine(lc.ctx, lp.wo, lp.bo);
    lc.attn_mask = dropout_mask(L, d, rate, train, rng);
    apply_mask(o, lc.attn_mask);
    lc.x1 = layer_norm(x + o, lp.ln1_g, lp.ln1_b, lc.ln1);
    lc.f1 = affine(lc.x1, lp.w1, lp.b1);
    lc.g = lc.f1.unaryExpr([](double v) { return gelu(v); });
    Mat f2 = affine(lc.g, lp.w2, lp.b2);
    lc.ffn_mask = dropout_mask(L, d, rate, train, rng);
    apply_mask(f2, lc.ffn_mask);
    x = layer_norm(lc.x1 + f2, lp.ln2_g, lp.ln2_b, lc.ln2);
  }
  c.h = std::move(x);

  const Eigen::Index F = static_cast<Eigen::Index>(cfg.feature_dim());
  c.feature.resize(F);
  RowVec part;
  span_max(c.h, e.e1_span, part, c.arg_e1);
  c.feature.segment(0, d) = part;
  span_max(c.h, e.e2_span, part, c.arg_e2);
  c.feature.segment(d, d) = part;
  Eigen::Index off = 2 * d;
  if (cfg.use_marker_states) {
    c.feature.segment(off, d) = c.h.row(static_cast<Eigen::Index>((*e.marker_idx)[0]));
    c.feature.segment(off + d, d) = c.h.row(static_cast<Eigen::Index>((*e.marker_idx)[2]));
    off += 2 * d;
  }
  if (cfg.use_pooled_output) {
    c.pool = (c.h.row(0) * p.pool_w + p.pool_b.row(0)).array().tanh();
    c.feature.segment(off, d) = c.pool;
  }
  c.feature_mask = dropout_mask(1, F, rate, train, rng);
  RowVec feat = c.feature;
  apply_mask(feat, c.feature_mask);
  c.z1 = feat * p.head1_w + p.head1_b.row(0);
  c.hidden = c.z1.cwiseMax(0.0);
  c.hidden_mask = dropout_mask(1, c.hidden.cols(), rate, train, rng);
  apply_mask(c.hidden, c.hidden_mask);
  return c.hidden * p.head2_w + p.head2_b.row(0);
}

// Accumulates gradients of one instance given dL/dlogits.
void backward_one(const RelModel& model, const EncodedInstance& e, const InstanceCache& c, const RowVec& dlogits,
                  Params& g) {
  const ModelConfig& cfg = model.config;
  const Params& p = model.params;
  const FreezeMode mode = model.freeze;
  const auto L = static_cast<Eigen::Index>(e.attention_len);
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto n_heads = static_cast<Eigen::Index>(cfg.n_heads);
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  g.head2_w += c.hidden.transpose() * dlogits;
  g.head2_b += dlogits;
  RowVec dz1 = dlogits * p.head2_w.transpose();
  apply_mask(dz1, c.hidden_mask);
  for (Eigen::Index j = 0; j < dz1.cols(); ++j)
    if (c.z1(j) <= 0.0) dz1(j) = 0.0;
  RowVec feat = c.feature;
  apply_mask(feat, c.feature_mask);
  g.head1_w += feat.transpose() * dz1;
  g.head1_b += dz1;
  if (!encoder_trainable(mode)) return;

  RowVec dfeat = dz1 * p.head1_w.transpose();
  apply_mask(dfeat, c.feature_mask);

  Mat dh_final = Mat::Zero(L, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    dh_final(c.arg_e1[static_cast<std::size_t>(j)], j) += dfeat(j);
    dh_final(c.arg_e2[static_cast<std::size_t>(j)], j) += dfeat(d + j);
  }
  Eigen::Index off = 2 * d;
  if (cfg.use_marker_states) {
    dh_final.row(static_cast<Eigen::Index>((*e.marker_idx)[0])) += dfeat.segment(off, d);
    dh_final.row(static_cast<Eigen::Index>((*e.marker_idx)[2])) += dfeat.segment(off + d, d);
    off += 2 * d;
  }
  if (cfg.use_pooled_output) {
    const RowVec dpz = dfeat.segment(off, d).array() * (1.0 - c.pool.array().square());
    g.pool_w += c.h.row(0).transpose() * dpz;
    g.pool_b += dpz;
    dh_final.row(0) += dpz * p.pool_w.transpose();
  }

  const std::size_t lowest = mode == FreezeMode::LastLayerUnfrozen ? cfg.n_layers - 1 : 0;
  Mat dx = std::move(dh_final);
  for (std::size_t li = cfg.n_layers; li-- > lowest;) {
    const LayerParams& lp = p.layers[li];
    const LayerCache& lc = c.layers[li];
    LayerParams& lg = g.layers[li];

    Mat dv = layer_norm_backward(dx, lp.ln2_g, lc.ln2, &lg.ln2_g, &lg.ln2_b);
    Mat dx1 = dv;
    Mat df2 = dv;
    apply_mask(df2, lc.ffn_mask);
    lg.w2 += lc.g.transpose() * df2;
    lg.b2 += df2.colwise().sum();
    Mat df1 = (df2 * lp.w2.transpose()).array() * lc.f1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    lg.w1 += lc.x1.transpose() * df1;
    lg.b1 += df1.colwise().sum();
    dx1 += df1 * lp.w1.transpose();

    Mat du = layer_norm_backward(dx1, lp.ln1_g, lc.ln1, &lg.ln1_g, &lg.ln1_b);
    Mat dprev = du;
    Mat d_o = du;
    apply_mask(d_o, lc.attn_mask);
    lg.wo += lc.ctx.transpose() * d_o;
    lg.bo += d_o.colwise().sum();
    const Mat dctx = d_o * lp.wo.transpose();

    Mat dq(L, d), dk(L, d), dvv(L, d);
    for (Eigen::Index h = 0; h < n_heads; ++h) {
      const Mat& a = lc.attn[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Mat da = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
      dvv.middleCols(h * dh, dh) = a.transpose() * dctx_h;
      Mat ds = a.array() * (da.colwise() - (da.array() * a.array()).rowwise().sum().matrix()).array();
      ds *= scale;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    lg.wq += lc.x.transpose() * dq;
    lg.bq += dq.colwise().sum();
    lg.wk += lc.x.transpose() * dk;
    lg.bk += dk.colwise().sum();
    lg.wv += lc.x.transpose() * dvv;
    lg.bv += dvv.colwise().sum();
    if (li == lowest && mode != FreezeMode::AllUnfrozen) return;
    dprev += dq * lp.wq.transpose() + dk * lp.wk.transpose() + dvv * lp.wv.transpose();
    dx = std::move(dprev);
  }

  Mat de = dx;
  apply_mask(de, c.emb_mask);
  de = layer_norm_backward(de, p.emb_ln_g, c.emb_ln, &g.emb_ln_g, &g.emb_ln_b);
  for (Eigen::Index i = 0; i < L; ++i) {
    g.tok_emb.row(c.ids[static_cast<std::size_t>(i)]) += de.row(i);
    g.pos_emb.row(i) += de.row(i);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(special::kCount)) throw ConfigError("vocab_size must exceed 8");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("d_model must be divisible by n_heads");
  if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
  if (n_labels < 2) throw ConfigError("n_labels must be >= 2");
  if (d_ff == 0 || head_hidden == 0 || max_seq_len == 0) throw ConfigError("model widths must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0, 1)");
}

FreezeMode parse_freeze_mode(const std::string& s) {
  if (s == "all_frozen") return FreezeMode::AllFrozen;
  if (s == "all_unfrozen") return FreezeMode::AllUnfrozen;
  if (s == "last_layer_unfrozen") return FreezeMode::LastLayerUnfrozen;
  throw ConfigError("unknown freeze mode '" + s + "' (valid: all_frozen, all_unfrozen, last_layer_unfrozen)");
}

std::string to_string(FreezeMode m) {
  switch (m) {
    case FreezeMode::AllFrozen:
      return "all_frozen";
    case FreezeMode::AllUnfrozen:
      return "all_unfrozen";
    case FreezeMode::LastLayerUnfrozen:
      return "last_layer_unfrozen";
  }
  return "all_unfrozen";
}

bool is_trainable(const ParamTag& tag, FreezeMode mode, std::size_t n_layers) {
  switch (mode) {
    case FreezeMode::AllUnfrozen:
      return true;
    case FreezeMode::AllFrozen:
      return tag.kind == ParamTag::Head;
    case FreezeMode::LastLayerUnfrozen:
      return tag.kind == ParamTag::Head || tag.kind == ParamTag::Pooler ||
             (tag.kind == ParamTag::Layer && tag.layer + 1 == n_layers);
  }
  return false;
}

Params Params::zeros(const ModelConfig& c) {
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  Params p;
  p.tok_emb = Mat::Zero(static_cast<Eigen::Index>(c.vocab_size), d);
  p.pos_emb = Mat::Zero(static_cast<Eigen::Index>(c.max_seq_len), d);
  p.emb_ln_g = Mat::Zero(1, d);
  p.emb_ln_b = Mat::Zero(1, d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.wq = l.wk = l.wv = l.wo = Mat::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = Mat::Zero(1, d);
    l.ln1_g = l.ln1_b = l.ln2_g = l.ln2_b = Mat::Zero(1, d);
    l.w1 = Mat::Zero(d, ff);
    l.b1 = Mat::Zero(1, ff);
    l.w2 = Mat::Zero(ff, d);
    l.b2 = Mat::Zero(1, d);
  }
  p.pool_w = Mat::Zero(d, d);
  p.pool_b = Mat::Zero(1, d);
  p.head1_w = Mat::Zero(static_cast<Eigen::Index>(c.feature_dim()), static_cast<Eigen::Index>(c.head_hidden));
  p.head1_b = Mat::Zero(1, static_cast<Eigen::Index>(c.head_hidden));
  p.head2_w = Mat::Zero(static_cast<Eigen::Index>(c.head_hidden), static_cast<Eigen::Index>(c.n_labels));
  p.head2_b = Mat::Zero(1, static_cast<Eigen::Index>(c.n_labels));
  return p;
}

RelModel RelModel::init(const ModelConfig& config, FreezeMode freeze, Vocab vocab, LabelSpace labels,
                        EncoderSettings encoder, std::uint64_t seed) {
  config.validate();
  if (config.vocab_size != vocab.size()) throw ConfigError("vocab_size does not match the vocabulary");
  if (config.n_labels != labels.size()) throw ConfigError("n_labels does not match the label space");
  if (config.max_seq_len < encoder.max_seq_len) throw ConfigError("model max_seq_len is shorter than the encoder's");
  if (config.use_marker_states && encoder.marker_mode != MarkerMode::Markers)
    throw ConfigError("use_marker_states requires marker_mode = markers");
  RelModel m;
  m.config = config;
  m.freeze = freeze;
  m.vocab = std::move(vocab);
  m.labels = std::move(labels);
  m.encoder = encoder;
  m.params = Params::zeros(config);
  Rng rng(seed);
  m.params.visit([&](const std::string& name, Mat& t, const ParamTag&) {
    const bool is_gain = name.ends_with("_g");
    const bool is_bias = name.ends_with("_b") || name.ends_with(".bq") || name.ends_with(".bk") ||
                         name.ends_with(".bv") || name.ends_with(".bo") || name.ends_with(".b1") ||
                         name.ends_with(".b2");
    if (is_gain)
      t.setOnes();
    else if (!is_bias)
      init_normal(t, static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols()), config.init_std, rng);
  });
  return m;
}

bool RelModel::all_finite() const {
  bool ok = true;
  params.visit([&](const std::string&, const Mat& t, const ParamTag&) { ok = ok && t.allFinite(); });
  return ok;
}

ForwardResult forward(const RelModel& model, const std::vector<EncodedInstance>& batch, bool train_mode, Rng* rng) {
  if (train_mode && model.config.dropout_rate > 0.0 && !rng) throw InternalError("train-mode forward needs an rng");
  ForwardResult out;
  out.logits.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(model.config.n_labels));
  out.caches.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_instance(batch[i], model.config);
    out.logits.row(static_cast<Eigen::Index>(i)) = forward_one(model, batch[i], train_mode, rng, out.caches[i]);
  }
  return out;
}

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

LossResult loss_and_grads(const RelModel& model, const std::vector<EncodedInstance>& batch,
                          const std::vector<double>& class_weights, bool train_mode, Rng* rng) {
  if (batch.empty()) throw InternalError("empty batch");
  if (class_weights.size() != model.config.n_labels) throw InternalError("class_weights size != n_labels");
  for (double w : class_weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw Error("class weights must be strictly positive");

  const ForwardResult fr = forward(model, batch, train_mode, rng);
  const Mat probs = softmax_rows(fr.logits);
  LossResult res;
  res.grads = Params::zeros(model.config);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int y = batch[i].label_id;
    if (y < 0 || static_cast<std::size_t>(y) >= model.config.n_labels) throw InternalError("label_id out of range");
    const auto row = fr.logits.row(static_cast<Eigen::Index>(i));
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    const double w = class_weights[static_cast<std::size_t>(y)];
    loss += w * (lse - row(y)) * inv_b;
    RowVec dlogits = probs.row(static_cast<Eigen::Index>(i)) * (w * inv_b);
    dlogits(y) -= w * inv_b;
    backward_one(model, batch[i], fr.caches[i], dlogits, res.grads);
  }
  if (!std::isfinite(loss)) {
    std::ostringstream diag;
    diag << "non-finite loss (" << loss << ") for batch of " << batch.size() << " instances; labels:";
    for (const auto& e : batch) diag << ' ' << e.label_id;
    diag << "; lengths:";
    for (const auto& e : batch) diag << ' ' << e.attention_len;
    throw Error(diag.str());
  }
  res.loss = loss;
  return res;
}

AdamState AdamState::for_model(const RelModel& model) {
  AdamState s;
  s.m = Params::zeros(model.config);
  s.v = Params::zeros(model.config);
  return s;
}

void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v, std::uint64_t step, const AdamSettings& s) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() || param.rows() != m.rows() ||
      param.cols() != m.cols() || param.rows() != v.rows() || param.cols() != v.cols())
    throw Error("optimizer state shape does not match parameter shape");
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  m = s.beta1 * m + (1.0 - s.beta1) * grad;
  v = s.beta2 * v.array() + (1.0 - s.beta2) * grad.array().square();
  param.array() -= s.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + s.eps);
}

void adam_step(RelModel& model, const Params& grads, AdamState& state, const AdamSettings& s) {
  std::vector<Mat*> ps, ms, vs;
  std::vector<const Mat*> gs;
  std::vector<bool> train;
  model.params.visit([&](const std::string&, Mat& t, const ParamTag& tag) {
    ps.push_back(&t);
    train.push_back(is_trainable(tag, model.freeze, model.config.n_layers));
  });
  grads.visit([&](const std::string&, const Mat& t, const ParamTag&) { gs.push_back(&t); });
  state.m.visit([&](const std::string&, Mat& t, const ParamTag&) { ms.push_back(&t); });
  state.v.visit([&](const std::string&, Mat& t, const ParamTag&) { vs.push_back(&t); });
  if (gs.size() != ps.size() || ms.size() != ps.size() || vs.size() != ps.size())
    throw Error("optimizer state does not match the model's parameter list");
  ++state.step;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (train[i]) adam_update(*ps[i], *gs[i], *ms[i], *vs[i], state.step, s);
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr char kModelMagic[8] = {'R', 'E', 'L', 'C', 'A', 'T', 'M', 'D'};
constexpr int kFormatVersion = 1;

nlohmann::ordered_json config_json(const RelModel& m) {
  const ModelConfig& c = m.config;
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["max_seq_len"] = c.max_seq_len;
  j["n_labels"] = c.n_labels;
  j["use_marker_states"] = c.use_marker_states;
  j["use_pooled_output"] = c.use_pooled_output;
  j["dropout_rate"] = c.dropout_rate;
  j["head_hidden"] = c.head_hidden;
  j["init_std"] = c.init_std;
  return j;
}

nlohmann::ordered_json encoder_json(const EncoderSettings& e) {
  nlohmann::ordered_json j;
  j["max_seq_len"] = e.max_seq_len;
  j["context_window"] = e.context_window;
  j["marker_mode"] = to_string(e.marker_mode);
  j["lowercase"] = e.lowercase;
  return j;
}

std::string hashed_section(const nlohmann::ordered_json& header) {
  nlohmann::ordered_json s;
  s["config"] = header.at("config");
  s["freeze"] = header.at("freeze");
  s["labels"] = header.at("labels");
  s["encoder"] = header.at("encoder");
  return s.dump();
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_block(std::string& out, const Mat& t) {
  for (Eigen::Index i = 0; i < t.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(t.data()[i]));
}

void get_block(const std::string& in, std::size_t& pos, Mat& t) {
  const std::size_t bytes = static_cast<std::size_t>(t.size()) * 8;
  if (pos + bytes > in.size()) throw Error("model file is truncated");
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = std::bit_cast<double>(get_u64(in, pos));
    pos += 8;
  }
}

}  // namespace

void save_model(const RelModel& model, const std::string& path, const AdamState* optimizer) {
  nlohmann::ordered_json header;
  header["format"] = "relcat-model";
  header["version"] = kFormatVersion;
  header["config"] = config_json(model);
  header["freeze"] = to_string(model.freeze);
  header["labels"] = model.labels.labels();
  header["encoder"] = encoder_json(model.encoder);
  header["vocab_hash"] = hex64(model.vocab.hash());
  header["config_hash"] = hex64(fnv1a64(hashed_section(header)));
  header["vocab"] = model.vocab.tokens();
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  model.params.visit([&](const std::string& name, const Mat& t, const ParamTag&) {
    manifest.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  header["params"] = manifest;
  header["optimizer"] = optimizer ? nlohmann::ordered_json{{"step", optimizer->step}} : nlohmann::ordered_json(nullptr);

  const std::string hdr = header.dump();
  std::string out(kModelMagic, sizeof kModelMagic);
  put_u64(out, hdr.size());
  out += hdr;
  model.params.visit([&](const std::string&, const Mat& t, const ParamTag&) { put_block(out, t); });
  if (optimizer) {
    optimizer->m.visit([&](const std::string&, const Mat& t, const ParamTag&) { put_block(out, t); });
    optimizer->v.visit([&](const std::string&, const Mat& t, const ParamTag&) { put_block(out, t); });
  }
  write_file_atomic(path, out);
}

LoadedModel load_model(const std::string& path, std::optional<std::uint64_t> expected_vocab_hash) {
  const std::string in = read_file(path);
  if (in.size() < 16 || std::memcmp(in.data(), kModelMagic, 8) != 0) throw Error("not a relcat model file: " + path);
  const std::uint64_t hlen = get_u64(in, 8);
  if (16 + hlen > in.size()) throw Error("model file is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt model header: ") + e.what());
  }
  try {
    if (header.at("format") != "relcat-model") throw Error("unexpected model format");
    if (header.at("version").get<int>() != kFormatVersion)
      throw Error("model format version mismatch: file has " + header.at("version").dump() + ", expected " +
                  std::to_string(kFormatVersion));

    // hash is over the saved key order
    const auto ordered = nlohmann::ordered_json::parse(in.substr(16, hlen));
    if (hex64(fnv1a64(hashed_section(ordered))) != ordered.at("config_hash").get<std::string>())
      throw Error("config hash mismatch: the model header was modified");

    LoadedModel lm;
    RelModel& m = lm.model;
    const auto& c = header.at("config");
    m.config.vocab_size = c.at("vocab_size");
    m.config.d_model = c.at("d_model");
    m.config.n_layers = c.at("n_layers");
    m.config.n_heads = c.at("n_heads");
    m.config.d_ff = c.at("d_ff");
    m.config.max_seq_len = c.at("max_seq_len");
    m.config.n_labels = c.at("n_labels");
    m.config.use_marker_states = c.at("use_marker_states");
    m.config.use_pooled_output = c.at("use_pooled_output");
    m.config.dropout_rate = c.at("dropout_rate");
    m.config.head_hidden = c.at("head_hidden");
    m.config.init_std = c.at("init_std");
    m.config.validate();
    m.freeze = parse_freeze_mode(header.at("freeze"));
    m.labels = LabelSpace(header.at("labels").get<std::vector<std::string>>());
    const auto& e = header.at("encoder");
    m.encoder.max_seq_len = e.at("max_seq_len");
    m.encoder.context_window = e.at("context_window");
    m.encoder.marker_mode = parse_marker_mode(e.at("marker_mode"));
    m.encoder.lowercase = e.at("lowercase");

    auto tokens = header.at("vocab").get<std::vector<std::string>>();
    if (tokens.size() < special::kCount) throw Error("embedded vocabulary is missing special tokens");
    m.vocab = Vocab(std::vector<std::string>(tokens.begin() + special::kCount, tokens.end()));
    const std::string vh = hex64(m.vocab.hash());
    if (vh != header.at("vocab_hash").get<std::string>()) throw Error("vocab hash mismatch: embedded vocabulary was modified");
    if (expected_vocab_hash && *expected_vocab_hash != m.vocab.hash())
      throw Error("vocab hash mismatch: model expects " + vh + ", supplied vocabulary is " + hex64(*expected_vocab_hash));
    if (m.labels.size() != m.config.n_labels) throw Error("label space size does not match n_labels");
    if (m.vocab.size() != m.config.vocab_size) throw Error("vocabulary size does not match vocab_size");

    m.params = Params::zeros(m.config);
    const auto& manifest = header.at("params");
    std::size_t idx = 0;
    m.params.visit([&](const std::string& name, Mat& t, const ParamTag&) {
      if (idx >= manifest.size() || manifest[idx].at("name") != name || manifest[idx].at("rows") != t.rows() ||
          manifest[idx].at("cols") != t.cols())
        throw Error("parameter manifest mismatch at " + name);
      ++idx;
    });
    if (idx != manifest.size()) throw Error("parameter manifest has extra entries");
    std::size_t pos = 16 + hlen;
    m.params.visit([&](const std::string&, Mat& t, const ParamTag&) { get_block(in, pos, t); });
    if (!header.at("optimizer").is_null()) {
      AdamState st = AdamState::for_model(m);
      st.step = header.at("optimizer").at("step");
      st.m.visit([&](const std::string&, Mat& t, const ParamTag&) { get_block(in, pos, t); });
      st.v.visit([&](const std::string&, Mat& t, const ParamTag&) { get_block(in, pos, t); });
      lm.optimizer = std::move(st);
    }
    if (pos != in.size()) throw Error("model file has trailing bytes");
    return lm;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("corrupt model header: ") + ex.what());
  }
}

}  // namespace relcat
