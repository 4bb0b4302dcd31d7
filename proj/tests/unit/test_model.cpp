#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "relcat/common.hpp"
#include "relcat/model.hpp"

using namespace relcat;

namespace {

using Grid = std::vector<std::vector<double>>;

std::vector<std::string> word_list(std::size_t n) {
  std::vector<std::string> w;
  for (std::size_t i = 0; i < n; ++i) w.push_back("w" + std::to_string(i));
  return w;
}

ModelConfig small_config(bool markers = true, bool pooled = true) {
  ModelConfig c;
  c.vocab_size = special::kCount + 12;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 12;
  c.max_seq_len = 32;
  c.n_labels = 3;
  c.use_marker_states = markers;
  c.use_pooled_output = pooled;
  c.head_hidden = 6;
  c.init_std = 0.4;
  c.dropout_rate = 0.0;
  return c;
}

RelModel small_model(const ModelConfig& c, FreezeMode f = FreezeMode::AllUnfrozen, std::uint64_t seed = 3) {
  EncoderSettings enc;
  enc.max_seq_len = c.max_seq_len;
  return RelModel::init(c, f, Vocab(word_list(c.vocab_size - special::kCount)), LabelSpace({"A", "B", "C"}), enc, seed);
}

// CLS w.. [s1] w.. [e1] w.. [s2] w.. [e2] w..
EncodedInstance random_instance(Rng& rng, const ModelConfig& c, bool markers) {
  EncodedInstance e;
  auto word = [&] { return static_cast<TokenId>(special::kCount + rng.below(c.vocab_size - special::kCount)); };
  auto run = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) e.token_ids.push_back(word());
  };
  std::array<std::size_t, 4> m{};
  e.token_ids.push_back(special::kCls);
  run(rng.below(3));
  if (markers) m[0] = e.token_ids.size(), e.token_ids.push_back(special::kS1);
  e.e1_span.start = e.token_ids.size();
  run(1 + rng.below(3));
  e.e1_span.end = e.token_ids.size();
  if (markers) m[1] = e.token_ids.size(), e.token_ids.push_back(special::kE1);
  run(rng.below(4));
  if (markers) m[2] = e.token_ids.size(), e.token_ids.push_back(special::kS2);
  e.e2_span.start = e.token_ids.size();
  run(1 + rng.below(3));
  e.e2_span.end = e.token_ids.size();
  if (markers) m[3] = e.token_ids.size(), e.token_ids.push_back(special::kE2);
  run(rng.below(3));
  if (markers) e.marker_idx = m;
  e.attention_len = e.token_ids.size();
  e.label_id = static_cast<int>(rng.below(c.n_labels));
  return e;
}

Grid matmul_add(const Grid& x, const Mat& w, const Mat& b) {
  Grid y(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols())));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (Eigen::Index k = 0; k < w.rows(); ++k) s += x[i][static_cast<std::size_t>(k)] * w(k, j);
      y[i][static_cast<std::size_t>(j)] = s;
    }
  return y;
}

Grid layer_norm_ref(const Grid& x, const Mat& g, const Mat& b) {
  Grid y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0, var = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-12) * g(0, static_cast<Eigen::Index>(j)) +
                b(0, static_cast<Eigen::Index>(j));
  }
  return y;
}

std::vector<double> reference_logits(const RelModel& m, const EncodedInstance& e) {
  const auto& c = m.config;
  const auto& p = m.params;
  const std::size_t L = e.attention_len, d = c.d_model, dh = d / c.n_heads;
  Grid x(L, std::vector<double>(d));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x[i][j] = p.tok_emb(e.token_ids[i], static_cast<Eigen::Index>(j)) + p.pos_emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  x = layer_norm_ref(x, p.emb_ln_g, p.emb_ln_b);
  for (const auto& lp : p.layers) {
    const Grid q = matmul_add(x, lp.wq, lp.bq), k = matmul_add(x, lp.wk, lp.bk), v = matmul_add(x, lp.wv, lp.bv);
    Grid ctx(L, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < c.n_heads; ++h)
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(L);
        double mx = -1e300, z = 0;
        for (std::size_t j = 0; j < L; ++j) {
          double dot = 0;
          for (std::size_t t = h * dh; t < (h + 1) * dh; ++t) dot += q[i][t] * k[j][t];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        for (auto& v2 : s) z += (v2 = std::exp(v2 - mx));
        for (std::size_t j = 0; j < L; ++j)
          for (std::size_t t = h * dh; t < (h + 1) * dh; ++t) ctx[i][t] += s[j] / z * v[j][t];
      }
    Grid o = matmul_add(ctx, lp.wo, lp.bo);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) o[i][j] += x[i][j];
    const Grid x1 = layer_norm_ref(o, lp.ln1_g, lp.ln1_b);
    Grid f = matmul_add(x1, lp.w1, lp.b1);
    for (auto& row : f)
      for (auto& v2 : row) v2 = 0.5 * v2 * (1.0 + std::erf(v2 / std::sqrt(2.0)));
    Grid f2 = matmul_add(f, lp.w2, lp.b2);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) f2[i][j] += x1[i][j];
    x = layer_norm_ref(f2, lp.ln2_g, lp.ln2_b);
  }
  std::vector<double> feat;
  for (const TokenSpan& sp : {e.e1_span, e.e2_span})
    for (std::size_t j = 0; j < d; ++j) {
      double mx = -1e300;
      for (std::size_t i = sp.start; i < sp.end; ++i) mx = std::max(mx, x[i][j]);
      feat.push_back(mx);
    }
  if (c.use_marker_states)
    for (std::size_t r : {(*e.marker_idx)[0], (*e.marker_idx)[2]})
      for (std::size_t j = 0; j < d; ++j) feat.push_back(x[r][j]);
  if (c.use_pooled_output) {
    const Grid pooled = matmul_add({x[0]}, p.pool_w, p.pool_b);
    for (double v : pooled[0]) feat.push_back(std::tanh(v));
  }
  Grid hidden = matmul_add({feat}, p.head1_w, p.head1_b);
  for (auto& v : hidden[0]) v = std::max(0.0, v);
  return matmul_add(hidden, p.head2_w, p.head2_b)[0];
}

double max_abs_diff(const Params& a, const Params& b) {
  std::vector<const Mat*> bs;
  b.visit([&](const std::string&, const Mat& t, const ParamTag&) { bs.push_back(&t); });
  double worst = 0;
  std::size_t i = 0;
  a.visit([&](const std::string&, const Mat& t, const ParamTag&) {
    worst = std::max(worst, (t - *bs[i++]).cwiseAbs().maxCoeff());
  });
  return worst;
}

}  // namespace

TEST_CASE("forward pass matches a straight-line reference") {
  Rng rng(21);
  for (bool markers : {true, false})
    for (bool pooled : {true, false}) {
      const ModelConfig c = small_config(markers, pooled);
      const RelModel m = small_model(c);
      std::vector<EncodedInstance> batch;
      for (int i = 0; i < 6; ++i) batch.push_back(random_instance(rng, c, true));
      const auto fr = forward(m, batch, false);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto ref = reference_logits(m, batch[i]);
        for (std::size_t j = 0; j < ref.size(); ++j)
          CHECK(std::abs(fr.logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - ref[j]) < 1e-10);
      }
    }
}

TEST_CASE("padding past attention_len does not change the output") {
  Rng rng(8);
  const ModelConfig c = small_config();
  const RelModel m = small_model(c);
  std::vector<EncodedInstance> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_instance(rng, c, true));
  const Mat plain = forward(m, batch, false).logits;
  auto padded = batch;
  pad_batch(padded);
  CHECK((forward(m, padded, false).logits - plain).cwiseAbs().maxCoeff() == 0.0);
  for (auto& e : padded)
    for (std::size_t k = e.attention_len; k < e.token_ids.size(); ++k)
      e.token_ids[k] = static_cast<TokenId>(special::kCount + rng.below(10));
  CHECK((forward(m, padded, false).logits - plain).cwiseAbs().maxCoeff() == 0.0);
  // each row depends only on its own instance
  std::vector<EncodedInstance> one = {batch[3]};
  CHECK((forward(m, one, false).logits.row(0) - plain.row(3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initialization and shape rules") {
  const ModelConfig c = small_config();
  const RelModel a = small_model(c, FreezeMode::AllUnfrozen, 3);
  const RelModel b = small_model(c, FreezeMode::AllUnfrozen, 3);
  const RelModel other = small_model(c, FreezeMode::AllUnfrozen, 4);
  CHECK(max_abs_diff(a.params, b.params) == 0.0);
  CHECK(max_abs_diff(a.params, other.params) > 0.0);
  CHECK((a.params.layers[0].ln1_g.array() == 1.0).all());
  CHECK((a.params.layers[0].bq.array() == 0.0).all());
  CHECK(a.params.head1_w.rows() == static_cast<Eigen::Index>(5 * c.d_model));
  CHECK(small_config(false, false).feature_dim() == 2 * c.d_model);
  ModelConfig bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.n_labels = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(parse_freeze_mode("half"), ConfigError);
  Rng rng(1);
  auto inst = random_instance(rng, c, false);
  CHECK_THROWS_AS(forward(a, {inst}, false), InternalError);  // marker states need markers
  inst = random_instance(rng, c, true);
  inst.token_ids[1] = static_cast<TokenId>(c.vocab_size);
  CHECK_THROWS_AS(forward(a, {inst}, false), InternalError);
}

TEST_CASE("freeze modes zero the frozen gradients") {
  Rng rng(30);
  const ModelConfig c = small_config();
  std::vector<EncodedInstance> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_instance(rng, c, true));
  const std::vector<double> w = {1.0, 2.0, 0.5};
  const LossResult full = loss_and_grads(small_model(c), batch, w);
  for (FreezeMode f : {FreezeMode::AllFrozen, FreezeMode::LastLayerUnfrozen, FreezeMode::AllUnfrozen}) {
    RelModel m = small_model(c, f);
    const LossResult r = loss_and_grads(m, batch, w);
    CHECK(r.loss == doctest::Approx(full.loss).epsilon(1e-14));
    std::vector<const Mat*> fg;
    full.grads.visit([&](const std::string&, const Mat& t, const ParamTag&) { fg.push_back(&t); });
    std::size_t i = 0, trainable = 0;
    r.grads.visit([&](const std::string& name, const Mat& g, const ParamTag& tag) {
      const Mat& ref = *fg[i++];
      if (is_trainable(tag, f, c.n_layers)) {
        ++trainable;
        CHECK_MESSAGE((g - ref).cwiseAbs().maxCoeff() < 1e-12, name);
      } else {
        CHECK_MESSAGE(g.cwiseAbs().maxCoeff() == 0.0, name);
      }
    });
    CHECK(trainable == (f == FreezeMode::AllFrozen ? 4u : f == FreezeMode::LastLayerUnfrozen ? 22u : 42u));

    const Params before = m.params;
    AdamState st = AdamState::for_model(m);
    adam_step(m, r.grads, st, AdamSettings{});
    std::vector<const Mat*> bp;
    before.visit([&](const std::string&, const Mat& t, const ParamTag&) { bp.push_back(&t); });
    i = 0;
    m.params.visit([&](const std::string&, const Mat& t, const ParamTag& tag) {
      const bool moved = (t - *bp[i++]).cwiseAbs().maxCoeff() > 0.0;
      if (!is_trainable(tag, f, c.n_layers)) CHECK_FALSE(moved);
    });
  }
  CHECK(is_trainable({ParamTag::Layer, 1}, FreezeMode::LastLayerUnfrozen, 2));
  CHECK_FALSE(is_trainable({ParamTag::Layer, 0}, FreezeMode::LastLayerUnfrozen, 2));
  CHECK_FALSE(is_trainable({ParamTag::Embedding}, FreezeMode::LastLayerUnfrozen, 2));
  CHECK_FALSE(is_trainable({ParamTag::Pooler}, FreezeMode::AllFrozen, 2));
}

TEST_CASE("weighted loss equals the hand formula") {
  Rng rng(4);
  const ModelConfig c = small_config();
  const RelModel m = small_model(c);
  std::vector<EncodedInstance> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_instance(rng, c, true));
  const std::vector<double> w = {0.3, 1.7, 2.2};
  const Mat logits = forward(m, batch, false).logits;
  double expect = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(static_cast<Eigen::Index>(i), j));
    const int y = batch[i].label_id;
    expect += w[static_cast<std::size_t>(y)] * (std::log(z) - logits(static_cast<Eigen::Index>(i), y));
  }
  expect /= static_cast<double>(batch.size());
  CHECK(loss_and_grads(m, batch, w).loss == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS(loss_and_grads(m, batch, {1.0, 0.0, 1.0}));
  CHECK_THROWS(loss_and_grads(m, {}, w));
  const Mat p = softmax_rows(logits);
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0));
}

TEST_CASE("adam update matches a scalar walk-through") {
  AdamSettings s;
  s.lr = 0.01;
  Mat p(1, 2), m = Mat::Zero(1, 2), v = Mat::Zero(1, 2);
  p << 1.0, -2.0;
  const double g1[2] = {0.5, -3.0}, g2[2] = {-1.0, 0.25};
  double ep[2] = {1.0, -2.0}, em[2] = {0, 0}, ev[2] = {0, 0};
  for (std::uint64_t t = 1; t <= 2; ++t) {
    const double* g = t == 1 ? g1 : g2;
    Mat gm(1, 2);
    gm << g[0], g[1];
    adam_update(p, gm, m, v, t, s);
    for (int k = 0; k < 2; ++k) {
      em[k] = 0.9 * em[k] + 0.1 * g[k];
      ev[k] = 0.999 * ev[k] + 0.001 * g[k] * g[k];
      const double mh = em[k] / (1 - std::pow(0.9, static_cast<double>(t)));
      const double vh = ev[k] / (1 - std::pow(0.999, static_cast<double>(t)));
      ep[k] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p(0, k) == doctest::Approx(ep[k]).epsilon(1e-14));
    }
  }
  Mat wrong = Mat::Zero(2, 2);
  CHECK_THROWS(adam_update(p, wrong, m, v, 3, s));
}

TEST_CASE("model files round trip and reject damage") {
  const auto dir = scratch_dir("model_io");
  const ModelConfig c = small_config();
  RelModel m = small_model(c, FreezeMode::LastLayerUnfrozen);
  Rng rng(6);
  std::vector<EncodedInstance> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_instance(rng, c, true));
  AdamState st = AdamState::for_model(m);
  adam_step(m, loss_and_grads(m, batch, {1, 1, 1}).grads, st, AdamSettings{});
  const std::string path = (dir / "m.bin").string();
  save_model(m, path, &st);

  const LoadedModel lm = load_model(path, m.vocab.hash());
  CHECK(lm.model.config == m.config);
  CHECK(lm.model.freeze == m.freeze);
  CHECK(lm.model.labels == m.labels);
  CHECK(lm.model.vocab.tokens() == m.vocab.tokens());
  CHECK(max_abs_diff(lm.model.params, m.params) == 0.0);
  REQUIRE(lm.optimizer.has_value());
  CHECK(lm.optimizer->step == 1);
  CHECK(max_abs_diff(lm.optimizer->m, st.m) == 0.0);
  CHECK((forward(lm.model, batch, false).logits - forward(m, batch, false).logits).cwiseAbs().maxCoeff() == 0.0);
  save_model(m, (dir / "plain.bin").string());
  CHECK_FALSE(load_model((dir / "plain.bin").string()).optimizer.has_value());

  CHECK_THROWS_WITH_AS(load_model(path, m.vocab.hash() ^ 1), doctest::Contains("vocab hash mismatch"), Error);
  const std::string bytes = read_file(path);
  auto damaged = [&](const std::string& content) {
    const std::string p2 = (dir / "bad.bin").string();
    write_file_atomic(p2, content);
    return p2;
  };
  CHECK_THROWS_WITH_AS(load_model(damaged("XXXXXXXX" + bytes.substr(8))), doctest::Contains("not a relcat model"), Error);
  CHECK_THROWS_WITH_AS(load_model(damaged(bytes.substr(0, bytes.size() - 5))), doctest::Contains("truncated"), Error);
  CHECK_THROWS_WITH_AS(load_model(damaged(bytes + "x")), doctest::Contains("trailing bytes"), Error);
  std::string edited = bytes;
  const auto at = edited.find("\"d_ff\":12");
  REQUIRE(at != std::string::npos);
  edited.replace(at, 9, "\"d_ff\":13");
  CHECK_THROWS_WITH_AS(load_model(damaged(edited)), doctest::Contains("config hash mismatch"), Error);
  edited = bytes;
  const auto v = edited.find("\"w0\"");
  REQUIRE(v != std::string::npos);
  edited.replace(v, 4, "\"wX\"");
  CHECK_THROWS_WITH_AS(load_model(damaged(edited)), doctest::Contains("vocab hash mismatch"), Error);
  CHECK_THROWS(load_model((dir / "missing.bin").string()));
}
