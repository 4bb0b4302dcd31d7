#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "relcat/common.hpp"
#include "relcat/encoding.hpp"

using namespace relcat;

namespace {

std::vector<std::string> texts_of(const std::vector<Token>& toks) {
  std::vector<std::string> out;
  for (const auto& t : toks) out.push_back(t.text);
  return out;
}

// Builds a random document of words and punctuation; returns the text and its tokens.
std::string random_doc(Rng& rng, std::size_t n_words) {
  static const std::vector<std::string> words = {"take", "Aspirin", "81", "mg", "daily", "for", "pain", "oral",
                                                  "tablet", "café", "x"};
  static const std::vector<std::string> puncts = {",", ".", ";", "(", ")", "-"};
  std::string text;
  for (std::size_t i = 0; i < n_words; ++i) {
    if (!text.empty()) text += rng.below(4) == 0 ? "  " : " ";
    text += words[rng.below(words.size())];
    if (rng.below(5) == 0) text += puncts[rng.below(puncts.size())];
  }
  return text;
}

Entity entity_over(const std::vector<Token>& toks, std::size_t a, std::size_t b, const std::string& id) {
  Entity e;
  e.ent_id = id;
  e.start = toks[a].start;
  e.end = toks[b - 1].end;
  e.surface = id;
  return e;
}

// Straight reading of the layout rule: the largest window w <= context_window for which
// CLS + the union of both windows + 4 marker slots + one SEP per gap fits max_seq_len.
std::vector<TokenId> reference_encode(const std::vector<Token>& toks, std::pair<std::size_t, std::size_t> l,
                                      std::pair<std::size_t, std::size_t> r, const Vocab& vocab,
                                      const EncoderSettings& s, bool* fits) {
  const bool markers = s.marker_mode == MarkerMode::Markers;
  for (long w = static_cast<long>(s.context_window); w >= 0; --w) {
    std::set<std::size_t> kept;
    for (auto [a, b] : {l, r})
      for (long k = static_cast<long>(a) - w; k < static_cast<long>(b) + w; ++k)
        if (k >= 0 && k < static_cast<long>(toks.size())) kept.insert(static_cast<std::size_t>(k));
    std::size_t gaps = 0;
    std::size_t prev = *kept.begin();
    for (auto k : kept) {
      if (k > prev + 1) ++gaps;
      prev = k;
    }
    if (1 + kept.size() + 4 + gaps > s.max_seq_len) continue;
    std::vector<TokenId> ids = {special::kCls};
    prev = *kept.begin();
    for (auto k : kept) {
      if (k > prev + 1) ids.push_back(special::kSep);
      prev = k;
      if (markers && k == l.first) ids.push_back(special::kS1);
      if (markers && k == r.first) ids.push_back(special::kS2);
      ids.push_back(vocab.id(toks[k].text));
      if (markers && k + 1 == l.second) ids.push_back(special::kE1);
      if (markers && k + 1 == r.second) ids.push_back(special::kE2);
    }
    *fits = true;
    return ids;
  }
  *fits = false;
  return {};
}

}  // namespace

TEST_CASE("tokenizer splits whitespace and punctuation with scalar offsets") {
  const auto toks = tokenize("Take Aspirin, 81mg (café–x).", true);
  CHECK(texts_of(toks) == std::vector<std::string>{"take", "aspirin", ",", "81mg", "(", "café", "–", "x", ")", "."});
  CHECK(toks[5].start == 20);
  CHECK(toks[5].end == 24);
  CHECK(toks[6].start == 24);
  CHECK(texts_of(tokenize("Take  A", false)) == std::vector<std::string>{"Take", "A"});
  CHECK(tokenize("   \n\t ", true).empty());
}

TEST_CASE("vocabulary ranking matches a direct count") {
  Rng rng(5);
  std::vector<std::string> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(random_doc(rng, 5 + rng.below(20)));
  for (std::size_t max_size : {9u, 12u, 20u, 1000u}) {
    for (std::size_t min_freq : {1u, 3u}) {
      std::map<std::string, std::size_t> freq;
      for (const auto& t : corpus)
        for (const auto& tok : tokenize(t, true)) ++freq[tok.text];
      std::vector<std::pair<std::size_t, std::string>> ranked;
      for (const auto& [t, n] : freq)
        if (n >= min_freq) ranked.emplace_back(n, t);
      std::sort(ranked.begin(), ranked.end(),
                [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      const Vocab v = build_vocab(corpus, max_size, min_freq);
      REQUIRE(v.size() == std::min(max_size, special::kCount + ranked.size()));
      for (std::size_t i = special::kCount; i < v.size(); ++i)
        CHECK(v.token(static_cast<TokenId>(i)) == ranked[i - special::kCount].second);
    }
  }
  CHECK_THROWS(build_vocab(corpus, 8, 1));
}

TEST_CASE("vocabulary serialization round trip and unknown tokens") {
  const Vocab v({"b", "a", "c"});
  CHECK(v.id("[PAD]") == special::kPad);
  CHECK(v.id("a") == 9);
  CHECK(v.id("zzz") == special::kUnk);
  const Vocab back = Vocab::deserialize(v.serialize());
  CHECK(back.tokens() == v.tokens());
  CHECK(back.hash() == v.hash());
  CHECK(Vocab({"a", "b", "c"}).hash() != v.hash());
  CHECK_THROWS_AS(Vocab::deserialize("[PAD]\n[UNK]\n"), ParseError);
  CHECK_THROWS(Vocab({"a", "a"}));
}

TEST_CASE("encoder matches the reference layout on random documents") {
  Rng rng(77);
  std::vector<std::string> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(random_doc(rng, 30));
  const Vocab vocab = build_vocab(corpus, 40, 1);  // leaves some tokens unknown
  const LabelSpace labels({"R"});
  std::size_t checked = 0, skipped = 0, gapped = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::string text = random_doc(rng, 4 + rng.below(80));
    const auto toks = tokenize(text, true);
    if (toks.size() < 2) continue;
    // two disjoint token ranges
    std::size_t a = rng.below(toks.size() - 1);
    std::size_t b = a + 1 + rng.below(std::min<std::size_t>(8, toks.size() - a - 1));
    std::size_t c = b + rng.below(toks.size() - b);
    if (c >= toks.size()) continue;
    std::size_t d = c + 1 + rng.below(std::min<std::size_t>(8, toks.size() - c));
    std::pair<std::size_t, std::size_t> first{a, b}, second{c, d};
    const bool swap = rng.below(2) == 1;
    RelationInstance inst;
    inst.doc_id = "doc";
    inst.label = "R";
    inst.left = entity_over(toks, swap ? c : a, swap ? d : b, "L");
    inst.right = entity_over(toks, swap ? a : c, swap ? b : d, "R");
    const auto lrange = swap ? second : first;
    const auto rrange = swap ? first : second;

    EncoderSettings s;
    s.max_seq_len = 16 + rng.below(40);
    s.context_window = 1 + rng.below(12);
    for (MarkerMode mode : {MarkerMode::Markers, MarkerMode::IndexOnly}) {
      s.marker_mode = mode;
      bool fits = false;
      const auto expect = reference_encode(toks, lrange, rrange, vocab, s, &fits);
      if (!fits) {
        CHECK_THROWS_AS(encode(inst, text, vocab, s, labels), EncodeError);
        ++skipped;
        continue;
      }
      const auto enc = encode(inst, text, vocab, s, labels);
      REQUIRE(enc.token_ids == expect);
      CHECK(enc.attention_len == enc.token_ids.size());
      CHECK(enc.token_ids.size() + (mode == MarkerMode::IndexOnly ? 4 : 0) <= s.max_seq_len);
      CHECK(enc.e1_span.size() == lrange.second - lrange.first);
      CHECK(enc.e2_span.size() == rrange.second - rrange.first);
      for (std::size_t k = 0; k < enc.e1_span.size(); ++k)
        CHECK(enc.token_ids[enc.e1_span.start + k] == vocab.id(toks[lrange.first + k].text));
      if (mode == MarkerMode::Markers) {
        REQUIRE(enc.marker_idx.has_value());
        const auto& m = *enc.marker_idx;
        CHECK(enc.token_ids[m[0]] == special::kS1);
        CHECK(enc.token_ids[m[1]] == special::kE1);
        CHECK(enc.token_ids[m[2]] == special::kS2);
        CHECK(enc.token_ids[m[3]] == special::kE2);
        CHECK(m[0] + 1 == enc.e1_span.start);
        CHECK(m[1] == enc.e1_span.end);
        // dropping the markers gives the index-only encoding
        auto idx = s;
        idx.marker_mode = MarkerMode::IndexOnly;
        auto plain = encode(inst, text, vocab, idx, labels);
        std::vector<TokenId> stripped;
        for (auto t : enc.token_ids)
          if (t < special::kS1 || t > special::kE2) stripped.push_back(t);
        CHECK(plain.token_ids == stripped);
        CHECK_FALSE(plain.marker_idx.has_value());
        if (std::count(enc.token_ids.begin(), enc.token_ids.end(), special::kSep) > 0) ++gapped;
      }
      ++checked;
    }
  }
  CHECK(checked > 300);
  CHECK(skipped > 0);
  CHECK(gapped > 20);
}

TEST_CASE("context text holds the kept tokens in original casing") {
  const std::string text = "one two Three four five six seven eight nine ten";
  const auto toks = tokenize(text, false);
  RelationInstance inst;
  inst.left = entity_over(toks, 2, 3, "a");
  inst.right = entity_over(toks, 8, 9, "b");
  EncoderSettings s;
  s.context_window = 1;
  CHECK(context_text(inst, text, s) == "two Three four eight nine ten");
  s.context_window = 3;
  CHECK(context_text(inst, text, s) == text);
}

TEST_CASE("encoding errors") {
  const std::string text = "alpha beta gamma";
  const auto toks = tokenize(text, true);
  RelationInstance inst;
  inst.left = entity_over(toks, 0, 2, "a");
  inst.right = entity_over(toks, 1, 3, "b");
  const Vocab v;
  const LabelSpace labels({"R"});
  CHECK_THROWS_AS(encode(inst, text, v, EncoderSettings{}, labels), EncodeError);
  inst.right = entity_over(toks, 2, 3, "b");
  inst.right.start = inst.right.end = 5;  // lands on the space between tokens
  CHECK_THROWS_AS(encode(inst, text, v, EncoderSettings{}, labels), EncodeError);
  inst.right = entity_over(toks, 2, 3, "b");
  inst.label = "Missing";
  CHECK_THROWS_AS(encode(inst, text, v, EncoderSettings{}, labels), Error);
  EncoderSettings bad;
  bad.max_seq_len = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(parse_marker_mode("both"), ConfigError);
}

TEST_CASE("padding and JSON lines round trip") {
  const std::string text = "a b c d e f g";
  const auto toks = tokenize(text, true);
  const Vocab v = build_vocab({text}, 100, 1);
  const LabelSpace labels({"R", "S"});
  std::vector<EncodedInstance> batch;
  for (std::size_t j = 1; j < 5; ++j) {
    RelationInstance inst;
    inst.label = j % 2 ? "R" : "S";
    inst.left = entity_over(toks, 0, 1, "a");
    inst.right = entity_over(toks, j, j + 1, "b");
    EncoderSettings s;
    s.context_window = 1;
    s.marker_mode = j == 4 ? MarkerMode::IndexOnly : MarkerMode::Markers;
    batch.push_back(encode(inst, text, v, s, labels));
  }
  CHECK(encoded_from_jsonl(encoded_to_jsonl(batch)) == batch);
  auto padded = batch;
  pad_batch(padded);
  std::size_t longest = 0;
  for (const auto& e : batch) longest = std::max(longest, e.token_ids.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(padded[i].token_ids.size() == longest);
    CHECK(padded[i].attention_len == batch[i].attention_len);
    for (std::size_t k = batch[i].token_ids.size(); k < longest; ++k) CHECK(padded[i].token_ids[k] == special::kPad);
  }
  CHECK_THROWS_AS(encoded_from_jsonl("{\"token_ids\":[1]}\n"), ParseError);
}
