#include "relcat/encoding.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace relcat {

namespace {

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == 0x00A0 ||
         (c >= 0x2000 && c <= 0x200B) || c == 0x2028 || c == 0x2029 || c == 0x3000 || c == 0xFEFF;
}

bool is_punct(char32_t c) {
  if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                       (c >= 0x7B && c <= 0x7E);
  return (c >= 0x00A1 && c <= 0x00BF) || c == 0x00D7 || c == 0x00F7 || (c >= 0x2010 && c <= 0x2027) ||
         (c >= 0x2030 && c <= 0x205E);
}

char32_t ascii_lower(char32_t c) { return (c >= 'A' && c <= 'Z') ? c + ('a' - 'A') : c; }

struct Layout {
  std::size_t lo1, hi1, lo2, hi2;  // kept token windows (first region, second region)
  bool gap;
};

struct Regions {
  TokenSpan left, right;
};

TokenSpan locate(const std::vector<Token>& tokens, const Entity& e) {
  TokenSpan span{tokens.size(), 0};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].end > e.start && tokens[i].start < e.end) {
      span.start = std::min(span.start, i);
      span.end = i + 1;
    }
  }
  if (span.end == 0) throw EncodeError("entity '" + e.surface + "' tokenizes to zero tokens");
  return span;
}

Regions locate_pair(const std::vector<Token>& tokens, const RelationInstance& inst) {
  Regions r{locate(tokens, inst.left), locate(tokens, inst.right)};
  if (r.left.start < r.right.end && r.right.start < r.left.end)
    throw EncodeError("entity spans overlap in " + inst.doc_id);
  return r;
}

Layout plan_layout(const Regions& regions, std::size_t n_tokens, const EncoderSettings& s) {
  const TokenSpan& first = regions.left.start < regions.right.start ? regions.left : regions.right;
  const TokenSpan& second = regions.left.start < regions.right.start ? regions.right : regions.left;
  for (std::size_t w = s.context_window + 1; w-- > 0;) {
    Layout l;
    l.lo1 = first.start > w ? first.start - w : 0;
    l.hi1 = std::min(n_tokens, first.end + w);
    l.lo2 = second.start > w ? second.start - w : 0;
    l.hi2 = std::min(n_tokens, second.end + w);
    l.gap = l.lo2 > l.hi1;
    if (!l.gap) {
      l.lo2 = l.hi1;
      l.hi2 = std::max(l.hi1, l.hi2);
    }
    const std::size_t kept = (l.hi1 - l.lo1) + (l.hi2 - l.lo2);
    const std::size_t len = 1 + kept + 4 + (l.gap ? 1 : 0);
    if (len <= s.max_seq_len) return l;
  }
  throw EncodeError("entity spans cannot fit within max_seq_len=" + std::to_string(s.max_seq_len));
}

}  // namespace

std::vector<Token> tokenize(std::string_view text, bool lowercase) {
  const std::u32string cps = utf8::decode(text);
  std::vector<Token> out;
  std::u32string cur;
  std::size_t cur_start = 0;
  auto flush = [&](std::size_t end) {
    if (!cur.empty()) out.push_back({utf8::encode(cur), cur_start, end});
    cur.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (is_space(c)) {
      flush(i);
    } else if (is_punct(c)) {
      flush(i);
      out.push_back({utf8::encode(c), i, i + 1});
    } else {
      if (cur.empty()) cur_start = i;
      cur.push_back(lowercase ? ascii_lower(c) : c);
    }
  }
  flush(cps.size());
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  for (auto name : special::kNames) tokens_.emplace_back(name);
  for (auto& t : tokens) {
    if (std::find(special::kNames.begin(), special::kNames.end(), t) != special::kNames.end()) continue;
    tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? special::kUnk : it->second;
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocab Vocab::deserialize(std::string_view content) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < special::kCount) throw ParseError("vocabulary file is missing the special tokens");
  for (std::size_t i = 0; i < special::kCount; ++i)
    if (lines[i] != special::kNames[i]) throw ParseError("expected special token " + std::string(special::kNames[i]), i + 1);
  return Vocab(std::vector<std::string>(lines.begin() + special::kCount, lines.end()));
}

std::uint64_t Vocab::hash() const { return fnv1a64(serialize()); }

Vocab build_vocab(const std::vector<std::string>& corpus_texts, std::size_t max_size, std::size_t min_freq,
                  bool lowercase) {
  if (max_size <= special::kCount) throw Error("vocabulary max_size must exceed the 8 special tokens");
  std::map<std::string, std::size_t> freq;
  for (const auto& text : corpus_texts)
    for (auto& tok : tokenize(text, lowercase)) ++freq[tok.text];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq)
    if (n >= min_freq) ranked.emplace_back(tok, n);
  // map order is lexicographic, so a stable sort by count keeps ties lexicographic
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [tok, n] : ranked) {
    if (tokens.size() + special::kCount >= max_size) break;
    if (std::find(special::kNames.begin(), special::kNames.end(), tok) != special::kNames.end()) continue;
    tokens.push_back(tok);
  }
  return Vocab(std::move(tokens));
}

MarkerMode parse_marker_mode(const std::string& s) {
  if (s == "markers") return MarkerMode::Markers;
  if (s == "index_only") return MarkerMode::IndexOnly;
  throw ConfigError("unknown marker_mode '" + s + "' (valid: markers, index_only)");
}

std::string to_string(MarkerMode m) { return m == MarkerMode::Markers ? "markers" : "index_only"; }

void EncoderSettings::validate() const {
  if (max_seq_len < 16) throw ConfigError("max_seq_len must be >= 16");
  if (context_window < 1) throw ConfigError("context_window must be >= 1");
}

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
  std::set<std::string> seen(labels_.begin(), labels_.end());
  if (seen.size() != labels_.size()) throw Error("duplicate label in label space");
}

LabelSpace LabelSpace::from_instances(const std::vector<RelationInstance>& instances) {
  std::set<std::string> seen;
  for (const auto& i : instances) seen.insert(i.label);
  return LabelSpace(std::vector<std::string>(seen.begin(), seen.end()));
}

int LabelSpace::id(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
}

EncodedInstance encode(const RelationInstance& instance, std::string_view doc_text, const Vocab& vocab,
                       const EncoderSettings& settings, const LabelSpace& labels) {
  settings.validate();
  const auto tokens = tokenize(doc_text, settings.lowercase);
  const Regions regions = locate_pair(tokens, instance);
  const Layout layout = plan_layout(regions, tokens.size(), settings);
  const bool markers = settings.marker_mode == MarkerMode::Markers;

  EncodedInstance out;
  if (!instance.label.empty()) {
    out.label_id = labels.id(instance.label);
    if (out.label_id < 0) throw Error("label '" + instance.label + "' is not in the label space");
  }
  std::array<std::size_t, 4> marker_pos{};
  auto& ids = out.token_ids;
  ids.push_back(special::kCls);
  auto emit = [&](std::size_t k) {
    if (k == regions.left.start) {
      if (markers) {
        marker_pos[0] = ids.size();
        ids.push_back(special::kS1);
      }
      out.e1_span.start = ids.size();
    }
    if (k == regions.right.start) {
      if (markers) {
        marker_pos[2] = ids.size();
        ids.push_back(special::kS2);
      }
      out.e2_span.start = ids.size();
    }
    ids.push_back(vocab.id(tokens[k].text));
    if (k + 1 == regions.left.end) {
      out.e1_span.end = ids.size();
      if (markers) {
        marker_pos[1] = ids.size();
        ids.push_back(special::kE1);
      }
    }
    if (k + 1 == regions.right.end) {
      out.e2_span.end = ids.size();
      if (markers) {
        marker_pos[3] = ids.size();
        ids.push_back(special::kE2);
      }
    }
  };
  for (std::size_t k = layout.lo1; k < layout.hi1; ++k) emit(k);
  if (layout.gap) ids.push_back(special::kSep);
  for (std::size_t k = layout.lo2; k < layout.hi2; ++k) emit(k);
  if (markers) out.marker_idx = marker_pos;
  out.attention_len = ids.size();
  return out;
}

std::string context_text(const RelationInstance& instance, std::string_view doc_text,
                         const EncoderSettings& settings) {
  settings.validate();
  const auto tokens = tokenize(doc_text, false);
  const Regions regions = locate_pair(tokens, instance);
  const Layout layout = plan_layout(regions, tokens.size(), settings);
  std::string out;
  auto add = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      if (!out.empty()) out += ' ';
      out += tokens[k].text;
    }
  };
  add(layout.lo1, layout.hi1);
  add(layout.lo2, layout.hi2);
  return out;
}

void pad_batch(std::vector<EncodedInstance>& batch) {
  std::size_t len = 0;
  for (const auto& e : batch) len = std::max(len, e.token_ids.size());
  for (auto& e : batch) e.token_ids.resize(len, special::kPad);
}

std::string encoded_to_jsonl(const std::vector<EncodedInstance>& batch) {
  std::string out;
  for (const auto& e : batch) {
    nlohmann::ordered_json j;
    j["token_ids"] = e.token_ids;
    j["e1_span"] = {e.e1_span.start, e.e1_span.end};
    j["e2_span"] = {e.e2_span.start, e.e2_span.end};
    j["marker_idx"] = e.marker_idx ? nlohmann::ordered_json(*e.marker_idx) : nlohmann::ordered_json(nullptr);
    j["label_id"] = e.label_id;
    j["attention_len"] = e.attention_len;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<EncodedInstance> encoded_from_jsonl(const std::string& content) {
  std::vector<EncodedInstance> out;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EncodedInstance e;
      e.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
      e.e1_span = {j.at("e1_span")[0].get<std::size_t>(), j.at("e1_span")[1].get<std::size_t>()};
      e.e2_span = {j.at("e2_span")[0].get<std::size_t>(), j.at("e2_span")[1].get<std::size_t>()};
      if (!j.at("marker_idx").is_null()) e.marker_idx = j.at("marker_idx").get<std::array<std::size_t, 4>>();
      e.label_id = j.at("label_id").get<int>();
      e.attention_len = j.at("attention_len").get<std::size_t>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(ex.what(), lineno);
    }
  }
  return out;
}

}  // namespace relcat
