#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>

#include "helpers.hpp"
#include "relcat/common.hpp"
#include "relcat/incontext.hpp"

using namespace relcat;

namespace {

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto at = hay.find(needle); at != std::string::npos; at = hay.find(needle, at + 1)) ++n;
  return n;
}

std::string last_input(const std::string& prompt) {
  const auto at = prompt.rfind("Input: ");
  std::string line = prompt.substr(at + 7);
  return line.substr(0, line.find('\n'));
}

std::vector<IclExample> examples(std::size_t per_category, const std::string& prefix) {
  std::vector<IclExample> out;
  for (const auto& cat : n2c2_categories())
    for (std::size_t i = 0; i < per_category; ++i)
      out.push_back({prefix + cat + std::to_string(i), "take drug " + cat + " note " + prefix + std::to_string(i),
                     "drug", cat + std::to_string(i), cat});
  return out;
}

// Answers with the gold index of the instance in the final Input line.
class OracleClient : public InferenceClient {
 public:
  explicit OracleClient(const std::vector<IclExample>& xs) {
    const auto& cats = n2c2_categories();
    for (const auto& x : xs) {
      const auto idx = std::find(cats.begin(), cats.end(), x.label) - cats.begin();
      gold_[format_input(x.tokens, x.entity1, x.entity2)] = std::to_string(idx);
    }
  }
  Completion complete(const std::string& prompt, const GenerationSettings&) override {
    std::string payload = last_input(prompt);
    for (const std::string suffix : {" <|eot_id|>", " [/INST]", "[/INST]"})
      if (payload.size() >= suffix.size() && payload.compare(payload.size() - suffix.size(), suffix.size(), suffix) == 0)
        payload.resize(payload.size() - suffix.size());
    return {gold_.at(payload), "stop"};
  }

 private:
  std::map<std::string, std::string> gold_;
};

class ConstClient : public InferenceClient {
 public:
  explicit ConstClient(std::string reply) : reply_(std::move(reply)) {}
  Completion complete(const std::string&, const GenerationSettings&) override { return {reply_, "stop"}; }

 private:
  std::string reply_;
};

class FailingClient : public InferenceClient {
 public:
  explicit FailingClient(int fail_first) : fail_first_(fail_first) {}
  Completion complete(const std::string& prompt, const GenerationSettings&) override {
    if (calls_++ < fail_first_) throw std::runtime_error("connection refused");
    return {mock_llm_reply(prompt), "stop"};
  }
  std::atomic<int> calls_{0};

 private:
  int fail_first_;
};

class MockClient : public InferenceClient {
 public:
  Completion complete(const std::string& prompt, const GenerationSettings&) override {
    return {mock_llm_reply(prompt), "stop"};
  }
};

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

IclSettings quick(std::size_t shots) {
  IclSettings s;
  s.shots_per_class = shots;
  s.backoff = std::chrono::milliseconds(1);
  return s;
}

}  // namespace

TEST_CASE("zero-shot prompts match the golden files") {
  for (auto style : {TemplateStyle::Llama, TemplateStyle::Mistral}) {
    const auto tmpl = PromptTemplate::builtin(style);
    const std::string golden = read_file(data_path("golden/" + to_string(style) + "_zero_shot.txt"));
    CHECK(render_prompt(tmpl, "aspirin 81 mg daily", "aspirin", "81 mg") == golden);
    CHECK(render_prompt(tmpl, "aspirin 81 mg daily", "aspirin", "81 mg", {}) == golden);
    CHECK(count_of(tmpl.text, "{input}") == 1);
    CHECK(tmpl.categories == n2c2_categories());
  }
  CHECK(format_input("a b", "a", "b") == "'a b', 'a', 'b'");
  CHECK_THROWS_AS(parse_template_style("gpt"), ConfigError);
}

TEST_CASE("few-shot prompts put one Input/Output pair per shot before the query") {
  const auto tmpl = PromptTemplate::builtin(TemplateStyle::Mistral);
  const std::vector<FewShotExample> shots = {{"x 5 mg", "x", "5 mg", 4}, {"y po", "y", "po", 5}, {"z bid", "z", "bid", 6}};
  const std::string zero = render_prompt(tmpl, "q tab", "q", "tab");
  const std::string few = render_prompt(tmpl, "q tab", "q", "tab", shots);
  CHECK(count_of(few, "Input: ") == count_of(zero, "Input: ") + 3);
  CHECK(count_of(few, "\nOutput: ") == count_of(zero, "\nOutput: ") + 3);
  CHECK(few.find("Input: 'x 5 mg', 'x', '5 mg'\nOutput: 4\n") != std::string::npos);
  CHECK(few.find("Output: 6\n") < few.rfind("Input: 'q tab'"));
  CHECK(few.size() > zero.size());
  CHECK(last_input(few).rfind("'q tab', 'q', 'tab'", 0) == 0);
}

TEST_CASE("label parsing") {
  const auto& cats = n2c2_categories();
  for (std::size_t i = 0; i < cats.size(); ++i) {
    CHECK(parse_label(std::to_string(i), cats) == i);
    CHECK(parse_label(cats[i], cats) == i);
    CHECK(parse_label("  " + lowercase(cats[i]) + "\n", cats) == i);
  }
  CHECK_FALSE(parse_label("8", cats).has_value());
  CHECK_FALSE(parse_label("banana", cats).has_value());
  CHECK_FALSE(parse_label("Route-Drug or Form-Drug", cats).has_value());
  CHECK(parse_label("I think ADE-Drug", cats) == 2u);
  CHECK(parse_label("\"3\"", cats) == 3u);
  CHECK_FALSE(parse_label("", cats).has_value());
}

TEST_CASE("shot selection is seeded and follows category order") {
  const auto pool = examples(5, "pool");
  const auto a = select_shots(pool, n2c2_categories(), 2, 7);
  REQUIRE(a.size() == 16);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].label_index == i / 2);
  CHECK(select_shots(pool, n2c2_categories(), 2, 7).size() == a.size());
  bool differs = false;
  for (std::uint64_t s = 8; s < 20 && !differs; ++s) {
    const auto b = select_shots(pool, n2c2_categories(), 2, s);
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || b[i].tokens != a[i].tokens;
  }
  CHECK(differs);
  auto partial = pool;
  partial.erase(std::remove_if(partial.begin(), partial.end(), [](const auto& x) { return x.label == "ADE-Drug"; }),
                partial.end());
  CHECK(select_shots(partial, n2c2_categories(), 1, 7).size() == 7);
  CHECK(select_shots(pool, n2c2_categories(), 0, 7).empty());
  CHECK(select_shots(examples(1, "p"), n2c2_categories(), 3, 7).size() == 8);
}

TEST_CASE("an oracle client scores perfect recall, a nonsense client scores zero") {
  const auto test = examples(3, "test");
  const auto pool = examples(2, "pool");
  OracleClient oracle(test);
  for (std::size_t shots : {0u, 1u}) {
    const auto r = icl_evaluate(test, pool, PromptTemplate::builtin(TemplateStyle::Llama), oracle, quick(shots));
    CHECK(r.shots.size() == shots * 8);
    CHECK(r.unparseable == 0);
    for (const auto& m : r.report.per_class) CHECK(m.recall == 1.0);
    CHECK(r.records.size() == test.size());
  }
  ConstClient banana("banana");
  const auto r = icl_evaluate(test, pool, PromptTemplate::builtin(TemplateStyle::Mistral), banana, quick(1));
  CHECK(r.unparseable == test.size());
  CHECK(r.failed == 0);
  for (const auto& m : r.report.per_class) CHECK(m.recall == 0.0);
  std::size_t rejected = 0;
  for (auto x : r.report.rejected) rejected += x;
  CHECK(rejected == test.size());
}

TEST_CASE("transient failures are retried; persistent failures abort the run") {
  const auto test = examples(2, "t");
  FailingClient flaky(3);
  auto s = quick(0);
  s.concurrency = 1;
  const auto ok = icl_evaluate(test, {}, PromptTemplate::builtin(TemplateStyle::Llama), flaky, s);
  CHECK(ok.failed == 0);
  CHECK(flaky.calls_ == static_cast<int>(test.size()) + 3);

  FailingClient dead(1 << 30);
  CHECK_THROWS_AS(icl_evaluate(test, {}, PromptTemplate::builtin(TemplateStyle::Llama), dead, s), IclRunFailed);
  try {
    icl_evaluate(test, {}, PromptTemplate::builtin(TemplateStyle::Llama), dead, s);
  } catch (const IclRunFailed& e) {
    CHECK(e.result.failed == test.size());
    CHECK(e.result.records.size() == test.size());
  }
  s.max_failure_rate = 1.0;
  s.max_retries = 0;
  const auto tolerated = icl_evaluate(test, {}, PromptTemplate::builtin(TemplateStyle::Llama), dead, s);
  CHECK(tolerated.failed == test.size());
}

TEST_CASE("runs are deterministic regardless of concurrency") {
  const auto test = examples(4, "det");
  const auto pool = examples(3, "pool");
  MockClient mock;
  auto s = quick(1);
  s.concurrency = 1;
  const auto a = icl_evaluate(test, pool, PromptTemplate::builtin(TemplateStyle::Llama), mock, s);
  s.concurrency = 6;
  const auto b = icl_evaluate(test, pool, PromptTemplate::builtin(TemplateStyle::Llama), mock, s);
  CHECK(icl_records_jsonl(a.records) == icl_records_jsonl(b.records));
  CHECK(a.report.confusion == b.report.confusion);
  const std::string table = render_recall_table({{"zero", a.report}, {"few", b.report}});
  CHECK(table.find("Reason-Drug") != std::string::npos);
  CHECK(table.find("few") != std::string::npos);
}

TEST_CASE("mock replies depend only on the final input line") {
  const auto tmpl = PromptTemplate::builtin(TemplateStyle::Llama);
  const std::string zero = render_prompt(tmpl, "q tab", "q", "tab");
  const std::string few = render_prompt(tmpl, "q tab", "q", "tab", {{"x", "x", "y", 1}});
  CHECK(mock_llm_reply(zero) == mock_llm_reply(few));
  CHECK(mock_llm_reply("no marker here") == "banana");
  std::map<std::string, int> kinds;
  for (int i = 0; i < 300; ++i) {
    const std::string r = mock_llm_reply("Input: " + std::to_string(i));
    kinds[r == "banana" ? "banana" : r.size() == 1 ? "digit" : "name"]++;
  }
  CHECK(kinds.size() == 3);
}
