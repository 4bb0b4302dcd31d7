#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relcat/train_eval.hpp"

namespace relcat {

enum class TemplateStyle { Llama, Mistral };
TemplateStyle parse_template_style(const std::string& s);
std::string to_string(TemplateStyle s);

// Category order used by both built-in templates.
const std::vector<std::string>& n2c2_categories();

struct FewShotExample {
  std::string tokens;
  std::string entity1;
  std::string entity2;
  std::size_t label_index = 0;
};

struct PromptTemplate {
  TemplateStyle style = TemplateStyle::Llama;
  std::string text;  // contains exactly one "{input}" placeholder
  std::vector<std::string> categories;

  static PromptTemplate builtin(TemplateStyle style);
};

// `'<tokens>', '<entity 1>', '<entity 2>'`
std::string format_input(const std::string& tokens, const std::string& entity1, const std::string& entity2);

// Shots go before the final `Input:` line as `Input: ...` / `Output: <index>` pairs.
std::string render_prompt(const PromptTemplate& tmpl, const std::string& instance_text, const std::string& entity1,
                          const std::string& entity2, const std::vector<FewShotExample>& shots = {});

// Bare index, then exact category name, then a unique category name contained in
// the response (all case-insensitive). nullopt means unparseable.
std::optional<std::size_t> parse_label(const std::string& response, const std::vector<std::string>& categories);

struct GenerationSettings {
  int max_tokens = 16;
  double temperature = 0.0;
};

struct Completion {
  std::string text;
  std::string finish_reason;
};

// Implementations must be stateless per request and safe to call concurrently.
// A thrown exception is treated as a transient failure and retried.
class InferenceClient {
 public:
  virtual ~InferenceClient() = default;
  virtual Completion complete(const std::string& prompt, const GenerationSettings& settings) = 0;
};

// POST <endpoint> with {"prompt", "max_tokens", "temperature"}; expects
// {"text", "finish_reason"}. Wire format documented in docs/icl.md.
class HttpInferenceClient : public InferenceClient {
 public:
  HttpInferenceClient(std::string endpoint, std::chrono::milliseconds timeout);
  Completion complete(const std::string& prompt, const GenerationSettings& settings) override;

 private:
  std::string base_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

struct IclExample {
  std::string id;
  std::string tokens;  // windowed context, markers stripped
  std::string entity1;
  std::string entity2;
  std::string label;
};

struct IclSettings {
  std::size_t shots_per_class = 1;  // 0 = zero-shot
  std::uint64_t seed = 42;
  std::size_t concurrency = 4;
  std::size_t max_retries = 3;
  std::chrono::milliseconds backoff{50};
  double max_failure_rate = 0.1;
  GenerationSettings generation;
};

struct IclRecord {
  std::string id;
  std::string prompt_hash;
  std::string response;
  std::optional<std::size_t> parsed;
  bool failed = false;
};

struct IclResult {
  EvalReport report;
  std::size_t unparseable = 0;
  std::size_t failed = 0;
  std::vector<FewShotExample> shots;
  std::vector<IclRecord> records;
};

class IclRunFailed : public Error {
 public:
  IclRunFailed(const std::string& msg, IclResult partial) : Error(msg), result(std::move(partial)) {}
  IclResult result;
};

// Seeded draw of up to `per_class` examples of each category from `pool`, in category order.
std::vector<FewShotExample> select_shots(const std::vector<IclExample>& pool, const std::vector<std::string>& categories,
                                         std::size_t per_class, std::uint64_t seed);

// Unparseable and failed responses land in the report's reject bucket.
IclResult icl_evaluate(const std::vector<IclExample>& instances, const std::vector<IclExample>& shot_pool,
                       const PromptTemplate& tmpl, InferenceClient& client, const IclSettings& settings);

std::string icl_records_jsonl(const std::vector<IclRecord>& records);

// Per-class recall table, one column per run (e.g. zero-shot and few-shot).
std::string render_recall_table(const std::vector<std::pair<std::string, EvalReport>>& runs);

// Deterministic stand-in for a text-generation server, shared by the bundled
// mock server and in-process tests: the reply depends only on the last `Input:`
// line of the prompt (see docs/icl.md).
std::string mock_llm_reply(const std::string& prompt);

}  // namespace relcat
