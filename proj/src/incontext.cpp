#include "relcat/incontext.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace relcat {

namespace {

#include "prompt_templates.inc"

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

TemplateStyle parse_template_style(const std::string& s) {
  if (s == "llama_style") return TemplateStyle::Llama;
  if (s == "mistral_style") return TemplateStyle::Mistral;
  throw ConfigError("unknown template '" + s + "' (valid: llama_style, mistral_style)");
}

std::string to_string(TemplateStyle s) { return s == TemplateStyle::Llama ? "llama_style" : "mistral_style"; }

const std::vector<std::string>& n2c2_categories() {
  static const std::vector<std::string> cats = {"Reason-Drug",   "Duration-Drug", "ADE-Drug",       "Dosage-Drug",
                                                "Strength-Drug", "Route-Drug",    "Frequency-Drug", "Form-Drug"};
  return cats;
}

PromptTemplate PromptTemplate::builtin(TemplateStyle style) {
  PromptTemplate t;
  t.style = style;
  t.text = style == TemplateStyle::Llama ? kLlamaTemplate : kMistralTemplate;
  t.categories = n2c2_categories();
  return t;
}

std::string format_input(const std::string& tokens, const std::string& entity1, const std::string& entity2) {
  return "'" + tokens + "', '" + entity1 + "', '" + entity2 + "'";
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& instance_text, const std::string& entity1,
                          const std::string& entity2, const std::vector<FewShotExample>& shots) {
  static const std::string kSlot = "{input}";
  const std::size_t slot = tmpl.text.find(kSlot);
  if (slot == std::string::npos) throw ConfigError("prompt template has no {input} placeholder");
  std::string out = tmpl.text;
  out.replace(slot, kSlot.size(), format_input(instance_text, entity1, entity2));
  if (!shots.empty()) {
    const std::size_t line_start = out.rfind('\n', slot);
    const std::size_t at = line_start == std::string::npos ? 0 : line_start + 1;
    std::string block;
    for (const auto& s : shots)
      block += "Input: " + format_input(s.tokens, s.entity1, s.entity2) + "\nOutput: " +
               std::to_string(s.label_index) + "\n";
    out.insert(at, block);
  }
  return out;
}

std::optional<std::size_t> parse_label(const std::string& response, const std::vector<std::string>& categories) {
  std::string s = trim_ws(response);
  if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front()) s = trim_ws(s.substr(1, s.size() - 2));
  if (!s.empty() && s.size() <= 9 && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
    const std::size_t v = std::stoul(s);
    if (v < categories.size()) return v;
    return std::nullopt;
  }
  const std::string ls = lower(s);
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (ls == lower(categories[i])) return i;
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (ls.find(lower(categories[i])) != std::string::npos) {
      if (found) return std::nullopt;
      found = i;
    }
  }
  return found;
}

HttpInferenceClient::HttpInferenceClient(std::string endpoint, std::chrono::milliseconds timeout) : timeout_(timeout) {
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must look like http://host:port/path");
  const auto path_at = endpoint.find('/', scheme + 3);
  base_ = endpoint.substr(0, path_at);
  path_ = path_at == std::string::npos ? "/generate" : endpoint.substr(path_at);
}

Completion HttpInferenceClient::complete(const std::string& prompt, const GenerationSettings& settings) {
  httplib::Client cli(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  nlohmann::ordered_json body;
  body["prompt"] = prompt;
  body["max_tokens"] = settings.max_tokens;
  body["temperature"] = settings.temperature;
  auto res = cli.Post(path_, body.dump(), "application/json");
  if (!res) throw Error("request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("endpoint returned HTTP " + std::to_string(res->status));
  const auto j = nlohmann::json::parse(res->body);
  return {j.at("text").get<std::string>(), j.value("finish_reason", "")};
}

std::vector<FewShotExample> select_shots(const std::vector<IclExample>& pool, const std::vector<std::string>& categories,
                                         std::size_t per_class, std::uint64_t seed) {
  std::vector<FewShotExample> out;
  if (per_class == 0) return out;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].label == categories[c]) members.push_back(i);
    Rng rng(derive_seed(seed, "shots:" + categories[c]));
    rng.shuffle(members);
    for (std::size_t k = 0; k < std::min(per_class, members.size()); ++k) {
      const auto& ex = pool[members[k]];
      out.push_back({ex.tokens, ex.entity1, ex.entity2, c});
    }
  }
  return out;
}

IclResult icl_evaluate(const std::vector<IclExample>& instances, const std::vector<IclExample>& shot_pool,
                       const PromptTemplate& tmpl, InferenceClient& client, const IclSettings& settings) {
  std::map<std::string, std::size_t> cat_index;
  for (std::size_t i = 0; i < tmpl.categories.size(); ++i) cat_index[tmpl.categories[i]] = i;
  std::vector<int> gold;
  for (const auto& ex : instances) {
    auto it = cat_index.find(ex.label);
    if (it == cat_index.end()) throw Error("instance label '" + ex.label + "' is not a template category");
    gold.push_back(static_cast<int>(it->second));
  }
  for (const auto& s : shot_pool)
    for (const auto& ex : instances)
      if (!s.id.empty() && s.id == ex.id) throw Error("few-shot pool contains evaluated instance " + ex.id);

  IclResult result;
  result.shots = select_shots(shot_pool, tmpl.categories, settings.shots_per_class, settings.seed);
  result.records.resize(instances.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      const auto& ex = instances[i];
      IclRecord& rec = result.records[i];
      rec.id = ex.id;
      const std::string prompt = render_prompt(tmpl, ex.tokens, ex.entity1, ex.entity2, result.shots);
      rec.prompt_hash = hex64(fnv1a64(prompt));
      rec.failed = true;
      for (std::size_t attempt = 0; attempt <= settings.max_retries; ++attempt) {
        if (attempt) std::this_thread::sleep_for(settings.backoff * (1 << std::min<std::size_t>(attempt - 1, 10)));
        try {
          rec.response = client.complete(prompt, settings.generation).text;
          rec.failed = false;
          break;
        } catch (const std::exception& e) {
          rec.response = std::string("error: ") + e.what();
        }
      }
      if (!rec.failed) rec.parsed = parse_label(rec.response, tmpl.categories);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(settings.concurrency, instances.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  std::vector<int> pred;
  for (const auto& rec : result.records) {
    if (rec.failed)
      ++result.failed;
    else if (!rec.parsed)
      ++result.unparseable;
    pred.push_back(rec.parsed ? static_cast<int>(*rec.parsed) : -1);
  }
  result.report = compute_report(tmpl.categories, gold, pred);
  if (!instances.empty() &&
      static_cast<double>(result.failed) / static_cast<double>(instances.size()) > settings.max_failure_rate) {
    std::ostringstream msg;
    msg << result.failed << " of " << instances.size() << " requests failed after " << settings.max_retries
        << " retries (allowed failure rate " << settings.max_failure_rate << ")";
    if (!result.records.empty()) msg << "; last error: " << result.records.back().response;
    throw IclRunFailed(msg.str(), std::move(result));
  }
  return result;
}

std::string icl_records_jsonl(const std::vector<IclRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["prompt_hash"] = r.prompt_hash;
    j["response"] = r.response;
    j["parsed"] = r.parsed ? nlohmann::ordered_json(*r.parsed) : nlohmann::ordered_json(nullptr);
    j["failed"] = r.failed;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string render_recall_table(const std::vector<std::pair<std::string, EvalReport>>& runs) {
  std::ostringstream out;
  if (runs.empty()) return "";
  const auto& labels = runs.front().second.labels;
  std::size_t w = 12;
  for (const auto& l : labels) w = std::max(w, l.size() + 2);
  out << std::string("Class") + std::string(w - 5, ' ');
  for (const auto& [name, r] : runs) out << name << " Recall  ";
  out << '\n';
  for (std::size_t c = 0; c < labels.size(); ++c) {
    out << labels[c] << std::string(w - labels[c].size(), ' ');
    for (const auto& [name, r] : runs) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", r.per_class.at(c).recall);
      const std::string cell = buf;
      const std::size_t cw = name.size() + 9;
      out << cell << std::string(cw > cell.size() ? cw - cell.size() : 1, ' ');
    }
    out << '\n';
  }
  return out.str();
}

std::string mock_llm_reply(const std::string& prompt) {
  static const std::string kTag = "Input: ";
  const std::size_t at = prompt.rfind(kTag);
  if (at == std::string::npos) return "banana";
  std::string payload = prompt.substr(at + kTag.size());
  payload = payload.substr(0, payload.find('\n'));
  for (const std::string suffix : {" <|eot_id|>", "[/INST]"})
    if (payload.size() >= suffix.size() && payload.compare(payload.size() - suffix.size(), suffix.size(), suffix) == 0)
      payload.resize(payload.size() - suffix.size());
  const std::uint64_t h = fnv1a64(payload);
  const std::uint64_t r = h % 10;
  if (r < 8) return std::to_string(r);
  if (r == 8) return " " + n2c2_categories()[(h / 10) % 8] + "\n";
  return "banana";
}

}  // namespace relcat
