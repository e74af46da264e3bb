#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alignlens/stats.hpp"

namespace alignlens {

enum class TemplateKind { summarize, tasks, linguistic };

std::string to_string(TemplateKind t);
TemplateKind parse_template_kind(std::string_view name);

// Prompt template text: "System:", "User:" and "Agent:" turns separated by
// blank lines, ending with the open user turn the payload is appended to.
const std::string& template_text(TemplateKind t);

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// Template turns as chat messages, with `payload` appended to the last user turn.
std::vector<ChatMessage> build_messages(TemplateKind t, std::string_view payload);

// Template-1 payload: words joined by ", " and closed with a period.
std::string words_payload(const std::vector<std::string>& words);

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  double top_p = 0.9;
  // Bookkeeping, not sent to the endpoint.
  TemplateKind kind = TemplateKind::summarize;
  std::string payload;
  std::size_t repeat = 0;
};

// {"model", "messages", "temperature", "top_p"} as sent over the wire.
std::string request_json(const ChatRequest& request);
std::string request_hash(const ChatRequest& request);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Returns the first choice's message content. Throws TransportError or
  // FormatError.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// POSTs the request to an OpenAI-style chat-completion URL.
class HttpChatBackend : public ChatBackend {
 public:
  HttpChatBackend(std::string endpoint_url, std::string api_key,
                  std::chrono::seconds timeout = std::chrono::seconds(60));
  std::string complete(const ChatRequest& request) override;

 private:
  std::string scheme_host_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

// Replays replies from a JSON fixture:
//   {"by_hash":    {"<request sha256>": reply},
//    "by_payload": {"<payload>": reply | {"summarize"|"tasks"|"linguistic": reply}},
//    "default":    reply | {"summarize"|"tasks"|"linguistic": reply}}
// where reply is a string or an array indexed by repeat (the last entry
// repeats). Lookup order is by_hash, by_payload, default.
class MockChatBackend : public ChatBackend {
 public:
  explicit MockChatBackend(std::string_view fixture_json);
  static MockChatBackend from_file(const std::filesystem::path& path);
  std::string complete(const ChatRequest& request) override;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// One JSON line per attempt. Thread-safe.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);
  explicit AuditLog(std::ostream& out);

  void record(const ChatRequest& request, std::size_t attempt, const std::string* response,
              const std::string* error);

 private:
  std::ofstream file_;
  std::ostream* out_;
  std::mutex mutex_;
};

struct RetryPolicy {
  std::size_t attempts = 3;
  std::chrono::milliseconds initial_delay{500};  // doubled after each failure
};

struct AnnotatorConfig {
  std::string model = "gpt-3.5-turbo-0613";
  std::size_t repeats = 5;
  std::vector<double> summarize_temperatures{0.0, 1.0, 1.0, 1.0, 1.0};  // last entry repeats
  double classify_temperature = 0.0;
  double top_p = 0.9;
  std::size_t max_concurrency = 4;
  RetryPolicy retry;
};

struct TaskClassification {
  std::vector<std::string> scenarios;  // subset of writing, math, coding, translation, in that order
  bool none = false;
  std::vector<std::string> unparsed;   // labels that matched nothing
};

// Splits on ';', trims, drops trailing periods and matches case-insensitively.
TaskClassification parse_tasks(std::string_view reply);
// One of phonology, morphology, syntax, semantic; std::nullopt when unmatched.
std::optional<std::string> parse_linguistic(std::string_view reply);
// Case-insensitive "cannot tell".
bool is_failed_description(std::string_view description);

struct RepeatAnnotation {
  std::size_t repeat = 0;
  std::string description;
  bool failed = false;
  std::vector<std::string> scenarios;
  bool none = false;
  std::vector<std::string> unparsed_tasks;
  std::optional<std::string> linguistic;
  std::string raw_tasks;       // empty when failed
  std::string raw_linguistic;  // empty when failed
};

// Recomputes the parsed fields from stored raw replies.
RepeatAnnotation interpret_raw(std::size_t repeat, std::string description, std::string raw_tasks,
                               std::string raw_linguistic);

struct ConceptAnnotation {
  std::size_t layer = 0;
  std::size_t rank = 0;
  std::vector<std::string> words;
  std::vector<RepeatAnnotation> repeats;  // ordered by repeat
};

struct ConceptRef {
  std::size_t layer = 0;
  std::size_t rank = 0;
  std::vector<std::string> words;
};

class Annotator {
 public:
  Annotator(ChatBackend& backend, AnnotatorConfig config, AuditLog* audit = nullptr);

  std::string summarize_concept(const std::vector<std::string>& words, std::size_t repeat);
  std::string classify_tasks_raw(const std::string& description, std::size_t repeat);
  std::string classify_linguistic_raw(const std::string& description, std::size_t repeat);

  RepeatAnnotation annotate_once(const std::vector<std::string>& words, std::size_t repeat);

  // Every concept x repeat, at most max_concurrency requests in flight;
  // output sorted by (layer, rank), repeats in order.
  std::vector<ConceptAnnotation> annotate(const std::vector<ConceptRef>& concepts);

  const AnnotatorConfig& config() const { return config_; }

 private:
  std::string send(TemplateKind kind, std::string payload, double temperature, std::size_t repeat);

  ChatBackend& backend_;
  AnnotatorConfig config_;
  AuditLog* audit_;
};

// One JSON line per (concept, repeat).
std::string annotations_jsonl(const std::vector<ConceptAnnotation>& annotations);
std::vector<ConceptAnnotation> parse_annotations(std::istream& in);
std::vector<ConceptAnnotation> load_annotations(const std::filesystem::path& path);

inline const std::vector<std::string>& scenario_categories() {
  static const std::vector<std::string> k{"writing", "math", "coding", "translation", "none"};
  return k;
}
inline const std::vector<std::string>& linguistic_categories() {
  static const std::vector<std::string> k{"phonology", "morphology", "syntax", "semantic"};
  return k;
}

struct CategoryRow {
  std::string group;  // "scenario" or "linguistic"
  std::string category;
  std::vector<double> percent_a, percent_b;  // one entry per counted repeat
  double mean_a = 0.0, sd_a = 0.0;
  double mean_b = 0.0, sd_b = 0.0;
  std::optional<double> p_value;  // two-sided Welch
};

struct DistributionReport {
  std::vector<CategoryRow> rows;
  std::vector<double> interpretability_a, interpretability_b;  // percent non-failed per repeat
};

// Per repeat: percentage of non-failed concepts per scenario and of parsed
// concepts per linguistic level, then mean and sample sd over repeats.
DistributionReport aggregate_distribution(const std::vector<ConceptAnnotation>& a,
                                          const std::vector<ConceptAnnotation>& b);

}  // namespace alignlens
