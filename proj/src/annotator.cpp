#include "alignlens/annotator.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "alignlens/checkpoint.hpp"
#include "alignlens/diagnostics.hpp"
#include "alignlens/error.hpp"
#include "alignlens/io.hpp"
#include "alignlens/parallel.hpp"
#include "httplib.h"
#include "json.hpp"

namespace alignlens {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::string kSummarizeTemplate = R"(System: You are a neuron interpreter for neural networks. Each neuron looks for one particular concept/topic/theme/behavior/pattern. Look at some words the neuron activates for and summarize in a single concept/topic/theme/behavior/pattern what the neuron is looking for. Don't list examples of words and keep your summary as concise as possible. If you cannot summarize more than half of the given words within one clear concept/topic/theme/behavior/pattern, you should say 'Cannot Tell'.

User: Words: January, terday, cember, April, July, September, December, Thursday, quished, November, Tuesday.
Agent: dates.

User: Words: B., M., e., R., C., OK., A., H., D., S., J., al., p., T., N., W., G., a.C., or, St., K., a.m., L..
Agent: abbrevations and acronyms.

User: Words: actual, literal, real, Real, optical, Physical, REAL, virtual, visual.
Agent: perception of reality.

User: Words: Go, Python, C++, Java, c#, python3, cuda, java, javascript, basic.
Agent: programing languages.

User: Words: 1950, 1980, 1985, 1958, 1850 , 1980, 1960, 1940, 1984, 1948.
Agent: years.

User: Words:
)";

const std::string kTasksTemplate = R"(System: Which of the following assistant tasks can the given concept is used for?

Tasks: daily writing, literary writing, professional writing, solving math problems, coding, translation. Return 'None' if it cannot be used for any of the above tasks. If it could be used for multiple tasks, list all of them and seperate with ';'.

User: Concept: Words are social media post tags.
Agent: daily writing

User: Concept: Words are Latex code for drawing a grouped barchart.
Agent: professional writing

User: Concept: Words are foreign words or names.
Agent: translation

User: Concept: Words are URLs.
Agent: None

User: Concept: Words are Words related to configuration files and web addresses.
Agent: coding

User: Concept: Words are rhyming words.
Agent: literary writing

User: Concept: Words are programming commands and terms.
Agent: coding

User: Concept: Words are
)";

const std::string kLinguisticTemplate = R"(System: You are a linguist. Classify the provided concept into one of the following categories: Phonology, Morphology, Syntax, and Semantic.

User: Concept: Words are dates.
Agent: semantic

User: Concept: Words are perception of reality.
Agent: Semantic

User: Concept: Words are abbrevations and acronyms.
Agent: Morphology

User: Concept: Words are related to actions or activities.
Agent: Syntax

User: Concept: Words are medical abbrivations.
Agent: Semantic

User: Concept: Words are URLs.
Agent: Morphology

User: Concept: Words are verbs.
Agent: Syntax

User: Concept: Words are adjective.
Agent: Syntax

User: Concept: Words are rhyming words.
Agent: Phonology

User: Concept: Words are programming languages.
Agent: Semantic

User: Concept: Words are
)";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string normalize_label(std::string_view s) {
  std::string t = trim(s);
  while (!t.empty() && (t.back() == '.' || t.back() == ' ')) t.pop_back();
  return to_lower_ascii(t);
}

// A reply fixture value: string, or array indexed by repeat.
std::optional<std::string> pick_reply(const json& v, std::size_t repeat) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array() && !v.empty()) return v[std::min(repeat, v.size() - 1)].get<std::string>();
  return std::nullopt;
}

std::optional<std::string> pick_reply(const json& v, const ChatRequest& req) {
  if (v.is_object()) {
    const auto it = v.find(to_string(req.kind));
    if (it == v.end()) return std::nullopt;
    return pick_reply(*it, req.repeat);
  }
  return pick_reply(v, req.repeat);
}

}  // namespace

std::string to_string(TemplateKind t) {
  switch (t) {
    case TemplateKind::summarize: return "summarize";
    case TemplateKind::tasks: return "tasks";
    case TemplateKind::linguistic: return "linguistic";
  }
  return "?";
}

TemplateKind parse_template_kind(std::string_view name) {
  if (name == "summarize") return TemplateKind::summarize;
  if (name == "tasks") return TemplateKind::tasks;
  if (name == "linguistic") return TemplateKind::linguistic;
  throw ValidationError("unknown template '" + std::string(name) + "'");
}

const std::string& template_text(TemplateKind t) {
  switch (t) {
    case TemplateKind::summarize: return kSummarizeTemplate;
    case TemplateKind::tasks: return kTasksTemplate;
    case TemplateKind::linguistic: return kLinguisticTemplate;
  }
  throw ValidationError("unknown template");
}

std::vector<ChatMessage> build_messages(TemplateKind t, std::string_view payload) {
  std::vector<ChatMessage> msgs;
  std::istringstream in(template_text(t));
  std::string line;
  static const std::pair<const char*, const char*> kRoles[] = {
      {"System: ", "system"}, {"User: ", "user"}, {"Agent: ", "assistant"}};
  while (std::getline(in, line)) {
    bool started = false;
    for (const auto& [prefix, role] : kRoles) {
      if (line.rfind(prefix, 0) == 0) {
        msgs.push_back({role, line.substr(std::string_view(prefix).size())});
        started = true;
        break;
      }
    }
    if (!started) {
      if (msgs.empty()) throw FormatError("template does not start with a role");
      msgs.back().content += "\n" + line;
    }
  }
  for (auto& m : msgs) {
    while (!m.content.empty() && (m.content.back() == '\n' || m.content.back() == ' ')) m.content.pop_back();
  }
  if (msgs.empty() || msgs.back().role != "user") throw FormatError("template must end with a user turn");
  msgs.back().content += " " + std::string(payload);
  return msgs;
}

std::string words_payload(const std::vector<std::string>& words) {
  if (words.empty()) throw ValidationError("summarize_concept: empty word list");
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ", ";
    out += words[i];
  }
  return out + ".";
}

std::string request_json(const ChatRequest& request) {
  ordered_json j;
  j["model"] = request.model;
  auto msgs = ordered_json::array();
  for (const auto& m : request.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  j["messages"] = msgs;
  j["temperature"] = request.temperature;
  j["top_p"] = request.top_p;
  return j.dump();
}

std::string request_hash(const ChatRequest& request) { return sha256_hex(request_json(request)); }

// ---- HTTP backend -----------------------------------------------------------

HttpChatBackend::HttpChatBackend(std::string endpoint_url, std::string api_key, std::chrono::seconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  const auto scheme_end = endpoint_url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint URL needs a scheme: " + endpoint_url);
  const auto path_begin = endpoint_url.find('/', scheme_end + 3);
  scheme_host_ = endpoint_url.substr(0, path_begin);
  path_ = path_begin == std::string::npos ? "/" : endpoint_url.substr(path_begin);
}

std::string HttpChatBackend::complete(const ChatRequest& request) {
  httplib::Client client(scheme_host_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto res = client.Post(path_, headers, request_json(request), "application/json");
  if (!res) throw TransportError("chat request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw TransportError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
  }
  try {
    const json body = json::parse(res->body);
    return body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed chat response: ") + e.what());
  }
}

// ---- mock backend -----------------------------------------------------------

struct MockChatBackend::Impl {
  json fixture;
};

MockChatBackend::MockChatBackend(std::string_view fixture_json) {
  auto impl = std::make_shared<Impl>();
  try {
    impl->fixture = json::parse(fixture_json);
  } catch (const json::exception& e) {
    throw FormatError(std::string("mock fixture: ") + e.what());
  }
  if (!impl->fixture.is_object()) throw FormatError("mock fixture must be a JSON object");
  impl_ = std::move(impl);
}

MockChatBackend MockChatBackend::from_file(const std::filesystem::path& path) {
  return MockChatBackend(read_file(path));
}

std::string MockChatBackend::complete(const ChatRequest& request) {
  const json& f = impl_->fixture;
  if (const auto it = f.find("by_hash"); it != f.end()) {
    if (const auto h = it->find(request_hash(request)); h != it->end()) {
      if (auto r = pick_reply(*h, request)) return *r;
    }
  }
  if (const auto it = f.find("by_payload"); it != f.end()) {
    if (const auto p = it->find(request.payload); p != it->end()) {
      if (auto r = pick_reply(*p, request)) return *r;
    }
  }
  if (const auto it = f.find("default"); it != f.end()) {
    if (auto r = pick_reply(*it, request)) return *r;
  }
  throw TransportError("mock backend has no reply for " + to_string(request.kind) + " request '" +
                       request.payload + "'");
}

// ---- audit log ----------------------------------------------------------------

AuditLog::AuditLog(const std::filesystem::path& path) : out_(&file_) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  file_.open(path, std::ios::binary | std::ios::app);
  if (!file_) throw Error("cannot open audit log " + path.string());
}

AuditLog::AuditLog(std::ostream& out) : out_(&out) {}

void AuditLog::record(const ChatRequest& request, std::size_t attempt, const std::string* response,
                      const std::string* error) {
  ordered_json j;
  j["template"] = to_string(request.kind);
  j["payload"] = request.payload;
  j["repeat"] = request.repeat;
  j["attempt"] = attempt;
  j["request"] = ordered_json::parse(request_json(request));
  j["response"] = response ? ordered_json(*response) : ordered_json(nullptr);
  if (error) j["error"] = *error;
  const std::string line = j.dump() + "\n";
  std::lock_guard lock(mutex_);
  *out_ << line;
  out_->flush();
}

// ---- parsing ------------------------------------------------------------------

bool is_failed_description(std::string_view description) {
  return to_lower_ascii(description).find("cannot tell") != std::string::npos;
}

TaskClassification parse_tasks(std::string_view reply) {
  static const std::map<std::string, std::string> kLabels{
      {"daily writing", "writing"},   {"literary writing", "writing"},
      {"professional writing", "writing"}, {"solving math problems", "math"},
      {"coding", "coding"},           {"translation", "translation"}};
  TaskClassification out;
  std::set<std::string> found;
  std::string_view rest = reply;
  while (true) {
    const auto semi = rest.find(';');
    const std::string label = normalize_label(rest.substr(0, semi));
    if (!label.empty()) {
      if (label == "none") {
        out.none = true;
      } else if (const auto it = kLabels.find(label); it != kLabels.end()) {
        found.insert(it->second);
      } else {
        out.unparsed.push_back(trim(rest.substr(0, semi)));
      }
    }
    if (semi == std::string_view::npos) break;
    rest = rest.substr(semi + 1);
  }
  for (const auto& s : scenario_categories()) {
    if (found.count(s)) out.scenarios.push_back(s);
  }
  return out;
}

std::optional<std::string> parse_linguistic(std::string_view reply) {
  const std::string label = normalize_label(reply);
  for (const auto& c : linguistic_categories()) {
    if (label == c) return c;
  }
  return std::nullopt;
}

RepeatAnnotation interpret_raw(std::size_t repeat, std::string description, std::string raw_tasks,
                               std::string raw_linguistic) {
  RepeatAnnotation a;
  a.repeat = repeat;
  a.description = std::move(description);
  a.failed = is_failed_description(a.description);
  if (a.failed) return a;
  a.raw_tasks = std::move(raw_tasks);
  a.raw_linguistic = std::move(raw_linguistic);
  auto tasks = parse_tasks(a.raw_tasks);
  a.scenarios = std::move(tasks.scenarios);
  a.none = tasks.none;
  a.unparsed_tasks = std::move(tasks.unparsed);
  a.linguistic = parse_linguistic(a.raw_linguistic);
  return a;
}

// ---- annotator ----------------------------------------------------------------

Annotator::Annotator(ChatBackend& backend, AnnotatorConfig config, AuditLog* audit)
    : backend_(backend), config_(std::move(config)), audit_(audit) {
  if (config_.summarize_temperatures.empty()) throw ValidationError("annotator: empty temperature schedule");
  if (config_.retry.attempts == 0) throw ValidationError("annotator: at least one attempt required");
}

std::string Annotator::send(TemplateKind kind, std::string payload, double temperature, std::size_t repeat) {
  ChatRequest req;
  req.model = config_.model;
  req.messages = build_messages(kind, payload);
  req.temperature = temperature;
  req.top_p = config_.top_p;
  req.kind = kind;
  req.payload = std::move(payload);
  req.repeat = repeat;
  auto delay = config_.retry.initial_delay;
  for (std::size_t attempt = 1;; ++attempt) {
    try {
      std::string reply = backend_.complete(req);
      if (audit_) audit_->record(req, attempt, &reply, nullptr);
      return reply;
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (audit_) audit_->record(req, attempt, nullptr, &msg);
      if (attempt >= config_.retry.attempts) {
        throw TransportError("giving up after " + std::to_string(attempt) + " attempts: " + msg);
      }
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

std::string Annotator::summarize_concept(const std::vector<std::string>& words, std::size_t repeat) {
  const auto& sched = config_.summarize_temperatures;
  const double t = sched[std::min(repeat, sched.size() - 1)];
  return trim(send(TemplateKind::summarize, words_payload(words), t, repeat));
}

std::string Annotator::classify_tasks_raw(const std::string& description, std::size_t repeat) {
  return send(TemplateKind::tasks, description, config_.classify_temperature, repeat);
}

std::string Annotator::classify_linguistic_raw(const std::string& description, std::size_t repeat) {
  return send(TemplateKind::linguistic, description, config_.classify_temperature, repeat);
}

RepeatAnnotation Annotator::annotate_once(const std::vector<std::string>& words, std::size_t repeat) {
  std::string description = summarize_concept(words, repeat);
  if (is_failed_description(description)) return interpret_raw(repeat, std::move(description), {}, {});
  std::string tasks = classify_tasks_raw(description, repeat);
  std::string level = classify_linguistic_raw(description, repeat);
  return interpret_raw(repeat, std::move(description), std::move(tasks), std::move(level));
}

std::vector<ConceptAnnotation> Annotator::annotate(const std::vector<ConceptRef>& concepts) {
  const std::size_t R = config_.repeats;
  std::vector<ConceptAnnotation> out(concepts.size());
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    out[i].layer = concepts[i].layer;
    out[i].rank = concepts[i].rank;
    out[i].words = concepts[i].words;
    out[i].repeats.resize(R);
  }
  parallel_for(concepts.size() * R, config_.max_concurrency, [&](std::size_t job) {
    const std::size_t c = job / R, r = job % R;
    out[c].repeats[r] = annotate_once(concepts[c].words, r);
  });
  std::stable_sort(out.begin(), out.end(), [](const ConceptAnnotation& a, const ConceptAnnotation& b) {
    return std::tie(a.layer, a.rank) < std::tie(b.layer, b.rank);
  });
  return out;
}

// ---- annotation files -----------------------------------------------------------

std::string annotations_jsonl(const std::vector<ConceptAnnotation>& annotations) {
  std::string out;
  for (const auto& c : annotations) {
    for (const auto& r : c.repeats) {
      ordered_json j;
      j["layer"] = c.layer;
      j["rank"] = c.rank;
      j["repeat"] = r.repeat;
      j["words"] = c.words;
      j["description"] = r.description;
      j["failed"] = r.failed;
      j["scenarios"] = r.scenarios;
      j["none"] = r.none;
      j["unparsed_tasks"] = r.unparsed_tasks;
      j["linguistic"] = r.linguistic ? ordered_json(*r.linguistic) : ordered_json(nullptr);
      j["raw_tasks"] = r.raw_tasks;
      j["raw_linguistic"] = r.raw_linguistic;
      out += j.dump() + "\n";
    }
  }
  return out;
}

std::vector<ConceptAnnotation> parse_annotations(std::istream& in) {
  std::map<std::pair<std::size_t, std::size_t>, ConceptAnnotation> by_component;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const auto key = std::make_pair(j.at("layer").get<std::size_t>(), j.at("rank").get<std::size_t>());
      auto& c = by_component[key];
      c.layer = key.first;
      c.rank = key.second;
      c.words = j.value("words", std::vector<std::string>{});
      // Parsed fields are rebuilt from the raw replies.
      c.repeats.push_back(interpret_raw(j.at("repeat").get<std::size_t>(), j.at("description").get<std::string>(),
                                        j.value("raw_tasks", std::string()),
                                        j.value("raw_linguistic", std::string())));
    } catch (const json::exception& e) {
      throw FormatError("annotations line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<ConceptAnnotation> out;
  for (auto& [key, c] : by_component) {
    std::sort(c.repeats.begin(), c.repeats.end(),
              [](const RepeatAnnotation& a, const RepeatAnnotation& b) { return a.repeat < b.repeat; });
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ConceptAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open annotation file " + path.string());
  return parse_annotations(in);
}

// ---- aggregation ----------------------------------------------------------------

namespace {

struct RepeatPercentages {
  std::map<std::string, std::vector<double>> scenario, linguistic;
  std::vector<double> interpretability;
};

RepeatPercentages repeat_percentages(const std::vector<ConceptAnnotation>& annotations, const char* side) {
  std::set<std::size_t> repeat_ids;
  for (const auto& c : annotations)
    for (const auto& r : c.repeats) repeat_ids.insert(r.repeat);

  RepeatPercentages out;
  for (std::size_t rep : repeat_ids) {
    std::size_t total = 0, ok = 0, parsed = 0;
    std::map<std::string, std::size_t> sc, ling;
    for (const auto& c : annotations) {
      for (const auto& r : c.repeats) {
        if (r.repeat != rep) continue;
        ++total;
        if (r.failed) continue;
        ++ok;
        for (const auto& s : r.scenarios) ++sc[s];
        if (r.none) ++sc["none"];
        if (r.linguistic) {
          ++parsed;
          ++ling[*r.linguistic];
        }
      }
    }
    out.interpretability.push_back(total ? 100.0 * static_cast<double>(ok) / static_cast<double>(total) : 0.0);
    if (ok == 0) {
      warn(std::string("aggregate_distribution: repeat ") + std::to_string(rep) + " of " + side +
           " has no interpretable concepts and is excluded");
      continue;
    }
    for (const auto& s : scenario_categories()) {
      out.scenario[s].push_back(100.0 * static_cast<double>(sc[s]) / static_cast<double>(ok));
    }
    if (parsed == 0) {
      warn(std::string("aggregate_distribution: repeat ") + std::to_string(rep) + " of " + side +
           " has no parsed linguistic levels and is excluded");
      continue;
    }
    for (const auto& l : linguistic_categories()) {
      out.linguistic[l].push_back(100.0 * static_cast<double>(ling[l]) / static_cast<double>(parsed));
    }
  }
  return out;
}

std::set<std::pair<std::size_t, std::size_t>> component_keys(const std::vector<ConceptAnnotation>& v) {
  std::set<std::pair<std::size_t, std::size_t>> keys;
  for (const auto& c : v) keys.emplace(c.layer, c.rank);
  return keys;
}

CategoryRow make_row(std::string group, std::string category, std::vector<double> a, std::vector<double> b) {
  CategoryRow row;
  row.group = std::move(group);
  row.category = std::move(category);
  row.percent_a = std::move(a);
  row.percent_b = std::move(b);
  row.mean_a = mean(row.percent_a);
  row.sd_a = sample_sd(row.percent_a);
  row.mean_b = mean(row.percent_b);
  row.sd_b = sample_sd(row.percent_b);
  if (row.percent_a.size() >= 2 && row.percent_b.size() >= 2) {
    row.p_value = group_compare(row.percent_a, row.percent_b, Alternative::two_sided).p_value;
  }
  return row;
}

}  // namespace

DistributionReport aggregate_distribution(const std::vector<ConceptAnnotation>& a,
                                          const std::vector<ConceptAnnotation>& b) {
  if (component_keys(a) != component_keys(b)) {
    throw ValidationError("aggregate_distribution: the two annotation sets cover different components");
  }
  const auto pa = repeat_percentages(a, "bundle A");
  const auto pb = repeat_percentages(b, "bundle B");
  if (pa.interpretability.size() < 2 || pb.interpretability.size() < 2) {
    throw ValidationError("aggregate_distribution: at least two repeats are required");
  }
  DistributionReport rep;
  auto get = [](const std::map<std::string, std::vector<double>>& m, const std::string& k) {
    const auto it = m.find(k);
    return it == m.end() ? std::vector<double>{} : it->second;
  };
  for (const auto& s : scenario_categories()) rep.rows.push_back(make_row("scenario", s, get(pa.scenario, s), get(pb.scenario, s)));
  for (const auto& l : linguistic_categories()) {
    rep.rows.push_back(make_row("linguistic", l, get(pa.linguistic, l), get(pb.linguistic, l)));
  }
  rep.interpretability_a = pa.interpretability;
  rep.interpretability_b = pb.interpretability;
  return rep;
}

}  // namespace alignlens
