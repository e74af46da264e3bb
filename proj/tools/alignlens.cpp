#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "alignlens/annotator.hpp"
#include "alignlens/attention.hpp"
#include "alignlens/attribution.hpp"
#include "alignlens/checkpoint.hpp"
#include "alignlens/error.hpp"
#include "alignlens/ffn.hpp"
#include "alignlens/fixture.hpp"
#include "alignlens/io.hpp"
#include "alignlens/parallel.hpp"
#include "alignlens/report.hpp"
#include "alignlens/runtime.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace alignlens;

namespace {

constexpr const char* kApiKeyEnv = "ALIGNLENS_API_KEY";

void emit(const std::string& out, const std::string& bytes) {
  if (out.empty() || out == "-") {
    std::cout << bytes;
    std::cout.flush();
  } else {
    write_file(out, bytes);
  }
}

std::optional<AttributionMethod> method_option(const std::string& name) {
  if (name == "auto") return std::nullopt;
  return parse_attribution_method(name);
}

std::string json_scalar_arg(const ordered_json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw ValidationError("config: unsupported value " + v.dump());
}

// Turns config entries into arguments placed before the command-line ones,
// so that flags given explicitly take precedence.
std::vector<std::string> config_args(const fs::path& path, CLI::App& sub) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_file(path));
  } catch (const ordered_json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("config " + path.string() + ": expected an object");

  std::vector<std::string> args;
  auto add = [&](std::string key, const ordered_json& v, bool strict) {
    for (char& c : key)
      if (c == '_') c = '-';
    if (key == "config") return;
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) {
      if (strict) throw ValidationError("config: unknown option '" + key + "' for " + sub.get_name());
      return;
    }
    if (opt->get_type_size() == 0) {
      if (!v.is_boolean()) throw ValidationError("config: '" + key + "' expects true or false");
      if (v.get<bool>()) args.push_back("--" + key);
      return;
    }
    if (v.is_array()) {
      args.push_back("--" + key);
      for (const auto& e : v) args.push_back(json_scalar_arg(e));
    } else {
      args.push_back("--" + key);
      args.push_back(json_scalar_arg(v));
    }
  };
  for (const auto& [key, v] : j.items()) {
    if (v.is_object()) continue;
    add(key, v, false);
  }
  if (j.contains(sub.get_name())) {
    const auto& own = j.at(sub.get_name());
    if (!own.is_object()) throw FormatError("config: section '" + sub.get_name() + "' must be an object");
    for (const auto& [key, v] : own.items()) add(key, v, true);
  }
  return args;
}

void write_glove(const EmbeddingTable& table, const fs::path& path) {
  std::ostringstream os;
  char buf[32];
  for (const auto& word : table.frequency_order()) {
    os << word;
    const auto vec = *table.find(word);
    for (float x : vec) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
      os << buf;
    }
    os << '\n';
  }
  write_file(path, os.str());
}

void write_words(const std::vector<std::string>& words, const fs::path& path) {
  std::string s;
  for (const auto& w : words) s += w + '\n';
  write_file(path, s);
}

std::vector<std::string> optional_word_list(const std::string& path) {
  return path.empty() ? std::vector<std::string>{} : load_word_list(path);
}

void emit_report(const DiffReport& report, const std::string& out, const std::string& tsv) {
  emit(out, report.to_json());
  if (!tsv.empty()) write_file(tsv, report.to_tsv());
}

std::vector<ConceptRef> load_concepts(const fs::path& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_file(path));
  } catch (const ordered_json::parse_error& e) {
    throw FormatError("concepts " + path.string() + ": " + e.what());
  }
  std::vector<ConceptRef> out;
  try {
    for (const auto& layer : j.at("layers")) {
      const std::size_t l = layer.at("layer").get<std::size_t>();
      for (const auto& c : layer.at("components")) {
        ConceptRef ref;
        ref.layer = l;
        ref.rank = c.at("rank").get<std::size_t>();
        for (const auto& w : c.at("words")) ref.words.push_back(w.at("word").get<std::string>());
        out.push_back(std::move(ref));
      }
    }
  } catch (const ordered_json::exception& e) {
    throw FormatError("concepts " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-level comparison of pre-trained and instruction-tuned language models", "alignlens"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;
  std::size_t workers = 1;
  std::string out, tsv;
  auto common = [&](CLI::App* sub, bool with_tsv) {
    sub->add_option("--config", config_path, "JSON file of option defaults")->check(CLI::ExistingFile);
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::Range(1, 1024));
    sub->add_option("-o,--out", out, "Output path ('-' for stdout)");
    if (with_tsv) sub->add_option("--tsv", tsv, "Also write the report as TSV");
  };

  const std::map<std::string, Activation> activations{
      {"relu", Activation::relu}, {"gelu", Activation::gelu}, {"silu", Activation::silu}};
  const std::map<std::string, NormKind> norms{{"layernorm", NormKind::layernorm}, {"rmsnorm", NormKind::rmsnorm}};
  const std::vector<std::string> method_names{"auto", "occlusion", "gradient"};

  // make-fixture
  FixtureSpec spec;
  bool planted = false;
  auto* fixture = app.add_subcommand("make-fixture", "Write a seeded synthetic bundle");
  common(fixture, false);
  fixture->add_option("--seed", spec.seed, "Random seed");
  fixture->add_option("--layers", spec.n_layers)->check(CLI::PositiveNumber);
  fixture->add_option("--heads", spec.n_heads)->check(CLI::PositiveNumber);
  fixture->add_option("--d-model", spec.d_model)->check(CLI::PositiveNumber);
  fixture->add_option("--d-head", spec.d_head)->check(CLI::PositiveNumber);
  fixture->add_option("--d-ffn", spec.d_ffn)->check(CLI::PositiveNumber);
  fixture->add_option("--activation", spec.activation)->transform(CLI::CheckedTransformer(activations));
  fixture->add_option("--norm", spec.norm_kind)->transform(CLI::CheckedTransformer(norms));
  fixture->add_option("--norm-eps", spec.norm_eps)->check(CLI::PositiveNumber);
  fixture->add_option("--embed-scale", spec.embed_scale)->check(CLI::PositiveNumber);
  fixture->add_option("--weight-scale", spec.weight_scale)->check(CLI::NonNegativeNumber);
  fixture->add_flag("--planted", planted,
                    "Write a pre-trained/tuned pair with a planted attention head, GloVe table and verb lists");

  // attribute
  std::string bundle_dir, prompt, response, prompt_file, response_file, method = "auto", gradient_target = "probability";
  int levels = 10, threshold_render = 0, threshold_density = 7;
  std::size_t generate = 0;
  auto* attribute = app.add_subcommand("attribute", "Salient map of one prompt-response pair");
  common(attribute, true);
  attribute->add_option("--bundle", bundle_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  auto* p_text = attribute->add_option("--prompt", prompt, "Prompt text");
  auto* p_file = attribute->add_option("--prompt-file", prompt_file)->check(CLI::ExistingFile);
  p_text->excludes(p_file);
  auto* r_text = attribute->add_option("--response", response, "Response text");
  auto* r_file = attribute->add_option("--response-file", response_file)->check(CLI::ExistingFile);
  auto* r_gen = attribute->add_option("--generate", generate, "Greedily generate this many response tokens");
  r_text->excludes(r_file)->excludes(r_gen);
  r_file->excludes(r_gen);
  attribute->add_option("-L,--levels", levels, "Quantization levels")->check(CLI::PositiveNumber);
  attribute->add_option("-b,--threshold", threshold_render, "Levels at or below this are zeroed")
      ->check(CLI::NonNegativeNumber);
  attribute->add_option("--method", method)->check(CLI::IsMember(method_names));
  attribute->add_option("--gradient-target", gradient_target)->check(CLI::IsMember({"probability", "logit"}));

  // density-report
  std::string bundle_a, bundle_b, instances_path;
  double p_norm = 4.0;
  std::size_t min_response_len = 5;
  auto* density_cmd = app.add_subcommand("density-report", "Importance density on instruction words");
  common(density_cmd, true);
  density_cmd->add_option("--bundle-a", bundle_a, "Pre-trained bundle")->required()->check(CLI::ExistingDirectory);
  density_cmd->add_option("--bundle-b", bundle_b, "Tuned bundle")->required()->check(CLI::ExistingDirectory);
  density_cmd->add_option("--instances", instances_path, "Annotated instances (JSON lines)")
      ->required()
      ->check(CLI::ExistingFile);
  density_cmd->add_option("-L,--levels", levels)->check(CLI::PositiveNumber);
  density_cmd->add_option("-b,--threshold", threshold_density)->check(CLI::NonNegativeNumber);
  density_cmd->add_option("-p,--p-norm", p_norm)->check(CLI::PositiveNumber);
  density_cmd->add_option("--min-response-len", min_response_len);
  density_cmd->add_option("--method", method)->check(CLI::IsMember(method_names));

  // attn-pairs / attn-diff
  std::string glove_path, reference_words_path, instruction_verbs_path, general_verbs_path;
  std::size_t k_words = 100, top_n = 100, reference_count = 1000, intersection_band = 4, verb_band = 8;
  std::optional<std::size_t> only_layer;
  auto attention_options = [&](CLI::App* sub) {
    sub->add_option("--glove", glove_path, "Word-embedding table")->required()->check(CLI::ExistingFile);
    sub->add_option("-K,--top-k", k_words, "Words per neuron list")->check(CLI::PositiveNumber);
    sub->add_option("--top-n", top_n, "Pairs kept per head")->check(CLI::PositiveNumber);
    sub->add_option("--reference-count", reference_count, "Most frequent GloVe words used for thresholds")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 30));
    sub->add_option("--reference-words", reference_words_path, "Explicit reference word list")
        ->check(CLI::ExistingFile);
  };
  auto* pairs_cmd = app.add_subcommand("attn-pairs", "Word-word pairs per attention head");
  common(pairs_cmd, false);
  pairs_cmd->add_option("--bundle", bundle_dir)->required()->check(CLI::ExistingDirectory);
  attention_options(pairs_cmd);
  pairs_cmd->add_option("--layer", only_layer, "Restrict to one layer (0-based)");

  auto* attn_diff = app.add_subcommand("attn-diff", "Compare attention-head pair patterns");
  common(attn_diff, true);
  attn_diff->add_option("--bundle-a", bundle_a)->required()->check(CLI::ExistingDirectory);
  attn_diff->add_option("--bundle-b", bundle_b)->required()->check(CLI::ExistingDirectory);
  attention_options(attn_diff);
  attn_diff->add_option("--instruction-verbs", instruction_verbs_path)->required()->check(CLI::ExistingFile);
  attn_diff->add_option("--general-verbs", general_verbs_path)->required()->check(CLI::ExistingFile);
  attn_diff->add_option("--intersection-band", intersection_band)->check(CLI::PositiveNumber);
  attn_diff->add_option("--verb-band", verb_band)->check(CLI::PositiveNumber);

  // ffn-concepts / ffn-diff
  std::size_t rank_r = 300, k_concept = 15, layer_band = 4;
  std::string vocab_filter;
  bool negated = false;
  auto* concepts_cmd = app.add_subcommand("ffn-concepts", "Principal components of FFN value projections");
  common(concepts_cmd, false);
  concepts_cmd->add_option("--bundle", bundle_dir)->required()->check(CLI::ExistingDirectory);
  concepts_cmd->add_option("-R,--rank", rank_r, "Components per layer")->check(CLI::PositiveNumber);
  concepts_cmd->add_option("-k,--words", k_concept, "Words per component")->check(CLI::PositiveNumber);
  concepts_cmd->add_option("--vocab-filter", vocab_filter, "Restrict candidate words to this list")
      ->check(CLI::ExistingFile);
  concepts_cmd->add_flag("--negated", negated, "Also list words for the negated directions");

  std::string annotations_a, annotations_b;
  auto* ffn_diff = app.add_subcommand("ffn-diff", "Compare annotated FFN concepts");
  common(ffn_diff, true);
  ffn_diff->add_option("--bundle-a", bundle_a)->required()->check(CLI::ExistingDirectory);
  ffn_diff->add_option("--bundle-b", bundle_b)->required()->check(CLI::ExistingDirectory);
  ffn_diff->add_option("--annotations-a", annotations_a)->required()->check(CLI::ExistingFile);
  ffn_diff->add_option("--annotations-b", annotations_b)->required()->check(CLI::ExistingFile);
  ffn_diff->add_option("-R,--rank", rank_r)->check(CLI::PositiveNumber);
  ffn_diff->add_option("-k,--words", k_concept)->check(CLI::PositiveNumber);
  ffn_diff->add_option("--layer-band", layer_band)->check(CLI::PositiveNumber);

  // annotate
  AnnotatorConfig ann;
  std::string concepts_path, mock_path, endpoint, audit_path;
  std::size_t retry_delay_ms = 500;
  auto* annotate = app.add_subcommand("annotate", "Describe and classify concepts with a chat model");
  common(annotate, false);
  annotate->add_option("--concepts", concepts_path, "ffn-concepts output")->required()->check(CLI::ExistingFile);
  auto* mock_opt = annotate->add_option("--mock", mock_path, "Replay replies from a JSON fixture")
                       ->check(CLI::ExistingFile);
  auto* endpoint_opt = annotate->add_option("--endpoint", endpoint, "Chat-completion URL");
  mock_opt->excludes(endpoint_opt);
  annotate->add_option("--model", ann.model);
  annotate->add_option("--repeats", ann.repeats)->check(CLI::PositiveNumber);
  annotate->add_option("--summarize-temperatures", ann.summarize_temperatures, "Per repeat; the last one repeats")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->expected(1, 64);
  annotate->add_option("--classify-temperature", ann.classify_temperature);
  annotate->add_option("--top-p", ann.top_p);
  annotate->add_option("--max-concurrency", ann.max_concurrency)->check(CLI::PositiveNumber);
  annotate->add_option("--retries", ann.retry.attempts, "Attempts per request")->check(CLI::PositiveNumber);
  annotate->add_option("--retry-delay-ms", retry_delay_ms);
  annotate->add_option("--audit-log", audit_path, "Append one JSON line per request attempt");

  // render
  std::string map_path, format_name;
  std::size_t cell = 12;
  auto* render = app.add_subcommand("render", "Draw a salient map as PPM or SVG");
  common(render, false);
  render->add_option("--map", map_path, "Salient map JSON from 'attribute'")->required()->check(CLI::ExistingFile);
  render->add_option("--format", format_name, "ppm or svg (default: from the output extension)")
      ->check(CLI::IsMember({"ppm", "svg"}));
  render->add_option("-L,--levels", levels)->check(CLI::PositiveNumber);
  render->add_option("-b,--threshold", threshold_render)->check(CLI::NonNegativeNumber);
  render->add_option("--cell", cell, "Cell size in pixels")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    // Config values go right after the subcommand name so later flags win.
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] != "--config" && args[i].rfind("--config=", 0) != 0) continue;
      const std::string path = args[i] == "--config" ? args[i + 1] : args[i].substr(9);
      CLI::App* sub = args.empty() ? nullptr : app.get_subcommand_no_throw(args[0]);
      if (!sub) break;
      auto extra = config_args(path, *sub);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
      break;
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*fixture) {
      if (out.empty() || out == "-") throw ValidationError("make-fixture needs --out DIR");
      if (planted) {
        const auto fx = make_planted_attention_fixture(spec.seed);
        save_bundle(fx.pretrained, fs::path(out) / "pretrained");
        save_bundle(fx.tuned, fs::path(out) / "tuned");
        write_glove(fx.glove, fs::path(out) / "glove.txt");
        write_words(fx.instruction_verbs, fs::path(out) / "instruction_verbs.txt");
        write_words(fx.control_verbs, fs::path(out) / "general_verbs.txt");
      } else {
        save_bundle(make_random_bundle(spec), out);
      }
    } else if (*attribute) {
      const auto bundle = load_bundle_dir(bundle_dir);
      if (!prompt_file.empty()) prompt = read_file(prompt_file);
      if (!response_file.empty()) response = read_file(response_file);
      if (prompt.empty()) throw ValidationError("attribute needs --prompt or --prompt-file");
      const auto prompt_ids = tokenize(bundle.vocabulary, prompt);
      const auto response_ids =
          generate ? generate_greedy(bundle, prompt_ids, generate) : tokenize(bundle.vocabulary, response);
      if (response_ids.empty()) throw ValidationError("attribute needs a nonempty response");
      ImportanceOptions opt;
      opt.workers = workers;
      opt.gradient_target = gradient_target == "logit" ? GradientTarget::logit : GradientTarget::probability;
      const auto m = method_option(method).value_or(
          default_attribution_method(prompt_ids.size(), response_ids.size()));
      const auto map = compute_salient_map(bundle, prompt_ids, response_ids, m, levels, threshold_render, opt);
      emit(out, salient_map_json(map, bundle.vocabulary));
      if (!tsv.empty()) write_file(tsv, salient_map_tsv(map));
    } else if (*density_cmd) {
      const auto a = load_bundle_dir(bundle_a);
      const auto b = load_bundle_dir(bundle_b);
      DensityParams params;
      params.level_count = levels;
      params.threshold_b = threshold_density;
      params.p_norm = p_norm;
      params.min_response_len = min_response_len;
      params.method = method_option(method);
      params.workers = workers;
      emit_report(run_density_report(a, b, load_instances(instances_path), params), out, tsv);
    } else if (*pairs_cmd) {
      const auto bundle = load_bundle_dir(bundle_dir);
      const auto glove = load_glove(glove_path);
      const auto thresholds = reference_words_path.empty()
                                  ? ThresholdTable(glove, reference_count)
                                  : ThresholdTable(glove, load_word_list(reference_words_path));
      AttentionOptions opt;
      opt.k = k_words;
      opt.top_n = top_n;
      opt.workers = workers;
      ordered_json arr = ordered_json::array();
      if (only_layer) {
        if (*only_layer >= bundle.config.n_layers) throw RangeError("--layer out of range");
        std::vector<HeadPairProfile> heads(bundle.config.n_heads);
        parallel_for(heads.size(), workers, [&](std::size_t h) {
          heads[h] = head_profile(bundle, *only_layer, h, thresholds, k_words, top_n);
        });
        for (const auto& h : heads) arr.push_back(ordered_json::parse(profile_json(h)));
      } else {
        for (const auto& h : all_head_profiles(bundle, thresholds, opt).heads)
          arr.push_back(ordered_json::parse(profile_json(h)));
      }
      ordered_json j;
      j["bundle"] = bundle_digest(bundle);
      j["k"] = k_words;
      j["top_n"] = top_n;
      j["heads"] = arr;
      emit(out, j.dump(1) + "\n");
    } else if (*attn_diff) {
      const auto a = load_bundle_dir(bundle_a);
      const auto b = load_bundle_dir(bundle_b);
      AttentionDiffParams params;
      params.k = k_words;
      params.top_n = top_n;
      params.reference_count = reference_count;
      params.reference_words = optional_word_list(reference_words_path);
      params.intersection_band = intersection_band;
      params.verb_band = verb_band;
      params.workers = workers;
      emit_report(run_attention_diff(a, b, load_glove(glove_path), load_word_list(instruction_verbs_path),
                                     load_word_list(general_verbs_path), params),
                  out, tsv);
    } else if (*concepts_cmd) {
      const auto bundle = load_bundle_dir(bundle_dir);
      const auto candidates = vocab_filter.empty() ? full_projection_vocab(bundle)
                                                   : filtered_projection_vocab(bundle, load_word_list(vocab_filter));
      const auto pcas = all_layer_pca(bundle, workers);
      std::vector<std::string> layers(pcas.size());
      parallel_for(pcas.size(), workers, [&](std::size_t l) {
        layers[l] = components_json(l, layer_components(pcas[l], candidates, rank_r, k_concept, negated));
      });
      ordered_json j;
      j["bundle"] = bundle_digest(bundle);
      j["rank"] = rank_r;
      j["words"] = k_concept;
      auto arr = ordered_json::array();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        auto layer = ordered_json::parse(layers[l]);
        layer["cumulative_variance"] = pcas[l].curve.cumulative;
        arr.push_back(std::move(layer));
      }
      j["layers"] = arr;
      emit(out, j.dump(1) + "\n");
    } else if (*ffn_diff) {
      const auto a = load_bundle_dir(bundle_a);
      const auto b = load_bundle_dir(bundle_b);
      FfnDiffParams params;
      params.rank_r = rank_r;
      params.top_k_words = k_concept;
      params.layer_band = layer_band;
      params.workers = workers;
      emit_report(run_ffn_diff(a, b, load_annotations(annotations_a), load_annotations(annotations_b), params), out,
                  tsv);
    } else if (*annotate) {
      std::unique_ptr<ChatBackend> backend;
      if (!mock_path.empty()) {
        backend = std::make_unique<MockChatBackend>(MockChatBackend::from_file(mock_path));
      } else {
        if (endpoint.empty()) throw ValidationError("annotate needs --mock or --endpoint");
        const char* key = std::getenv(kApiKeyEnv);
        if (!key || !*key) throw ValidationError(std::string("annotate --endpoint needs ") + kApiKeyEnv);
        backend = std::make_unique<HttpChatBackend>(endpoint, key);
      }
      ann.retry.initial_delay = std::chrono::milliseconds(retry_delay_ms);
      std::unique_ptr<AuditLog> audit;
      if (!audit_path.empty()) audit = std::make_unique<AuditLog>(fs::path(audit_path));
      Annotator annotator(*backend, ann, audit.get());
      emit(out, annotations_jsonl(annotator.annotate(load_concepts(concepts_path))));
    } else if (*render) {
      if (out.empty() || out == "-") throw ValidationError("render needs --out PATH");
      auto file = parse_salient_map_json(read_file(map_path));
      file.map.normalized = normalize_map(file.map.importance, levels, threshold_render);
      file.map.level_count = levels;
      file.map.threshold_b = threshold_render;
      ImageFormat format = ImageFormat::svg;
      if (!format_name.empty()) {
        format = parse_image_format(format_name);
      } else if (fs::path(out).extension() == ".ppm") {
        format = ImageFormat::ppm;
      }
      render_heatmap(file.map, file.prompt_tokens, file.response_tokens, out, format, cell);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
