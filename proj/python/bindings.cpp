#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "alignlens/attention.hpp"
#include "alignlens/attribution.hpp"
#include "alignlens/checkpoint.hpp"
#include "alignlens/error.hpp"
#include "alignlens/ffn.hpp"
#include "alignlens/fixture.hpp"
#include "alignlens/report.hpp"
#include "alignlens/stats.hpp"

namespace py = pybind11;
using namespace alignlens;

namespace {

template <typename T>
py::array_t<T> to_array(const BasicMatrix<T>& m) {
  py::array_t<T> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

MatrixD from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  MatrixD m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Alternative parse_alternative(const std::string& s) {
  if (s == "greater") return Alternative::greater;
  if (s == "less") return Alternative::less;
  if (s == "two-sided" || s == "two_sided") return Alternative::two_sided;
  throw ValidationError("unknown alternative '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_alignlens, m) {
  m.doc() = "Native core of alignlens";
  m.attr("__version__") = tool_version();

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<TransportError>(m, "TransportError", base.ptr());

  py::class_<ModelBundle>(m, "Bundle")
      .def_property_readonly("n_layers", [](const ModelBundle& b) { return b.config.n_layers; })
      .def_property_readonly("n_heads", [](const ModelBundle& b) { return b.config.n_heads; })
      .def_property_readonly("d_model", [](const ModelBundle& b) { return b.config.d_model; })
      .def_property_readonly("d_head", [](const ModelBundle& b) { return b.config.d_head; })
      .def_property_readonly("d_ffn", [](const ModelBundle& b) { return b.config.d_ffn; })
      .def_property_readonly("tokens", [](const ModelBundle& b) { return b.vocabulary.tokens(); })
      .def_property_readonly("input_embeddings", [](const ModelBundle& b) { return to_array(b.input_embeddings); })
      .def_property_readonly("output_embeddings", [](const ModelBundle& b) { return to_array(b.output_embeddings); })
      .def("digest", &bundle_digest)
      .def("tokenize", [](const ModelBundle& b, const std::string& text) { return tokenize(b.vocabulary, text); })
      .def("detokenize", [](const ModelBundle& b, const std::vector<TokenId>& ids) {
        return detokenize(b.vocabulary, ids);
      })
      .def("save", [](const ModelBundle& b, const std::filesystem::path& dir) { save_bundle(b, dir); });

  m.def("load_bundle", &load_bundle_dir, py::arg("directory"));
  m.def(
      "make_fixture",
      [](std::uint64_t seed, std::size_t n_layers, std::size_t n_heads, std::size_t d_model, std::size_t d_head,
         std::size_t d_ffn, double norm_eps, double embed_scale) {
        FixtureSpec spec;
        spec.seed = seed;
        spec.n_layers = n_layers;
        spec.n_heads = n_heads;
        spec.d_model = d_model;
        spec.d_head = d_head;
        spec.d_ffn = d_ffn;
        spec.norm_eps = norm_eps;
        spec.embed_scale = embed_scale;
        return make_random_bundle(spec);
      },
      py::arg("seed") = 1, py::arg("n_layers") = 2, py::arg("n_heads") = 2, py::arg("d_model") = 16,
      py::arg("d_head") = 8, py::arg("d_ffn") = 32, py::arg("norm_eps") = 1e-5, py::arg("embed_scale") = 1.0);

  m.def("next_token_prob",
        [](const ModelBundle& b, const std::vector<TokenId>& context, TokenId target) {
          return next_token_prob(b, context, target);
        },
        py::arg("bundle"), py::arg("context"), py::arg("target"));

  m.def(
      "importance_matrix",
      [](const ModelBundle& b, const std::vector<TokenId>& prompt, const std::vector<TokenId>& response,
         const std::string& method, std::size_t workers) {
        ImportanceOptions opt;
        opt.workers = workers;
        const auto mth = method == "auto" ? default_attribution_method(prompt.size(), response.size())
                                          : parse_attribution_method(method);
        MatrixD imp;
        {
          py::gil_scoped_release release;
          imp = importance_matrix(b, prompt, response, mth, opt);
        }
        return to_array(imp);
      },
      py::arg("bundle"), py::arg("prompt"), py::arg("response"), py::arg("method") = "auto", py::arg("workers") = 1);

  m.def(
      "normalize_map",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& imp, int levels, int threshold) {
        return to_array(normalize_map(from_array(imp), levels, threshold));
      },
      py::arg("importance"), py::arg("levels") = 10, py::arg("threshold") = 0);

  m.def(
      "density", [](const std::vector<double>& row, double p_norm) { return density(std::span<const double>(row), p_norm); },
      py::arg("row"), py::arg("p_norm") = 4.0);

  m.def(
      "segment_profile",
      [](const std::vector<double>& densities, const std::vector<std::pair<std::size_t, std::size_t>>& sentences) {
        return segment_profile(densities, sentences).shares;
      },
      py::arg("densities"), py::arg("sentences"));

  m.def(
      "group_compare",
      [](const std::vector<double>& a, const std::vector<double>& b, const std::string& alternative) {
        const auto g = group_compare(a, b, parse_alternative(alternative));
        py::dict d;
        d["mean_a"] = g.mean_a;
        d["sd_a"] = g.sd_a;
        d["mean_b"] = g.mean_b;
        d["sd_b"] = g.sd_b;
        d["t"] = g.t;
        d["df"] = g.df;
        d["p_value"] = g.p_value;
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("alternative") = "greater");

  m.def("relation_score", &relation_score, py::arg("bundle"), py::arg("layer"), py::arg("head"), py::arg("word_a"),
        py::arg("word_b"));

  m.def(
      "intersection_rate",
      [](const std::vector<std::pair<std::string, std::string>>& a,
         const std::vector<std::pair<std::string, std::string>>& b) {
        auto conv = [](const auto& v) {
          std::vector<WordPair> out;
          for (const auto& [q, k] : v) out.push_back({q, k});
          return out;
        };
        return intersection_rate(conv(a), conv(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "ffn_pca",
      [](const ModelBundle& b, std::size_t layer) {
        const auto pca = ffn_pca(b, layer);
        return py::make_tuple(pca.eigenvalues, to_array(pca.directions), pca.curve.cumulative);
      },
      py::arg("bundle"), py::arg("layer"));

  m.def(
      "density_report_json",
      [](const ModelBundle& a, const ModelBundle& b, const std::filesystem::path& instances, int levels,
         int threshold, double p_norm, std::size_t min_response_len, std::size_t workers) {
        DensityParams p;
        p.level_count = levels;
        p.threshold_b = threshold;
        p.p_norm = p_norm;
        p.min_response_len = min_response_len;
        p.workers = workers;
        const auto inst = load_instances(instances);
        py::gil_scoped_release release;
        return run_density_report(a, b, inst, p).to_json();
      },
      py::arg("bundle_a"), py::arg("bundle_b"), py::arg("instances"), py::arg("levels") = 10,
      py::arg("threshold") = 7, py::arg("p_norm") = 4.0, py::arg("min_response_len") = 5, py::arg("workers") = 1);

  m.def(
      "attention_diff_json",
      [](const ModelBundle& a, const ModelBundle& b, const std::filesystem::path& glove,
         const std::vector<std::string>& instruction_verbs, const std::vector<std::string>& general_verbs,
         std::size_t k, std::size_t top_n, std::size_t reference_count, std::size_t workers) {
        AttentionDiffParams p;
        p.k = k;
        p.top_n = top_n;
        p.reference_count = reference_count;
        p.workers = workers;
        const auto table = load_glove(glove);
        py::gil_scoped_release release;
        return run_attention_diff(a, b, table, instruction_verbs, general_verbs, p).to_json();
      },
      py::arg("bundle_a"), py::arg("bundle_b"), py::arg("glove"), py::arg("instruction_verbs"),
      py::arg("general_verbs"), py::arg("k") = 100, py::arg("top_n") = 100, py::arg("reference_count") = 1000,
      py::arg("workers") = 1);

  m.def(
      "ffn_diff_json",
      [](const ModelBundle& a, const ModelBundle& b, const std::filesystem::path& annotations_a,
         const std::filesystem::path& annotations_b, std::size_t rank, std::size_t words, std::size_t workers) {
        FfnDiffParams p;
        p.rank_r = rank;
        p.top_k_words = words;
        p.workers = workers;
        const auto aa = load_annotations(annotations_a);
        const auto ab = load_annotations(annotations_b);
        py::gil_scoped_release release;
        return run_ffn_diff(a, b, aa, ab, p).to_json();
      },
      py::arg("bundle_a"), py::arg("bundle_b"), py::arg("annotations_a"), py::arg("annotations_b"),
      py::arg("rank") = 300, py::arg("words") = 15, py::arg("workers") = 1);
}
