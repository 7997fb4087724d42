#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "divgen/baselines.hpp"
#include "divgen/dpp.hpp"
#include "divgen/engine.hpp"
#include "divgen/metrics.hpp"
#include "divgen/mock_provider.hpp"
#include "divgen/run_io.hpp"
#include "divgen/text.hpp"

namespace py = pybind11;
using namespace divgen;

namespace {

KernelConfig make_kernel_config(double w_rbf, double w_lex, double bandwidth, double jitter) {
  KernelConfig config;
  config.w_rbf = w_rbf;
  config.w_lex = w_lex;
  config.rbf_bandwidth = bandwidth;
  config.jitter = jitter;
  config.validate();
  return config;
}

std::vector<DataInstance> make_instances(const Eigen::MatrixXd& embeddings,
                                         const std::vector<std::vector<std::string>>& token_sets) {
  if (embeddings.rows() != static_cast<Eigen::Index>(token_sets.size()))
    throw std::invalid_argument("embeddings rows must match token_sets length");
  std::vector<DataInstance> items(token_sets.size());
  for (std::size_t i = 0; i < token_sets.size(); ++i) {
    items[i].id = "x" + std::to_string(i);
    items[i].embedding = Embedding::normalized(embeddings.row(static_cast<Eigen::Index>(i)));
    items[i].tokens = TokenSet(token_sets[i].begin(), token_sets[i].end());
  }
  return items;
}

py::dict report_to_dict(const DiversityReport& report, RunStatus status, double tau0,
                        int iterations) {
  py::dict d;
  d["n"] = report.n;
  d["lexical_mean"] = report.lexical.mean;
  d["lexical_stddev"] = report.lexical.stddev;
  d["cosine_mean"] = report.cosine.mean;
  d["cosine_stddev"] = report.cosine.stddev;
  d["vendi"] = report.vendi;
  d["effective_rank_approx"] = report.effective_rank.value;
  d["llm_calls"] = report.llm_calls.generation_class();
  d["status"] = status_name(status);
  d["tau0"] = tau0;
  d["iterations"] = iterations;
  return d;
}

py::dict run_result_to_dict(const RunResult& result) {
  py::list rows;
  for (const auto& item : result.dataset) {
    py::dict row;
    row["id"] = item.id;
    row["text"] = item.text;
    row["explorer_id"] = item.explorer_id;
    row["iteration"] = item.iteration;
    row["marginal_gain"] = item.marginal_gain;
    rows.append(std::move(row));
  }
  py::dict out;
  out["dataset"] = std::move(rows);
  out["report"] = report_to_dict(result.report, result.status, result.tau0,
                                 result.iterations_used);
  out["rejection_trace"] = result.rejection_trace;
  return out;
}

AppConfig config_from_json_text(const std::string& config_json) {
  return parse_config(config_json.empty() ? "{}" : config_json);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DPP-based diverse synthetic dataset generation core";

  m.def(
      "tokenize",
      [](const std::string& text, std::optional<std::vector<std::string>> stopwords) {
        const StopwordSet words = stopwords
                                      ? StopwordSet(stopwords->begin(), stopwords->end())
                                      : default_stopwords();
        const TokenSet tokens = tokenize(text, words);
        return std::vector<std::string>(tokens.begin(), tokens.end());
      },
      py::arg("text"), py::arg("stopwords") = std::nullopt,
      "Lowercased word tokens with stop words removed");

  m.def("jaccard_similarity", [](const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
    return jaccard_similarity(TokenSet(a.begin(), a.end()), TokenSet(b.begin(), b.end()));
  });

  m.def(
      "rbf_similarity",
      [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, double bandwidth) {
        return rbf_similarity(Embedding::normalized(a), Embedding::normalized(b), bandwidth);
      },
      py::arg("a"), py::arg("b"), py::arg("bandwidth"),
      "RBF similarity of two embeddings (unit-normalized first)");

  m.def(
      "build_kernel",
      [](const Eigen::MatrixXd& embeddings,
         const std::vector<std::vector<std::string>>& token_sets, double w_rbf, double w_lex,
         double bandwidth, double jitter) -> Eigen::MatrixXd {
        const auto items = make_instances(embeddings, token_sets);
        return SimilarityMatrix::build(items, make_kernel_config(w_rbf, w_lex, bandwidth, jitter))
            .matrix();
      },
      py::arg("embeddings"), py::arg("token_sets"), py::arg("w_rbf") = 0.7,
      py::arg("w_lex") = 0.3, py::arg("bandwidth") = 1.0, py::arg("jitter") = 1e-8,
      "Combined RBF + Jaccard similarity matrix (rows of `embeddings` are items)");

  m.def("log_det", [](const Eigen::MatrixXd& m_) { return log_det(m_); });
  m.def("vendi_score", [](const Eigen::MatrixXd& m_) { return vendi_score(m_); });
  m.def("effective_rank_approx", [](const Eigen::MatrixXd& m_) {
    const EffectiveRankApprox approx = effective_rank_approx(m_);
    return py::make_tuple(approx.value, approx.degenerate);
  });

  m.def(
      "sample_k_dpp",
      [](const Eigen::MatrixXd& kernel, int k, std::uint64_t seed) {
        const DppSample sample = sample_k_dpp(kernel, k, seed);
        return py::make_tuple(sample.indices, sample.fallback);
      },
      py::arg("kernel"), py::arg("k"), py::arg("seed"),
      "Exact k-DPP sample -> (indices, used_greedy_fallback)");

  m.def("brute_force_k_dpp_probs", [](const Eigen::MatrixXd& kernel, int k) {
    py::dict out;
    for (const auto& [subset, prob] : brute_force_k_dpp_probs(kernel, k))
      out[py::tuple(py::cast(subset))] = prob;
    return out;
  });

  m.def("greedy_map_select", [](const Eigen::MatrixXd& kernel, int k) {
    return greedy_map_select(kernel, k).indices;
  });

  m.def(
      "sequential_gains",
      [](const Eigen::MatrixXd& embeddings,
         const std::vector<std::vector<std::string>>& token_sets, double w_rbf, double w_lex,
         double bandwidth, double jitter) {
        const auto items = make_instances(embeddings, token_sets);
        AnchorState anchor(make_kernel_config(w_rbf, w_lex, bandwidth, jitter));
        std::vector<double> gains;
        for (const auto& item : items) {
          gains.push_back(anchor.marginal_gain(item));
          anchor = anchor.extended(item);
        }
        return gains;
      },
      py::arg("embeddings"), py::arg("token_sets"), py::arg("w_rbf") = 0.7,
      py::arg("w_lex") = 0.3, py::arg("bandwidth") = 1.0, py::arg("jitter") = 1e-8,
      "Marginal volume gain of each item against the anchor of all previous items");

  m.def(
      "run_generation",
      [](const std::string& config_json) {
        AppConfig config = config_from_json_text(config_json);
        auto provider = std::make_shared<MockProvider>(config.mock_world);
        Gateway gateway(provider, config.provider);
        Engine engine(config.engine, gateway);
        return run_result_to_dict(engine.run());
      },
      py::arg("config_json") = "{}",
      "Run the full generation loop against the offline mock provider");

  m.def(
      "run_baseline",
      [](const std::string& kind, const std::string& config_json) {
        AppConfig config = config_from_json_text(config_json);
        config.baseline.kind = kind;
        auto provider = std::make_shared<MockProvider>(config.mock_world);
        Gateway gateway(provider, config.provider);
        return run_result_to_dict(run_baseline(config.baseline, config.engine, gateway));
      },
      py::arg("kind"), py::arg("config_json") = "{}",
      "Run a comparison generator against the offline mock provider");
}
