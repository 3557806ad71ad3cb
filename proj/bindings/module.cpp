// Apache License, Version 2.0, refer to LICENSE.txt
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "treehmm/em.hpp"
#include "treehmm/hdp.hpp"
#include "treehmm/inference.hpp"
#include "treehmm/params.hpp"
#include "treehmm/tree.hpp"
#include "treehmm/version.hpp"

namespace py = pybind11;
using namespace treehmm;

namespace {

std::vector<std::vector<double>> matrix_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows(m.rows(), std::vector<double>(m.cols()));
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
  }
  return rows;
}

py::dict posteriors_dict(const Posteriors& post) {
  py::dict d;
  d["log_likelihood"] = post.log_likelihood;
  d["node_marginal"] = post.node_marginal;
  if (!post.td_pair.empty()) {
    std::vector<std::vector<std::vector<double>>> pairs;
    for (const auto& m : post.td_pair) pairs.push_back(matrix_rows(m));
    d["td_pair"] = pairs;
  }
  if (!post.bu_triple.empty()) {
    std::vector<std::vector<std::vector<std::vector<double>>>> triples;
    for (const auto& per_node : post.bu_triple) {
      std::vector<std::vector<std::vector<double>>> per_slot;
      for (const auto& m : per_node) per_slot.push_back(matrix_rows(m));
      triples.push_back(std::move(per_slot));
    }
    d["bu_triple"] = triples;
  }
  return d;
}

py::dict trace_dict(const EmTrace& trace) {
  py::dict d;
  d["log_likelihood"] = trace.log_likelihood;
  d["iterations"] = trace.iterations;
  d["converged"] = trace.converged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_treehmm_core, m) {
  m.doc() = "Hidden tree Markov models over labeled positional trees";
  m.attr("__version__") = kVersion;

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<LabeledTree>(m, "LabeledTree")
      .def("node_count", &LabeledTree::node_count)
      .def("label", &LabeledTree::label, py::arg("u"))
      .def("parent", &LabeledTree::parent, py::arg("u"))
      .def("is_leaf", &LabeledTree::is_leaf, py::arg("u"))
      .def("children",
           [](const LabeledTree& t, int u) {
             return std::vector<int>(t.slots(u).begin(), t.slots(u).end());
           },
           py::arg("u"), "Child index per slot, 0 marks an empty slot")
      .def("out_degree", &LabeledTree::out_degree)
      .def("__str__", [](const LabeledTree& t) { return serialize_tree(t); })
      .def("__repr__",
           [](const LabeledTree& t) { return "LabeledTree(\"" + serialize_tree(t) + "\")"; });

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](std::vector<LabeledTree> trees, int alphabet_size, int max_outdegree) {
             Dataset ds;
             ds.trees = std::move(trees);
             ds.alphabet_size = alphabet_size;
             ds.max_outdegree = max_outdegree;
             for (const auto& t : ds.trees) validate_tree(t, alphabet_size, max_outdegree);
             return ds;
           }),
           py::arg("trees"), py::arg("alphabet_size"), py::arg("max_outdegree"))
      .def_readonly("trees", &Dataset::trees)
      .def_readonly("alphabet_size", &Dataset::alphabet_size)
      .def_readonly("max_outdegree", &Dataset::max_outdegree)
      .def("total_nodes", &Dataset::total_nodes)
      .def("__len__", [](const Dataset& ds) { return ds.trees.size(); });

  m.def("parse_tree", &parse_tree, py::arg("text"), py::arg("alphabet_size"),
        py::arg("max_outdegree"));
  m.def("serialize_tree", &serialize_tree, py::arg("tree"));
  m.def("load_dataset", &load_dataset, py::arg("path"), py::arg("alphabet_size"),
        py::arg("max_outdegree"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def(
      "random_skeleton",
      [](std::uint64_t seed, int max_nodes, int max_outdegree, double child_prob) {
        Rng rng = make_rng(seed);
        return random_skeleton(rng, max_nodes, max_outdegree, child_prob);
      },
      py::arg("seed"), py::arg("max_nodes"), py::arg("max_outdegree"),
      py::arg("child_prob") = 0.5);

  py::class_<TdParams>(m, "TdParams")
      .def_readonly("state_count", &TdParams::state_count)
      .def_readonly("alphabet_size", &TdParams::alphabet_size)
      .def_readonly("root_prior", &TdParams::root_prior)
      .def_property_readonly("transition",
                             [](const TdParams& p) { return matrix_rows(p.transition); })
      .def_property_readonly("emission",
                             [](const TdParams& p) { return matrix_rows(p.emission); })
      .def("validate", &TdParams::validate);

  py::class_<BuParams>(m, "BuParams")
      .def_readonly("state_count", &BuParams::state_count)
      .def_readonly("alphabet_size", &BuParams::alphabet_size)
      .def_readonly("max_outdegree", &BuParams::max_outdegree)
      .def_readonly("leaf_prior", &BuParams::leaf_prior)
      .def_readonly("switch_weights", &BuParams::switch_weights)
      .def_property_readonly("transition",
                             [](const BuParams& p) {
                               std::vector<std::vector<std::vector<double>>> out;
                               for (const auto& t : p.transition) out.push_back(matrix_rows(t));
                               return out;
                             })
      .def_property_readonly("emission",
                             [](const BuParams& p) { return matrix_rows(p.emission); })
      .def("validate", &BuParams::validate);

  m.def("init_random_td", &init_random_td, py::arg("state_count"), py::arg("alphabet_size"),
        py::arg("seed"), py::arg("concentration") = 1.0);
  m.def("init_random_bu", &init_random_bu, py::arg("state_count"), py::arg("alphabet_size"),
        py::arg("max_outdegree"), py::arg("seed"), py::arg("concentration") = 1.0);
  m.def("save_model", [](const TdParams& p, const std::string& path) {
    save_model(ModelParams(p), path);
  });
  m.def("save_model", [](const BuParams& p, const std::string& path) {
    save_model(ModelParams(p), path);
  });
  m.def("load_model", [](const std::string& path) -> py::object {
    ModelParams p = load_model(path);
    if (kind_of(p) == ModelKind::Td) return py::cast(std::get<TdParams>(p));
    return py::cast(std::get<BuParams>(p));
  });

  m.def("complete_log_prob_td", &complete_log_prob_td, py::arg("params"), py::arg("tree"),
        py::arg("states"));
  m.def("complete_log_prob_bu", &complete_log_prob_bu, py::arg("params"), py::arg("tree"),
        py::arg("states"), py::arg("switches"));

  m.def("log_likelihood",
        [](const TdParams& p, const LabeledTree& t) { return upward_td(p, t).log_likelihood; });
  m.def("log_likelihood",
        [](const BuParams& p, const LabeledTree& t) { return upward_bu(p, t).log_likelihood; });
  m.def("infer",
        [](const TdParams& p, const LabeledTree& t) { return posteriors_dict(infer_td(p, t)); });
  m.def("infer",
        [](const BuParams& p, const LabeledTree& t) { return posteriors_dict(infer_bu(p, t)); });
  m.def("brute_force", [](const TdParams& p, const LabeledTree& t) {
    return posteriors_dict(brute_force(ModelParams(p), t));
  });
  m.def("brute_force", [](const BuParams& p, const LabeledTree& t) {
    return posteriors_dict(brute_force(ModelParams(p), t));
  });

  m.def("score_dataset", [](const TdParams& p, const Dataset& ds, int threads) {
          ScoreReport r = score_dataset(ModelParams(p), ds, threads);
          py::dict d;
          d["total_log_likelihood"] = r.total_log_likelihood;
          d["per_tree"] = r.per_tree;
          d["node_count"] = r.node_count;
          d["perplexity"] = r.perplexity ? py::cast(*r.perplexity) : py::none();
          return d;
        },
        py::arg("params"), py::arg("dataset"), py::arg("threads") = 1);
  m.def("score_dataset", [](const BuParams& p, const Dataset& ds, int threads) {
          ScoreReport r = score_dataset(ModelParams(p), ds, threads);
          py::dict d;
          d["total_log_likelihood"] = r.total_log_likelihood;
          d["per_tree"] = r.per_tree;
          d["node_count"] = r.node_count;
          d["perplexity"] = r.perplexity ? py::cast(*r.perplexity) : py::none();
          return d;
        },
        py::arg("params"), py::arg("dataset"), py::arg("threads") = 1);

  py::class_<EmConfig>(m, "EmConfig")
      .def(py::init<>())
      .def_readwrite("max_iters", &EmConfig::max_iters)
      .def_readwrite("rel_tol", &EmConfig::rel_tol)
      .def_readwrite("smoothing", &EmConfig::smoothing)
      .def_readwrite("seed", &EmConfig::seed)
      .def_readwrite("init_concentration", &EmConfig::init_concentration)
      .def_readwrite("restarts", &EmConfig::restarts)
      .def_readwrite("threads", &EmConfig::threads);

  m.def("fit_td", [](const Dataset& ds, int states, const EmConfig& cfg) {
    auto [params, trace] = fit_td(ds, states, cfg);
    return py::make_tuple(params, trace_dict(trace));
  });
  m.def("fit_bu", [](const Dataset& ds, int states, const EmConfig& cfg) {
    auto [params, trace] = fit_bu(ds, states, cfg);
    return py::make_tuple(params, trace_dict(trace));
  });

  m.def("sample_trees",
        [](const TdParams& p, const std::vector<LabeledTree>& skeletons, std::uint64_t seed) {
          Rng rng = make_rng(seed);
          std::vector<LabeledTree> out;
          for (const auto& s : skeletons) out.push_back(sample_tree(p, s, rng));
          return out;
        },
        py::arg("params"), py::arg("skeletons"), py::arg("seed"));
  m.def("sample_trees",
        [](const BuParams& p, const std::vector<LabeledTree>& skeletons, std::uint64_t seed) {
          Rng rng = make_rng(seed);
          std::vector<LabeledTree> out;
          for (const auto& s : skeletons) out.push_back(sample_tree(p, s, rng));
          return out;
        },
        py::arg("params"), py::arg("skeletons"), py::arg("seed"));

  py::class_<HdpHypers>(m, "HdpHypers")
      .def(py::init(&HdpHypers::defaults), py::arg("max_outdegree"))
      .def_readwrite("top_concentration", &HdpHypers::top_concentration)
      .def_readwrite("position_concentration", &HdpHypers::position_concentration)
      .def_readwrite("transition_concentration", &HdpHypers::transition_concentration)
      .def_readwrite("switch_concentration", &HdpHypers::switch_concentration)
      .def_readwrite("emission_base", &HdpHypers::emission_base)
      .def_readwrite("truncation", &HdpHypers::truncation);

  py::class_<GibbsSample>(m, "GibbsSample")
      .def_readonly("sweep", &GibbsSample::sweep)
      .def_readonly("params", &GibbsSample::params)
      .def_readonly("beta", &GibbsSample::beta)
      .def_readonly("state_histogram", &GibbsSample::state_histogram)
      .def_readonly("active_states", &GibbsSample::active_states);

  m.def("run_chain",
        [](const Dataset& ds, const HdpHypers& hypers, int sweeps, int burn_in, int thin,
           std::uint64_t seed) {
          ChainResult r = run_chain(ds, hypers, sweeps, burn_in, thin, seed);
          std::vector<py::dict> diagnostics;
          for (const auto& d : r.diagnostics) {
            py::dict row;
            row["sweep"] = d.sweep;
            row["joint_log_prob"] = d.joint_log_prob;
            row["active_states"] = d.active_states;
            diagnostics.push_back(std::move(row));
          }
          return py::make_tuple(r.samples, diagnostics);
        },
        py::arg("dataset"), py::arg("hypers"), py::arg("sweeps"), py::arg("burn_in"),
        py::arg("thin"), py::arg("seed"));
  m.def("predictive_score", &predictive_score, py::arg("samples"), py::arg("tree"));
}
