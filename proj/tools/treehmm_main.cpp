// Apache License, Version 2.0, refer to LICENSE.txt
//
// Command-line front end: train, score, sample, gibbs, validate.
// Every artifact is written together with a metadata JSON carrying the
// tool version, the full configuration and the seed, so a run can be
// reproduced from its outputs alone. Exit codes: 0 success, 1 user or
// configuration error, 2 numerical or internal error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "treehmm/em.hpp"
#include "treehmm/errors.hpp"
#include "treehmm/hdp.hpp"
#include "treehmm/inference.hpp"
#include "treehmm/parallel.hpp"
#include "treehmm/params.hpp"
#include "treehmm/tree.hpp"
#include "treehmm/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace treehmm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path.string());
  out << content;
  if (!out) throw InputError("failed writing file: " + path.string());
}

json base_metadata(const std::string& command, std::uint64_t seed) {
  json meta;
  meta["tool"] = "treehmm";
  meta["version"] = kVersion;
  meta["command"] = command;
  meta["seed"] = seed;
  return meta;
}

// Values from --config serve as defaults for flags not given explicitly.
// The file is a flat JSON object keyed by long flag names.
json load_config_object(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw InputError("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!cfg.is_object()) throw InputError("config file must hold a JSON object");
  return cfg;
}

struct ConfigMerge {
  const CLI::App* cmd;
  json cfg;

  template <typename T>
  void fill(const std::string& flag, T& var) const {
    if (cmd->count("--" + flag) > 0 || !cfg.contains(flag)) return;
    try {
      var = cfg.at(flag).get<T>();
    } catch (const json::exception&) {
      throw InputError("config value for '" + flag + "' has the wrong type");
    }
  }
};

template <typename T>
void fill_optional(const ConfigMerge& merge, const std::string& flag, std::optional<T>& var) {
  if (merge.cmd->count("--" + flag) > 0 || var.has_value()) return;
  if (merge.cfg.contains(flag)) {
    try {
      var = merge.cfg.at(flag).get<T>();
    } catch (const json::exception&) {
      throw InputError("config value for '" + flag + "' has the wrong type");
    }
  }
}

template <typename T>
T required_value(const std::optional<T>& var, const std::string& flag) {
  if (!var.has_value()) throw InputError("missing required flag --" + flag);
  return *var;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> data;
  std::optional<std::string> kind;
  std::optional<int> states;
  std::optional<int> alphabet;
  std::optional<int> degree;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  int max_iters = 100;
  double tol = 1e-6;
  double smoothing = 1e-6;
  double init_concentration = 1.0;
  int restarts = 1;
};

int run_train(const TrainArgs& a) {
  ModelKind kind = model_kind_from_string(required_value(a.kind, "kind"));
  Dataset data = load_dataset(required_value(a.data, "data"), required_value(a.alphabet, "alphabet"),
                              required_value(a.degree, "degree"));
  EmConfig cfg;
  cfg.max_iters = a.max_iters;
  cfg.rel_tol = a.tol;
  cfg.smoothing = a.smoothing;
  cfg.seed = a.seed;
  cfg.init_concentration = a.init_concentration;
  cfg.restarts = a.restarts;
  cfg.threads = a.threads;
  cfg.validate();

  auto [params, trace] = fit(kind, data, required_value(a.states, "states"), cfg);

  fs::path dir(a.out_dir);
  fs::create_directories(dir);
  save_model(params, (dir / "model.json").string());
  write_text_file(dir / "trace.csv", trace_to_csv(trace));

  json meta = base_metadata("train", a.seed);
  meta["config"] = {{"data", *a.data},
                    {"kind", *a.kind},
                    {"states", *a.states},
                    {"alphabet", *a.alphabet},
                    {"degree", *a.degree},
                    {"max_iters", a.max_iters},
                    {"tol", a.tol},
                    {"smoothing", a.smoothing},
                    {"init_concentration", a.init_concentration},
                    {"restarts", a.restarts},
                    {"threads", a.threads}};
  meta["final_log_likelihood"] = trace.log_likelihood.back();
  meta["iterations"] = trace.iterations;
  meta["converged"] = trace.converged;
  meta["trees"] = data.trees.size();
  meta["nodes"] = data.total_nodes();
  write_text_file(dir / "metadata.json", meta.dump(2) + "\n");
  return kExitOk;
}

// --- score ----------------------------------------------------------------

struct ScoreArgs {
  std::optional<std::string> model;
  std::optional<std::string> data;
  std::string out;
  int threads = 1;
};

int run_score(const ScoreArgs& a) {
  ModelParams model = load_model(required_value(a.model, "model"));
  int alphabet = kind_of(model) == ModelKind::Td ? std::get<TdParams>(model).alphabet_size
                                                 : std::get<BuParams>(model).alphabet_size;
  // The TD factorization has no positional bound, so any out-degree loads.
  int degree = kind_of(model) == ModelKind::Td ? 1 << 20
                                               : std::get<BuParams>(model).max_outdegree;
  Dataset data = load_dataset(required_value(a.data, "data"), alphabet, degree);
  if (data.trees.empty()) throw InputError("dataset has no trees to score");

  ScoreReport report = score_dataset(model, data, a.threads);
  std::string text = score_report_text(report);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(a.out, text);
    json meta;
    meta["tool"] = "treehmm";
    meta["version"] = kVersion;
    meta["command"] = "score";
    meta["seed"] = nullptr;  // scoring is deterministic
    meta["config"] = {{"model", *a.model}, {"data", *a.data}, {"threads", a.threads}};
    write_text_file(a.out + ".meta.json", meta.dump(2) + "\n");
  }
  return kExitOk;
}

// --- sample ---------------------------------------------------------------

struct SampleArgs {
  std::optional<std::string> model;
  std::optional<std::string> skeletons;
  std::string out;
  std::uint64_t seed = 0;
  int gen_trees = 0;
  int gen_max_nodes = 10;
  int gen_degree = 0;  // 0: use the model's L (TD defaults to 2)
  double gen_child_prob = 0.5;
};

int run_sample(const SampleArgs& a) {
  ModelParams model = load_model(required_value(a.model, "model"));
  const bool is_td = kind_of(model) == ModelKind::Td;
  int degree = is_td ? 1 << 20 : std::get<BuParams>(model).max_outdegree;

  Rng rng = make_rng(a.seed);
  std::vector<LabeledTree> skeletons;
  if (a.skeletons.has_value()) {
    // Labels in the skeleton file are ignored, so any alphabet passes.
    Dataset skel = load_dataset(*a.skeletons, 1 << 30, degree);
    skeletons = std::move(skel.trees);
  } else {
    if (a.gen_trees < 1)
      throw InputError("need --skeletons or --gen-trees to produce samples");
    int max_outdegree = a.gen_degree;
    if (max_outdegree == 0)
      max_outdegree = is_td ? 2 : std::get<BuParams>(model).max_outdegree;
    if (!is_td && max_outdegree > std::get<BuParams>(model).max_outdegree)
      throw InputError("--gen-degree exceeds the model's max out-degree");
    for (int i = 0; i < a.gen_trees; ++i)
      skeletons.push_back(random_skeleton(rng, a.gen_max_nodes, max_outdegree,
                                          a.gen_child_prob));
  }

  std::ostringstream out;
  for (const auto& skel : skeletons) {
    LabeledTree t = is_td ? sample_tree(std::get<TdParams>(model), skel, rng)
                          : sample_tree(std::get<BuParams>(model), skel, rng);
    out << serialize_tree(t) << '\n';
  }
  if (a.out.empty()) {
    std::cout << out.str();
  } else {
    write_text_file(a.out, out.str());
    json meta = base_metadata("sample", a.seed);
    meta["config"] = {{"model", *a.model},
                      {"skeletons", a.skeletons.value_or("")},
                      {"gen_trees", a.gen_trees},
                      {"gen_max_nodes", a.gen_max_nodes},
                      {"gen_degree", a.gen_degree},
                      {"gen_child_prob", a.gen_child_prob}};
    meta["trees"] = skeletons.size();
    write_text_file(fs::path(a.out).string() + ".meta.json", meta.dump(2) + "\n");
  }
  return kExitOk;
}

// --- gibbs ----------------------------------------------------------------

struct GibbsArgs {
  std::optional<std::string> data;
  std::optional<int> alphabet;
  std::optional<int> degree;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  double gamma = 4.0;
  double alpha_position = 1.0;
  double alpha_transition = 1.0;
  double alpha_switch = 1.0;
  double emission_base = 1.0;
  int truncation = 20;
  int sweeps = 1000;
  int burn_in = 500;
  int thin = 10;
  int chains = 1;
};

int run_gibbs(const GibbsArgs& a) {
  Dataset data = load_dataset(required_value(a.data, "data"), required_value(a.alphabet, "alphabet"),
                              required_value(a.degree, "degree"));
  if (data.trees.empty()) throw InputError("dataset has no trees");
  if (a.chains < 1) throw InputError("chains must be >= 1");
  if (a.burn_in < 0 || a.sweeps <= a.burn_in)
    throw InputError("need sweeps > burn_in >= 0");
  if (a.thin < 1) throw InputError("thin must be >= 1");

  HdpHypers hypers;
  hypers.top_concentration = a.gamma;
  hypers.position_concentration.assign(data.max_outdegree, a.alpha_position);
  hypers.transition_concentration = a.alpha_transition;
  hypers.switch_concentration = a.alpha_switch;
  hypers.emission_base = a.emission_base;
  hypers.truncation = a.truncation;
  hypers.validate(data.max_outdegree);

  fs::path dir(a.out_dir);
  fs::create_directories(dir);

  json meta = base_metadata("gibbs", a.seed);
  meta["config"] = {{"data", *a.data},          {"alphabet", *a.alphabet},
                    {"degree", *a.degree},      {"gamma", a.gamma},
                    {"alpha_position", a.alpha_position},
                    {"alpha_transition", a.alpha_transition},
                    {"alpha_switch", a.alpha_switch},
                    {"emission_base", a.emission_base},
                    {"truncation", a.truncation},
                    {"sweeps", a.sweeps},       {"burn_in", a.burn_in},
                    {"thin", a.thin},           {"chains", a.chains},
                    {"threads", a.threads}};
  meta["complete"] = false;
  write_text_file(dir / "metadata.json", meta.dump(2) + "\n");

  // Chains draw from independent derived streams; concurrency cannot
  // change any chain's output.
  std::vector<std::string> chain_errors(a.chains);
  parallel_blocks(a.chains, a.threads, [&](int c) {
    try {
      ChainResult result =
          run_chain(data, hypers, a.sweeps, a.burn_in, a.thin, derive_seed(a.seed, c));
      fs::path chain_dir = dir / ("chain_" + std::to_string(c));
      fs::create_directories(chain_dir);
      std::ostringstream samples;
      for (const auto& s : result.samples) samples << sample_to_json(s);
      write_text_file(chain_dir / "samples.jsonl", samples.str());
      write_text_file(chain_dir / "diagnostics.csv", diagnostics_to_csv(result.diagnostics));
    } catch (const std::exception& e) {
      chain_errors[c] = e.what();
    }
  });

  bool ok = true;
  json errors = json::array();
  for (int c = 0; c < a.chains; ++c) {
    if (!chain_errors[c].empty()) {
      ok = false;
      errors.push_back({{"chain", c}, {"error", chain_errors[c]}});
    }
  }
  meta["complete"] = ok;
  if (!ok) meta["chain_errors"] = errors;
  write_text_file(dir / "metadata.json", meta.dump(2) + "\n");
  if (!ok) throw NumericalError("one or more chains failed; see metadata.json");
  return kExitOk;
}

// --- validate ---------------------------------------------------------------

struct ValidateArgs {
  std::optional<std::string> data;
  std::optional<int> alphabet;
  std::optional<int> degree;
};

int run_validate(const ValidateArgs& a) {
  Dataset data = load_dataset(required_value(a.data, "data"), required_value(a.alphabet, "alphabet"),
                              required_value(a.degree, "degree"));
  int max_degree = 0;
  for (const auto& t : data.trees) max_degree = std::max(max_degree, t.out_degree());
  std::cout << "trees: " << data.trees.size() << "\n"
            << "nodes: " << data.total_nodes() << "\n"
            << "max_out_degree: " << max_degree << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden tree Markov models: EM training, scoring, sampling and "
               "nonparametric Gibbs inference for labeled positional trees"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path;
  app.add_option("--config", config_path, "JSON file with default flag values")
      ->expected(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Fit a finite model by EM");
  train->add_option("--data", train_args.data, "dataset file, one tree per line");
  train->add_option("--kind", train_args.kind, "model kind: td or bu");
  train->add_option("--states", train_args.states, "number of hidden states C");
  train->add_option("--alphabet", train_args.alphabet, "alphabet size M");
  train->add_option("--degree", train_args.degree, "max out-degree L");
  train->add_option("--out-dir,--out", train_args.out_dir, "output directory");
  train->add_option("--seed", train_args.seed, "random seed");
  train->add_option("--threads", train_args.threads, "worker threads for the E-step");
  train->add_option("--max-iters", train_args.max_iters, "EM iteration cap");
  train->add_option("--tol", train_args.tol, "relative improvement stopping threshold");
  train->add_option("--smoothing", train_args.smoothing, "additive pseudocount");
  train->add_option("--init-concentration", train_args.init_concentration,
                    "Dirichlet concentration for the random init");
  train->add_option("--restarts", train_args.restarts, "number of EM restarts");

  ScoreArgs score_args;
  CLI::App* score = app.add_subcommand("score", "Log-likelihood report for a dataset");
  score->add_option("--model", score_args.model, "model JSON file");
  score->add_option("--data", score_args.data, "dataset file");
  score->add_option("--out", score_args.out, "report file (default: stdout)");
  score->add_option("--threads", score_args.threads, "worker threads");

  SampleArgs sample_args;
  CLI::App* sample = app.add_subcommand("sample", "Draw labeled trees from a model");
  sample->add_option("--model", sample_args.model, "model JSON file");
  sample->add_option("--skeletons", sample_args.skeletons,
                     "tree file whose shapes are reused (labels ignored)");
  sample->add_option("--out", sample_args.out, "output file (default: stdout)");
  sample->add_option("--seed", sample_args.seed, "random seed");
  sample->add_option("--gen-trees", sample_args.gen_trees,
                     "number of random skeletons to generate");
  sample->add_option("--gen-max-nodes", sample_args.gen_max_nodes,
                     "node budget per generated skeleton");
  sample->add_option("--gen-degree", sample_args.gen_degree,
                     "skeleton out-degree (default: the model's L, 2 for td)");
  sample->add_option("--gen-child-prob", sample_args.gen_child_prob,
                     "slot occupancy probability for generated skeletons");

  GibbsArgs gibbs_args;
  CLI::App* gibbs = app.add_subcommand("gibbs", "Blocked Gibbs sampling for the "
                                                "infinite bottom-up model");
  gibbs->add_option("--data", gibbs_args.data, "dataset file");
  gibbs->add_option("--alphabet", gibbs_args.alphabet, "alphabet size M");
  gibbs->add_option("--degree", gibbs_args.degree, "max out-degree L");
  gibbs->add_option("--out-dir,--out", gibbs_args.out_dir, "output directory");
  gibbs->add_option("--seed", gibbs_args.seed, "random seed");
  gibbs->add_option("--threads", gibbs_args.threads, "concurrent chains");
  gibbs->add_option("--gamma", gibbs_args.gamma, "top-level concentration");
  gibbs->add_option("--alpha-position", gibbs_args.alpha_position,
                    "per-position concentration");
  gibbs->add_option("--alpha-transition", gibbs_args.alpha_transition,
                    "transition-level concentration");
  gibbs->add_option("--alpha-switch", gibbs_args.alpha_switch,
                    "switch Dirichlet concentration");
  gibbs->add_option("--emission-base", gibbs_args.emission_base,
                    "emission base measure concentration");
  gibbs->add_option("--truncation", gibbs_args.truncation, "weak-limit level K");
  gibbs->add_option("--sweeps", gibbs_args.sweeps, "total Gibbs sweeps per chain");
  gibbs->add_option("--burn-in", gibbs_args.burn_in, "sweeps discarded before sampling");
  gibbs->add_option("--thin", gibbs_args.thin, "keep every thin-th sweep");
  gibbs->add_option("--chains", gibbs_args.chains, "number of independent chains");

  ValidateArgs validate_args;
  CLI::App* validate = app.add_subcommand("validate", "Parse and validate a dataset");
  validate->add_option("--data", validate_args.data, "dataset file");
  validate->add_option("--alphabet", validate_args.alphabet, "alphabet size M");
  validate->add_option("--degree", validate_args.degree, "max out-degree L");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    json cfg = json::object();
    if (!config_path.empty()) cfg = load_config_object(config_path);

    if (train->parsed()) {
      ConfigMerge merge{train, cfg};
      fill_optional(merge, "data", train_args.data);
      fill_optional(merge, "kind", train_args.kind);
      fill_optional(merge, "states", train_args.states);
      fill_optional(merge, "alphabet", train_args.alphabet);
      fill_optional(merge, "degree", train_args.degree);
      merge.fill("out-dir", train_args.out_dir);
      merge.fill("seed", train_args.seed);
      merge.fill("threads", train_args.threads);
      merge.fill("max-iters", train_args.max_iters);
      merge.fill("tol", train_args.tol);
      merge.fill("smoothing", train_args.smoothing);
      merge.fill("init-concentration", train_args.init_concentration);
      merge.fill("restarts", train_args.restarts);
      return run_train(train_args);
    }
    if (score->parsed()) {
      ConfigMerge merge{score, cfg};
      fill_optional(merge, "model", score_args.model);
      fill_optional(merge, "data", score_args.data);
      merge.fill("out", score_args.out);
      merge.fill("threads", score_args.threads);
      return run_score(score_args);
    }
    if (sample->parsed()) {
      ConfigMerge merge{sample, cfg};
      fill_optional(merge, "model", sample_args.model);
      fill_optional(merge, "skeletons", sample_args.skeletons);
      merge.fill("out", sample_args.out);
      merge.fill("seed", sample_args.seed);
      merge.fill("gen-trees", sample_args.gen_trees);
      merge.fill("gen-max-nodes", sample_args.gen_max_nodes);
      merge.fill("gen-degree", sample_args.gen_degree);
      merge.fill("gen-child-prob", sample_args.gen_child_prob);
      return run_sample(sample_args);
    }
    if (gibbs->parsed()) {
      ConfigMerge merge{gibbs, cfg};
      fill_optional(merge, "data", gibbs_args.data);
      fill_optional(merge, "alphabet", gibbs_args.alphabet);
      fill_optional(merge, "degree", gibbs_args.degree);
      merge.fill("out-dir", gibbs_args.out_dir);
      merge.fill("seed", gibbs_args.seed);
      merge.fill("threads", gibbs_args.threads);
      merge.fill("gamma", gibbs_args.gamma);
      merge.fill("alpha-position", gibbs_args.alpha_position);
      merge.fill("alpha-transition", gibbs_args.alpha_transition);
      merge.fill("alpha-switch", gibbs_args.alpha_switch);
      merge.fill("emission-base", gibbs_args.emission_base);
      merge.fill("truncation", gibbs_args.truncation);
      merge.fill("sweeps", gibbs_args.sweeps);
      merge.fill("burn-in", gibbs_args.burn_in);
      merge.fill("thin", gibbs_args.thin);
      merge.fill("chains", gibbs_args.chains);
      return run_gibbs(gibbs_args);
    }
    if (validate->parsed()) {
      ConfigMerge merge{validate, cfg};
      fill_optional(merge, "data", validate_args.data);
      fill_optional(merge, "alphabet", validate_args.alphabet);
      fill_optional(merge, "degree", validate_args.degree);
      return run_validate(validate_args);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}
