// SPDX-License-Identifier: Apache-2.0
//
// tokshift: command-line front end.
//
//   tokshift analyze       (--input DUMP | --toy SPEC) [--top-p P] ...
//   tokshift mechanics     (--input DUMP | --toy SPEC) [--threshold T] ...
//   tokshift cross-sample  --toy SPEC [--epsilon E] [--budget K | --budgets K1,K2,..] ...
//   tokshift verify-bounds --toy SPEC [--seeds N] [--epsilon E1,E2,..]
//   tokshift weights       --input ROWS.json [--s S] [--alpha A] ...
//   tokshift selftest      [--quick]
//
// Exit status: 0 success, 1 usage/validation error, 2 runtime error or
// failed check. See docs/cli.md for the full grammar and file schemas.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "criteria.hpp"
#include "tokshift/tokshift.hpp"

namespace fs = std::filesystem;
using namespace tokshift;

namespace {

// Validation problems detected by the CLI itself (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A verification ran but something did not pass (exit 2).
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ToyConfig {
  ToyPolicySpec spec;
  std::size_t t_max = 8;
  std::size_t n = 20;
  double shift = 0.5;
  std::optional<TokenId> eos;
};

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("--toy: " + key + " expects an integer, got \"" + v + "\"");
  }
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("--toy: " + key + " expects a number, got \"" + v + "\"");
  }
}

// "V=3,T=4,n=20,seed=7,kind=softmax|tabular,order=1,temp=1,shift=0.5,eos=2|none"
ToyConfig parse_toy(const std::string& text) {
  ToyConfig c;
  c.spec.vocab_size = 4;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--toy: expected key=value, got \"" + item + "\"");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    if (k == "V") c.spec.vocab_size = to_u64(k, v);
    else if (k == "T") c.t_max = to_u64(k, v);
    else if (k == "n") c.n = to_u64(k, v);
    else if (k == "seed") c.spec.seed = to_u64(k, v);
    else if (k == "order") c.spec.order = to_u64(k, v);
    else if (k == "temp") c.spec.temperature = to_real(k, v);
    else if (k == "shift") c.shift = to_real(k, v);
    else if (k == "kind") {
      if (v == "softmax") c.spec.kind = ToyKind::SoftmaxNgram;
      else if (v == "tabular") c.spec.kind = ToyKind::TabularMarkov;
      else throw UsageError("--toy: kind must be softmax or tabular");
    } else if (k == "eos") {
      if (v == "none") c.eos.reset();
      else c.eos = static_cast<TokenId>(to_u64(k, v));
    } else {
      throw UsageError("--toy: unknown key \"" + k + "\"");
    }
  }
  if (c.eos) c.spec.eos_id = *c.eos;
  c.spec.validate();
  if (c.t_max < 1) throw UsageError("--toy: T must be >= 1");
  if (c.n < 1) throw UsageError("--toy: n must be >= 1");
  if (!(c.shift >= 0.0 && c.shift <= 1.0)) throw UsageError("--toy: shift must lie in [0, 1]");
  return c;
}

std::string canonical_toy(const ToyConfig& c) {
  std::ostringstream o;
  o << "V=" << c.spec.vocab_size << ",T=" << c.t_max << ",n=" << c.n << ",seed=" << c.spec.seed
    << ",kind=" << (c.spec.kind == ToyKind::SoftmaxNgram ? "softmax" : "tabular") << ",order=" << c.spec.order
    << ",temp=" << format_double(c.spec.temperature) << ",shift=" << format_double(c.shift)
    << ",eos=" << (c.eos ? std::to_string(*c.eos) : "none");
  return o.str();
}

struct Common {
  std::string input;
  std::string toy;
  double top_p = 1.0;
  std::size_t top_k = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::size_t jobs = 1;
};

void add_common(CLI::App* sub, Common& c, bool input, bool toy, bool trunc) {
  if (input) sub->add_option("--input", c.input, "input file")->check(CLI::ExistingFile);
  if (toy) sub->add_option("--toy", c.toy, "toy pair spec, e.g. V=4,T=8,n=20,seed=1");
  if (trunc) {
    sub->add_option("--top-p", c.top_p, "nucleus mass in (0, 1]")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--top-k", c.top_k, "top-k cap applied before top-p (0 = none)");
  }
  sub->add_option("--seed", c.seed, "base seed");
  sub->add_option("--out", c.out, "output directory (default $TOKSHIFT_OUT or ./tokshift-out)");
  sub->add_option("--format", c.format, "tabular output format")->check(CLI::IsMember({"json", "csv"}));
  sub->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
}

TruncationSpec truncation(const Common& c) {
  TruncationSpec t;
  t.top_p = c.top_p;
  if (c.top_k > 0) t.top_k = c.top_k;
  t.validate();
  return t;
}

fs::path out_dir(const Common& c) {
  fs::path p = c.out;
  if (p.empty()) {
    const char* env = std::getenv("TOKSHIFT_OUT");
    p = (env && *env) ? fs::path(env) : fs::path("tokshift-out");
  }
  fs::create_directories(p);
  return p;
}

/// Config hash input: subcommand plus its resolved parameters, excluding
/// anything that must not affect output (paths of outputs, worker count).
std::uint64_t hash_params(const std::string& sub, const std::map<std::string, std::string>& params) {
  std::string s = sub;
  for (const auto& [k, v] : params) s += ";" + k + "=" + v;
  return config_hash(s);
}

void emit(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  body(out);
  if (!out) throw Error("write failed: " + path.string());
  std::cout << path.string() << '\n';
}

struct Inputs {
  PolicyPtr base;
  PolicyPtr rl;
  std::vector<Trajectory> trajectories;
  std::string source;
  std::string entropy_basis = "full";  // dumps only carry a top-k list
};

Inputs load_inputs(const Common& c, const TruncationSpec& trunc) {
  if (c.input.empty() == c.toy.empty()) throw UsageError("exactly one of --input or --toy is required");
  Inputs in;
  if (!c.input.empty()) {
    const auto dump = load_dump(c.input);
    std::tie(in.base, in.rl) = dump_as_policies(dump);
    in.trajectories = dump.trajectories();
    // the dump content itself is part of the config
    std::ifstream f(c.input, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    in.source = "dump:" + hex64(rng::fnv1a(bytes));
    in.entropy_basis = "truncated-entropy";
    return in;
  }
  const auto toy = parse_toy(c.toy);
  const auto pair = make_toy_pair(toy.spec, toy.shift);
  in.base = pair.base;
  in.rl = pair.rl;
  GenerationLimits lim{toy.t_max, toy.eos};
  for (std::size_t i = 0; i < toy.n; ++i) {
    in.trajectories.push_back(
        sample_trajectory(*in.rl, lim, rng::derive_seed(c.seed, i), trunc, "seq-" + std::to_string(i)));
  }
  in.source = "toy:" + canonical_toy(toy);
  return in;
}

std::map<std::string, std::string> base_params(const Common& c, const std::string& source) {
  return {{"source", source},
          {"top_p", format_double(c.top_p)},
          {"top_k", std::to_string(c.top_k)},
          {"seed", std::to_string(c.seed)},
          {"format", c.format}};
}

// ---------------------------------------------------------------------------

struct AnalyzeOpts {
  Common c;
  double threshold = 0.1;
  std::size_t profile_bins = 10;
  std::size_t hist_bins = 20;
  std::string aggregation = "pooled";
};

int run_analyze(const AnalyzeOpts& o) {
  const auto trunc = truncation(o.c);
  const auto in = load_inputs(o.c, trunc);
  const auto positions = analyze_trajectories(*in.base, *in.rl, in.trajectories, trunc, o.c.jobs);
  const auto rec = records_of(positions);
  if (rec.empty()) throw EmptyInput();
  auto params = base_params(o.c, in.source);
  params["threshold"] = format_double(o.threshold);
  params["profile_bins"] = std::to_string(o.profile_bins);
  params["hist_bins"] = std::to_string(o.hist_bins);
  params["aggregation"] = o.aggregation;
  const RunMeta meta{"analyze", hash_params("analyze", params), o.c.seed};
  const auto dir = out_dir(o.c);

  if (o.c.format == "csv") {
    emit(dir / "records.csv", [&](std::ostream& s) { records_csv(rec).write(s, meta); });
  } else {
    ojson arr = ojson::array();
    for (const auto& r : rec) arr.push_back(to_ojson(r));
    emit(dir / "records.json", [&](std::ostream& s) { write_json(s, meta, ojson{{"records", arr}}); });
  }

  const auto agg = o.aggregation == "pooled" ? Aggregation::Pooled : Aggregation::PerSequenceMean;
  ojson profile = ojson::array();
  for (const auto& b : positional_profile(rec, o.profile_bins)) profile.push_back(to_ojson(b));
  ojson body{{"records", rec.size()},
             {"sequences", in.trajectories.size()},
             {"entropy_basis", in.entropy_basis},
             {"js_histogram", to_ojson(js_histogram(rec, HistogramSpec::linear(0.0, kLn2, o.hist_bins)))},
             {"js_histogram_log", to_ojson(js_histogram(rec, HistogramSpec::logarithmic(1e-6, kLn2, o.hist_bins)))},
             {"js_percentiles", percentiles_ojson(js_percentiles(rec, PercentileSpec{}, agg))},
             {"positional_profile", profile},
             {"entropy_groups", to_ojson(entropy_by_divergence_bins(rec, o.threshold))},
             {"token_frequency", to_ojson(token_frequency_by_divergence(rec, o.threshold))}};
  emit(dir / "analyze.json", [&](std::ostream& s) { write_json(s, meta, body); });
  return 0;
}

// ---------------------------------------------------------------------------

struct MechanicsOpts {
  Common c;
  double threshold = kDivergentThreshold;
  std::size_t max_k = 0;
  std::size_t m = 3;
  double tail_cutoff = 0.01;
  std::vector<double> tail_thresholds{0.001, 0.01, 0.05, 0.1};
  std::size_t checkpoints = 0;
  std::string mode = "against-first";
  std::string weights_a, weights_b;
};

int run_mechanics(const MechanicsOpts& o) {
  const auto trunc = truncation(o.c);
  const auto in = load_inputs(o.c, trunc);
  const auto positions = analyze_trajectories(*in.base, *in.rl, in.trajectories, trunc, o.c.jobs);
  const std::size_t v = in.base->vocab_size();
  const std::size_t k = o.max_k ? o.max_k : std::min<std::size_t>(v, 10);
  auto params = base_params(o.c, in.source);
  params["threshold"] = format_double(o.threshold);
  params["max_k"] = std::to_string(k);
  params["m"] = std::to_string(o.m);
  params["tail_cutoff"] = format_double(o.tail_cutoff);
  std::string taus;
  for (const double t : o.tail_thresholds) taus += format_double(t) + " ";
  params["tail_thresholds"] = taus;
  params["checkpoints"] = std::to_string(o.checkpoints);
  params["mode"] = o.mode;

  ojson body{{"positions", positions.size()},
             {"topk_overlap", to_ojson(topk_overlap_curve(positions, o.threshold, k))},
             {"rl_topk_base_ranks", to_ojson(base_rank_distribution_of_rl_topk(positions, o.threshold, std::min(o.m, v)))},
             {"tail_promotion", to_ojson(tail_promotion_stats(positions, o.threshold, o.tail_thresholds, o.tail_cutoff))}};

  if (o.checkpoints > 0) {
    if (o.c.toy.empty()) throw UsageError("--checkpoints requires --toy");
    if (o.checkpoints < 2) throw UsageError("--checkpoints must be >= 2");
    // synthetic checkpoints: geometric interpolation base -> rl
    std::vector<PolicyPtr> cps;
    for (std::size_t i = 0; i < o.checkpoints; ++i) {
      const double w = static_cast<double>(i) / static_cast<double>(o.checkpoints - 1);
      cps.push_back(std::make_shared<InterpolatedPolicy>(in.base, in.rl, w));
    }
    const auto mode = o.mode == "consecutive" ? EvolutionMode::Consecutive : EvolutionMode::AgainstFirst;
    ojson arr = ojson::array();
    for (const auto& s : checkpoint_evolution(cps, in.trajectories, PercentileSpec{}, trunc, mode, o.threshold, o.c.jobs)) {
      arr.push_back(to_ojson(s));
    }
    body["checkpoint_evolution"] = arr;
  }
  if (!o.weights_a.empty() || !o.weights_b.empty()) {
    if (o.weights_a.empty() || o.weights_b.empty()) throw UsageError("--weights-a and --weights-b go together");
    const auto a = load_weight_vector(o.weights_a);
    const auto b = load_weight_vector(o.weights_b);
    params["weights"] = hex64(rng::fnv1a(o.weights_a + "|" + o.weights_b));
    body["weight_gap_ratio"] = weight_gap_ratio(a, b);
  }
  const RunMeta meta{"mechanics", hash_params("mechanics", params), o.c.seed};
  emit(out_dir(o.c) / "mechanics.json", [&](std::ostream& s) { write_json(s, meta, body); });
  return 0;
}

// ---------------------------------------------------------------------------

struct CrossOpts {
  Common c;
  double epsilon = 0.1;
  std::string divergence = "js";
  std::optional<std::size_t> budget;
  std::vector<std::size_t> budgets;
  std::size_t samples = 0;
  std::string predicate = "contains-token:0";
  bool reverse = false;
};

int run_cross(const CrossOpts& o) {
  if (!o.c.input.empty() || o.c.toy.empty()) throw UsageError("cross-sample requires --toy");
  if (o.budget && !o.budgets.empty()) throw UsageError("--budget and --budgets are mutually exclusive");
  const auto toy = parse_toy(o.c.toy);
  const auto pair = make_toy_pair(toy.spec, toy.shift);
  CrossSampleConfig cfg;
  cfg.primary = pair.base;
  cfg.intervention = pair.rl;
  if (o.reverse) cfg = cfg.reversed();
  cfg.rule.epsilon = o.epsilon;
  cfg.rule.trunc = truncation(o.c);
  cfg.rule.kind = o.divergence == "kl" ? DivergenceKind::KL : DivergenceKind::JS;
  cfg.limits = GenerationLimits{toy.t_max, toy.eos};
  cfg.seed = o.c.seed;
  cfg.validate();
  const std::size_t n = o.samples ? o.samples : toy.n;
  const auto pred = parse_predicate(o.predicate);

  auto params = base_params(o.c, "toy:" + canonical_toy(toy));
  params["epsilon"] = format_double(o.epsilon);
  params["divergence"] = o.divergence;
  params["samples"] = std::to_string(n);
  params["predicate"] = o.predicate;
  params["reverse"] = o.reverse ? "1" : "0";
  params["budget"] = o.budget ? std::to_string(*o.budget) : "none";
  std::string bl;
  for (const auto b : o.budgets) bl += std::to_string(b) + " ";
  params["budgets"] = bl;
  const RunMeta meta{"cross-sample", hash_params("cross-sample", params), o.c.seed};
  const auto dir = out_dir(o.c);

  std::vector<CrossSampleTrace> all;
  ojson body{{"direction", o.reverse ? "reverse" : "forward"}};
  if (!o.budgets.empty()) {
    std::vector<std::vector<CrossSampleTrace>> traces;
    const auto sweep = budget_sweep(cfg, o.budgets, n, pred, o.c.jobs, &traces);
    for (auto& t : traces) all.insert(all.end(), t.begin(), t.end());
    if (o.c.format == "csv") {
      CsvTable t{{"budget", "success_rate", "mean_effective", "mean_total", "mean_effective_pct", "mean_length"}, {}};
      for (const auto& p : sweep) {
        t.rows.push_back({cell(p.budget), cell(p.success_rate), cell(p.mean_effective), cell(p.mean_total),
                          cell(p.mean_effective_pct), cell(p.mean_length)});
      }
      emit(dir / "sweep.csv", [&](std::ostream& s) { t.write(s, meta); });
    }
    ojson arr = ojson::array();
    for (const auto& p : sweep) arr.push_back(to_ojson(p));
    body["sweep"] = arr;
  } else {
    // one batch of runs; sample i is seeded exactly as in a sweep
    all.resize(n);
    std::vector<std::future<void>> workers;
    const std::size_t jobs = std::max<std::size_t>(1, o.c.jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < n; i += jobs) {
          CrossSampleConfig c = cfg;
          c.budget = o.budget;
          c.seed = rng::derive_seed(cfg.seed, i);
          c.seq_id = "seq-" + std::to_string(i);
          all[i] = cross_sample_generate(c);
        }
      }));
    }
    for (auto& f : workers) f.get();
    auto summary = summarize_traces(all, pred);
    summary.budget = o.budget.value_or(0);
    body["summary"] = to_ojson(summary);
    if (!o.budget) body["summary"]["budget"] = nullptr;
  }
  ojson pairs = ojson::array();
  for (const auto& p : replacement_pair_histogram(all)) pairs.push_back(to_ojson(p));
  body["replacement_pairs"] = pairs;

  emit(dir / "traces.ndjson", [&](std::ostream& s) {
    s << ojson{{"meta", meta_json(meta)}}.dump() << '\n';
    for (const auto& t : all) s << to_ojson(t).dump() << '\n';
  });
  emit(dir / "cross_sample.json", [&](std::ostream& s) { write_json(s, meta, body); });
  return 0;
}

// ---------------------------------------------------------------------------

struct BoundsOpts {
  Common c;
  std::size_t seeds = 20;
  std::vector<double> epsilons{0.01, 0.1, 0.5};
};

int run_bounds(const BoundsOpts& o) {
  if (!o.c.input.empty() || o.c.toy.empty()) throw UsageError("verify-bounds requires --toy");
  const auto toy = parse_toy(o.c.toy);
  const GenerationLimits lim{toy.t_max, toy.eos};
  auto params = base_params(o.c, "toy:" + canonical_toy(toy));
  params["seeds"] = std::to_string(o.seeds);
  std::string el;
  for (const double e : o.epsilons) el += format_double(e) + " ";
  params["epsilons"] = el;
  const RunMeta meta{"verify-bounds", hash_params("verify-bounds", params), o.c.seed};

  bool all_pass = true;
  ojson cases = ojson::array();
  for (std::size_t i = 0; i < o.seeds; ++i) {
    ToyPolicySpec spec = toy.spec;
    spec.seed = toy.spec.seed + o.c.seed + i;
    const auto pair = make_toy_pair(spec, toy.shift);
    ojson c{{"toy_seed", spec.seed}};
    const auto kl = verify_kl_chain_rule(*pair.base, *pair.rl, lim);
    const auto js = verify_js_decomposition(*pair.base, *pair.rl, lim);
    c["kl_chain_rule"] = to_ojson(kl);
    c["js_decomposition"] = to_ojson(js);
    all_pass = all_pass && kl.pass && js.pass;
    ojson kb = ojson::array(), jb = ojson::array();
    for (const double eps : o.epsilons) {
      const auto k = verify_kl_eps_bound(pair.base, pair.rl, eps, lim);
      all_pass = all_pass && k.holds && k.kappa_le_eps && k.identity_pass;
      kb.push_back(to_ojson(k));
      try {
        const auto j = verify_js_eps_bound(pair.base, pair.rl, eps, lim);
        all_pass = all_pass && j.holds && j.j_le_eps && j.identity_pass;
        jb.push_back(to_ojson(j));
      } catch (const HypothesisViolated& e) {
        ojson v = to_ojson(e);
        v["epsilon"] = eps;
        jb.push_back(v);
      }
    }
    c["kl_eps_bound"] = kb;
    c["js_eps_bound"] = jb;
    cases.push_back(c);
  }
  ojson body{{"t_max", lim.t_max}, {"eos", lim.eos ? ojson(*lim.eos) : ojson(nullptr)}, {"all_pass", all_pass},
             {"cases", cases}};
  emit(out_dir(o.c) / "verify_bounds.json", [&](std::ostream& s) { write_json(s, meta, body); });
  if (!all_pass) throw CheckFailed("at least one bound or identity check failed");
  return 0;
}

// ---------------------------------------------------------------------------

struct WeightsOpts {
  Common c;
  double s = 0.3;
  double alpha = 0.0;
  double eps_low = 0.2;
  double eps_high = 0.28;
  std::string kl_source = "unspecified";
};

std::vector<WeightRow> load_rows(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  if (!j.is_array()) throw SchemaError(1, "weights input must be a JSON array of rows");
  std::vector<WeightRow> rows;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& r = j[i];
    for (const char* k : {"ratio", "advantage", "kl"}) {
      if (!r.is_object() || !r.contains(k) || !r[k].is_number()) {
        throw SchemaError(1, "row " + std::to_string(i) + ": numeric field \"" + k + "\" required");
      }
    }
    rows.push_back({r["ratio"].get<double>(), r["advantage"].get<double>(), r["kl"].get<double>()});
  }
  return rows;
}

int run_weights(const WeightsOpts& o) {
  if (o.c.input.empty()) throw UsageError("weights requires --input");
  const auto rows = load_rows(o.c.input);
  const WeightingParams wp{o.s, o.alpha};
  const ClipParams clip{o.eps_low, o.eps_high};
  const auto prov = parse_kl_provenance(o.kl_source);
  const auto out = evaluate_weight_rows(rows, wp, clip);
  std::ifstream f(o.c.input, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::map<std::string, std::string> params{{"input", hex64(rng::fnv1a(bytes))},
                                            {"s", format_double(o.s)},
                                            {"alpha", format_double(o.alpha)},
                                            {"eps_low", format_double(o.eps_low)},
                                            {"eps_high", format_double(o.eps_high)},
                                            {"kl_source", to_string(prov)},
                                            {"format", o.c.format}};
  const RunMeta meta{"weights", hash_params("weights", params), o.c.seed};
  const auto dir = out_dir(o.c);
  if (o.c.format == "csv") {
    CsvTable t{{"ratio", "advantage", "kl", "kl_source", "weight", "weighted_advantage", "objective"}, {}};
    for (const auto& w : out) {
      t.rows.push_back({cell(w.in.ratio), cell(w.in.advantage), cell(w.in.kl), std::string(to_string(prov)),
                        cell(w.weight), cell(w.weighted_advantage), cell(w.objective)});
    }
    emit(dir / "weights.csv", [&](std::ostream& s) { t.write(s, meta); });
  } else {
    ojson arr = ojson::array();
    for (const auto& w : out) arr.push_back(to_ojson(w));
    emit(dir / "weights.json", [&](std::ostream& s) {
      write_json(s, meta, ojson{{"kl_source", to_string(prov)}, {"s", o.s}, {"alpha", o.alpha},
                                {"eps_low", o.eps_low}, {"eps_high", o.eps_high}, {"rows", arr}});
    });
  }
  return 0;
}

// ---------------------------------------------------------------------------

int run_selftest(bool quick, std::size_t jobs) {
  acceptance::Options opt;
  opt.quick = quick;
  opt.jobs = jobs;
  std::error_code ec;
  const auto self = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) opt.cli_path = self.string();
  bool ok = true;
  for (const auto& r : acceptance::run_all(opt)) {
    std::cout << acceptance::format_line(r) << std::endl;
    ok = ok && r.pass;
  }
  if (quick) std::cout << "(quick mode: reduced sample counts)" << std::endl;
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-level divergence analysis, cross-sampling and bound checks"};
  app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  AnalyzeOpts ao;
  auto* analyze = app.add_subcommand("analyze", "per-token divergence records and summaries");
  add_common(analyze, ao.c, true, true, true);
  analyze->add_option("--threshold", ao.threshold, "high-divergence JS threshold");
  analyze->add_option("--bins", ao.profile_bins, "positional profile bins")->check(CLI::PositiveNumber);
  analyze->add_option("--hist-bins", ao.hist_bins, "JS histogram bins")->check(CLI::PositiveNumber);
  analyze->add_option("--aggregation", ao.aggregation, "percentile aggregation")
      ->check(CLI::IsMember({"pooled", "per-sequence"}));

  MechanicsOpts mo;
  auto* mech = app.add_subcommand("mechanics", "top-k overlap, rank and tail statistics");
  add_common(mech, mo.c, true, true, true);
  mech->add_option("--threshold", mo.threshold, "JS threshold for divergent positions");
  mech->add_option("--overlap-k", mo.max_k, "largest K of the overlap curve (default min(V, 10))");
  mech->add_option("--m", mo.m, "RL top-m tokens to rank under base")->check(CLI::PositiveNumber);
  mech->add_option("--tail-cutoff", mo.tail_cutoff, "base-probability cutoff for the tail subset");
  mech->add_option("--tail-thresholds", mo.tail_thresholds, "ascending base-probability thresholds")->delimiter(',');
  mech->add_option("--checkpoints", mo.checkpoints, "synthetic checkpoints between base and rl (toy only)");
  mech->add_option("--mode", mo.mode, "checkpoint comparison")->check(CLI::IsMember({"against-first", "consecutive"}));
  mech->add_option("--weights-a", mo.weights_a, "weight vector (JSON array or float32)")->check(CLI::ExistingFile);
  mech->add_option("--weights-b", mo.weights_b, "weight vector (JSON array or float32)")->check(CLI::ExistingFile);

  CrossOpts co;
  auto* cross = app.add_subcommand("cross-sample", "mixed-policy generation and budget sweeps");
  add_common(cross, co.c, false, true, true);
  cross->add_option("--epsilon", co.epsilon, "switching threshold");
  cross->add_option("--divergence", co.divergence, "switching divergence")->check(CLI::IsMember({"js", "kl"}));
  cross->add_option("--budget", co.budget, "intervention budget for single runs");
  cross->add_option("--budgets", co.budgets, "non-decreasing budget list for a sweep")->delimiter(',');
  cross->add_option("--samples", co.samples, "runs per budget (default: toy n)");
  cross->add_option("--predicate", co.predicate, "success predicate");
  cross->add_flag("--reverse", co.reverse, "swap primary and intervention");

  BoundsOpts bo;
  auto* bounds = app.add_subcommand("verify-bounds", "exact sequence-level identity and bound checks");
  add_common(bounds, bo.c, false, true, false);
  bounds->add_option("--seeds", bo.seeds, "number of toy pairs")->check(CLI::PositiveNumber);
  bounds->add_option("--epsilon", bo.epsilons, "thresholds to check")->delimiter(',');

  WeightsOpts wo;
  auto* weights = app.add_subcommand("weights", "divergence-weighted advantages for a batch of rows");
  add_common(weights, wo.c, true, false, false);
  weights->add_option("--s", wo.s, "weight scale");
  weights->add_option("--alpha", wo.alpha, "sigmoid steepness (sign selects high/low-KL emphasis)");
  weights->add_option("--eps-low", wo.eps_low, "lower clip")->check(CLI::PositiveNumber);
  weights->add_option("--eps-high", wo.eps_high, "upper clip")->check(CLI::PositiveNumber);
  weights->add_option("--kl-source", wo.kl_source, "where the kl column came from")
      ->check(CLI::IsMember({"sampled-token", "full-distribution", "unspecified"}));

  bool quick = false;
  std::size_t st_jobs = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
  auto* selftest = app.add_subcommand("selftest", "run the acceptance suite");
  selftest->add_flag("--quick", quick, "reduced sample counts");
  selftest->add_option("--jobs", st_jobs, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*analyze) return run_analyze(ao);
    if (*mech) return run_mechanics(mo);
    if (*cross) return run_cross(co);
    if (*bounds) return run_bounds(bo);
    if (*weights) return run_weights(wo);
    if (*selftest) return run_selftest(quick, st_jobs);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InstanceTooLarge& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const CheckFailed& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
