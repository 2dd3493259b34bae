#pragma once

// Command-line front end. run_cli returns the process exit code:
// 0 success, 2 usage or input error, 3 numerical failure.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tvd/angles.hpp"
#include "tvd/decompose.hpp"
#include "tvd/io.hpp"
#include "tvd/synth.hpp"
#include "tvd/toylab.hpp"

namespace tvd::cli {

namespace fs = std::filesystem;
using io::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::InvalidArgument, what + ": '" + s + "' is not a finite number");
  }
  return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidArgument, what + ": '" + s + "' is not a nonnegative integer");
  }
  return v;
}

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const std::string& part : split(s, ',')) out.push_back(parse_double(part, what));
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, what + " is empty");
  return out;
}

/// "n=512,m=512,r=100,u=100,k=2,scale=1"; omitted keys keep their defaults.
inline PlantSpec parse_spec(const std::string& s) {
  PlantSpec spec;
  if (s.empty()) return spec;
  for (const std::string& kv : split(s, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--spec entry '" + kv + "' is not key=value");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    if (key == "n") spec.ambient_dim = parse_count(value, "--spec n");
    else if (key == "m") spec.cols = parse_count(value, "--spec m");
    else if (key == "r") spec.shared_dim = parse_count(value, "--spec r");
    else if (key == "u") spec.unique_dim_per_vector = parse_count(value, "--spec u");
    else if (key == "k") spec.num_vectors = parse_count(value, "--spec k");
    else if (key == "scale") spec.coeff_scale = parse_double(value, "--spec scale");
    else throw Error(ErrorCode::InvalidArgument, "unknown --spec key '" + key + "' (expected n, m, r, u, k, scale)");
  }
  spec.validate();
  return spec;
}

inline std::vector<std::pair<std::string, double>> parse_coeffs(const std::string& s) {
  std::vector<std::pair<std::string, double>> out;
  for (const std::string& kv : split(s, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::InvalidArgument, "--coeffs entry '" + kv + "' is not name=lambda");
    out.emplace_back(kv.substr(0, eq), parse_double(kv.substr(eq + 1), "--coeffs " + kv.substr(0, eq)));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "--coeffs is empty");
  return out;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

template <typename Fn>
void write_text(const fs::path& path, Fn&& body) {
  std::ostringstream s;
  body(s);
  io::write_file(path, s.str());
}

inline std::string sigma_label(double sigma) { return io::fmt(sigma); }

/// Overrides from flags; present flags win over the manifest.
struct DecomposeFlags {
  std::optional<double> tau;
  std::optional<double> rank_tol;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_rank;
  std::optional<std::string> out;

  void apply(io::Manifest& m) const {
    if (tau) {
      check_tau(*tau);
      m.tau = *tau;
    }
    if (rank_tol) {
      if (!(*rank_tol >= 0.0)) throw Error(ErrorCode::InvalidArgument, "--rank-tol must be >= 0");
      m.rank_tol = *rank_tol;
    }
    if (mode) m.mode = io::parse_mode(*mode);
    if (seed) m.seed = *seed;
    if (max_rank) {
      if (*max_rank < 0) throw Error(ErrorCode::InvalidArgument, "--max-rank must be >= 0");
      m.max_rank = static_cast<Eigen::Index>(*max_rank);
    }
    if (out) m.output_dir = *out;
  }

  void add_to(CLI::App* sub) {
    sub->add_option("--tau", tau, "eigenvalue threshold in (0, 1]");
    sub->add_option("--rank-tol", rank_tol, "relative singular value cutoff for column spaces");
    sub->add_option("--mode", mode, "chain or pairwise");
    sub->add_option("--seed", seed, "seed for the order-sensitivity probe");
    sub->add_option("--max-rank", max_rank, "cap on each column space's rank (0: none)");
    sub->add_option("--out", out, "output directory (overrides output_dir)");
  }
};

struct Loaded {
  io::Manifest manifest;
  std::vector<io::LoadedInput> inputs;
  std::optional<io::LoadedInput> base;
  DecompositionResult result;
  double seconds = 0.0;
};

inline Loaded load_and_decompose(const std::string& manifest_path, const DecomposeFlags& flags) {
  Loaded l;
  l.manifest = io::load_manifest(manifest_path);
  flags.apply(l.manifest);
  if (l.manifest.task_vectors.size() < 2) throw Error(ErrorCode::NeedTwoVectors, "manifest lists fewer than two task vectors");
  for (const io::ManifestEntry& e : l.manifest.task_vectors) l.inputs.push_back(io::load_input(e));
  if (l.manifest.base_model) l.base = io::load_input(*l.manifest.base_model);
  std::vector<TaskVector> vectors;
  for (const io::LoadedInput& in : l.inputs) vectors.push_back(in.tensors);
  const auto start = std::chrono::steady_clock::now();
  l.result = decompose_set(vectors, l.manifest.options());
  l.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return l;
}

// --------------------------------------------------------------- commands

inline int cmd_decompose(const std::string& manifest_path, const DecomposeFlags& flags, std::ostream& out) {
  const Loaded l = load_and_decompose(manifest_path, flags);
  const fs::path dir = l.manifest.output_dir;
  ensure_dir(dir);

  std::vector<std::pair<std::string, const TaskVector*>> files;
  for (std::size_t i = 0; i < l.inputs.size(); ++i) {
    files.emplace_back("shared_" + l.inputs[i].entry.name + ".tvt", &l.result.shared[i]);
    files.emplace_back("unique_" + l.inputs[i].entry.name + ".tvt", &l.result.unique[i]);
  }
  if (l.result.mode == DecomposeMode::chain) {
    files.emplace_back("merged_shared.tvt", &l.result.merged_shared);
  } else {
    for (const PairShared& p : l.result.pairs) {
      files.emplace_back("pair_" + l.inputs[p.first].entry.name + "_" + l.inputs[p.second].entry.name + ".tvt", &p.merged);
    }
  }
  std::vector<std::string> names;
  for (const auto& [name, tensors] : files) {
    io::write_tensor_file(dir / name, *tensors);
    names.push_back(name);
  }
  io::write_file(dir / "report.json", io::dump(io::report_json(l.manifest, l.inputs, l.base, l.result, names)));
  io::write_file(dir / "timing.json", io::dump(io::timing_json(l.result, l.seconds)));

  out << "decomposed " << l.inputs.size() << " task vectors (" << to_string(l.result.mode) << ", tau "
      << io::fmt(l.manifest.tau) << ")\n";
  for (const LayerSummary& layer : l.result.layers) {
    out << "  " << layer.name << " " << shape_string(layer.shape);
    if (!layer.decomposed) {
      out << " undecomposed\n";
      continue;
    }
    out << " r_shared";
    for (const GroupSummary& g : layer.groups) out << " " << g.r_shared;
    out << "\n";
  }
  out << "wrote " << names.size() + 2 << " files to " << dir.string() << "\n";
  return kExitOk;
}

/// Named components available to recompose for a decomposition.
inline std::map<std::string, const TaskVector*> components(const Loaded& l) {
  std::map<std::string, const TaskVector*> c;
  for (std::size_t i = 0; i < l.inputs.size(); ++i) {
    const std::string& n = l.inputs[i].entry.name;
    c["task." + n] = &l.inputs[i].tensors;
    c["shared." + n] = &l.result.shared[i];
    c["unique." + n] = &l.result.unique[i];
  }
  if (l.result.mode == DecomposeMode::chain) c["merged_shared"] = &l.result.merged_shared;
  for (const PairShared& p : l.result.pairs) {
    c["pair." + l.inputs[p.first].entry.name + "." + l.inputs[p.second].entry.name] = &p.merged;
  }
  return c;
}

inline int cmd_recompose(const std::string& manifest_path, const DecomposeFlags& flags, const std::string& coeffs,
                         std::ostream& out) {
  const auto terms = parse_coeffs(coeffs);
  const Loaded l = load_and_decompose(manifest_path, flags);
  const auto available = components(l);
  EditRecipe recipe;
  for (const auto& [name, lambda] : terms) {
    auto it = available.find(name);
    if (it == available.end()) {
      std::string list;
      for (const auto& [n, _] : available) list += (list.empty() ? "" : ", ") + n;
      throw Error(ErrorCode::InvalidArgument, "unknown component '" + name + "'; available: " + list);
    }
    recipe.push_back(EditTerm{it->second, lambda});
  }
  // Without a base model the edit starts from zero.
  const TaskVector base = l.base ? l.base->tensors : zeros_like(l.inputs.front().tensors);
  const TaskVector edited = apply_edit(base, recipe);
  ensure_dir(l.manifest.output_dir);
  const fs::path path = l.manifest.output_dir / "recomposed.tvt";
  io::write_tensor_file(path, edited);
  out << "wrote " << path.string() << " (" << recipe.size() << " terms on " << (l.base ? "base model" : "zero base")
      << ")\n";
  return kExitOk;
}

inline int cmd_angles(const std::string& a_path, const std::string& b_path, const std::optional<std::string>& out_dir,
                      std::ostream& out) {
  const TaskVector a = io::read_tensor_file(a_path);
  const TaskVector b = io::read_tensor_file(b_path);
  json layers = json::array();
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape != ta.shape) {
      throw Error(ErrorCode::LayerMismatch, "layer '" + name + "' missing or reshaped in " + b_path);
    }
    if (!ta.decomposable()) continue;
    json entry = {{"name", name}};
    const Matrix ma = ta.as_matrix();
    const Matrix mb = it->second.as_matrix();
    if (qr_orthonormal(ma).cols() == 0 || qr_orthonormal(mb).cols() == 0) {
      entry["outcome"] = "zero-subspace";
    } else {
      entry["outcome"] = "compared";
      entry.update(io::angles_json(principal_angles(ma, mb)));
    }
    layers.push_back(std::move(entry));
  }
  if (a.size() != b.size()) throw Error(ErrorCode::LayerMismatch, "files hold different layer sets");
  const json report = {{"a", a_path}, {"b", b_path}, {"layers", layers}};
  out << io::dump(report);
  if (out_dir) {
    ensure_dir(*out_dir);
    io::write_file(fs::path(*out_dir) / "angles.json", io::dump(report));
  }
  return kExitOk;
}

struct SynthFlags {
  std::string spec;
  std::string sweep = "0.05,0.1,0.2,0.3,0.4";
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  std::size_t bins = 50;
  bool no_cap = false;
  std::string out = "synth_out";
};

inline int cmd_synth(const SynthFlags& f, std::ostream& out) {
  const PlantSpec spec = parse_spec(f.spec);
  const std::vector<double> sigmas = parse_list(f.sweep, "--sweep");
  RecoveryOptions opt;
  opt.tau = f.tau;
  opt.rank_tol = f.rank_tol;
  opt.cap_at_planted_rank = !f.no_cap;
  const SweepResult r = noise_sweep(spec, sigmas, f.trials, f.seed, opt, f.bins);

  const fs::path dir = f.out;
  ensure_dir(dir);
  write_text(dir / "sweep.csv", [&](std::ostream& s) { io::write_sweep_csv(s, r); });
  write_text(dir / "sweep_summary.csv", [&](std::ostream& s) { io::write_sweep_summary_csv(s, r); });
  for (std::size_t i = 0; i < r.histograms.size(); ++i) {
    write_text(dir / ("histogram_sigma_" + sigma_label(sigmas[i]) + ".csv"),
               [&](std::ostream& s) { io::write_histogram_csv(s, r.histograms[i]); });
  }
  out << "sigma  trials  mean_deg  max_deg  mean_dim\n";
  for (const SigmaSummary& s : r.per_sigma) {
    char line[128];
    std::snprintf(line, sizeof line, "%-6g %6zu %9.4f %8.4f %9.2f\n", s.sigma, s.trials,
                  s.mean_angle_rad * 180.0 / std::numbers::pi, s.max_angle_rad * 180.0 / std::numbers::pi,
                  s.mean_recovered_dim);
    out << line;
  }
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

struct ToylabFlags {
  std::string scenario = "transfer";
  std::uint64_t seed = 1;
  std::size_t seeds = 5;
  double tau = kDefaultTau;
  std::string out = "toylab_out";
};

inline int cmd_toylab(const ToylabFlags& f, std::ostream& out) {
  if (f.scenario != "transfer" && f.scenario != "negation") {
    throw Error(ErrorCode::InvalidArgument, "--scenario must be transfer or negation");
  }
  if (f.seeds < 1) throw Error(ErrorCode::InvalidArgument, "--seeds must be >= 1");
  toy::ScenarioConfig cfg;
  cfg.decomposition.tau = f.tau;
  check_tau(f.tau);
  const fs::path dir = f.out;
  ensure_dir(dir);

  std::ostringstream summary;
  summary << "seed,task,component_id,base_accuracy,best_lambda,best_accuracy\n";
  for (std::uint64_t s = f.seed; s < f.seed + f.seeds; ++s) {
    const toy::ScenarioRun run = f.scenario == "transfer" ? toy::transfer_scenario(s, cfg) : toy::negation_scenario(s, cfg);
    std::vector<std::string> ids;
    for (const toy::Component& c : run.components) ids.push_back(c.name);
    for (const toy::TaskSweep& sw : run.sweeps) {
      write_text(dir / (f.scenario + "_seed" + std::to_string(s) + "_" + sw.task + ".csv"),
                 [&](std::ostream& o) { io::write_curve_csv(o, sw.curve, ids); });
      out << "seed " << s << " " << sw.task << ": base " << io::fmt(sw.base.accuracy);
      for (std::size_t c = 0; c < ids.size(); ++c) {
        const toy::CurvePoint best = sw.curve.best(c);
        summary << s << ',' << sw.task << ',' << ids[c] << ',' << io::fmt(sw.base.accuracy) << ','
                << io::fmt(best.lambda) << ',' << io::fmt(best.accuracy) << '\n';
        out << ", " << ids[c] << " " << io::fmt(best.accuracy) << "@" << io::fmt(best.lambda);
      }
      out << "\n";
    }
  }
  io::write_file(dir / (f.scenario + "_summary.csv"), summary.str());
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

struct ValidateFlags {
  std::vector<std::string> files;
  std::size_t trials = 100;
  double sigma = 0.1;
  std::string spec;
  std::uint64_t seed = 0;
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  std::int64_t max_rank = 0;
  std::optional<std::string> out;
};

inline json summarize_checks(const std::vector<CrossCheck>& checks) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  std::size_t within6 = 0, within10 = 0;
  double worst = 0.0;
  std::map<std::string, std::size_t> outcomes;
  for (const CrossCheck& c : checks) {
    const double m = c.max_rad();
    within6 += m <= 6.0 * kDeg;
    within10 += m <= 10.0 * kDeg;
    worst = std::max(worst, m);
    outcomes[std::string(to_string(c.outcome))]++;
  }
  return {{"count", checks.size()},
          {"max_rad", worst},
          {"within_6_deg", within6},
          {"within_10_deg", within10},
          {"outcomes", outcomes}};
}

/// With two files: per-layer cross-method check of that pair. Without: the
/// same check over planted pairs.
inline int cmd_validate(const ValidateFlags& f, std::ostream& out) {
  json report;
  if (!f.files.empty()) {
    if (f.files.size() != 2) throw Error(ErrorCode::InvalidArgument, "validate takes zero or two tensor files");
    if (f.max_rank < 0) throw Error(ErrorCode::InvalidArgument, "--max-rank must be >= 0");
    const CrossCheckOptions opt{f.tau, f.rank_tol, static_cast<Eigen::Index>(f.max_rank)};
    const auto checks = cross_validate(io::read_tensor_file(f.files[0]), io::read_tensor_file(f.files[1]), opt);
    json layers = json::array();
    std::vector<CrossCheck> all;
    for (const auto& [name, c] : checks) {
      json entry = io::cross_check_json(c);
      entry["name"] = name;
      layers.push_back(std::move(entry));
      all.push_back(c);
    }
    report = {{"source", "files"}, {"a", f.files[0]}, {"b", f.files[1]}, {"summary", summarize_checks(all)}, {"layers", layers}};
  } else {
    const PlantSpec spec = parse_spec(f.spec);
    RecoveryOptions opt;
    opt.tau = f.tau;
    opt.rank_tol = f.rank_tol;
    const auto checks = cross_validate_planted(spec, f.sigma, f.trials, f.seed, opt);
    json trials = json::array();
    for (const CrossCheck& c : checks) trials.push_back(io::cross_check_json(c));
    report = {{"source", "planted"},
              {"sigma", f.sigma},
              {"seed", f.seed},
              {"summary", summarize_checks(checks)},
              {"trials", trials}};
  }
  out << io::dump(report);
  if (f.out) {
    ensure_dir(*f.out);
    io::write_file(fs::path(*f.out) / "validate.json", io::dump(report));
  }
  return kExitOk;
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-vector subspace decomposition toolkit", "tvd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(io::kToolkitVersion));

  std::string manifest;
  detail::DecomposeFlags dflags;
  auto* decompose = app.add_subcommand("decompose", "split task vectors into shared and unique components");
  decompose->add_option("manifest", manifest, "manifest JSON")->required();
  dflags.add_to(decompose);

  std::string rmanifest;
  std::string coeffs;
  detail::DecomposeFlags rflags;
  auto* recompose = app.add_subcommand("recompose", "apply an edit built from decomposed components");
  recompose->add_option("manifest", rmanifest, "manifest JSON")->required();
  recompose->add_option("--coeffs", coeffs, "name=lambda,... over merged_shared, shared.<t>, unique.<t>, task.<t>, pair.<a>.<b>")
      ->required();
  rflags.add_to(recompose);

  std::string fa, fb;
  std::optional<std::string> angles_out;
  auto* angles = app.add_subcommand("angles", "principal angles between matching layers of two tensor files");
  angles->add_option("file_a", fa)->required();
  angles->add_option("file_b", fb)->required();
  angles->add_option("--out", angles_out, "also write angles.json here");

  detail::SynthFlags sflags;
  auto* synth = app.add_subcommand("synth", "planted-subspace noise sweep");
  synth->add_option("--spec", sflags.spec, "n=..,m=..,r=..,u=..,k=..,scale=..");
  synth->add_option("--sweep", sflags.sweep, "comma-separated noise levels")->capture_default_str();
  synth->add_option("--trials", sflags.trials, "trials per noise level")->capture_default_str();
  synth->add_option("--seed", sflags.seed)->capture_default_str();
  synth->add_option("--tau", sflags.tau)->capture_default_str();
  synth->add_option("--rank-tol", sflags.rank_tol)->capture_default_str();
  synth->add_option("--bins", sflags.bins, "histogram bins (0: none)")->capture_default_str();
  synth->add_flag("--no-cap", sflags.no_cap, "do not truncate column spaces to the planted rank");
  synth->add_option("--out", sflags.out)->capture_default_str();

  detail::ToylabFlags tflags;
  auto* toylab = app.add_subcommand("toylab", "toy task-arithmetic scenarios");
  toylab->add_option("--scenario", tflags.scenario, "transfer or negation")->capture_default_str();
  toylab->add_option("--seed", tflags.seed, "first scenario seed")->capture_default_str();
  toylab->add_option("--seeds", tflags.seeds, "number of consecutive seeds")->capture_default_str();
  toylab->add_option("--tau", tflags.tau)->capture_default_str();
  toylab->add_option("--out", tflags.out)->capture_default_str();

  detail::ValidateFlags vflags;
  auto* validate = app.add_subcommand("validate", "cross-check the projector chain against principal angles");
  validate->add_option("files", vflags.files, "two tensor files (omit for planted trials)");
  validate->add_option("--trials", vflags.trials)->capture_default_str();
  validate->add_option("--sigma", vflags.sigma)->capture_default_str();
  validate->add_option("--spec", vflags.spec, "planted spec, as for synth");
  validate->add_option("--seed", vflags.seed)->capture_default_str();
  validate->add_option("--tau", vflags.tau)->capture_default_str();
  validate->add_option("--rank-tol", vflags.rank_tol)->capture_default_str();
  validate->add_option("--max-rank", vflags.max_rank)->capture_default_str();
  validate->add_option("--out", vflags.out);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*decompose) return detail::cmd_decompose(manifest, dflags, out);
    if (*recompose) return detail::cmd_recompose(rmanifest, rflags, coeffs, out);
    if (*angles) return detail::cmd_angles(fa, fb, angles_out, out);
    if (*synth) return detail::cmd_synth(sflags, out);
    if (*toylab) return detail::cmd_toylab(tflags, out);
    if (*validate) return detail::cmd_validate(vflags, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_numerical(e.code()) ? kExitNumerical : kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace tvd::cli
