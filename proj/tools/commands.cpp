#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <iostream>
#include <json.hpp>
#include <map>

#include "plots.hpp"
#include "sgfa/analysis.hpp"
#include "sgfa/error.hpp"
#include "sgfa/io.hpp"

#ifndef SGFA_VERSION
#define SGFA_VERSION "0.0.0"
#endif

namespace sgfa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::InvalidArgument:
    case ErrorKind::Shape:
      return 2;
    case ErrorKind::Io:
    case ErrorKind::Parse:
    case ErrorKind::Alignment:
      return 3;
    case ErrorKind::Numerical:
    case ErrorKind::Adaptation:
    case ErrorKind::Degenerate:
      return 4;
    case ErrorKind::Dependency:
      return 5;
  }
  return 1;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& config) {
    j_["command"] = std::move(command);
    j_["version"] = SGFA_VERSION;
    j_["seed"] = config.seed;
    j_["config"] = config.to_json();
    j_["timings"] = json::object();
    j_["inputs"] = json::array();
  }

  void timing(const std::string& stage, double s) { j_["timings"][stage] = s; }
  void set(const std::string& key, json value) { j_[key] = std::move(value); }

  void input(const fs::path& path) {
    j_["inputs"].push_back({{"path", fs::absolute(path).lexically_normal().string()},
                            {"sha256", io::sha256_file(path)}});
  }

  /// Inventories every file below `dir` and writes dir/manifest.json last.
  void write(const fs::path& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) {
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (rel != "manifest.json") files.push_back(rel);
      }
    std::sort(files.begin(), files.end());
    json out = json::array();
    for (const auto& f : files)
      out.push_back({{"path", f}, {"sha256", io::sha256_file(dir / f)}});
    j_["outputs"] = std::move(out);
    io::write_file(dir / "manifest.json", j_.dump(1) + "\n");
  }

 private:
  json j_;
};

void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(1) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = io::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void require_input(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path))
    fail(ErrorKind::Dependency, "missing " + what + ": " + path.string());
}

/// Prepares an empty stage directory, refusing to clear anything the tool
/// did not write, and probes that it is writable.
fs::path prepare_stage(const fs::path& root, const std::string& stage) {
  const fs::path dir = root / stage;
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir))
      fail(ErrorKind::Io, "output path exists and is not a directory: " + dir.string());
    if (!fs::is_empty(dir)) {
      if (!fs::exists(dir / "manifest.json") && !fs::exists(dir / "error.json"))
        fail(ErrorKind::Io, "refusing to overwrite non-empty directory " + dir.string() +
                                " that has no manifest.json");
      fs::remove_all(dir, ec);
      if (ec) fail(ErrorKind::Io, "cannot clear " + dir.string() + ": " + ec.message());
    }
  }
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  io::write_file(probe, "");
  fs::remove(probe, ec);
  return dir;
}

std::vector<std::string> qualified_features(const MultiViewDataset& data) {
  std::vector<std::string> out;
  for (std::size_t m = 0; m < data.num_views(); ++m)
    for (const auto& f : data.feature_names[m]) out.push_back(data.view_names[m] + "/" + f);
  return out;
}

std::vector<std::string> factor_columns(int k, const char* prefix = "factor") {
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

// Dataset directories: one CSV per view (samples x features), optional
// labels.csv / confounds.csv / truth.json, indexed by dataset.json.

struct LoadedData {
  MultiViewDataset data;
  std::optional<GroundTruth> truth;
  std::optional<PreprocessReport> report;
};

void write_dataset(const fs::path& dir, const MultiViewDataset& data,
                   const std::optional<GroundTruth>& truth, bool needs_preprocessing) {
  json index;
  index["views"] = json::array();
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    const std::string file = data.view_names[m] + ".csv";
    io::write_file(dir / file, io::format_table("id", data.feature_names[m], data.sample_ids,
                                                data.views[m].transpose()));
    index["views"].push_back(file);
  }
  index["labels"] = nullptr;
  index["label_column"] = "";
  if (data.labels) {
    std::string text = "id,group\n";
    for (std::size_t n = 0; n < data.num_samples(); ++n)
      text += data.sample_ids[n] + "," + data.group_names[(*data.labels)[n]] + "\n";
    io::write_file(dir / "labels.csv", text);
    index["labels"] = "labels.csv";
    index["label_column"] = "group";
  }
  index["confounds"] = nullptr;
  if (data.confounds) {
    io::write_file(dir / "confounds.csv", io::format_table("id", data.confound_names,
                                                           data.sample_ids,
                                                           data.confounds->transpose()));
    index["confounds"] = "confounds.csv";
  }
  index["truth"] = nullptr;
  if (truth) {
    io::write_file(dir / "truth.json", ground_truth_to_json(*truth));
    index["truth"] = "truth.json";
  }
  index["needs_preprocessing"] = needs_preprocessing;
  write_json(dir / "dataset.json", index);
}

LoadedData load_dataset_dir(const fs::path& dir, const PreprocessOptions& options_pp,
                            Manifest* manifest) {
  const fs::path index_path = dir / "dataset.json";
  require_input(index_path, "dataset index");
  const json index = read_json(index_path);
  if (manifest) manifest->input(index_path);

  std::vector<fs::path> views;
  for (const auto& v : index.at("views")) {
    const fs::path p = dir / v.get<std::string>();
    require_input(p, "view file");
    if (manifest) manifest->input(p);
    views.push_back(p);
  }
  LoadOptions options;
  if (index.contains("labels") && index["labels"].is_string()) {
    options.labels_path = dir / index["labels"].get<std::string>();
    require_input(*options.labels_path, "labels file");
    if (manifest) manifest->input(*options.labels_path);
    options.label_column = index.value("label_column", "");
  }
  if (index.contains("confounds") && index["confounds"].is_string()) {
    options.confounds_path = dir / index["confounds"].get<std::string>();
    require_input(*options.confounds_path, "confounds file");
    if (manifest) manifest->input(*options.confounds_path);
  }
  LoadedData out;
  out.data = load_views(views, options);
  if (index.contains("truth") && index["truth"].is_string()) {
    const fs::path t = dir / index["truth"].get<std::string>();
    require_input(t, "ground truth");
    if (manifest) manifest->input(t);
    out.truth = ground_truth_from_json(io::read_file(t));
  }
  if (index.value("needs_preprocessing", false)) {
    PreprocessReport report;
    out.data = preprocess(out.data, options_pp, report);
    out.report = std::move(report);
  }
  return out;
}

LoadedData load_raw(const DataConfig& cfg, const PreprocessOptions& options, Manifest* manifest) {
  std::vector<fs::path> views;
  for (const auto& v : cfg.views) {
    require_input(v, "view file");
    if (manifest) manifest->input(v);
    views.emplace_back(v);
  }
  LoadOptions load;
  if (!cfg.labels.empty()) {
    require_input(cfg.labels, "labels file");
    if (manifest) manifest->input(cfg.labels);
    load.labels_path = cfg.labels;
    load.label_column = cfg.label_column;
  }
  if (!cfg.confounds.empty()) {
    require_input(cfg.confounds, "confounds file");
    if (manifest) manifest->input(cfg.confounds);
    load.confounds_path = cfg.confounds;
  }
  LoadedData out;
  PreprocessReport report;
  out.data = preprocess(load_views(views, load), options, report);
  out.report = std::move(report);
  return out;
}

/// Input of `fit`: raw views, an explicit dataset directory, or the output
/// of an earlier preprocess or synth stage under the same root.
LoadedData load_fit_input(const RunConfig& config, const fs::path& root, Manifest& manifest) {
  if (!config.data.views.empty()) return load_raw(config.data, config.preprocess, &manifest);
  if (!config.data.dir.empty()) return load_dataset_dir(config.data.dir, config.preprocess, &manifest);
  for (const char* stage : {"preprocess", "synth"})
    if (fs::is_regular_file(root / stage / "dataset.json"))
      return load_dataset_dir(root / stage, config.preprocess, &manifest);
  fail(ErrorKind::Dependency,
       "no input data: give --data DIR or --views, or run synth or preprocess under " +
           root.string() + " first (missing " + (root / "synth" / "dataset.json").string() + ")");
}

void write_error(const fs::path& dir, const Error& e) {
  write_json(dir / "error.json", {{"kind", to_string(e.kind())},
                                  {"message", e.what()},
                                  {"exit_code", exit_code(e.kind())}});
}

std::string draws_csv(const Eigen::MatrixXd& draws, const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) s += ',';
    s += names[i];
  }
  s += '\n';
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    for (Eigen::Index c = 0; c < draws.cols(); ++c) {
      if (c) s += ',';
      s += io::format_double(draws(r, c));
    }
    s += '\n';
  }
  return s;
}

std::string draws_binary(const Eigen::MatrixXd& draws) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = draws;
  std::string s(static_cast<std::size_t>(rm.size()) * sizeof(double), '\0');
  std::memcpy(s.data(), rm.data(), s.size());
  return s;
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string short_num(const json& v) {
  if (!v.is_number()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v.get<double>());
  return buf;
}

}  // namespace

namespace {

void synth_stage(const RunConfig& config, const fs::path& root, const fs::path& dir) {
  Manifest manifest("synth", config);
  const auto t0 = Clock::now();
  json replicates = json::array();
  for (int r = 0; r < config.replicates; ++r) {
    SyntheticScenario scenario = config.scenario;
    scenario.seed = config.seed + static_cast<std::uint64_t>(r);
    const SyntheticData synth = generate(scenario);
    char name[32];
    std::snprintf(name, sizeof name, "replicate_%02d", r + 1);
    const fs::path out = config.replicates == 1 ? dir : dir / name;
    write_dataset(out, synth.data, synth.truth, false);
    replicates.push_back({{"directory", config.replicates == 1 ? "." : name},
                          {"seed", scenario.seed}});
  }
  manifest.set("replicates", std::move(replicates));
  manifest.timing("generate", seconds_since(t0));
  manifest.write(dir);
  std::cout << "synth: wrote " << config.replicates << " dataset(s) to " << dir.string() << "\n";
}

void preprocess_stage(const RunConfig& config, const fs::path& root, const fs::path& dir) {
  Manifest manifest("preprocess", config);
  const auto t0 = Clock::now();
  LoadedData in;
  if (!config.data.views.empty()) {
    in = load_raw(config.data, config.preprocess, &manifest);
  } else {
    in = load_dataset_dir(config.data.dir, config.preprocess, &manifest);
    if (!in.report) {
      PreprocessReport report;
      in.data = preprocess(in.data, config.preprocess, report);
      in.report = std::move(report);
    }
  }
  write_dataset(dir, in.data, in.truth, false);
  io::write_file(dir / "preprocess_report.json", in.report->to_json());
  manifest.timing("preprocess", seconds_since(t0));
  manifest.write(dir);
  std::cout << "preprocess: " << in.data.num_samples() << " samples, "
            << in.data.total_features() << " features -> " << dir.string() << "\n";
}

void fit_stage(const RunConfig& config, const fs::path& root, const fs::path& dir) {
  Manifest manifest("fit", config);
  const auto t_load = Clock::now();
  const LoadedData in = load_fit_input(config, root, manifest);
  manifest.timing("load", seconds_since(t_load));

  ModelSpec spec;
  spec.family = config.family;
  spec.view_dims = in.data.view_dims();
  spec.num_samples = static_cast<int>(in.data.num_samples());
  spec.num_factors = config.num_factors;
  spec.hyper = config.hyper;
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("config: ") + e.what());
  }
  const FactorModel model(spec, in.data);
  const ParamLayout& layout = model.layout();

  json blocks = json::object();
  for (Block b : layout.blocks()) blocks[block_name(b)] = layout.slice(b).length;
  manifest.set("parameter_count", layout.size());
  manifest.set("blocks", blocks);

  write_dataset(dir / "data", in.data, in.truth, false);
  if (in.report) io::write_file(dir / "data" / "preprocess_report.json", in.report->to_json());

  SamplerConfig sampler = config.sampler;
  sampler.seed = config.seed;
  const auto t_sample = Clock::now();
  PosteriorDraws draws;
  draws = run_chains(make_target(model), sampler);
  manifest.timing("sample", seconds_since(t_sample));

  json scores = json::array();
  for (double s : draws.initialization_scores) scores.push_back(finite_or_null(s));
  manifest.set("initialization_scores", scores);

  const auto t_write = Clock::now();
  std::vector<std::string> names(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) names[i] = layout.coordinate_name(i);

  const ChainFactorSummary summary = summarize_chains(draws, layout);
  const auto features = qualified_features(in.data);
  json chains = json::array();
  json sidecar;
  sidecar["format"] = to_string(config.draws);
  sidecar["rows"] = draws.retained();
  sidecar["columns"] = layout.size();
  sidecar["coordinates"] = names;
  sidecar["chains"] = json::array();
  if (config.draws == DrawFormat::Binary) {
    sidecar["dtype"] = "float64";
    sidecar["byte_order"] = "native";
    sidecar["layout"] = "row-major, one row per retained draw";
  }
  for (int c = 0; c < static_cast<int>(draws.chains.size()); ++c) {
    const ChainResult& ch = draws.chains[c];
    const std::string stem = "chain_" + std::to_string(c + 1);
    io::write_file(dir / "chains" / (stem + "_W.csv"),
                   io::format_table("feature", factor_columns(spec.num_factors), features,
                                    summary.W[c]));
    io::write_file(dir / "chains" / (stem + "_Z.csv"),
                   io::format_table("id", factor_columns(spec.num_factors), in.data.sample_ids,
                                    summary.Z[c].transpose()));
    json info = {{"chain", c + 1},
                 {"seed", ch.seed},
                 {"step_size", ch.step_size},
                 {"divergences", ch.divergences},
                 {"warmup_divergences", ch.warmup_divergences},
                 {"depth_saturations", ch.depth_saturations},
                 {"mean_accept", ch.accept_stat.size() ? ch.accept_stat.mean() : 0.0},
                 {"mean_log_prob", ch.log_prob.size() ? ch.log_prob.mean() : 0.0}};
    chains.push_back(info);
    if (config.draws != DrawFormat::None) {
      json side = info;
      side["inverse_mass"] = vec(ch.inv_mass);
      if (config.draws == DrawFormat::Csv) {
        side["file"] = stem + ".csv";
        io::write_file(dir / "draws" / (stem + ".csv"), draws_csv(ch.draws, names));
      } else {
        side["file"] = stem + ".bin";
        io::write_file(dir / "draws" / (stem + ".bin"), draws_binary(ch.draws));
      }
      sidecar["chains"].push_back(std::move(side));
    }
  }
  if (config.draws != DrawFormat::None) write_json(dir / "draws" / "draws.json", sidecar);

  const ChainDiagnostics diag = diagnostics(draws);
  std::string csv = "coordinate,rhat,ess_bulk,degenerate\n";
  for (std::size_t i = 0; i < layout.size(); ++i)
    csv += names[i] + "," + io::format_double(diag.rhat[i]) + "," +
           io::format_double(diag.ess_bulk[i]) + "," + (diag.degenerate[i] ? "1" : "0") + "\n";
  io::write_file(dir / "diagnostics.csv", csv);
  int degenerate = 0;
  for (bool d : diag.degenerate) degenerate += d;
  write_json(dir / "diagnostics.json", {{"max_rhat", finite_or_null(diag.max_rhat)},
                                         {"min_ess_bulk", finite_or_null(diag.min_ess)},
                                         {"degenerate_coordinates", degenerate},
                                         {"divergences", diag.divergences}});

  json fit;
  fit["family"] = to_string(spec.family);
  fit["view_names"] = in.data.view_names;
  fit["view_dims"] = spec.view_dims;
  fit["num_samples"] = spec.num_samples;
  fit["num_factors"] = spec.num_factors;
  fit["parameter_count"] = layout.size();
  fit["blocks"] = blocks;
  fit["p0"] = json::array();
  for (int m = 0; m < spec.num_views(); ++m) fit["p0"].push_back(spec.p0(m));
  fit["retained_draws"] = draws.retained();
  fit["selected_initialization"] = draws.selected_initialization;
  fit["initialization_scores"] = scores;
  fit["initialization_errors"] = draws.initialization_errors;
  fit["chains"] = chains;
  write_json(dir / "fit.json", fit);
  manifest.timing("write", seconds_since(t_write));
  manifest.write(dir);
  std::cout << "fit: " << to_string(spec.family) << ", " << layout.size() << " parameters, "
            << draws.chains.size() << " chains, max R-hat " << diag.max_rhat << " -> "
            << dir.string() << "\n";
}

void analyze_stage(const RunConfig& config, const fs::path& root, const fs::path& dir) {
  const fs::path fit_dir = root / "fit";
  Manifest manifest("analyze", config);
  const auto t0 = Clock::now();

  manifest.input(fit_dir / "fit.json");
  const json fit = read_json(fit_dir / "fit.json");
  const LoadedData in = load_dataset_dir(fit_dir / "data", config.preprocess, &manifest);
  const MultiViewDataset& data = in.data;

  ChainFactorSummary summary;
  summary.view_dims = fit.at("view_dims").get<std::vector<int>>();
  const int num_chains = static_cast<int>(fit.at("chains").size());
  for (int c = 1; c <= num_chains; ++c) {
    const std::string stem = "chain_" + std::to_string(c);
    const fs::path w = fit_dir / "chains" / (stem + "_W.csv");
    const fs::path z = fit_dir / "chains" / (stem + "_Z.csv");
    require_input(w, "fit artifact");
    require_input(z, "fit artifact");
    manifest.input(w);
    manifest.input(z);
    summary.W.push_back(io::read_table(w).values);
    summary.Z.push_back(io::read_table(z).values.transpose());
  }

  RobustFactorSet robust = match_factors(summary, config.analysis.cosine);
  const Eigen::MatrixXd X = data.stacked();
  annotate(robust, X, data.labels, data.num_groups(), config.analysis.welch);

  json analysis = json::parse(to_json(robust, data.group_names));
  analysis["welch"] = config.analysis.welch;
  analysis["view_names"] = data.view_names;
  analysis["sample_ids"] = data.sample_ids;
  analysis["labels"] = data.labels ? json(*data.labels) : json(nullptr);
  if (in.truth) {
    const RecoveryReport rec = recovery_score(robust, *in.truth);
    analysis["recovery"] = json::parse(to_json(rec));
    io::write_file(dir / "recovery.json", to_json(rec) + "\n");
  }
  write_json(dir / "analysis.json", analysis);

  const int K = robust.size();
  const auto cols = factor_columns(K);
  const Eigen::MatrixXd W = robust.W();
  const Eigen::MatrixXd Z =
      K > 0 ? robust.Z() : Eigen::MatrixXd(0, static_cast<Eigen::Index>(data.num_samples()));
  int offset = 0;
  for (std::size_t m = 0; m < data.num_views(); ++m) {
    const int D = data.view_dims()[m];
    io::write_file(dir / ("robust_loadings_" + data.view_names[m] + ".csv"),
                   io::format_table("feature", cols, data.feature_names[m],
                                    W.middleRows(offset, D)));
    offset += D;
  }
  io::write_file(dir / "latent_scores.csv",
                 io::format_table("id", cols, data.sample_ids, Z.transpose()));

  if (data.labels) {
    Eigen::MatrixXd contrib(K, data.num_groups());
    for (int k = 0; k < K; ++k)
      for (int g = 0; g < data.num_groups(); ++g)
        contrib(k, g) = robust.factors[k].contributions[g];
    io::write_file(dir / "contributions.csv",
                   io::format_table("factor", data.group_names, cols, contrib));
  }

  json tests = json::array();
  for (int k = 0; k < K; ++k) {
    json t = {{"factor", k + 1}};
    if (analysis["factors"][k].contains("tests")) t["tests"] = analysis["factors"][k]["tests"];
    if (!robust.factors[k].tests_error.empty()) t["error"] = robust.factors[k].tests_error;
    tests.push_back(std::move(t));
  }
  write_json(dir / "tests.json", {{"group_names", data.group_names}, {"factors", tests}});

  json cov = {{"fraction", json::array()}, {"ranking", json::array()}, {"total", 0.0}};
  if (K > 0) {
    const CovarianceExplained ce = covariance_explained(W, Z, X);
    cov["fraction"] = ce.fraction;
    for (int r : ce.ranking) cov["ranking"].push_back(r + 1);
    cov["total"] = ce.total;
  }
  write_json(dir / "covariance_explained.json", cov);

  for (int k : config.analysis.project) {
    if (k >= K)
      fail(ErrorKind::InvalidArgument, "--project " + std::to_string(k) + ": only " +
                                           std::to_string(K) + " robust factors");
    const Eigen::MatrixXd P = project_to_data(W, Z, k);
    int off = 0;
    for (std::size_t m = 0; m < data.num_views(); ++m) {
      const int D = data.view_dims()[m];
      io::write_file(dir / ("projection_factor" + std::to_string(k + 1) + "_" +
                            data.view_names[m] + ".csv"),
                     io::format_table("id", data.feature_names[m], data.sample_ids,
                                      P.middleRows(off, D).transpose()));
      off += D;
    }
  }

  io::write_file(dir / "contributions.svg", contributions_svg(analysis));
  io::write_file(dir / "abs_scores.svg", abs_scores_svg(analysis));
  manifest.set("num_robust", K);
  manifest.timing("analyze", seconds_since(t0));
  manifest.write(dir);
  std::cout << "analyze: " << K << " robust factor(s) at cosine " << config.analysis.cosine
            << " -> " << dir.string() << "\n";
}

void report_stage(const RunConfig& config, const fs::path& root, const fs::path& dir) {
  const fs::path src = root / "analysis" / "analysis.json";
  Manifest manifest("report", config);
  const auto t0 = Clock::now();
  manifest.input(src);
  const json a = read_json(src);

  io::write_file(dir / "contributions.svg", contributions_svg(a));
  io::write_file(dir / "abs_scores.svg", abs_scores_svg(a));

  const auto groups = a.value("group_names", std::vector<std::string>{});
  std::string md = "# Robust factors\n\n";
  md += "Chains: " + std::to_string(a.at("num_chains").get<int>()) +
        ", cosine threshold: " + short_num(a.at("threshold")) +
        ", robust factors: " + std::to_string(a.at("num_robust").get<int>()) + "\n\n";
  if (!a.at("factors").empty()) {
    md += "| factor | support | covariance explained |";
    for (const auto& g : groups) md += " " + g + " |";
    md += " F | p |\n|---|---|---|";
    for (std::size_t g = 0; g < groups.size(); ++g) md += "---|";
    md += "---|---|\n";
    for (const auto& f : a["factors"]) {
      md += "| " + std::to_string(f.at("index").get<int>() + 1) + " | " +
            std::to_string(f.at("support").get<int>()) + " | " +
            short_num(f.at("covariance_explained")) + " |";
      for (const auto& c : f.at("contributions")) md += " " + short_num(c) + " |";
      if (f.contains("tests"))
        md += " " + short_num(f["tests"]["F"]) + " | " + short_num(f["tests"]["p"]) + " |\n";
      else
        md += " - | - |\n";
    }
  }
  if (a.contains("recovery")) {
    const json& r = a["recovery"];
    md += "\n# Recovery against ground truth\n\n";
    md += "Unmatched true factors: " + std::to_string(r.at("unmatched_true").get<int>()) +
          ", spurious robust factors: " + std::to_string(r.at("spurious").get<int>()) + "\n\n";
    md += "| true factor | robust factor | similarity |\n|---|---|---|\n";
    for (const auto& m : r.at("matches")) {
      const int rf = m.at("robust_factor").get<int>();
      md += "| " + std::to_string(m.at("true_factor").get<int>() + 1) + " | " +
            (rf < 0 ? std::string("-") : std::to_string(rf + 1)) + " | " +
            short_num(m.at("similarity")) + " |\n";
    }
  }
  io::write_file(dir / "summary.md", md);
  manifest.timing("report", seconds_since(t0));
  manifest.write(dir);
  std::cout << "report: -> " << dir.string() << "\n";
}

}  // namespace

namespace {

/// Runs a stage; a failure leaves error.json with the kind and message.
template <typename Stage>
void guarded(const RunConfig& config, const fs::path& root, const std::string& stage, Stage body) {
  const fs::path dir = prepare_stage(root, stage);
  try {
    body(config, root, dir);
  } catch (const Error& e) {
    write_error(dir, e);
    throw;
  }
}

}  // namespace

void cmd_synth(const RunConfig& config, const fs::path& root) {
  guarded(config, root, "synth", synth_stage);
}

void cmd_preprocess(const RunConfig& config, const fs::path& root) {
  if (config.data.views.empty() && config.data.dir.empty())
    fail(ErrorKind::Config, "preprocess needs --views (raw view CSVs) or --data DIR");
  guarded(config, root, "preprocess", preprocess_stage);
}

void cmd_fit(const RunConfig& config, const fs::path& root) {
  guarded(config, root, "fit", fit_stage);
}

void cmd_analyze(const RunConfig& config, const fs::path& root) {
  require_input(root / "fit" / "fit.json", "fit artifact");
  guarded(config, root, "analysis", analyze_stage);
}

void cmd_report(const RunConfig& config, const fs::path& root) {
  require_input(root / "analysis" / "analysis.json", "analysis artifact");
  guarded(config, root, "report", report_stage);
}

}  // namespace sgfa::cli
