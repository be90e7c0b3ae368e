#include "run_config.hpp"

#include <cmath>
#include <set>

#include "sgfa/error.hpp"
#include "sgfa/io.hpp"

namespace sgfa::cli {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) fail(ErrorKind::Config, "config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      fail(ErrorKind::Config, "config: unknown key '" + key + "' in '" + where + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, "config: '" + where + "." + key + "' has the wrong type");
  }
}

void positive(double v, const char* what) {
  if (!(std::isfinite(v) && v > 0.0))
    fail(ErrorKind::Config, std::string("config: ") + what + " must be positive");
}

}  // namespace

const char* to_string(DrawFormat f) {
  switch (f) {
    case DrawFormat::Csv: return "csv";
    case DrawFormat::Binary: return "binary";
    case DrawFormat::None: return "none";
  }
  return "?";
}

DrawFormat parse_draw_format(const std::string& text) {
  if (text == "csv") return DrawFormat::Csv;
  if (text == "binary") return DrawFormat::Binary;
  if (text == "none") return DrawFormat::None;
  fail(ErrorKind::Config, "config: draws must be csv, binary or none, got '" + text + "'");
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "synthetic") {
    num_factors = 5;
    sampler.samples = 2500;
  } else if (name == "real") {
    num_factors = 20;
    sampler.samples = 6000;
  } else {
    fail(ErrorKind::Config, "config: unknown preset '" + name + "' (synthetic or real)");
  }
  sampler.warmup = 1000;
  preset = name;
}

void RunConfig::validate() const {
  try {
    sampler.validate();
    scenario.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("config: ") + e.what());
  }
  if (sampler.warmup < 20) fail(ErrorKind::Config, "config: sampler.warmup must be >= 20");
  if (num_factors < 1) fail(ErrorKind::Config, "config: model.num_factors must be >= 1");
  positive(hyper.a_rho, "model.a_rho");
  positive(hyper.b_rho, "model.b_rho");
  positive(hyper.nu, "model.nu");
  positive(hyper.s, "model.s");
  positive(hyper.a_alpha, "model.a_alpha");
  positive(hyper.b_alpha, "model.b_alpha");
  for (double p : hyper.p0) positive(p, "every model.p0 entry");
  if (replicates < 1) fail(ErrorKind::Config, "config: synthetic.replicates must be >= 1");
  if (!(analysis.cosine > 0.0 && analysis.cosine <= 1.0))
    fail(ErrorKind::Config, "config: analysis.cosine must lie in (0, 1]");
  for (int k : analysis.project)
    if (k < 0) fail(ErrorKind::Config, "config: analysis.project entries must be >= 0");
  const auto fraction = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!fraction(preprocess.feature_threshold))
    fail(ErrorKind::Config, "config: preprocess.feature_threshold must lie in (0, 1]");
  if (preprocess.sample_threshold && !fraction(*preprocess.sample_threshold))
    fail(ErrorKind::Config, "config: preprocess.sample_threshold must lie in (0, 1]");
  if (!data.dir.empty() && !data.views.empty())
    fail(ErrorKind::Config, "config: give either data.dir or data.views, not both");
}

json RunConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["seed"] = seed;
  j["model"] = {{"family", sgfa::to_string(family)},
                {"num_factors", num_factors},
                {"p0", hyper.p0.empty() ? json(nullptr) : json(hyper.p0)},
                {"a_rho", hyper.a_rho},
                {"b_rho", hyper.b_rho},
                {"nu", hyper.nu},
                {"s", hyper.s},
                {"a_alpha", hyper.a_alpha},
                {"b_alpha", hyper.b_alpha}};
  j["sampler"] = {{"chains", sampler.chains},
                  {"warmup", sampler.warmup},
                  {"samples", sampler.samples},
                  {"target_accept", sampler.target_accept},
                  {"max_tree_depth", sampler.max_tree_depth},
                  {"init_jitter", sampler.init_jitter},
                  {"initializations", sampler.initializations},
                  {"threads", sampler.threads},
                  {"max_delta_h", sampler.max_delta_h}};
  j["synthetic"] = {{"num_factors", scenario.num_factors},
                    {"group_sizes", scenario.group_sizes},
                    {"view_dims", scenario.view_dims},
                    {"noise_sd", scenario.noise_sd},
                    {"lambda_active", scenario.lambda_active},
                    {"lambda_inactive_w", scenario.lambda_inactive_w},
                    {"lambda_inactive_z", scenario.lambda_inactive_z},
                    {"tau_z", scenario.tau_z},
                    {"nu", scenario.nu},
                    {"s", scenario.s},
                    {"replicates", replicates}};
  j["data"] = {{"dir", data.dir},
               {"views", data.views},
               {"labels", data.labels},
               {"label_column", data.label_column},
               {"confounds", data.confounds}};
  j["preprocess"] = {
      {"sample_threshold",
       preprocess.sample_threshold ? json(*preprocess.sample_threshold) : json(nullptr)},
      {"sample_view", preprocess.sample_view ? json(*preprocess.sample_view) : json(nullptr)},
      {"feature_threshold", preprocess.feature_threshold},
      {"impute", preprocess.impute},
      {"regress", preprocess.regress},
      {"standardize", preprocess.standardize},
      {"sd_convention",
       preprocess.sd_convention == SdConvention::Population ? "population" : "sample"}};
  j["analysis"] = {{"cosine", analysis.cosine},
                   {"welch", analysis.welch},
                   {"project", analysis.project}};
  j["output"] = {{"dir", output_dir}, {"draws", to_string(draws)}};
  return j;
}

void RunConfig::merge(const json& j) {
  check_keys(j, "config",
             {"preset", "seed", "model", "sampler", "synthetic", "data", "preprocess", "analysis",
              "output"});
  if (j.contains("preset")) {
    std::string p;
    read(j, "preset", p, "config");
    apply_preset(p);
  }
  read(j, "seed", seed, "config");

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model",
               {"family", "num_factors", "p0", "a_rho", "b_rho", "nu", "s", "a_alpha", "b_alpha"});
    if (m.contains("family")) {
      std::string f;
      read(m, "family", f, "model");
      family = parse_model_family(f);
    }
    read(m, "num_factors", num_factors, "model");
    if (m.contains("p0") && !m["p0"].is_null()) read(m, "p0", hyper.p0, "model");
    read(m, "a_rho", hyper.a_rho, "model");
    read(m, "b_rho", hyper.b_rho, "model");
    read(m, "nu", hyper.nu, "model");
    read(m, "s", hyper.s, "model");
    read(m, "a_alpha", hyper.a_alpha, "model");
    read(m, "b_alpha", hyper.b_alpha, "model");
  }
  if (j.contains("sampler")) {
    const json& s = j["sampler"];
    check_keys(s, "sampler",
               {"chains", "warmup", "samples", "target_accept", "max_tree_depth", "init_jitter",
                "initializations", "threads", "max_delta_h"});
    read(s, "chains", sampler.chains, "sampler");
    read(s, "warmup", sampler.warmup, "sampler");
    read(s, "samples", sampler.samples, "sampler");
    read(s, "target_accept", sampler.target_accept, "sampler");
    read(s, "max_tree_depth", sampler.max_tree_depth, "sampler");
    read(s, "init_jitter", sampler.init_jitter, "sampler");
    read(s, "initializations", sampler.initializations, "sampler");
    read(s, "threads", sampler.threads, "sampler");
    read(s, "max_delta_h", sampler.max_delta_h, "sampler");
  }
  if (j.contains("synthetic")) {
    const json& s = j["synthetic"];
    check_keys(s, "synthetic",
               {"num_factors", "group_sizes", "view_dims", "noise_sd", "lambda_active",
                "lambda_inactive_w", "lambda_inactive_z", "tau_z", "nu", "s", "replicates"});
    read(s, "num_factors", scenario.num_factors, "synthetic");
    read(s, "group_sizes", scenario.group_sizes, "synthetic");
    read(s, "view_dims", scenario.view_dims, "synthetic");
    read(s, "noise_sd", scenario.noise_sd, "synthetic");
    read(s, "lambda_active", scenario.lambda_active, "synthetic");
    read(s, "lambda_inactive_w", scenario.lambda_inactive_w, "synthetic");
    read(s, "lambda_inactive_z", scenario.lambda_inactive_z, "synthetic");
    read(s, "tau_z", scenario.tau_z, "synthetic");
    read(s, "nu", scenario.nu, "synthetic");
    read(s, "s", scenario.s, "synthetic");
    read(s, "replicates", replicates, "synthetic");
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, "data", {"dir", "views", "labels", "label_column", "confounds"});
    read(d, "dir", data.dir, "data");
    read(d, "views", data.views, "data");
    read(d, "labels", data.labels, "data");
    read(d, "label_column", data.label_column, "data");
    read(d, "confounds", data.confounds, "data");
  }
  if (j.contains("preprocess")) {
    const json& p = j["preprocess"];
    check_keys(p, "preprocess",
               {"sample_threshold", "sample_view", "feature_threshold", "impute", "regress",
                "standardize", "sd_convention"});
    if (p.contains("sample_threshold")) {
      if (p["sample_threshold"].is_null()) {
        preprocess.sample_threshold.reset();
      } else {
        double v = 0.0;
        read(p, "sample_threshold", v, "preprocess");
        preprocess.sample_threshold = v;
      }
    }
    if (p.contains("sample_view")) {
      if (p["sample_view"].is_null()) {
        preprocess.sample_view.reset();
      } else {
        int v = 0;
        read(p, "sample_view", v, "preprocess");
        preprocess.sample_view = v;
      }
    }
    read(p, "feature_threshold", preprocess.feature_threshold, "preprocess");
    read(p, "impute", preprocess.impute, "preprocess");
    read(p, "regress", preprocess.regress, "preprocess");
    read(p, "standardize", preprocess.standardize, "preprocess");
    if (p.contains("sd_convention")) {
      std::string c;
      read(p, "sd_convention", c, "preprocess");
      if (c == "population")
        preprocess.sd_convention = SdConvention::Population;
      else if (c == "sample")
        preprocess.sd_convention = SdConvention::Sample;
      else
        fail(ErrorKind::Config, "config: preprocess.sd_convention must be population or sample");
    }
  }
  if (j.contains("analysis")) {
    const json& a = j["analysis"];
    check_keys(a, "analysis", {"cosine", "welch", "project"});
    read(a, "cosine", analysis.cosine, "analysis");
    read(a, "welch", analysis.welch, "analysis");
    read(a, "project", analysis.project, "analysis");
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    check_keys(o, "output", {"dir", "draws"});
    read(o, "dir", output_dir, "output");
    if (o.contains("draws")) {
      std::string d;
      read(o, "draws", d, "output");
      draws = parse_draw_format(d);
    }
  }
}

json read_config_file(const std::string& path) {
  const std::string text = io::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, "config: " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace sgfa::cli
