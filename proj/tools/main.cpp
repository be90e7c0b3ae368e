#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "commands.hpp"
#include "sgfa/error.hpp"

namespace {

struct Flags {
  std::string config_file;
  std::optional<std::string> preset;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<int> factors;
  std::optional<int> chains;
  std::optional<int> warmup;
  std::optional<int> samples;
  std::optional<int> inits;
  std::optional<int> threads;
  std::optional<double> cosine;
  bool welch = false;
  std::optional<std::string> draws;
  std::optional<int> replicates;
  std::optional<std::string> data;
  std::vector<std::string> views;
  std::optional<std::string> labels;
  std::optional<std::string> label_column;
  std::optional<std::string> confounds;
  std::vector<int> project;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_file, "JSON run configuration");
  sub->add_option("--preset", f.preset, "synthetic (K=5) or real (K=20)");
  sub->add_option("--out", f.out, "output root (default $SGFA_OUTPUT_ROOT or sgfa_output)");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--model", f.model, "sparse-gfa or gfa");
  sub->add_option("--factors", f.factors, "initial number of factors K");
  sub->add_option("--chains", f.chains, "sampling chains");
  sub->add_option("--warmup", f.warmup, "warm-up iterations per chain");
  sub->add_option("--samples", f.samples, "total iterations per chain, warm-up included");
  sub->add_option("--inits", f.inits, "random initialisations");
  sub->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  sub->add_option("--cosine", f.cosine, "cosine threshold for robust factors");
  sub->add_flag("--welch", f.welch, "Welch t-tests instead of pooled variance");
  sub->add_option("--draws", f.draws, "draw persistence: csv, binary or none");
  sub->add_option("--replicates", f.replicates, "synthetic replicates (seed, seed+1, ...)");
  sub->add_option("--data", f.data, "dataset directory containing dataset.json");
  sub->add_option("--views", f.views, "raw view CSV files");
  sub->add_option("--labels", f.labels, "subgroup label CSV");
  sub->add_option("--label-column", f.label_column, "label column name");
  sub->add_option("--confounds", f.confounds, "confound CSV");
  sub->add_option("--project", f.project, "robust factors (0-based) to project to data space");
}

sgfa::cli::RunConfig build_config(const Flags& f) {
  using namespace sgfa;
  cli::RunConfig c;
  nlohmann::json file;
  if (!f.config_file.empty()) file = cli::read_config_file(f.config_file);
  if (f.preset) {
    c.apply_preset(*f.preset);
    if (file.is_object()) file.erase("preset");
  }
  if (!file.is_null()) c.merge(file);

  if (f.seed) c.seed = *f.seed;
  if (f.model) {
    try {
      c.family = parse_model_family(*f.model);
    } catch (const Error& e) {
      fail(ErrorKind::Config, e.what());
    }
  }
  if (f.factors) c.num_factors = *f.factors;
  if (f.chains) c.sampler.chains = *f.chains;
  if (f.warmup) c.sampler.warmup = *f.warmup;
  if (f.samples) c.sampler.samples = *f.samples;
  if (f.inits) c.sampler.initializations = *f.inits;
  if (f.threads) c.sampler.threads = *f.threads;
  if (f.cosine) c.analysis.cosine = *f.cosine;
  if (f.welch) c.analysis.welch = true;
  if (f.draws) c.draws = cli::parse_draw_format(*f.draws);
  if (f.replicates) c.replicates = *f.replicates;
  if (f.data) c.data.dir = *f.data;
  if (!f.views.empty()) c.data.views = f.views;
  if (f.labels) c.data.labels = *f.labels;
  if (f.label_column) c.data.label_column = *f.label_column;
  if (f.confounds) c.data.confounds = *f.confounds;
  if (!f.project.empty()) c.analysis.project = f.project;

  if (f.out) {
    c.output_dir = *f.out;
  } else if (c.output_dir.empty()) {
    const char* env = std::getenv("SGFA_OUTPUT_ROOT");
    c.output_dir = env && *env ? env : "sgfa_output";
  }
  c.sampler.seed = c.seed;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse group factor analysis with Hamiltonian Monte Carlo"};
  app.set_version_flag("--version", SGFA_VERSION);
  app.require_subcommand(1);
  Flags flags;
  using Command = void (*)(const sgfa::cli::RunConfig&, const std::filesystem::path&);
  const std::pair<const char*, Command> commands[] = {
      {"synth", sgfa::cli::cmd_synth},     {"preprocess", sgfa::cli::cmd_preprocess},
      {"fit", sgfa::cli::cmd_fit},         {"analyze", sgfa::cli::cmd_analyze},
      {"report", sgfa::cli::cmd_report}};
  const char* descriptions[] = {"generate synthetic datasets with ground truth",
                                "filter, impute, deconfound and standardise raw views",
                                "fit the factor model with multi-start NUTS",
                                "select robust factors and compute subgroup statistics",
                                "render plots and a summary from the analysis JSON"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].first, descriptions[i]));
    add_common(subs.back(), flags);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const sgfa::cli::RunConfig config = build_config(flags);
    for (std::size_t i = 0; i < subs.size(); ++i)
      if (subs[i]->parsed()) commands[i].second(config, config.output_dir);
  } catch (const sgfa::Error& e) {
    std::cerr << "sgfa: " << sgfa::to_string(e.kind()) << " error: " << e.what() << "\n";
    return sgfa::cli::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "sgfa: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
