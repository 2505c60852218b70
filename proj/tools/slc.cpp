// slc: simulate | ingest | features | train | eval | predict

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sloclas/cli.hpp"

namespace cli = sloclas::cli;

int main(int argc, char** argv) {
  CLI::App app{"Sound localization and classification baseline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--set", overrides, "override a config key (key=value)");

  std::string out, root, manifest, features, model, wav, report, posterior, log_path;
  std::optional<double> eta;
  bool force = false;

  auto* sim = app.add_subcommand("simulate", "synthesize a 4-channel dataset");
  sim->add_option("--out", out, "output directory")->required();

  auto* ingest = app.add_subcommand("ingest", "index a recorded corpus into a manifest");
  ingest->add_option("--root", root, "corpus root")->required();
  ingest->add_option("--out", out, "manifest CSV to write")->required();

  auto* feat = app.add_subcommand("features", "extract GCC-PHAT + MFCC segment features");
  feat->add_option("--manifest", manifest)->required();
  feat->add_option("--out", out, "feature directory")->required();

  auto* tr = app.add_subcommand("train", "train the multitask network");
  tr->add_option("--manifest", manifest)->required();
  tr->add_option("--features", features)->required();
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--log", log_path, "per-epoch CSV (default <out>.metrics.csv)");
  tr->add_flag("--force", force, "overwrite an existing checkpoint");

  auto* ev = app.add_subcommand("eval", "score a checkpoint on the test split");
  ev->add_option("--model", model)->required();
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--features", features)->required();
  ev->add_option("--eta", eta, "DoA tolerance in degrees");
  ev->add_option("--report", report, "JSON report path (default <model>.report.json)");

  auto* pr = app.add_subcommand("predict", "predict DoA and class for one WAV");
  pr->add_option("--model", model)->required();
  pr->add_option("--wav", wav)->required();
  pr->add_option("--posterior", posterior, "write the 360-bin posterior as float32");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfig;
  }

  sloclas::Config cfg;
  const int cfg_status = cli::guarded([&] {
    if (!config_path.empty()) cfg = sloclas::Config::load(config_path);
    for (const auto& o : overrides) cfg.set_override(o);
    return cli::kExitOk;
  }, std::cerr);
  if (cfg_status != cli::kExitOk) return cfg_status;

  cli::Streams io{std::cout, std::cerr};
  if (*sim) return cli::cmd_simulate(cfg, out, io);
  if (*ingest) return cli::cmd_ingest(cfg, root, out, io);
  if (*feat) return cli::cmd_features(cfg, manifest, out, io);
  if (*tr) {
    std::optional<std::filesystem::path> lp;
    if (!log_path.empty()) lp = log_path;
    return cli::cmd_train(cfg, manifest, features, out, force, io, lp);
  }
  if (*ev) return cli::cmd_eval(cfg, model, manifest, features, eta, report.empty() ? model + ".report.json" : report, io);
  if (*pr) {
    std::optional<std::filesystem::path> pp;
    if (!posterior.empty()) pp = posterior;
    return cli::cmd_predict(cfg, model, wav, pp, io);
  }
  return cli::kExitConfig;
}
