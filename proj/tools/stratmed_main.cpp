#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stratmed/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StratMed medication recommendation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool use_synth_defaults = false;
  bool wo_p = false, wo_s = false, wo_sg = false;
  app.add_option("--config", config_path, "flat key=value config file");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--seed", seed, "seed override")->each([&](const std::string&) {
    seed_given = true;
  });
  app.add_flag("--synth", use_synth_defaults, "use built-in synthetic data defaults");
  app.add_flag("--wo-p", wo_p, "ablation: skip pre-training");
  app.add_flag("--wo-s", wo_s, "ablation: single-layer stratification");
  app.add_flag("--wo-sg", wo_sg, "ablation: bypass graph layers (implies --wo-s)");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and DDI file");
  auto* strat = app.add_subcommand("stratify", "count co-occurrences and build buckets");
  auto* pre = app.add_subcommand("pretrain", "train the pre-training model");
  auto* train = app.add_subcommand("train", "train the full model (runs prerequisites)");
  auto* eval = app.add_subcommand("evaluate", "full pipeline with bootstrap evaluation");

  std::vector<int> levels = {100, 110, 120, 130, 140};
  auto* dist = app.add_subcommand("distortion-study", "train/test gap across distortion levels");
  dist->add_option("--levels", levels, "distortion levels")->delimiter(',');

  std::vector<int> mus = {5, 10, 15, 20};
  auto* robust = app.add_subcommand("robustness-study", "Jaccard delta under sparsity filters");
  robust->add_option("--mus", mus, "low-frequency thresholds (percent)")->delimiter(',');

  std::string patient_id;
  std::size_t visit_number = 1;
  auto* cs = app.add_subcommand("case-study", "relevance matrices and prediction diff");
  cs->add_option("--patient", patient_id, "patient id")->required();
  cs->add_option("--visit", visit_number, "1-based visit number")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    stratmed::RunConfig cfg;
    if (!config_path.empty()) cfg = stratmed::parse_config_file(config_path);
    if (use_synth_defaults) cfg.has_synth_source = true;
    if (seed_given) cfg.apply_seed(seed);
    cfg.ablation.wo_p |= wo_p;
    cfg.ablation.wo_s |= wo_s;
    if (wo_sg) {
      cfg.ablation.wo_sg = true;
      cfg.ablation.wo_s = true;
    }

    stratmed::PipelineRunner runner(cfg, out_dir);
    if (gen->parsed()) {
      runner.cmd_gen_data();
    } else if (strat->parsed()) {
      runner.cmd_stratify();
    } else if (pre->parsed()) {
      runner.cmd_pretrain();
    } else if (train->parsed()) {
      runner.cmd_train();
    } else if (eval->parsed()) {
      const stratmed::MetricsReport report = runner.cmd_evaluate();
      std::printf("%s\n", report.to_json().c_str());
    } else if (dist->parsed()) {
      runner.cmd_distortion_study(levels);
    } else if (robust->parsed()) {
      runner.cmd_robustness_study(mus);
    } else if (cs->parsed()) {
      runner.cmd_case_study(patient_id, visit_number);
    }
    runner.write_manifest();
    return kExitOk;
  } catch (const stratmed::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const stratmed::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const stratmed::TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return kExitTraining;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
