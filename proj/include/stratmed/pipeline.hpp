#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stratmed/config.hpp"
#include "stratmed/metrics.hpp"

namespace stratmed {

// Raised when a training stage fails; the CLI maps it to exit code 4.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageRecord {
  std::string name;
  double seconds = 0.0;
  bool cache_hit = false;
};

inline constexpr const char* kCodeVersion = "0.1.0";

// Runs the pipeline stages against one output directory. Stages are cached
// by a content hash of their inputs: a rerun with identical config and seed
// reports cache hits and leaves artifacts byte-identical.
class PipelineRunner {
 public:
  PipelineRunner(RunConfig cfg, std::filesystem::path out_dir);

  // Subcommand entry points; each ensures its prerequisites first.
  void cmd_gen_data();
  void cmd_stratify();
  void cmd_pretrain();
  void cmd_train();
  MetricsReport cmd_evaluate();  // the full pipeline: data -> ... -> bootstrap report
  void cmd_distortion_study(const std::vector<int>& levels);
  void cmd_robustness_study(const std::vector<int>& mus);
  void cmd_case_study(const std::string& patient_id, std::size_t visit_number);

  // Written atomically; call after the command finishes.
  void write_manifest();

  const std::vector<StageRecord>& stages() const { return stages_; }
  std::filesystem::path dataset_file() const;
  std::filesystem::path ddi_file() const;
  std::filesystem::path model_checkpoint() const { return out_ / "model.ckpt"; }
  std::filesystem::path report_json() const { return out_ / "report.json"; }

 private:
  struct Buckets {
    CoOccurrence cooc;
    RelevanceBucket safety, mapping_diag, mapping_proc;
  };

  void ensure_data();
  void ensure_stratify();
  void ensure_pretrain();
  void ensure_train();
  const Dataset& dataset();
  const DdiMatrix& ddi();
  const Buckets& buckets();

  bool stage_cached(const std::string& stage, const std::string& input_hash,
                    const std::vector<std::filesystem::path>& outputs);
  void store_stage_key(const std::string& stage, const std::string& input_hash);
  void record_stage(const std::string& name, double seconds, bool hit);
  std::string data_input_hash() const;

  StratMedModel build_model(const AblationFlags& abl);

  RunConfig cfg_;
  std::filesystem::path out_;
  std::vector<StageRecord> stages_;
  std::chrono::steady_clock::time_point started_;
  std::optional<Dataset> dataset_;
  std::optional<DdiMatrix> ddi_;
  std::optional<Buckets> buckets_;
  bool pretrain_done_ = false;
  bool train_done_ = false;
};

// One study cell: train a variant on the given data and report train/test
// Jaccard. Shared by the distortion and robustness protocols and by tests.
struct CellResult {
  double train_jaccard = 0.0;
  double test_jaccard = 0.0;
  double test_ddi = 0.0;
};

CellResult run_training_cell(const Dataset& data, const DdiMatrix& ddi,
                             const StratParams& strat, const Hyperparams& hyper,
                             const AblationFlags& ablation);

}  // namespace stratmed
