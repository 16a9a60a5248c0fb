#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "stratmed/layers.hpp"
#include "stratmed/metrics.hpp"

namespace stratmed {

struct Hyperparams {
  std::size_t dim = 64;
  double delta = 0.5;   // prediction threshold
  double beta = 0.95;   // accuracy-vs-ddi balance
  double gamma = 0.06;  // bce weight inside the accuracy term
  double lr = 0.0005;
  double weight_decay = 0.05;
  std::size_t epochs = 15;
  double dropout = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AblationFlags {
  bool wo_p = false;   // skip pre-training transfer
  bool wo_s = false;   // collapse stratification to a single layer
  bool wo_sg = false;  // bypass both graph layers (implies wo_s)
};

Tensor ddi_to_tensor(const DdiMatrix& ddi);

// Prototype recommender: sum-of-embeddings visit encoding through one
// linear+relu head with a sigmoid output.
class PretrainModel {
 public:
  PretrainModel(const EntityVocab& vocab, const Hyperparams& hp);

  Var forward(Tape& t, const Visit& visit, const std::vector<EntityId>& prev_meds,
              bool train, Rng& rng);
  std::vector<Parameter*> params();

  EmbeddingTable e_diag, e_proc, e_med;
  LinearLayer mlp1;

 private:
  std::size_t dim_;
};

// The full model: dual graph representations over the previous visit's
// medications, residual to the prime (pre-training style) representation,
// three GRUs over the visit sequence, linear+sigmoid head.
class StratMedModel {
 public:
  StratMedModel(const EntityVocab& vocab, const Hyperparams& hp, const AblationFlags& abl,
                RelevanceBucket safety, RelevanceBucket mapping_diag,
                RelevanceBucket mapping_proc, DdiMatrix ddi);

  Var forward(Tape& t, std::span<const Visit> history, bool train, Rng& rng);
  std::vector<double> predict(std::span<const Visit> history);  // eval mode
  std::vector<Parameter*> params();
  std::vector<Parameter*> graph_params();

  const Hyperparams& hyper() const { return hyper_; }
  const AblationFlags& ablation() const { return ablation_; }
  const DdiMatrix& ddi() const { return ddi_; }
  const Tensor& ddi_dense() const { return ddi_dense_; }
  const RelevanceBucket& safety_bucket() const { return safety_; }
  const RelevanceBucket& mapping_diag_bucket() const { return mapping_diag_; }
  const RelevanceBucket& mapping_proc_bucket() const { return mapping_proc_; }

  EmbeddingTable e_diag, e_proc, e_med;
  GcnSwLayer gcn_sw;
  GcnMfLayer gcn_diag, gcn_proc;
  GruLayer rnn_d, rnn_p, rnn_m;
  LinearLayer mlp2;

 private:
  Hyperparams hyper_;
  AblationFlags ablation_;
  RelevanceBucket safety_, mapping_diag_, mapping_proc_;
  DdiMatrix ddi_;
  Tensor ddi_dense_;
};

Predictor make_predictor(StratMedModel& model);
Predictor make_predictor(PretrainModel& model);

// Loss = beta * (gamma * bce + (1-gamma) * margin) + (1-beta) * ddi.
Var combined_loss(Tape& t, Var probs, const std::vector<EntityId>& truth_meds,
                  std::size_t num_med, const Tensor& ddi_dense, double beta, double gamma);

struct PretrainTrace {
  std::vector<double> epoch_loss;  // mean per-visit training loss
};

PretrainModel train_pretrain(const Dataset& dataset, const DdiMatrix& ddi,
                             const Hyperparams& hp, PretrainTrace* trace = nullptr);

// Copies the pre-trained entity tables into the main model; they remain
// trainable afterwards.
void transfer_embeddings(const PretrainModel& pretrained, StratMedModel& main);

struct TrainTrace {
  std::vector<double> epoch_loss;
  std::vector<double> val_jaccard;
  std::size_t best_epoch = 0;  // 1-based argmax of val_jaccard
};

// Per-visit teacher-forced training with one Adam step per visit; the
// checkpoint with the best validation Jaccard wins.
TrainTrace train_main(StratMedModel& model, const Dataset& dataset, const Hyperparams& hp);

// Checkpoint plus a JSON sidecar (<file>.json) carrying hyperparams,
// ablation flags, bucket summary hash, and the selected epoch.
void save_model_checkpoint(StratMedModel& model, std::size_t best_epoch,
                           const std::filesystem::path& file);
void load_model_checkpoint(StratMedModel& model, const std::filesystem::path& file);

}  // namespace stratmed
