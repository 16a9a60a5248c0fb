#include "stratmed/model.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "stratmed/checkpoint.hpp"
#include "stratmed/hash.hpp"

namespace stratmed {

void Hyperparams::validate() const {
  if (dim < 1) throw std::invalid_argument("hyper: dim must be >= 1");
  if (delta <= 0.0 || delta >= 1.0) throw std::invalid_argument("hyper: delta must be in (0,1)");
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("hyper: beta must be in [0,1]");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("hyper: gamma must be in [0,1]");
  if (lr < 0.0) throw std::invalid_argument("hyper: lr must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("hyper: weight_decay must be >= 0");
  if (epochs < 1) throw std::invalid_argument("hyper: epochs must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("hyper: dropout must be in [0,1)");
}

Tensor ddi_to_tensor(const DdiMatrix& ddi) {
  Tensor t({ddi.size, ddi.size});
  for (std::size_t i = 0; i < ddi.entries.size(); ++i)
    t.data[i] = static_cast<double>(ddi.entries[i]);
  return t;
}

namespace {

ParamSeeder seeder_for(std::uint64_t seed, std::uint64_t tag) {
  return ParamSeeder(Rng(seed).derive(tag).seed());
}

// Canonical id order so the output is bit-identical under any within-visit
// permutation of the input lists.
std::vector<EntityId> sorted_ids(const std::vector<EntityId>& ids) {
  std::vector<EntityId> out = ids;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

PretrainModel::PretrainModel(const EntityVocab& vocab, const Hyperparams& hp)
    : e_diag("pre.e_diag", vocab.num_diag, hp.dim, seeder_for(hp.seed, 0xE0).next()),
      e_proc("pre.e_proc", vocab.num_proc, hp.dim, seeder_for(hp.seed, 0xE1).next()),
      e_med("pre.e_med", vocab.num_med, hp.dim, seeder_for(hp.seed, 0xE2).next()),
      mlp1([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xE3);
        return LinearLayer("pre.mlp1", 3 * hp.dim, vocab.num_med, Activation::kRelu,
                           hp.dropout, s);
      }()),
      dim_(hp.dim) {}

Var PretrainModel::forward(Tape& t, const Visit& visit,
                           const std::vector<EntityId>& prev_meds, bool train, Rng& rng) {
  if (visit.diag_ids.empty())
    throw std::invalid_argument("pretrain forward: empty diagnosis set");
  Var ed = e_diag.sum_rows(t, sorted_ids(visit.diag_ids));
  Var ep = e_proc.sum_rows(t, sorted_ids(visit.proc_ids));
  Var em = e_med.sum_rows(t, sorted_ids(prev_meds));  // first visit: zero vector
  Var prime = t.concat3(ed, ep, em);
  return t.sigmoid(mlp1.forward(t, prime, train, rng));
}

std::vector<Parameter*> PretrainModel::params() {
  std::vector<Parameter*> ps = {&e_diag.weights, &e_proc.weights, &e_med.weights};
  for (Parameter* p : mlp1.params()) ps.push_back(p);
  return ps;
}

StratMedModel::StratMedModel(const EntityVocab& vocab, const Hyperparams& hp,
                             const AblationFlags& abl, RelevanceBucket safety,
                             RelevanceBucket mapping_diag, RelevanceBucket mapping_proc,
                             DdiMatrix ddi)
    : e_diag("main.e_diag", vocab.num_diag, hp.dim, seeder_for(hp.seed, 0xA0).next()),
      e_proc("main.e_proc", vocab.num_proc, hp.dim, seeder_for(hp.seed, 0xA1).next()),
      e_med("main.e_med", vocab.num_med, hp.dim, seeder_for(hp.seed, 0xA2).next()),
      gcn_sw([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA3);
        RelevanceBucket b = (abl.wo_s || abl.wo_sg) ? safety.collapsed() : safety;
        return GcnSwLayer("main.gcn_sw", b, hp.dim, s);
      }()),
      gcn_diag([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA4);
        RelevanceBucket b =
            (abl.wo_s || abl.wo_sg) ? mapping_diag.collapsed() : mapping_diag;
        return GcnMfLayer("main.gcn_diag", b, hp.dim, s);
      }()),
      gcn_proc([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA5);
        RelevanceBucket b =
            (abl.wo_s || abl.wo_sg) ? mapping_proc.collapsed() : mapping_proc;
        return GcnMfLayer("main.gcn_proc", b, hp.dim, s);
      }()),
      rnn_d([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA6);
        return GruLayer("main.rnn_d", hp.dim, s);
      }()),
      rnn_p([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA7);
        return GruLayer("main.rnn_p", hp.dim, s);
      }()),
      rnn_m([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA8);
        return GruLayer("main.rnn_m", hp.dim, s);
      }()),
      mlp2([&] {
        ParamSeeder s = seeder_for(hp.seed, 0xA9);
        return LinearLayer("main.mlp2", 3 * hp.dim, vocab.num_med, Activation::kSigmoid,
                           hp.dropout, s);
      }()),
      hyper_(hp),
      ablation_(abl),
      safety_(std::move(safety)),
      mapping_diag_(std::move(mapping_diag)),
      mapping_proc_(std::move(mapping_proc)),
      ddi_(std::move(ddi)) {
  if (ablation_.wo_s || ablation_.wo_sg) {
    safety_ = safety_.collapsed();
    mapping_diag_ = mapping_diag_.collapsed();
    mapping_proc_ = mapping_proc_.collapsed();
  }
  ddi_dense_ = ddi_to_tensor(ddi_);
}

Var StratMedModel::forward(Tape& t, std::span<const Visit> history, bool train, Rng& rng) {
  if (history.empty()) throw std::invalid_argument("forward: empty history");
  const std::size_t dim = hyper_.dim;
  static const std::vector<EntityId> kNoMeds;

  std::vector<Var> seq_d, seq_p, seq_m;
  seq_d.reserve(history.size());
  seq_p.reserve(history.size());
  seq_m.reserve(history.size());
  for (std::size_t s = 0; s < history.size(); ++s) {
    const Visit& visit = history[s];
    if (visit.diag_ids.empty())
      throw std::invalid_argument("forward: empty diagnosis set at visit " +
                                  std::to_string(s + 1));
    const std::vector<EntityId> diags = sorted_ids(visit.diag_ids);
    const std::vector<EntityId> procs = sorted_ids(visit.proc_ids);
    const std::vector<EntityId> prev =
        s > 0 ? sorted_ids(history[s - 1].med_ids) : kNoMeds;

    Var prime = t.concat3(e_diag.sum_rows(t, diags), e_proc.sum_rows(t, procs),
                          e_med.sum_rows(t, prev));
    Var merged = prime;
    if (!ablation_.wo_sg) {
      GcnSwLayer::Output sw = gcn_sw.forward(t, prev, e_med, safety_, ddi_);
      GcnMfLayer::Output dd =
          gcn_diag.forward(t, prev, sw.nodes, diags, e_diag, mapping_diag_);
      GcnMfLayer::Output pp =
          gcn_proc.forward(t, prev, sw.nodes, procs, e_proc, mapping_proc_);
      Var graph_repr = t.concat3(dd.pooled, pp.pooled, sw.pooled);
      merged = t.add(graph_repr, prime);  // residual from the prime path
    }
    seq_d.push_back(t.slice(merged, 0, dim));
    seq_p.push_back(t.slice(merged, dim, dim));
    seq_m.push_back(t.slice(merged, 2 * dim, dim));
  }

  Var hd = rnn_d.forward(t, seq_d);
  Var hp = rnn_p.forward(t, seq_p);
  Var hm = rnn_m.forward(t, seq_m);
  return mlp2.forward(t, t.concat3(hd, hp, hm), train, rng);
}

std::vector<double> StratMedModel::predict(std::span<const Visit> history) {
  Tape t;
  Rng rng(0);  // eval mode consumes no randomness
  Var probs = forward(t, history, false, rng);
  return t.value(probs).data;
}

std::vector<Parameter*> StratMedModel::params() {
  std::vector<Parameter*> ps = {&e_diag.weights, &e_proc.weights, &e_med.weights};
  for (Parameter* p : gcn_sw.params()) ps.push_back(p);
  for (Parameter* p : gcn_diag.params()) ps.push_back(p);
  for (Parameter* p : gcn_proc.params()) ps.push_back(p);
  for (Parameter* p : rnn_d.params()) ps.push_back(p);
  for (Parameter* p : rnn_p.params()) ps.push_back(p);
  for (Parameter* p : rnn_m.params()) ps.push_back(p);
  for (Parameter* p : mlp2.params()) ps.push_back(p);
  return ps;
}

std::vector<Parameter*> StratMedModel::graph_params() {
  std::vector<Parameter*> ps;
  for (Parameter* p : gcn_sw.params()) ps.push_back(p);
  for (Parameter* p : gcn_diag.params()) ps.push_back(p);
  for (Parameter* p : gcn_proc.params()) ps.push_back(p);
  return ps;
}

Predictor make_predictor(StratMedModel& model) {
  return [&model](std::span<const Visit> history) { return model.predict(history); };
}

Predictor make_predictor(PretrainModel& model) {
  return [&model](std::span<const Visit> history) {
    Tape t;
    Rng rng(0);
    const Visit& target = history.back();
    static const std::vector<EntityId> kNoMeds;
    const std::vector<EntityId>& prev =
        history.size() > 1 ? history[history.size() - 2].med_ids : kNoMeds;
    Var probs = model.forward(t, target, prev, false, rng);
    return t.value(probs).data;
  };
}

Var combined_loss(Tape& t, Var probs, const std::vector<EntityId>& truth_meds,
                  std::size_t num_med, const Tensor& ddi_dense, double beta, double gamma) {
  Tensor truth = Tensor::vector(multi_hot(truth_meds, num_med));
  Var l_bce = t.bce_loss(probs, truth);
  Var l_margin = t.margin_loss(probs, truth);
  Var l_ddi = t.ddi_penalty(probs, ddi_dense);
  Var accuracy = t.add(t.scale(l_bce, gamma), t.scale(l_margin, 1.0 - gamma));
  return t.add(t.scale(accuracy, beta), t.scale(l_ddi, 1.0 - beta));
}

PretrainModel train_pretrain(const Dataset& dataset, const DdiMatrix& ddi,
                             const Hyperparams& hp, PretrainTrace* trace) {
  hp.validate();
  const std::vector<std::size_t> train_idx = dataset.patient_indices(Split::kTrain);
  if (train_idx.empty()) throw std::invalid_argument("train_pretrain: empty train split");

  PretrainModel model(dataset.vocab, hp);
  std::vector<Parameter*> params = model.params();
  AdamState adam;
  adam.lr = hp.lr;
  adam.weight_decay = hp.weight_decay;
  const Tensor ddi_dense = ddi_to_tensor(ddi);
  Rng root(hp.seed);

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    Rng dropout_rng = root.derive(0xD000 + epoch);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t pi : train_idx) {
      const PatientRecord& patient = dataset.patients[pi];
      for (std::size_t v = 0; v < patient.visits.size(); ++v) {
        static const std::vector<EntityId> kNoMeds;
        const std::vector<EntityId>& prev =
            v > 0 ? patient.visits[v - 1].med_ids : kNoMeds;
        Tape tape;
        Var probs = model.forward(tape, patient.visits[v], prev, true, dropout_rng);
        Var loss = combined_loss(tape, probs, patient.visits[v].med_ids,
                                 dataset.vocab.num_med, ddi_dense, hp.beta, hp.gamma);
        loss_sum += tape.value(loss).data[0];
        ++steps;
        tape.backward(loss);
        adam_step(params, adam);
      }
    }
    if (trace) trace->epoch_loss.push_back(loss_sum / static_cast<double>(steps));
  }
  return model;
}

void transfer_embeddings(const PretrainModel& pretrained, StratMedModel& main) {
  auto copy = [](const Parameter& from, Parameter& to) {
    if (!from.value.same_shape(to.value))
      throw std::invalid_argument("transfer_embeddings: shape mismatch " +
                                  from.value.shape_str() + " vs " + to.value.shape_str());
    to.value.data = from.value.data;
  };
  copy(pretrained.e_diag.weights, main.e_diag.weights);
  copy(pretrained.e_proc.weights, main.e_proc.weights);
  copy(pretrained.e_med.weights, main.e_med.weights);
}

TrainTrace train_main(StratMedModel& model, const Dataset& dataset, const Hyperparams& hp) {
  hp.validate();
  const std::vector<std::size_t> train_idx = dataset.patient_indices(Split::kTrain);
  if (train_idx.empty()) throw std::invalid_argument("train_main: empty train split");
  if (dataset.patient_indices(Split::kValidation).empty())
    throw std::invalid_argument("train_main: empty validation split");

  std::vector<Parameter*> params = model.params();
  AdamState adam;
  adam.lr = hp.lr;
  adam.weight_decay = hp.weight_decay;
  Rng root(hp.seed);

  TrainTrace trace;
  std::vector<Tensor> best_values;
  double best_jaccard = -1.0;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    Rng dropout_rng = root.derive(0xE000 + epoch);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t pi : train_idx) {
      const PatientRecord& patient = dataset.patients[pi];
      for (std::size_t v = 0; v < patient.visits.size(); ++v) {
        std::span<const Visit> history(patient.visits.data(), v + 1);
        Tape tape;
        Var probs = model.forward(tape, history, true, dropout_rng);
        Var loss = combined_loss(tape, probs, patient.visits[v].med_ids,
                                 dataset.vocab.num_med, model.ddi_dense(), hp.beta,
                                 hp.gamma);
        loss_sum += tape.value(loss).data[0];
        ++steps;
        tape.backward(loss);
        adam_step(params, adam);
      }
    }
    trace.epoch_loss.push_back(loss_sum / static_cast<double>(steps));

    const MetricsReport val = evaluate(make_predictor(model), dataset, Split::kValidation,
                                       model.ddi(), hp.delta);
    trace.val_jaccard.push_back(val.jaccard.mean);
    if (val.jaccard.mean > best_jaccard) {
      best_jaccard = val.jaccard.mean;
      trace.best_epoch = epoch + 1;
      best_values.clear();
      for (const Parameter* p : params) best_values.push_back(p->value);
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  return trace;
}

void save_model_checkpoint(StratMedModel& model, std::size_t best_epoch,
                           const std::filesystem::path& file) {
  save_checkpoint(model.params(), file);
  write_checkpoint_manifest(model.params(), file.string() + ".manifest");

  std::string bucket_hash;
  {
    Fnv1a h;
    h.update(model.safety_bucket().summary_json());
    h.update(model.mapping_diag_bucket().summary_json());
    h.update(model.mapping_proc_bucket().summary_json());
    bucket_hash = h.hex();
  }
  const Hyperparams& hp = model.hyper();
  nlohmann::json j;
  j["hyperparams"] = {{"dim", hp.dim},       {"delta", hp.delta},
                      {"beta", hp.beta},     {"gamma", hp.gamma},
                      {"lr", hp.lr},         {"weight_decay", hp.weight_decay},
                      {"epochs", hp.epochs}, {"dropout", hp.dropout},
                      {"seed", hp.seed}};
  j["bucket_summary_hash"] = bucket_hash;
  j["bucket_layers"] = {{"safety", model.safety_bucket().layer_count()},
                        {"mapping_diag", model.mapping_diag_bucket().layer_count()},
                        {"mapping_proc", model.mapping_proc_bucket().layer_count()}};
  j["ablation"] = {{"wo_p", model.ablation().wo_p},
                   {"wo_s", model.ablation().wo_s},
                   {"wo_sg", model.ablation().wo_sg}};
  j["best_epoch"] = best_epoch;
  std::ofstream os(file.string() + ".json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint sidecar for " + file.string());
  os << j.dump(2) << "\n";
}

void load_model_checkpoint(StratMedModel& model, const std::filesystem::path& file) {
  load_checkpoint(model.params(), file);
}

}  // namespace stratmed
