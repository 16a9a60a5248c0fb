#include "stratmed/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

#include <json.hpp>

#include "stratmed/checkpoint.hpp"
#include "stratmed/hash.hpp"

namespace stratmed {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_seconds(Clock::time_point from) {
  const auto d = Clock::now() - from;
  const double s = std::chrono::duration<double>(d).count();
  return std::max(s, 1e-6);
}

std::string file_hash(const fs::path& p) {
  Fnv1a h;
  h.update_file(p);
  return h.hex();
}

}  // namespace

PipelineRunner::PipelineRunner(RunConfig cfg, fs::path out_dir)
    : cfg_(std::move(cfg)), out_(std::move(out_dir)), started_(Clock::now()) {
  fs::create_directories(out_);
  fs::create_directories(out_ / "cache");
}

fs::path PipelineRunner::dataset_file() const {
  return cfg_.has_file_source ? cfg_.dataset_path : out_ / "dataset.jsonl";
}

fs::path PipelineRunner::ddi_file() const {
  return cfg_.has_file_source ? cfg_.ddi_path : out_ / "ddi.csv";
}

bool PipelineRunner::stage_cached(const std::string& stage, const std::string& input_hash,
                                  const std::vector<fs::path>& outputs) {
  const fs::path key_file = out_ / "cache" / (stage + ".key");
  std::ifstream is(key_file);
  if (!is) return false;
  std::string stored;
  std::getline(is, stored);
  if (stored != input_hash) return false;
  for (const fs::path& p : outputs)
    if (!fs::exists(p)) return false;
  return true;
}

void PipelineRunner::store_stage_key(const std::string& stage,
                                     const std::string& input_hash) {
  std::ofstream os(out_ / "cache" / (stage + ".key"), std::ios::trunc);
  os << input_hash << "\n";
}

void PipelineRunner::record_stage(const std::string& name, double seconds, bool hit) {
  stages_.push_back({name, seconds, hit});
}

std::string PipelineRunner::data_input_hash() const {
  Fnv1a h;
  h.update(cfg_.canonical_string());
  return h.hex();
}

void PipelineRunner::ensure_data() {
  if (cfg_.has_file_source) {  // provided files are the stage artifacts
    if (!fs::exists(cfg_.dataset_path))
      throw DataError("dataset file not found: " + cfg_.dataset_path.string());
    if (!fs::exists(cfg_.ddi_path))
      throw DataError("DDI file not found: " + cfg_.ddi_path.string());
    return;
  }
  const auto t0 = Clock::now();
  const std::string key = "gen|" + data_input_hash();
  const std::vector<fs::path> outputs = {dataset_file(), ddi_file()};
  if (stage_cached("gen-data", key, outputs)) {
    record_stage("gen-data", elapsed_seconds(t0), true);
    return;
  }
  const SyntheticData data = generate_synthetic(cfg_.synth);
  save_dataset(data.dataset, dataset_file());
  save_ddi(data.ddi, ddi_file());
  store_stage_key("gen-data", key);
  record_stage("gen-data", elapsed_seconds(t0), false);
}

const Dataset& PipelineRunner::dataset() {
  if (!dataset_) dataset_ = load_dataset(dataset_file());
  return *dataset_;
}

const DdiMatrix& PipelineRunner::ddi() {
  if (!ddi_) ddi_ = load_ddi(ddi_file(), dataset().vocab.num_med);
  return *ddi_;
}

const PipelineRunner::Buckets& PipelineRunner::buckets() {
  if (!buckets_) {
    Buckets b;
    b.cooc = count_cooccurrence(dataset());
    b.safety = build_safety_bucket(b.cooc, cfg_.strat);
    b.mapping_diag = build_mapping_bucket(b.cooc, cfg_.strat, BucketKind::kMappingDiag);
    b.mapping_proc = build_mapping_bucket(b.cooc, cfg_.strat, BucketKind::kMappingProc);
    buckets_ = std::move(b);
  }
  return *buckets_;
}

void PipelineRunner::ensure_stratify() {
  ensure_data();
  const auto t0 = Clock::now();
  Fnv1a h;
  h.update(cfg_.canonical_string());
  h.update(file_hash(dataset_file()));
  const std::string key = "strat|" + h.hex();
  const std::vector<fs::path> outputs = {out_ / "bucket_safety.json",
                                         out_ / "bucket_mapping_diag.json",
                                         out_ / "bucket_mapping_proc.json"};
  if (stage_cached("stratify", key, outputs)) {
    record_stage("stratify", elapsed_seconds(t0), true);
    return;
  }
  const Buckets& b = buckets();
  auto dump = [&](const RelevanceBucket& bucket, const std::string& name) {
    std::ofstream os(out_ / ("bucket_" + name + ".json"), std::ios::trunc);
    os << bucket.summary_json() << "\n";
  };
  dump(b.safety, "safety");
  dump(b.mapping_diag, "mapping_diag");
  dump(b.mapping_proc, "mapping_proc");
  export_distribution(b.cooc, b.mapping_diag, DistributionMode::kBefore,
                      out_ / "distribution_before.csv");
  export_distribution(b.cooc, b.mapping_diag, DistributionMode::kAfter,
                      out_ / "distribution_after.csv");
  store_stage_key("stratify", key);
  record_stage("stratify", elapsed_seconds(t0), false);
}

StratMedModel PipelineRunner::build_model(const AblationFlags& abl) {
  const Buckets& b = buckets();
  return StratMedModel(dataset().vocab, cfg_.hyper, abl, b.safety, b.mapping_diag,
                       b.mapping_proc, ddi());
}

void PipelineRunner::ensure_pretrain() {
  ensure_stratify();
  if (cfg_.ablation.wo_p) return;  // pre-training ablated away
  const auto t0 = Clock::now();
  Fnv1a h;
  h.update(cfg_.canonical_string());
  h.update(file_hash(dataset_file()));
  h.update(file_hash(ddi_file()));
  const std::string key = "pretrain|" + h.hex();
  const fs::path ckpt = out_ / "pretrain.ckpt";
  if (stage_cached("pretrain", key, {ckpt})) {
    record_stage("pretrain", elapsed_seconds(t0), true);
    pretrain_done_ = true;
    return;
  }
  try {
    PretrainModel model = train_pretrain(dataset(), ddi(), cfg_.hyper);
    save_checkpoint(model.params(), ckpt);
    write_checkpoint_manifest(model.params(), ckpt.string() + ".manifest");
  } catch (const std::exception& e) {
    throw TrainingError(std::string("pretrain stage failed: ") + e.what());
  }
  store_stage_key("pretrain", key);
  record_stage("pretrain", elapsed_seconds(t0), false);
  pretrain_done_ = true;
}

void PipelineRunner::ensure_train() {
  ensure_pretrain();
  const auto t0 = Clock::now();
  Fnv1a h;
  h.update(cfg_.canonical_string());
  h.update(file_hash(dataset_file()));
  h.update(file_hash(ddi_file()));
  if (!cfg_.ablation.wo_p) h.update(file_hash(out_ / "pretrain.ckpt"));
  const std::string key = "train|" + h.hex();
  const fs::path ckpt = model_checkpoint();
  if (stage_cached("train", key, {ckpt})) {
    record_stage("train", elapsed_seconds(t0), true);
    train_done_ = true;
    return;
  }
  try {
    StratMedModel model = build_model(cfg_.ablation);
    if (!cfg_.ablation.wo_p) {
      PretrainModel pre(dataset().vocab, cfg_.hyper);
      load_checkpoint(pre.params(), out_ / "pretrain.ckpt");
      transfer_embeddings(pre, model);
    }
    const TrainTrace trace = train_main(model, dataset(), cfg_.hyper);
    save_model_checkpoint(model, trace.best_epoch, ckpt);
    nlohmann::json jt;
    jt["epoch_loss"] = trace.epoch_loss;
    jt["val_jaccard"] = trace.val_jaccard;
    jt["best_epoch"] = trace.best_epoch;
    std::ofstream os(out_ / "train_trace.json", std::ios::trunc);
    os << jt.dump(2) << "\n";
  } catch (const TrainingError&) {
    throw;
  } catch (const std::exception& e) {
    throw TrainingError(std::string("train stage failed: ") + e.what());
  }
  store_stage_key("train", key);
  record_stage("train", elapsed_seconds(t0), false);
  train_done_ = true;
}

void PipelineRunner::cmd_gen_data() {
  if (!cfg_.has_synth_source)
    throw ConfigError("gen-data requires synth.* configuration");
  if (cfg_.has_file_source)
    throw ConfigError("gen-data conflicts with data.path; remove one data source");
  ensure_data();
}

void PipelineRunner::cmd_stratify() {
  cfg_.validate_source();
  ensure_stratify();
}

void PipelineRunner::cmd_pretrain() {
  cfg_.validate_source();
  if (cfg_.ablation.wo_p) throw ConfigError("pretrain subcommand conflicts with --wo-p");
  ensure_pretrain();
}

void PipelineRunner::cmd_train() {
  cfg_.validate_source();
  ensure_train();
}

MetricsReport PipelineRunner::cmd_evaluate() {
  cfg_.validate_source();
  ensure_train();
  const auto t0 = Clock::now();
  Fnv1a h;
  h.update(cfg_.canonical_string());
  h.update(file_hash(model_checkpoint()));
  const std::string key = "evaluate|" + h.hex();
  const fs::path rj = report_json();
  const fs::path rc = out_ / "report.csv";
  if (stage_cached("evaluate", key, {rj, rc})) {
    record_stage("evaluate", elapsed_seconds(t0), true);
    std::ifstream is(rj);
    nlohmann::json j;
    is >> j;
    MetricsReport r;
    r.jaccard = {j["jaccard"]["mean"], j["jaccard"]["std"]};
    r.ddi = {j["ddi"]["mean"], j["ddi"]["std"]};
    r.f1 = {j["f1"]["mean"], j["f1"]["std"]};
    r.prauc = {j["prauc"]["mean"], j["prauc"]["std"]};
    r.avg_drugs = {j["avg_drugs"]["mean"], j["avg_drugs"]["std"]};
    r.rounds = j["rounds"];
    r.seed = j["seed"];
    r.visits = j["visits"];
    return r;
  }
  StratMedModel model = build_model(cfg_.ablation);
  load_model_checkpoint(model, model_checkpoint());
  const MetricsReport report = bootstrap_evaluate(
      make_predictor(model), dataset(), Split::kTest, ddi(), cfg_.hyper.delta,
      cfg_.bootstrap.rounds, cfg_.bootstrap.fraction, Rng(cfg_.seed).derive(0xB007).seed());
  {
    std::ofstream os(rj, std::ios::trunc);
    os << report.to_json() << "\n";
  }
  {
    std::ofstream os(rc, std::ios::trunc);
    os << MetricsReport::csv_header() << "\n" << report.to_csv_row() << "\n";
  }
  store_stage_key("evaluate", key);
  record_stage("evaluate", elapsed_seconds(t0), false);
  return report;
}

CellResult run_training_cell(const Dataset& data, const DdiMatrix& ddi,
                             const StratParams& strat, const Hyperparams& hyper,
                             const AblationFlags& ablation) {
  const CoOccurrence cooc = count_cooccurrence(data);
  const RelevanceBucket safety = build_safety_bucket(cooc, strat);
  const RelevanceBucket map_d = build_mapping_bucket(cooc, strat, BucketKind::kMappingDiag);
  const RelevanceBucket map_p = build_mapping_bucket(cooc, strat, BucketKind::kMappingProc);

  StratMedModel model(data.vocab, hyper, ablation, safety, map_d, map_p, ddi);
  if (!ablation.wo_p) {
    PretrainModel pre = train_pretrain(data, ddi, hyper);
    transfer_embeddings(pre, model);
  }
  train_main(model, data, hyper);

  const Predictor predictor = make_predictor(model);
  CellResult cell;
  cell.train_jaccard =
      evaluate(predictor, data, Split::kTrain, ddi, hyper.delta).jaccard.mean;
  const MetricsReport test = evaluate(predictor, data, Split::kTest, ddi, hyper.delta);
  cell.test_jaccard = test.jaccard.mean;
  cell.test_ddi = test.ddi.mean;
  return cell;
}

void PipelineRunner::cmd_distortion_study(const std::vector<int>& levels) {
  cfg_.validate_source();
  ensure_data();
  const auto t0 = Clock::now();
  const Dataset& base = dataset();
  const DdiMatrix& ddi_m = ddi();
  Rng root(cfg_.seed);

  std::ofstream os(out_ / "distortion_study.csv", std::ios::trunc);
  os.precision(17);
  os << "level,variant,train_jaccard,test_jaccard,gap\n";
  for (int level : levels) {
    const Dataset distorted =
        distort_dataset(base, level, root.derive(0xD15 + level).seed());
    for (const bool wo_s : {false, true}) {
      double train_sum = 0.0, test_sum = 0.0;
      for (std::size_t s = 0; s < cfg_.study_seeds; ++s) {
        Hyperparams hp = cfg_.hyper;
        hp.seed = root.derive(0x57D + s).seed();
        AblationFlags abl;
        abl.wo_s = wo_s;
        const CellResult cell = run_training_cell(distorted, ddi_m, cfg_.strat, hp, abl);
        train_sum += cell.train_jaccard;
        test_sum += cell.test_jaccard;
      }
      const double train_mean = train_sum / static_cast<double>(cfg_.study_seeds);
      const double test_mean = test_sum / static_cast<double>(cfg_.study_seeds);
      os << level << "," << (wo_s ? "wo_s" : "full") << "," << train_mean << ","
         << test_mean << "," << (train_mean - test_mean) << "\n";
    }
  }
  record_stage("distortion-study", elapsed_seconds(t0), false);
}

void PipelineRunner::cmd_robustness_study(const std::vector<int>& mus) {
  cfg_.validate_source();
  ensure_data();
  const auto t0 = Clock::now();
  const Dataset& base = dataset();
  const DdiMatrix& ddi_m = ddi();
  Rng root(cfg_.seed);

  // One trained model per (variant, seed); every mu reuses it.
  struct Trained {
    StratMedModel model;
    double base_jaccard;
  };
  const CoOccurrence cooc = count_cooccurrence(base);
  const RelevanceBucket safety = build_safety_bucket(cooc, cfg_.strat);
  const RelevanceBucket map_d =
      build_mapping_bucket(cooc, cfg_.strat, BucketKind::kMappingDiag);
  const RelevanceBucket map_p =
      build_mapping_bucket(cooc, cfg_.strat, BucketKind::kMappingProc);

  std::ofstream os(out_ / "robustness_study.csv", std::ios::trunc);
  os.precision(17);
  os << "mu,variant,jaccard_delta\n";

  for (const bool wo_s : {false, true}) {
    std::vector<Trained> trained;
    for (std::size_t s = 0; s < cfg_.study_seeds; ++s) {
      Hyperparams hp = cfg_.hyper;
      hp.seed = root.derive(0x57D + s).seed();
      AblationFlags abl;
      abl.wo_s = wo_s;
      StratMedModel model(base.vocab, hp, abl, safety, map_d, map_p, ddi_m);
      if (!abl.wo_p) {
        PretrainModel pre = train_pretrain(base, ddi_m, hp);
        transfer_embeddings(pre, model);
      }
      train_main(model, base, hp);
      const double base_j =
          evaluate(make_predictor(model), base, Split::kTest, ddi_m, hp.delta).jaccard.mean;
      trained.push_back({std::move(model), base_j});
    }
    for (int mu : mus) {
      const Dataset filtered = filter_low_frequency(base, mu);
      double delta_sum = 0.0;
      for (Trained& t : trained) {
        const double j =
            evaluate(make_predictor(t.model), filtered, Split::kTest, ddi_m,
                     cfg_.hyper.delta)
                .jaccard.mean;
        delta_sum += j - t.base_jaccard;
      }
      os << mu << "," << (wo_s ? "wo_s" : "full") << ","
         << delta_sum / static_cast<double>(cfg_.study_seeds) << "\n";
    }
  }
  record_stage("robustness-study", elapsed_seconds(t0), false);
}

void PipelineRunner::cmd_case_study(const std::string& patient_id,
                                    std::size_t visit_number) {
  cfg_.validate_source();
  if (!fs::exists(model_checkpoint()))
    throw DataError("case-study: no trained checkpoint at " +
                    model_checkpoint().string() + "; run train first");
  ensure_data();
  const auto t0 = Clock::now();
  const Dataset& data = dataset();

  const PatientRecord* patient = nullptr;
  for (const auto& p : data.patients)
    if (p.patient_id == patient_id) {
      patient = &p;
      break;
    }
  if (!patient) throw DataError("case-study: unknown patient '" + patient_id + "'");
  if (visit_number < 1 || visit_number > patient->visits.size())
    throw DataError("case-study: visit " + std::to_string(visit_number) +
                    " out of range 1.." + std::to_string(patient->visits.size()));

  StratMedModel model = build_model(cfg_.ablation);
  load_model_checkpoint(model, model_checkpoint());

  std::span<const Visit> history(patient->visits.data(), visit_number);
  const std::vector<double> probs = model.predict(history);
  const std::vector<EntityId> pred = predict_set(probs, cfg_.hyper.delta);
  const std::vector<EntityId>& truth = history.back().med_ids;

  std::vector<EntityId> med_union;
  std::set_union(pred.begin(), pred.end(), truth.begin(), truth.end(),
                 std::back_inserter(med_union));
  std::vector<EntityId> correct, over, error;
  std::set_intersection(pred.begin(), pred.end(), truth.begin(), truth.end(),
                        std::back_inserter(correct));
  std::set_difference(pred.begin(), pred.end(), truth.begin(), truth.end(),
                      std::back_inserter(over));
  std::set_difference(truth.begin(), truth.end(), pred.begin(), pred.end(),
                      std::back_inserter(error));

  const Buckets& b = buckets();
  const std::vector<EntityId>& diags = history.back().diag_ids;
  auto write_matrix = [&](const fs::path& path, auto cell) {
    std::ofstream os(path, std::ios::trunc);
    os << "diag";
    for (EntityId mid : med_union) os << ",m" << mid;
    os << "\n";
    for (EntityId did : diags) {
      os << did;
      for (EntityId mid : med_union) os << "," << cell(mid, did);
      os << "\n";
    }
  };
  write_matrix(out_ / "case_raw_counts.csv",
               [&](EntityId mid, EntityId did) { return b.cooc.md(mid, did); });
  write_matrix(out_ / "case_relevance.csv", [&](EntityId mid, EntityId did) {
    const RelevanceLookup l = relevance_lookup(b.mapping_diag, mid, did);
    return l.erased() ? 0.0 : l.relevance;
  });

  nlohmann::json j;
  j["patient_id"] = patient_id;
  j["visit"] = visit_number;
  j["predicted"] = pred;
  j["truth"] = truth;
  j["correct"] = correct;
  j["over"] = over;
  j["error"] = error;
  std::ofstream os(out_ / "case_prediction.json", std::ios::trunc);
  os << j.dump(2) << "\n";
  record_stage("case-study", elapsed_seconds(t0), false);
}

void PipelineRunner::write_manifest() {
  nlohmann::json j;
  j["config_hash"] = fnv1a_hex(cfg_.canonical_string());
  j["code_version"] = kCodeVersion;
  j["seed"] = cfg_.seed;
  nlohmann::json stages = nlohmann::json::array();
  double stage_total = 0.0;
  for (const StageRecord& s : stages_) {
    stages.push_back({{"name", s.name}, {"seconds", s.seconds}, {"cache_hit", s.cache_hit}});
    stage_total += s.seconds;
  }
  j["stages"] = std::move(stages);
  j["stage_seconds_total"] = stage_total;
  j["wall_seconds_total"] = elapsed_seconds(started_);
  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& entry : fs::directory_iterator(out_)) {
    if (entry.is_regular_file()) artifacts.push_back(entry.path().filename().string());
  }
  std::sort(artifacts.begin(), artifacts.end(),
            [](const nlohmann::json& a, const nlohmann::json& b) {
              return a.get<std::string>() < b.get<std::string>();
            });
  j["artifacts"] = std::move(artifacts);

  const fs::path tmp = out_ / "manifest.json.tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    os << j.dump(2) << "\n";
  }
  fs::rename(tmp, out_ / "manifest.json");
}

}  // namespace stratmed
