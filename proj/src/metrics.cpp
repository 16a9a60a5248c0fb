#include "stratmed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stratmed {

namespace {

std::size_t intersection_size(const std::vector<EntityId>& a, const std::vector<EntityId>& b) {
  // both sorted
  std::size_t n = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

}  // namespace

double jaccard_visit(const std::vector<EntityId>& pred, const std::vector<EntityId>& truth) {
  if (pred.empty() && truth.empty()) return 1.0;
  const std::size_t inter = intersection_size(pred, truth);
  const std::size_t uni = pred.size() + truth.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double f1_visit(const std::vector<EntityId>& pred, const std::vector<EntityId>& truth) {
  if (truth.empty()) throw std::invalid_argument("f1_visit: empty truth set");
  if (pred.empty()) return 0.0;
  const std::size_t inter = intersection_size(pred, truth);
  if (inter == 0) return 0.0;
  const double precision = static_cast<double>(inter) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(inter) / static_cast<double>(truth.size());
  return 2.0 * precision * recall / (precision + recall);
}

double prauc_visit(const std::vector<double>& probabilities,
                   const std::vector<EntityId>& truth) {
  if (truth.empty()) throw std::invalid_argument("prauc_visit: empty truth set");
  const std::size_t m = probabilities.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probabilities[a] != probabilities[b]) return probabilities[a] > probabilities[b];
    return a < b;
  });
  std::vector<bool> positive(m, false);
  for (EntityId id : truth) positive[id] = true;
  const double recall_step = 1.0 / static_cast<double>(truth.size());
  double auc = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (!positive[order[k]]) continue;
    ++hits;
    const double precision_at_k = static_cast<double>(hits) / static_cast<double>(k + 1);
    auc += precision_at_k * recall_step;
  }
  return auc;
}

double ddi_rate(const std::vector<std::vector<EntityId>>& pred_sets, const DdiMatrix& ddi) {
  std::size_t interacting = 0, pairs = 0;
  for (const auto& meds : pred_sets) {
    for (std::size_t a = 0; a < meds.size(); ++a)
      for (std::size_t b = a + 1; b < meds.size(); ++b) {
        ++pairs;
        interacting += ddi.at(meds[a], meds[b]);
      }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(interacting) / static_cast<double>(pairs);
}

double avg_drugs(const std::vector<std::vector<EntityId>>& pred_sets) {
  if (pred_sets.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& s : pred_sets) total += s.size();
  return static_cast<double>(total) / static_cast<double>(pred_sets.size());
}

std::vector<EntityId> predict_set(const std::vector<double>& probabilities, double delta) {
  std::vector<EntityId> out;
  for (std::size_t i = 0; i < probabilities.size(); ++i)
    if (probabilities[i] >= delta) out.push_back(static_cast<EntityId>(i));
  return out;
}

namespace {

struct CorpusEval {
  double jaccard = 0.0, f1 = 0.0, prauc = 0.0;
  double jaccard_pp = 0.0, f1_pp = 0.0, prauc_pp = 0.0;
  double ddi = 0.0, avg = 0.0;
  std::size_t visits = 0;
};

// Teacher forcing: the history slice passed to the predictor carries true
// medication sets; the target visit's own meds are only used as labels.
CorpusEval evaluate_patients(const Predictor& predictor, const Dataset& dataset,
                             const std::vector<std::size_t>& patient_idx,
                             const DdiMatrix& ddi, double delta) {
  CorpusEval ev;
  std::vector<std::vector<EntityId>> all_preds;
  double jac_sum = 0, f1_sum = 0, pr_sum = 0;
  double jac_pp_sum = 0, f1_pp_sum = 0, pr_pp_sum = 0;
  for (std::size_t pi : patient_idx) {
    const PatientRecord& p = dataset.patients[pi];
    double jac_p = 0, f1_p = 0, pr_p = 0;
    for (std::size_t t = 0; t < p.visits.size(); ++t) {
      std::span<const Visit> history(p.visits.data(), t + 1);
      const std::vector<double> probs = predictor(history);
      const std::vector<EntityId> pred = predict_set(probs, delta);
      const std::vector<EntityId>& truth = p.visits[t].med_ids;
      jac_p += jaccard_visit(pred, truth);
      f1_p += f1_visit(pred, truth);
      pr_p += prauc_visit(probs, truth);
      all_preds.push_back(pred);
    }
    const double nv = static_cast<double>(p.visits.size());
    jac_sum += jac_p;
    f1_sum += f1_p;
    pr_sum += pr_p;
    jac_pp_sum += jac_p / nv;
    f1_pp_sum += f1_p / nv;
    pr_pp_sum += pr_p / nv;
    ev.visits += p.visits.size();
  }
  if (ev.visits == 0) throw std::invalid_argument("evaluate: split has no visits");
  const double nv = static_cast<double>(ev.visits);
  const double np = static_cast<double>(patient_idx.size());
  ev.jaccard = jac_sum / nv;
  ev.f1 = f1_sum / nv;
  ev.prauc = pr_sum / nv;
  ev.jaccard_pp = jac_pp_sum / np;
  ev.f1_pp = f1_pp_sum / np;
  ev.prauc_pp = pr_pp_sum / np;
  ev.ddi = ddi_rate(all_preds, ddi);
  ev.avg = avg_drugs(all_preds);
  return ev;
}

}  // namespace

MetricsReport evaluate(const Predictor& predictor, const Dataset& dataset, Split split,
                       const DdiMatrix& ddi, double delta) {
  const std::vector<std::size_t> idx = dataset.patient_indices(split);
  if (idx.empty()) throw std::invalid_argument("evaluate: empty split");
  const CorpusEval ev = evaluate_patients(predictor, dataset, idx, ddi, delta);
  MetricsReport r;
  r.jaccard = {ev.jaccard, 0.0};
  r.ddi = {ev.ddi, 0.0};
  r.f1 = {ev.f1, 0.0};
  r.prauc = {ev.prauc, 0.0};
  r.avg_drugs = {ev.avg, 0.0};
  r.jaccard_per_patient = ev.jaccard_pp;
  r.f1_per_patient = ev.f1_pp;
  r.prauc_per_patient = ev.prauc_pp;
  r.visits = ev.visits;
  return r;
}

MetricsReport bootstrap_evaluate(const Predictor& predictor, const Dataset& dataset,
                                 Split split, const DdiMatrix& ddi, double delta,
                                 std::size_t rounds, double fraction, std::uint64_t seed) {
  if (rounds < 1) throw std::invalid_argument("bootstrap_evaluate: rounds must be >= 1");
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("bootstrap_evaluate: fraction must be in (0,1]");
  const std::vector<std::size_t> idx = dataset.patient_indices(split);
  if (idx.empty()) throw std::invalid_argument("bootstrap_evaluate: empty split");

  if (rounds == 1 && fraction == 1.0) {
    MetricsReport r = evaluate(predictor, dataset, split, ddi, delta);
    r.rounds = 1;
    r.seed = seed;
    return r;
  }

  const std::size_t per_round = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(idx.size())));
  Rng root(seed);
  std::vector<CorpusEval> evals;
  evals.reserve(rounds);
  for (std::size_t r = 0; r < rounds; ++r) {
    Rng rng = root.derive(r);
    std::vector<std::size_t> sample(per_round);
    for (std::size_t s = 0; s < per_round; ++s) sample[s] = idx[rng.index(idx.size())];
    evals.push_back(evaluate_patients(predictor, dataset, sample, ddi, delta));
  }

  auto stat = [&](auto field) {
    MetricStat st;
    for (const CorpusEval& e : evals) st.mean += field(e);
    st.mean /= static_cast<double>(evals.size());
    if (evals.size() > 1) {
      double ss = 0.0;
      for (const CorpusEval& e : evals) {
        const double d = field(e) - st.mean;
        ss += d * d;
      }
      st.std_dev = std::sqrt(ss / static_cast<double>(evals.size() - 1));
    }
    return st;
  };

  MetricsReport r;
  r.jaccard = stat([](const CorpusEval& e) { return e.jaccard; });
  r.ddi = stat([](const CorpusEval& e) { return e.ddi; });
  r.f1 = stat([](const CorpusEval& e) { return e.f1; });
  r.prauc = stat([](const CorpusEval& e) { return e.prauc; });
  r.avg_drugs = stat([](const CorpusEval& e) { return e.avg; });
  double jpp = 0, fpp = 0, ppp = 0;
  std::size_t visits = 0;
  for (const CorpusEval& e : evals) {
    jpp += e.jaccard_pp;
    fpp += e.f1_pp;
    ppp += e.prauc_pp;
    visits += e.visits;
  }
  r.jaccard_per_patient = jpp / static_cast<double>(evals.size());
  r.f1_per_patient = fpp / static_cast<double>(evals.size());
  r.prauc_per_patient = ppp / static_cast<double>(evals.size());
  r.visits = visits;
  r.rounds = rounds;
  r.seed = seed;
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* name, const MetricStat& s) {
    j[name] = {{"mean", s.mean}, {"std", s.std_dev}};
  };
  put("jaccard", jaccard);
  put("ddi", ddi);
  put("f1", f1);
  put("prauc", prauc);
  put("avg_drugs", avg_drugs);
  j["jaccard_per_patient"] = jaccard_per_patient;
  j["f1_per_patient"] = f1_per_patient;
  j["prauc_per_patient"] = prauc_per_patient;
  j["rounds"] = rounds;
  j["seed"] = seed;
  j["visits"] = visits;
  return j.dump(2);
}

std::string MetricsReport::csv_header() {
  return "jaccard,jaccard_std,ddi,ddi_std,f1,f1_std,prauc,prauc_std,avg_drugs,"
         "avg_drugs_std,rounds,seed,visits";
}

std::string MetricsReport::to_csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << jaccard.mean << "," << jaccard.std_dev << "," << ddi.mean << "," << ddi.std_dev
     << "," << f1.mean << "," << f1.std_dev << "," << prauc.mean << "," << prauc.std_dev
     << "," << avg_drugs.mean << "," << avg_drugs.std_dev << "," << rounds << "," << seed
     << "," << visits;
  return os.str();
}

}  // namespace stratmed
