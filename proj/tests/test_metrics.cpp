#include <algorithm>
#include <cmath>
#include <set>

#include <doctest.h>

#include "stratmed/metrics.hpp"

using namespace stratmed;

namespace {

// Exhaustive reference implementations over multi-hot vectors.
namespace oracle {

double jaccard(const std::vector<int>& pred, const std::vector<int>& truth) {
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] && truth[i];
    uni += pred[i] || truth[i];
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += pred[i] && truth[i];
    fp += pred[i] && !truth[i];
    fn += !pred[i] && truth[i];
  }
  if (tp == 0) return 0.0;
  const double p = double(tp) / double(tp + fp);
  const double r = double(tp) / double(tp + fn);
  return 2.0 * p * r / (p + r);
}

double prauc(const std::vector<double>& score, const std::vector<int>& truth) {
  const std::size_t m = score.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  int positives = 0;
  for (int t : truth) positives += t;
  double auc = 0.0;
  int hits = 0;
  double prev_recall = 0.0;
  for (std::size_t k = 1; k <= m; ++k) {
    hits += truth[order[k - 1]];
    const double precision = double(hits) / double(k);
    const double recall = double(hits) / double(positives);
    auc += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return auc;
}

double ddi(const std::vector<std::vector<int>>& preds, const DdiMatrix& m) {
  double bad = 0, all = 0;
  for (const auto& p : preds)
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = i + 1; j < p.size(); ++j) {
        if (p[i] && p[j]) {
          all += 1;
          bad += m.at(i, j);
        }
      }
  return all == 0 ? 0.0 : bad / all;
}

}  // namespace oracle

std::vector<EntityId> to_ids(const std::vector<int>& hot) {
  std::vector<EntityId> ids;
  for (std::size_t i = 0; i < hot.size(); ++i)
    if (hot[i]) ids.push_back(static_cast<EntityId>(i));
  return ids;
}

}  // namespace

TEST_CASE("jaccard examples") {
  CHECK(jaccard_visit({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(jaccard_visit({0, 1, 2}, {1, 2, 3}) == 0.5);
  CHECK(jaccard_visit({0, 1}, {2, 3}) == 0.0);
  CHECK(jaccard_visit({}, {}) == 1.0);
}

TEST_CASE("f1 examples") {
  CHECK(f1_visit({4, 7}, {4, 7}) == 1.0);
  CHECK(f1_visit({0, 1}, {1, 2}) == doctest::Approx(0.5));
  CHECK(f1_visit({}, {1}) == 0.0);
  CHECK_THROWS_AS(f1_visit({0}, {}), std::invalid_argument);
}

TEST_CASE("prauc ranked-sweep examples") {
  CHECK(prauc_visit({0.9, 0.8, 0.1}, {0, 1}) == doctest::Approx(1.0));
  CHECK(prauc_visit({0.9, 0.8, 0.1}, {0, 2}) == doctest::Approx(5.0 / 6.0));
  // rank-only: positive affine rescaling changes nothing
  CHECK(prauc_visit({0.9 * 2 + 0.1, 0.8 * 2 + 0.1, 0.1 * 2 + 0.1}, {0, 2}) ==
        doctest::Approx(5.0 / 6.0));
}

TEST_CASE("ddi rate examples") {
  DdiMatrix m(4);
  m.set_pair(0, 1);
  CHECK(ddi_rate({{0, 1, 2}}, m) == doctest::Approx(1.0 / 3.0));
  CHECK(ddi_rate({{2, 3}}, m) == 0.0);
  DdiMatrix all(3);
  all.set_pair(0, 1);
  all.set_pair(0, 2);
  all.set_pair(1, 2);
  CHECK(ddi_rate({{0, 1, 2}}, all) == 1.0);
  CHECK(ddi_rate({{0}}, m) == 0.0);  // zero denominator
}

TEST_CASE("avg drugs examples") {
  CHECK(avg_drugs({{1, 2}, {0, 1, 2, 3}}) == 3.0);
  CHECK(avg_drugs({{}, {}}) == 0.0);
  CHECK(avg_drugs({}) == 0.0);
}

TEST_CASE("predict_set thresholds at delta inclusive") {
  CHECK(predict_set({0.6, 0.4}, 0.5) == std::vector<EntityId>{0});
  CHECK(predict_set({0.5, 0.4999}, 0.5) == std::vector<EntityId>{0});
  CHECK(predict_set({0.1, 0.2}, 0.5).empty());
  CHECK(predict_set({0.1, 0.2}, 0.0) == std::vector<EntityId>{0, 1});
}

TEST_CASE("metrics match exhaustive oracles on 1000 random instances") {
  Rng rng(515);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.index(11);  // |M| <= 12
    std::vector<int> pred(m), truth(m);
    std::vector<double> score(m);
    int positives = 0;
    for (std::size_t i = 0; i < m; ++i) {
      pred[i] = rng.next_double() < 0.4 ? 1 : 0;
      truth[i] = rng.next_double() < 0.4 ? 1 : 0;
      positives += truth[i];
      score[i] = rng.next_double();
    }
    if (positives == 0) {
      truth[rng.index(m)] = 1;  // metrics require a nonempty true set
    }
    const auto pred_ids = to_ids(pred);
    const auto truth_ids = to_ids(truth);
    CHECK(std::abs(jaccard_visit(pred_ids, truth_ids) - oracle::jaccard(pred, truth)) <
          1e-9);
    CHECK(std::abs(f1_visit(pred_ids, truth_ids) - oracle::f1(pred, truth)) < 1e-9);
    CHECK(std::abs(prauc_visit(score, truth_ids) - oracle::prauc(score, truth)) < 1e-9);

    DdiMatrix ddi(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        if (rng.next_double() < 0.3) ddi.set_pair(i, j);
    CHECK(std::abs(ddi_rate({pred_ids}, ddi) - oracle::ddi({pred}, ddi)) < 1e-9);
  }
}

TEST_CASE("perfect ranking gives prauc 1; demoting a positive never helps") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 3 + rng.index(9);
    std::vector<int> truth(m, 0);
    const std::size_t positives = 1 + rng.index(m - 1);
    for (std::size_t i = 0; i < positives; ++i) truth[i] = 1;
    std::vector<double> score(m);
    for (std::size_t i = 0; i < m; ++i) score[i] = double(m - i);
    std::vector<EntityId> truth_ids = to_ids(truth);
    CHECK(prauc_visit(score, truth_ids) == doctest::Approx(1.0));

    // adjacent swap that pushes a true med below a false one
    const double before = prauc_visit(score, truth_ids);
    std::size_t pos = positives - 1;  // last positive, first negative below it
    if (pos + 1 < m) {
      std::swap(score[pos], score[pos + 1]);
      CHECK(prauc_visit(score, truth_ids) <= before + 1e-12);
    }
  }
}

TEST_CASE("jaccard <= f1 <= 1 for random set pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 2 + rng.index(10);
    std::vector<int> pred(m), truth(m);
    for (std::size_t i = 0; i < m; ++i) {
      pred[i] = rng.next_double() < 0.5 ? 1 : 0;
      truth[i] = rng.next_double() < 0.5 ? 1 : 0;
    }
    if (std::count(truth.begin(), truth.end(), 1) == 0) truth[0] = 1;
    const double j = jaccard_visit(to_ids(pred), to_ids(truth));
    const double f = f1_visit(to_ids(pred), to_ids(truth));
    CHECK(j <= f + 1e-12);
    CHECK(f <= 1.0 + 1e-12);
  }
}

TEST_CASE("ddi rate is invariant to visit ordering") {
  DdiMatrix m(5);
  m.set_pair(0, 3);
  m.set_pair(1, 2);
  std::vector<std::vector<EntityId>> visits = {{0, 1, 3}, {1, 2}, {0, 2, 4}};
  const double a = ddi_rate(visits, m);
  std::reverse(visits.begin(), visits.end());
  CHECK(ddi_rate(visits, m) == a);
}

namespace {

Dataset eval_corpus(std::size_t patients, std::uint64_t seed) {
  SyntheticConfig c;
  c.num_patients = patients;
  c.num_diag = 20;
  c.num_proc = 10;
  c.num_med = 12;
  c.visit_mean = 2.5;
  c.diag_max = 3;
  c.proc_max = 2;
  c.noise_rate = 0.2;
  c.ddi_density = 0.15;
  c.seed = seed;
  return generate_synthetic(c).dataset;
}

Predictor truth_predictor() {
  return [](std::span<const Visit> history) {
    std::vector<double> probs(12, 0.0);
    for (EntityId id : history.back().med_ids) probs[id] = 1.0;
    return probs;
  };
}

}  // namespace

TEST_CASE("an oracle predictor scores 1.0 accuracy and the truth's ddi rate") {
  Dataset ds = eval_corpus(12, 5);
  DdiMatrix ddi(12);
  ddi.set_pair(0, 1);
  ddi.set_pair(2, 5);
  const MetricsReport r = evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5);
  CHECK(r.jaccard.mean == doctest::Approx(1.0));
  CHECK(r.f1.mean == doctest::Approx(1.0));
  CHECK(r.prauc.mean == doctest::Approx(1.0));
  std::vector<std::vector<EntityId>> truth_sets;
  for (std::size_t pi = 0; pi < ds.patients.size(); ++pi)
    if (ds.split[pi] == Split::kTest)
      for (const Visit& v : ds.patients[pi].visits) truth_sets.push_back(v.med_ids);
  CHECK(r.ddi.mean == doctest::Approx(ddi_rate(truth_sets, ddi)));
}

TEST_CASE("the constant-empty predictor scores zero jaccard and drugs") {
  Dataset ds = eval_corpus(12, 6);
  DdiMatrix ddi(12);
  Predictor empty = [](std::span<const Visit>) { return std::vector<double>(12, 0.0); };
  const MetricsReport r = evaluate(empty, ds, Split::kTest, ddi, 0.5);
  CHECK(r.jaccard.mean == 0.0);
  CHECK(r.avg_drugs.mean == 0.0);
  CHECK(r.f1.mean == 0.0);
}

TEST_CASE("evaluate matches a brute-force reimplementation") {
  Dataset ds = eval_corpus(10, 7);
  DdiMatrix ddi(12);
  ddi.set_pair(1, 4);
  // score head: prior-visit meds get 0.7, everything else 0.2 + id noise
  Predictor predictor = [](std::span<const Visit> history) {
    std::vector<double> probs(12);
    for (std::size_t i = 0; i < 12; ++i) probs[i] = 0.2 + 0.01 * double(i);
    if (history.size() > 1)
      for (EntityId id : history[history.size() - 2].med_ids) probs[id] = 0.7;
    return probs;
  };
  const MetricsReport r = evaluate(predictor, ds, Split::kTest, ddi, 0.5);

  double jac = 0, f1v = 0, pr = 0;
  std::size_t visits = 0;
  std::vector<std::vector<EntityId>> preds;
  for (std::size_t pi = 0; pi < ds.patients.size(); ++pi) {
    if (ds.split[pi] != Split::kTest) continue;
    const auto& p = ds.patients[pi];
    for (std::size_t t = 0; t < p.visits.size(); ++t) {
      std::span<const Visit> h(p.visits.data(), t + 1);
      const auto probs = predictor(h);
      std::vector<int> pred_hot(12, 0), truth_hot(12, 0);
      for (std::size_t i = 0; i < 12; ++i) pred_hot[i] = probs[i] >= 0.5 ? 1 : 0;
      for (EntityId id : p.visits[t].med_ids) truth_hot[id] = 1;
      jac += oracle::jaccard(pred_hot, truth_hot);
      f1v += oracle::f1(pred_hot, truth_hot);
      pr += oracle::prauc(probs, truth_hot);
      preds.push_back(to_ids(pred_hot));
      ++visits;
    }
  }
  CHECK(std::abs(r.jaccard.mean - jac / double(visits)) < 1e-9);
  CHECK(std::abs(r.f1.mean - f1v / double(visits)) < 1e-9);
  CHECK(std::abs(r.prauc.mean - pr / double(visits)) < 1e-9);
  CHECK(r.visits == visits);
  std::vector<std::vector<int>> pred_hots;
  for (const auto& s : preds) {
    std::vector<int> hot(12, 0);
    for (EntityId id : s) hot[id] = 1;
    pred_hots.push_back(hot);
  }
  CHECK(std::abs(r.ddi.mean - oracle::ddi(pred_hots, ddi)) < 1e-9);
}

TEST_CASE("bootstrap with rounds=1 fraction=1 equals plain evaluate") {
  Dataset ds = eval_corpus(15, 8);
  DdiMatrix ddi(12);
  ddi.set_pair(0, 2);
  const MetricsReport plain = evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5);
  const MetricsReport boot =
      bootstrap_evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5, 1, 1.0, 3);
  CHECK(boot.jaccard.mean == plain.jaccard.mean);
  CHECK(boot.ddi.mean == plain.ddi.mean);
  CHECK(boot.jaccard.std_dev == 0.0);
}

TEST_CASE("a one-patient test split gives zero bootstrap std") {
  Dataset ds = eval_corpus(8, 9);
  // force exactly one test patient
  for (auto& s : ds.split) s = Split::kTrain;
  ds.split.back() = Split::kTest;
  DdiMatrix ddi(12);
  const MetricsReport r =
      bootstrap_evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5, 6, 0.8, 11);
  CHECK(r.jaccard.std_dev == 0.0);
  CHECK(r.rounds == 6);
}

TEST_CASE("bootstrap is deterministic in the seed") {
  Dataset ds = eval_corpus(20, 10);
  DdiMatrix ddi(12);
  ddi.set_pair(3, 7);
  const MetricsReport a =
      bootstrap_evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5, 5, 0.8, 42);
  const MetricsReport b =
      bootstrap_evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5, 5, 0.8, 42);
  CHECK(a.to_json() == b.to_json());
  const MetricsReport c =
      bootstrap_evaluate(truth_predictor(), ds, Split::kTest, ddi, 0.5, 5, 0.8, 43);
  CHECK(a.to_json() != c.to_json());
}

TEST_CASE("report json and csv carry the headline fields") {
  MetricsReport r;
  r.jaccard = {0.5, 0.01};
  r.rounds = 10;
  r.seed = 7;
  const std::string j = r.to_json();
  CHECK(j.find("\"jaccard\"") != std::string::npos);
  CHECK(j.find("\"rounds\": 10") != std::string::npos);
  const std::string header = MetricsReport::csv_header();
  const std::string row = r.to_csv_row();
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(row.begin(), row.end(), ','));
}
