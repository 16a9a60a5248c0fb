#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stratmed/data.hpp"

namespace stratmed {

struct MetricStat {
  double mean = 0.0;
  double std_dev = 0.0;  // sample std over bootstrap rounds, 0 for a single round
};

struct MetricsReport {
  MetricStat jaccard, ddi, f1, prauc, avg_drugs;
  // Per-patient averaging variant of the accuracy metrics, reported alongside
  // the per-visit means above.
  double jaccard_per_patient = 0.0;
  double f1_per_patient = 0.0;
  double prauc_per_patient = 0.0;
  std::size_t rounds = 1;
  std::uint64_t seed = 0;
  std::size_t visits = 0;

  std::string to_json() const;
  std::string to_csv_row() const;  // flat row for table building
  static std::string csv_header();
};

double jaccard_visit(const std::vector<EntityId>& pred, const std::vector<EntityId>& truth);
double f1_visit(const std::vector<EntityId>& pred, const std::vector<EntityId>& truth);
// Ranked sweep over descending probability (ties by ascending id).
double prauc_visit(const std::vector<double>& probabilities,
                   const std::vector<EntityId>& truth);
double ddi_rate(const std::vector<std::vector<EntityId>>& pred_sets, const DdiMatrix& ddi);
double avg_drugs(const std::vector<std::vector<EntityId>>& pred_sets);

std::vector<EntityId> predict_set(const std::vector<double>& probabilities, double delta);

// Probability head for one patient history slice; the last visit is the
// prediction target and its medications are withheld by the caller.
using Predictor = std::function<std::vector<double>(std::span<const Visit> history)>;

MetricsReport evaluate(const Predictor& predictor, const Dataset& dataset, Split split,
                       const DdiMatrix& ddi, double delta);

// Bootstrap over test patients with replacement. rounds = 1 with
// fraction = 1 degenerates to plain evaluate (every patient once).
MetricsReport bootstrap_evaluate(const Predictor& predictor, const Dataset& dataset,
                                 Split split, const DdiMatrix& ddi, double delta,
                                 std::size_t rounds, double fraction, std::uint64_t seed);

}  // namespace stratmed
