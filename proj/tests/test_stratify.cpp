#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>

#include "stratmed/stratify.hpp"
#include "test_util.hpp"

using namespace stratmed;

namespace {

Dataset two_visit_dataset() {
  Dataset ds;
  ds.vocab = {6, 4, 5};
  PatientRecord p;
  p.patient_id = "A";
  Visit v1;
  v1.diag_ids = {3};
  v1.med_ids = {0, 1};
  Visit v2;
  v2.diag_ids = {1, 3};
  v2.med_ids = {0, 1};
  p.visits = {v1, v2};
  ds.patients = {p};
  ds.split = {Split::kTrain};
  return ds;
}

// Independent accumulate-until-exhausted oracle for the layer plan.
std::vector<std::size_t> plan_oracle(std::size_t total, std::size_t q, double k) {
  std::vector<std::size_t> sizes;
  std::size_t acc = 0;
  for (std::size_t i = 1;; ++i) {
    const auto s =
        static_cast<std::size_t>(std::llround(double(q) * std::pow(k, double(i - 1))));
    if (acc + s > total) {
      sizes.push_back(total - acc);
      break;
    }
    sizes.push_back(s);
    acc += s;
    if (acc == total) break;
  }
  return sizes;
}

CoOccurrence synthetic_cooc(std::size_t num_med, std::size_t num_diag, std::size_t num_proc,
                            std::size_t total_visits) {
  CoOccurrence c;
  c.num_med = num_med;
  c.num_diag = num_diag;
  c.num_proc = num_proc;
  c.med_med.assign(num_med * num_med, 0);
  c.med_diag.assign(num_med * num_diag, 0);
  c.med_proc.assign(num_med * num_proc, 0);
  c.total_visits = total_visits;
  return c;
}

SyntheticConfig corpus_config(std::uint64_t seed) {
  SyntheticConfig c;
  c.num_patients = 400;
  c.num_diag = 40;
  c.num_proc = 20;
  c.num_med = 24;
  c.visit_mean = 2.5;
  c.diag_max = 3;
  c.proc_max = 2;
  c.meds_per_diag = 2;
  c.noise_rate = 0.1;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("co-occurrence counts match a hand count over two visits") {
  const CoOccurrence c = count_cooccurrence(two_visit_dataset());
  CHECK(c.total_visits == 2);
  CHECK(c.mm(0, 1) == 2);
  CHECK(c.mm(1, 0) == 2);
  CHECK(c.mm(0, 0) == 2);  // diagonal holds the occurrence count
  CHECK(c.mm(1, 1) == 2);
  CHECK(c.md(0, 3) == 2);
  CHECK(c.md(1, 1) == 1);
  CHECK(c.mp(0, 0) == 0);
}

TEST_CASE("visits without medications produce all-zero matrices") {
  Dataset ds = two_visit_dataset();
  for (auto& p : ds.patients)
    for (Visit& v : p.visits) v.med_ids.clear();  // bypasses load-time validation
  const CoOccurrence c = count_cooccurrence(ds);
  for (auto x : c.med_med) CHECK(x == 0);
  for (auto x : c.med_diag) CHECK(x == 0);
}

TEST_CASE("single visit med {0} diag {3} counts one pair") {
  Dataset ds = two_visit_dataset();
  ds.patients[0].visits.resize(1);
  ds.patients[0].visits[0].diag_ids = {3};
  ds.patients[0].visits[0].med_ids = {0};
  const CoOccurrence c = count_cooccurrence(ds);
  CHECK(c.md(0, 3) == 1);
  CHECK(c.mm(0, 0) == 1);
}

TEST_CASE("count_cooccurrence only sees the training split") {
  Dataset ds = two_visit_dataset();
  ds.patients.push_back(ds.patients[0]);
  ds.patients[1].patient_id = "B";
  ds.split = {Split::kTrain, Split::kTest};
  const CoOccurrence c = count_cooccurrence(ds);
  CHECK(c.total_visits == 2);
  CHECK(c.mm(0, 1) == 2);
}

TEST_CASE("layer plan for the 131-medication configuration") {
  const LayerPlan plan = layer_sizes(131 * 131, 60, 2.0);
  const std::vector<std::size_t> expected = {60, 120, 240, 480, 960, 1920, 3840, 7680, 1861};
  CHECK(plan.sizes == expected);
  CHECK(plan.sizes == plan_oracle(131 * 131, 60, 2.0));
  CHECK_FALSE(plan.degenerate);
  std::size_t sum = 0;
  for (std::size_t s : plan.sizes) sum += s;
  CHECK(sum == 131 * 131);
}

TEST_CASE("layer plan edge cases") {
  CHECK(layer_sizes(60, 60, 2.0).sizes == std::vector<std::size_t>{60});
  CHECK(layer_sizes(60 * 3, 60, 2.0).sizes == std::vector<std::size_t>{60, 120});  // q(1+k)
  const LayerPlan degenerate = layer_sizes(10, 60, 2.0);
  CHECK(degenerate.sizes == std::vector<std::size_t>{10});
  CHECK(degenerate.degenerate);
  CHECK_THROWS_AS(layer_sizes(100, 0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(layer_sizes(100, 10, 1.0), std::invalid_argument);
}

TEST_CASE("random layer plans keep the defining identities") {
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t total = 50 + rng.index(40000);
    const std::size_t q = 1 + rng.index(std::min<std::size_t>(total, 200));
    const double k = 1.1 + rng.next_double() * 2.9;
    const LayerPlan plan = layer_sizes(total, q, k);
    CHECK(plan.sizes == plan_oracle(total, q, k));
    std::size_t sum = 0;
    for (std::size_t s : plan.sizes) sum += s;
    CHECK(sum == total);
    for (std::size_t i = 0; i + 1 < plan.sizes.size(); ++i)
      CHECK(plan.sizes[i] ==
            static_cast<std::size_t>(std::llround(double(q) * std::pow(k, double(i)))));
  }
}

TEST_CASE("safety bucket relevances for a four-layer plan") {
  // |M| = 10 with q = 10, k = 2: [10, 20, 40, 30], n = 4.
  CoOccurrence c = synthetic_cooc(10, 4, 4, 50);
  Rng rng(8);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = i; j < 10; ++j) {
      const auto count = static_cast<std::uint32_t>(rng.index(40));
      c.med_med[i * 10 + j] = count;
      c.med_med[j * 10 + i] = count;
    }
  StratParams params;
  params.q_mm = 10;
  const RelevanceBucket b = build_safety_bucket(c, params);
  REQUIRE(b.layer_count() == 4);
  CHECK(b.relevances[0] == doctest::Approx(1.0));
  CHECK(b.relevances[1] == doctest::Approx(0.75));
  CHECK(b.relevances[2] == doctest::Approx(0.5));
  CHECK(b.relevances[3] == doctest::Approx(0.25));
  std::size_t sum = 0;
  for (std::size_t s : b.layer_sizes) sum += s;
  CHECK(sum == 100);  // conservation over the ordered domain incl. diagonal
}

TEST_CASE("equal counts make layering purely lexicographic and deterministic") {
  CoOccurrence c = synthetic_cooc(8, 4, 4, 10);
  for (auto& x : c.med_med) x = 7;
  StratParams params;
  params.q_mm = 6;
  const RelevanceBucket a = build_safety_bucket(c, params);
  const RelevanceBucket b = build_safety_bucket(c, params);
  CHECK(a.layer_of == b.layer_of);
  // Lexicographically smallest unordered pairs fill the top layer first.
  CHECK(relevance_lookup(a, 0, 0).layer == 1);
  CHECK(relevance_lookup(a, 0, 1).layer == 1);
  CHECK(relevance_lookup(a, 7, 7).layer == static_cast<std::int32_t>(a.layer_count()));
}

TEST_CASE("the single highest-count pair lands in the top layer") {
  CoOccurrence c = synthetic_cooc(9, 4, 4, 100);
  c.med_med[2 * 9 + 5] = 90;
  c.med_med[5 * 9 + 2] = 90;
  StratParams params;
  params.q_mm = 5;
  const RelevanceBucket b = build_safety_bucket(c, params);
  const RelevanceLookup l = relevance_lookup(b, 2, 5);
  CHECK(l.layer == 1);
  CHECK(l.relevance == doctest::Approx(1.0));
}

TEST_CASE("safety lookups are symmetric over the whole domain") {
  Dataset ds = generate_synthetic(corpus_config(3)).dataset;
  const CoOccurrence c = count_cooccurrence(ds);
  StratParams params;
  params.q_mm = 12;
  const RelevanceBucket b = build_safety_bucket(c, params);
  for (std::size_t i = 0; i < c.num_med; ++i)
    for (std::size_t j = 0; j < c.num_med; ++j) {
      const RelevanceLookup a = relevance_lookup(b, i, j);
      const RelevanceLookup s = relevance_lookup(b, j, i);
      CHECK(a.layer == s.layer);
      CHECK(a.relevance == s.relevance);
    }
}

TEST_CASE("mapping bucket erases pairs strictly below theta") {
  // theta = 0.0003 * 15032 = 4.5096: counts <= 4 erased, >= 5 retained.
  CoOccurrence c = synthetic_cooc(8, 10, 4, 15032);
  for (std::size_t m = 0; m < 8; ++m)
    for (std::size_t d = 0; d < 10; ++d)
      c.med_diag[m * 10 + d] = static_cast<std::uint32_t>(m + d);  // 0..16
  StratParams params;
  params.q_md = 4;
  params.theta_fraction = 0.0003;
  const RelevanceBucket b = build_mapping_bucket(c, params, BucketKind::kMappingDiag);
  std::size_t erased = 0;
  for (std::size_t m = 0; m < 8; ++m)
    for (std::size_t d = 0; d < 10; ++d) {
      const RelevanceLookup l = relevance_lookup(b, m, d);
      if (m + d <= 4) {
        CHECK(l.erased());
        ++erased;
      } else {
        CHECK_FALSE(l.erased());
      }
    }
  CHECK(b.erased_count == erased);
  std::size_t layered = 0;
  for (std::size_t s : b.layer_sizes) layered += s;
  CHECK(layered + b.erased_count == 80);  // Eq. 8 conservation
}

TEST_CASE("mapping relevance tops out at rho") {
  CoOccurrence c = synthetic_cooc(6, 8, 4, 100);
  Rng rng(5);
  for (auto& x : c.med_diag) x = 1 + static_cast<std::uint32_t>(rng.index(30));
  StratParams params;
  params.q_md = 6;
  params.rho_md = 0.8;
  params.theta_fraction = 0.0;
  const RelevanceBucket b = build_mapping_bucket(c, params, BucketKind::kMappingDiag);
  CHECK(b.relevances.front() == doctest::Approx(0.8));
  CHECK(b.erased_count == 0);  // theta = 0 erases nothing
  for (std::size_t i = 1; i < b.relevances.size(); ++i)
    CHECK(b.relevances[i] < b.relevances[i - 1]);
  CHECK(b.relevances.back() > 0.0);
}

TEST_CASE("an all-erased mapping bucket is a hard error") {
  CoOccurrence c = synthetic_cooc(4, 4, 4, 1000);
  // all med-diag counts zero, theta positive
  StratParams params;
  params.theta_fraction = 0.01;
  CHECK_THROWS_WITH_AS(build_mapping_bucket(c, params, BucketKind::kMappingDiag),
                       doctest::Contains("degenerate"), std::runtime_error);
}

TEST_CASE("relevance_lookup rejects out-of-domain pairs") {
  CoOccurrence c = synthetic_cooc(4, 4, 4, 10);
  StratParams params;
  params.q_mm = 4;
  const RelevanceBucket b = build_safety_bucket(c, params);
  CHECK_THROWS_AS(relevance_lookup(b, 4, 0), std::out_of_range);
  CHECK_THROWS_AS(relevance_lookup(b, 0, 4), std::out_of_range);
}

TEST_CASE("monotonicity: higher count never lands in a lower layer") {
  Dataset ds = generate_synthetic(corpus_config(9)).dataset;
  const CoOccurrence c = count_cooccurrence(ds);
  StratParams params;
  params.q_mm = 10;
  params.q_md = 20;
  const RelevanceBucket safety = build_safety_bucket(c, params);
  for (std::size_t i = 0; i < c.num_med; ++i)
    for (std::size_t j = 0; j < c.num_med; ++j)
      for (std::size_t a = 0; a < c.num_med; ++a)
        for (std::size_t b2 = 0; b2 < c.num_med; ++b2) {
          if (c.mm(i, j) > c.mm(a, b2)) {
            const auto l1 = relevance_lookup(safety, i, j);
            const auto l2 = relevance_lookup(safety, a, b2);
            CHECK(l1.layer <= l2.layer);
            CHECK(l1.relevance >= l2.relevance);
          }
        }
}

TEST_CASE("geometric ratio holds exactly for integer k on non-final layers") {
  const LayerPlan plan = layer_sizes(131 * 131, 60, 2.0);
  for (std::size_t i = 0; i + 2 < plan.sizes.size(); ++i)
    CHECK(plan.sizes[i + 1] == 2 * plan.sizes[i]);
}

TEST_CASE("rebuilding buckets from the same data is deterministic") {
  Dataset ds = generate_synthetic(corpus_config(13)).dataset;
  const CoOccurrence c1 = count_cooccurrence(ds);
  const CoOccurrence c2 = count_cooccurrence(ds);
  StratParams params;
  const RelevanceBucket a = build_mapping_bucket(c1, params, BucketKind::kMappingDiag);
  const RelevanceBucket b = build_mapping_bucket(c2, params, BucketKind::kMappingDiag);
  CHECK(a.layer_of == b.layer_of);
  CHECK(a.relevances == b.relevances);
  CHECK(a.erased_count == b.erased_count);
}

TEST_CASE("stratification flattens dispersion relative to raw counts") {
  // The pyramid claim, measured as coefficient of variation: min-max
  // normalized raw counts are strongly dispersed on long-tailed data while
  // per-pair relevance is not.
  Dataset ds = generate_synthetic(corpus_config(17)).dataset;
  const CoOccurrence c = count_cooccurrence(ds);
  StratParams params;
  params.q_mm = 12;
  const RelevanceBucket b = build_safety_bucket(c, params);

  const std::size_t n = c.num_med * c.num_med;
  double max_count = 0.0;
  for (auto x : c.med_med) max_count = std::max(max_count, double(x));
  REQUIRE(max_count > 0.0);
  auto stats = [&](auto value_at) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += value_at(i);
    mean /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = value_at(i) - mean;
      var += d * d;
    }
    return std::pair(mean, std::sqrt(var / double(n)));
  };
  const auto [count_mean, count_std] =
      stats([&](std::size_t i) { return double(c.med_med[i]) / max_count; });
  const auto [rel_mean, rel_std] = stats([&](std::size_t i) {
    return b.relevances[static_cast<std::size_t>(b.layer_of[i])];
  });
  CHECK(rel_std / rel_mean < count_std / count_mean);
}

TEST_CASE("export_distribution shapes and value domains") {
  test_util::TempDir tmp("dist");
  CoOccurrence c = synthetic_cooc(5, 6, 4, 100);
  StratParams params;
  params.q_mm = 5;
  params.q_md = 5;
  params.theta_fraction = 0.0;

  SUBCASE("before-mode on zero counts is all zeros") {
    const RelevanceBucket b = build_safety_bucket(c, params);
    const auto path = tmp.path() / "before.csv";
    export_distribution(c, b, DistributionMode::kBefore, path);
    std::ifstream is(path);
    std::string header, line;
    std::getline(is, header);
    std::size_t rows = 0;
    while (std::getline(is, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 4);  // 5 columns
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) CHECK(cell == "0");
    }
    CHECK(rows == 5);
  }

  SUBCASE("after-mode values come from the relevance set plus zero") {
    Rng rng(2);
    for (auto& x : c.med_diag) x = static_cast<std::uint32_t>(rng.index(9));
    StratParams p2 = params;
    p2.theta_fraction = 0.02;  // theta = 2: zeros and ones erased
    const RelevanceBucket b = build_mapping_bucket(c, p2, BucketKind::kMappingDiag);
    const auto path = tmp.path() / "after.csv";
    export_distribution(c, b, DistributionMode::kAfter, path);
    std::set<double> allowed(b.relevances.begin(), b.relevances.end());
    allowed.insert(0.0);
    std::ifstream is(path);
    std::string header, line;
    std::getline(is, header);
    std::size_t rows = 0;
    while (std::getline(is, line)) {
      ++rows;
      std::istringstream ls(line);
      std::string cell;
      std::size_t cols = 0;
      while (std::getline(ls, cell, ',')) {
        ++cols;
        bool ok = false;
        for (double a : allowed)
          if (std::abs(std::stod(cell) - a) < 1e-12) ok = true;
        CHECK(ok);
      }
      CHECK(cols == 6);
    }
    CHECK(rows == 5);
  }
}

TEST_CASE("bucket summary json carries kind, n, sizes, relevances, erased") {
  CoOccurrence c = synthetic_cooc(6, 6, 4, 50);
  Rng rng(4);
  for (auto& x : c.med_med) x = static_cast<std::uint32_t>(rng.index(20));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < i; ++j) c.med_med[j * 6 + i] = c.med_med[i * 6 + j];
  StratParams params;
  params.q_mm = 6;
  const RelevanceBucket b = build_safety_bucket(c, params);
  const std::string j = b.summary_json();
  CHECK(j.find("\"kind\":\"safety\"") != std::string::npos);
  CHECK(j.find("\"n\":") != std::string::npos);
  CHECK(j.find("\"layer_sizes\":") != std::string::npos);
  CHECK(j.find("\"relevances\":") != std::string::npos);
  CHECK(j.find("\"erased\":0") != std::string::npos);
}

TEST_CASE("collapsed buckets have one full-domain layer at relevance 1") {
  CoOccurrence c = synthetic_cooc(5, 7, 4, 50);
  for (auto& x : c.med_diag) x = 3;
  StratParams params;
  params.q_md = 5;
  params.theta_fraction = 0.01;
  const RelevanceBucket b = build_mapping_bucket(c, params, BucketKind::kMappingDiag);
  const RelevanceBucket flat = b.collapsed();
  CHECK(flat.layer_count() == 1);
  CHECK(flat.relevances[0] == 1.0);
  CHECK(flat.erased_count == 0);
  CHECK(flat.layer_sizes[0] == 35);
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t d = 0; d < 7; ++d) CHECK_FALSE(relevance_lookup(flat, m, d).erased());
}
