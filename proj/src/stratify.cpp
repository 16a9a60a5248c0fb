#include "stratmed/stratify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace stratmed {

void StratParams::validate() const {
  if (q_mm < 1 || q_md < 1 || q_mp < 1)
    throw std::invalid_argument("stratification: top-layer sizes must be >= 1");
  if (k <= 1.0) throw std::invalid_argument("stratification: gradient coefficient k must be > 1");
  if (theta_fraction < 0.0)
    throw std::invalid_argument("stratification: theta_fraction must be >= 0");
  if (rho_md <= 0.0 || rho_md > 1.0 || rho_mp <= 0.0 || rho_mp > 1.0)
    throw std::invalid_argument("stratification: rho must be in (0,1]");
}

const char* bucket_kind_name(BucketKind k) {
  switch (k) {
    case BucketKind::kSafety: return "safety";
    case BucketKind::kMappingDiag: return "mapping-diag";
    case BucketKind::kMappingProc: return "mapping-proc";
  }
  return "?";
}

LayerPlan layer_sizes(std::size_t total, std::size_t q, double k) {
  if (q < 1) throw std::invalid_argument("layer_sizes: q must be >= 1");
  if (k <= 1.0) throw std::invalid_argument("layer_sizes: k must be > 1");
  if (total == 0) throw std::invalid_argument("layer_sizes: total must be >= 1");
  LayerPlan plan;
  if (total < q) {
    plan.sizes.push_back(total);
    plan.degenerate = true;
    return plan;
  }
  std::size_t acc = 0;
  for (std::size_t i = 1;; ++i) {
    const auto s = static_cast<std::size_t>(
        std::llround(static_cast<double>(q) * std::pow(k, static_cast<double>(i - 1))));
    if (acc + s > total) {
      plan.sizes.push_back(total - acc);  // bottom layer absorbs the remainder
      break;
    }
    plan.sizes.push_back(s);
    acc += s;
    if (acc == total) break;
  }
  return plan;
}

CoOccurrence count_cooccurrence(const Dataset& dataset) {
  CoOccurrence c;
  c.num_med = dataset.vocab.num_med;
  c.num_diag = dataset.vocab.num_diag;
  c.num_proc = dataset.vocab.num_proc;
  c.med_med.assign(c.num_med * c.num_med, 0);
  c.med_diag.assign(c.num_med * c.num_diag, 0);
  c.med_proc.assign(c.num_med * c.num_proc, 0);

  for (std::size_t pi = 0; pi < dataset.patients.size(); ++pi) {
    if (dataset.split[pi] != Split::kTrain) continue;
    for (const Visit& v : dataset.patients[pi].visits) {
      ++c.total_visits;
      for (std::size_t a = 0; a < v.med_ids.size(); ++a) {
        const std::size_t i = v.med_ids[a];
        c.med_med[i * c.num_med + i]++;
        for (std::size_t b = a + 1; b < v.med_ids.size(); ++b) {
          const std::size_t j = v.med_ids[b];
          c.med_med[i * c.num_med + j]++;
          c.med_med[j * c.num_med + i]++;
        }
        for (EntityId d : v.diag_ids) c.med_diag[i * c.num_diag + d]++;
        for (EntityId p : v.proc_ids) c.med_proc[i * c.num_proc + p]++;
      }
    }
  }
  if (c.total_visits == 0)
    throw std::invalid_argument("count_cooccurrence: empty training split");
  return c;
}

namespace {

std::vector<double> plan_relevances(std::size_t n, double rho) {
  // Top layer (index 1) gets rho * n/n, the bottom rho * 1/n.
  std::vector<double> r(n);
  for (std::size_t i = 1; i <= n; ++i)
    r[i - 1] = rho * static_cast<double>(n - i + 1) / static_cast<double>(n);
  return r;
}

}  // namespace

RelevanceBucket build_safety_bucket(const CoOccurrence& cooc, const StratParams& params) {
  params.validate();
  const std::size_t m = cooc.num_med;
  RelevanceBucket bucket;
  bucket.kind = BucketKind::kSafety;
  bucket.rows = m;
  bucket.cols = m;
  bucket.layer_of.assign(m * m, 0);

  // Unordered representatives; the diagonal counts once, off-diagonal twice,
  // so multiplicities add up to the |M|^2 ordered domain.
  struct Rep {
    std::uint32_t count;
    std::uint32_t i, j;
    std::uint32_t multiplicity;
  };
  std::vector<Rep> reps;
  reps.reserve(m * (m + 1) / 2);
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = i; j < m; ++j)
      reps.push_back({cooc.mm(i, j), i, j, i == j ? 1u : 2u});
  std::stable_sort(reps.begin(), reps.end(), [](const Rep& a, const Rep& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });

  const LayerPlan plan = layer_sizes(m * m, params.q_mm, params.k);
  const std::size_t n = plan.sizes.size();
  bucket.relevances = plan_relevances(n, 1.0);
  bucket.layer_sizes.assign(n, 0);

  // Both orientations of a pair take the same layer; when a boundary falls
  // between them the pair stays in the upper layer and the boundary borrows.
  std::size_t cumulative_target = plan.sizes[0];
  std::size_t layer = 0;
  std::size_t filled = 0;
  for (const Rep& rep : reps) {
    bucket.layer_of[rep.i * m + rep.j] = static_cast<std::int32_t>(layer);
    bucket.layer_of[rep.j * m + rep.i] = static_cast<std::int32_t>(layer);
    bucket.layer_sizes[layer] += rep.multiplicity;
    filled += rep.multiplicity;
    while (layer + 1 < n && filled >= cumulative_target) {
      ++layer;
      cumulative_target += plan.sizes[layer];
    }
  }
  return bucket;
}

RelevanceBucket build_mapping_bucket(const CoOccurrence& cooc, const StratParams& params,
                                     BucketKind kind) {
  params.validate();
  if (kind == BucketKind::kSafety)
    throw std::invalid_argument("build_mapping_bucket: kind must be a mapping kind");
  const bool diag = kind == BucketKind::kMappingDiag;
  const std::size_t rows = cooc.num_med;
  const std::size_t cols = diag ? cooc.num_diag : cooc.num_proc;
  const std::vector<std::uint32_t>& counts = diag ? cooc.med_diag : cooc.med_proc;
  const std::size_t q = diag ? params.q_md : params.q_mp;
  const double rho = diag ? params.rho_md : params.rho_mp;
  const double theta =
      params.theta_fraction * static_cast<double>(cooc.total_visits);

  RelevanceBucket bucket;
  bucket.kind = kind;
  bucket.rows = rows;
  bucket.cols = cols;
  bucket.layer_of.assign(rows * cols, kErasedPair);

  struct Pair {
    std::uint32_t count;
    std::uint32_t i, j;
  };
  std::vector<Pair> retained;
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) {
      const std::uint32_t c = counts[i * cols + j];
      if (static_cast<double>(c) < theta)
        bucket.erased_count++;
      else
        retained.push_back({c, i, j});
    }
  if (retained.empty())
    throw std::runtime_error(std::string("build_mapping_bucket(") + bucket_kind_name(kind) +
                             "): all pairs fall below theta; stratification degenerate, "
                             "lower theta_fraction");

  std::stable_sort(retained.begin(), retained.end(), [](const Pair& a, const Pair& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });

  const LayerPlan plan = layer_sizes(retained.size(), q, params.k);
  const std::size_t n = plan.sizes.size();
  bucket.relevances = plan_relevances(n, rho);
  bucket.layer_sizes = plan.sizes;

  std::size_t layer = 0;
  std::size_t remaining = plan.sizes[0];
  for (const Pair& p : retained) {
    while (remaining == 0 && layer + 1 < n) remaining = plan.sizes[++layer];
    bucket.layer_of[p.i * cols + p.j] = static_cast<std::int32_t>(layer);
    if (remaining > 0) --remaining;
  }
  return bucket;
}

RelevanceLookup relevance_lookup(const RelevanceBucket& bucket, std::size_t a,
                                 std::size_t b) {
  if (a >= bucket.rows || b >= bucket.cols)
    throw std::out_of_range("relevance_lookup: pair (" + std::to_string(a) + "," +
                            std::to_string(b) + ") outside domain " +
                            std::to_string(bucket.rows) + "x" + std::to_string(bucket.cols));
  const std::int32_t layer = bucket.layer_of[a * bucket.cols + b];
  if (layer == kErasedPair) return {};
  return {layer + 1, bucket.relevances[static_cast<std::size_t>(layer)]};
}

RelevanceBucket RelevanceBucket::collapsed() const {
  RelevanceBucket out;
  out.kind = kind;
  out.rows = rows;
  out.cols = cols;
  out.layer_of.assign(rows * cols, 0);
  out.layer_sizes = {rows * cols};
  out.relevances = {1.0};
  out.erased_count = 0;
  return out;
}

std::string RelevanceBucket::summary_json() const {
  nlohmann::json j;
  j["kind"] = bucket_kind_name(kind);
  j["n"] = layer_count();
  j["layer_sizes"] = layer_sizes;
  j["relevances"] = relevances;
  j["erased"] = erased_count;
  return j.dump();
}

void export_distribution(const CoOccurrence& cooc, const RelevanceBucket& bucket,
                         DistributionMode mode, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("export_distribution: cannot open " + path.string());
  os.precision(17);
  const std::size_t rows = bucket.rows, cols = bucket.cols;
  const std::vector<std::uint32_t>* counts = nullptr;
  switch (bucket.kind) {
    case BucketKind::kSafety: counts = &cooc.med_med; break;
    case BucketKind::kMappingDiag: counts = &cooc.med_diag; break;
    case BucketKind::kMappingProc: counts = &cooc.med_proc; break;
  }
  for (std::size_t j = 0; j < cols; ++j) os << (j ? "," : "") << j;
  os << "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) os << ",";
      if (mode == DistributionMode::kBefore) {
        os << (*counts)[i * cols + j];
      } else {
        const RelevanceLookup l = relevance_lookup(bucket, i, j);
        os << (l.erased() ? 0.0 : l.relevance);
      }
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("export_distribution: write failure " + path.string());
}

}  // namespace stratmed
