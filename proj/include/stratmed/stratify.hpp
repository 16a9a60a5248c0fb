#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stratmed/data.hpp"

namespace stratmed {

// Global co-occurrence tallies over the training split. med_med is symmetric
// with the diagonal holding per-medication visit counts.
struct CoOccurrence {
  std::size_t num_med = 0, num_diag = 0, num_proc = 0;
  std::vector<std::uint32_t> med_med;   // num_med * num_med
  std::vector<std::uint32_t> med_diag;  // num_med * num_diag
  std::vector<std::uint32_t> med_proc;  // num_med * num_proc
  std::size_t total_visits = 0;

  std::uint32_t mm(std::size_t i, std::size_t j) const { return med_med[i * num_med + j]; }
  std::uint32_t md(std::size_t m, std::size_t d) const { return med_diag[m * num_diag + d]; }
  std::uint32_t mp(std::size_t m, std::size_t p) const { return med_proc[m * num_proc + p]; }
};

struct StratParams {
  std::size_t q_mm = 60;
  std::size_t q_md = 150;
  std::size_t q_mp = 150;
  double k = 2.0;                 // gradient coefficient, > 1
  double theta_fraction = 0.0003; // erasure threshold as a fraction of train visits
  double rho_md = 0.8;            // maximum mapping relevance
  double rho_mp = 0.8;

  void validate() const;
};

// Geometric layer plan: round(q*k^(i-1)) per layer until the running sum
// would pass total; the remainder becomes the bottom layer.
struct LayerPlan {
  std::vector<std::size_t> sizes;
  bool degenerate = false;  // total < q collapsed to a single layer
};

LayerPlan layer_sizes(std::size_t total, std::size_t q, double k);

enum class BucketKind : std::uint8_t { kSafety, kMappingDiag, kMappingProc };

const char* bucket_kind_name(BucketKind k);

constexpr std::int32_t kErasedPair = -1;

// Pyramid stratification of one pair domain. layer_of is a row-major
// matrix over the domain (med x med, or med x diag/proc) holding 0-based
// layer indices, kErasedPair for erased mapping pairs.
struct RelevanceBucket {
  BucketKind kind = BucketKind::kSafety;
  std::size_t rows = 0, cols = 0;
  std::vector<std::int32_t> layer_of;
  std::vector<std::size_t> layer_sizes;  // materialized pair counts per layer
  std::vector<double> relevances;        // strictly decreasing, top first
  std::size_t erased_count = 0;

  std::size_t layer_count() const { return relevances.size(); }

  // Single-layer variant with relevance 1.0 over the full domain; used by
  // the w/o S ablation.
  RelevanceBucket collapsed() const;

  std::string summary_json() const;
};

struct RelevanceLookup {
  std::int32_t layer = kErasedPair;  // 1-based when not erased
  double relevance = 0.0;
  bool erased() const { return layer == kErasedPair; }
};

CoOccurrence count_cooccurrence(const Dataset& dataset);

RelevanceBucket build_safety_bucket(const CoOccurrence& cooc, const StratParams& params);
RelevanceBucket build_mapping_bucket(const CoOccurrence& cooc, const StratParams& params,
                                     BucketKind kind);

RelevanceLookup relevance_lookup(const RelevanceBucket& bucket, std::size_t a,
                                 std::size_t b);

enum class DistributionMode : std::uint8_t { kBefore, kAfter };

// CSV matrix dump: raw counts (before) or assigned relevance with 0 for
// erased pairs (after). Header row carries column ids.
void export_distribution(const CoOccurrence& cooc, const RelevanceBucket& bucket,
                         DistributionMode mode, const std::filesystem::path& path);

}  // namespace stratmed
