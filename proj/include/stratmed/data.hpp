#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stratmed/rng.hpp"

namespace stratmed {

// Parse/validation failures on external data; the CLI maps these to exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EntityId = std::uint32_t;

struct EntityVocab {
  std::size_t num_diag = 0;
  std::size_t num_proc = 0;
  std::size_t num_med = 0;
};

// One clinical visit. Id lists are strictly increasing; diag and med sets
// are nonempty, procedures may be absent.
struct Visit {
  std::vector<EntityId> diag_ids;
  std::vector<EntityId> proc_ids;
  std::vector<EntityId> med_ids;

  bool operator==(const Visit&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<Visit> visits;  // chronological

  bool operator==(const PatientRecord&) const = default;
};

enum class Split : std::uint8_t { kTrain = 0, kValidation = 1, kTest = 2 };

const char* split_name(Split s);

struct Dataset {
  EntityVocab vocab;
  std::vector<PatientRecord> patients;
  std::vector<Split> split;  // aligned with patients

  std::size_t total_visits() const;
  std::size_t visits_in(Split s) const;
  std::vector<std::size_t> patient_indices(Split s) const;
};

// Symmetric 0/1 interaction matrix with a zero diagonal, shared by all patients.
struct DdiMatrix {
  std::size_t size = 0;
  std::vector<std::uint8_t> entries;  // row-major size*size

  explicit DdiMatrix(std::size_t n = 0) : size(n), entries(n * n, 0) {}

  std::uint8_t at(std::size_t i, std::size_t j) const { return entries[i * size + j]; }
  void set_pair(std::size_t i, std::size_t j);
  std::size_t edge_count() const;  // undirected

  bool operator==(const DdiMatrix&) const = default;
};

struct SyntheticConfig {
  std::size_t num_patients = 500;
  std::size_t num_diag = 80;
  std::size_t num_proc = 40;
  std::size_t num_med = 40;
  double visit_mean = 2.5;       // mean visits per patient, >= 1
  std::size_t diag_min = 1, diag_max = 4;
  std::size_t proc_min = 0, proc_max = 3;
  double zipf_diag = 1.2;
  double zipf_proc = 1.1;
  double zipf_med = 1.1;
  std::size_t meds_per_diag = 2;  // latent prescription map fan-out
  double noise_rate = 0.1;        // chance a mapped med is swapped for a random one
  double ddi_density = 0.05;      // fraction of unordered med pairs with an edge
  std::uint64_t seed = 1;

  void validate() const;
};

// --- file formats -----------------------------------------------------------

// JSON-lines dataset: header line {"num_diag":..,"num_proc":..,"num_med":..},
// then one patient per line. See README for the full schema.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Undirected edge CSV "i,j" with i < j; loading symmetrizes.
DdiMatrix load_ddi(const std::filesystem::path& path, std::size_t num_med);
void save_ddi(const DdiMatrix& ddi, const std::filesystem::path& path);

// --- generation and protocol transforms -------------------------------------

// The latent diagnosis -> medication map the generator prescribes from;
// deterministic in the config, exposed so tests can recover ground truth.
std::vector<std::vector<EntityId>> latent_prescription_map(const SyntheticConfig& config);

struct SyntheticData {
  Dataset dataset;
  DdiMatrix ddi;
};

SyntheticData generate_synthetic(const SyntheticConfig& config);

struct SplitRatios {
  double train = 2.0 / 3.0;
  double validation = 1.0 / 6.0;
  double test = 1.0 / 6.0;
};

// Patient-level partition: floor each bucket, hand out the remainder by
// largest fractional part, then deal shuffled patients bucket by bucket.
Dataset split_dataset(const Dataset& dataset, const SplitRatios& ratios,
                      std::uint64_t seed);

// Distortion protocol: entities of each class are tiered by train-split
// frequency (top 10% common, bottom 60% rare, middle moderate); the given
// percentage of the moderate tier's occurrence volume is deleted uniformly
// at random. level 100 is the identity.
Dataset distort_dataset(const Dataset& dataset, int level, std::uint64_t seed);

// Sparsity protocol: erase diagnoses/procedures that occur in >= mu percent
// of all visits; medications are untouched. mu = 100 retains everything.
Dataset filter_low_frequency(const Dataset& dataset, int mu);

std::vector<double> multi_hot(const std::vector<EntityId>& ids, std::size_t size);

// Structural deep-equality used by round-trip tests.
bool datasets_equal(const Dataset& a, const Dataset& b);

// Throws DataError when any invariant is violated (bounds, ordering,
// nonempty diag/med sets, split alignment).
void validate_dataset(const Dataset& dataset);

}  // namespace stratmed
