#include "stratmed/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stratmed {

namespace {

using nlohmann::json;

bool strictly_increasing(const std::vector<EntityId>& ids) {
  for (std::size_t i = 1; i < ids.size(); ++i)
    if (ids[i] <= ids[i - 1]) return false;
  return true;
}

void validate_id_list(const std::vector<EntityId>& ids, std::size_t bound,
                      const std::string& what) {
  if (!strictly_increasing(ids))
    throw DataError(what + ": ids must be strictly increasing");
  for (EntityId id : ids)
    if (id >= bound)
      throw DataError(what + ": id " + std::to_string(id) + " out of vocab bound " +
                      std::to_string(bound));
}

// Rank-weighted sampler with weights 1/(rank+1)^s; id 0 is the most popular.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cdf_[r] = acc;
    }
  }

  EntityId draw(Rng& rng) const {
    const double u = rng.next_double() * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cdf_.begin());
    if (idx >= cdf_.size()) idx = cdf_.size() - 1;
    return static_cast<EntityId>(idx);
  }

  std::vector<EntityId> draw_distinct(Rng& rng, std::size_t k) const {
    std::set<EntityId> picked;
    std::size_t attempts = 0;
    while (picked.size() < k && attempts < 1000 * (k + 1)) {
      picked.insert(draw(rng));
      ++attempts;
    }
    for (EntityId id = 0; picked.size() < k; ++id) picked.insert(id);  // skew fallback
    return {picked.begin(), picked.end()};
  }

 private:
  std::vector<double> cdf_;
};

Split parse_split(const std::string& s, std::size_t line_no) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw DataError("line " + std::to_string(line_no) + ": unknown split '" + s + "'");
}

std::vector<EntityId> parse_id_array(const json& arr, std::size_t bound,
                                     const std::string& field, std::size_t line_no) {
  std::vector<EntityId> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw DataError("line " + std::to_string(line_no) + ": " + field +
                      " entries must be non-negative integers");
    const auto id = v.get<long long>();
    if (static_cast<std::size_t>(id) >= bound)
      throw DataError("line " + std::to_string(line_no) + ": " + field + " id " +
                      std::to_string(id) + " out of vocab bound " + std::to_string(bound));
    out.push_back(static_cast<EntityId>(id));
  }
  return out;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::size_t Dataset::total_visits() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.visits.size();
  return n;
}

std::size_t Dataset::visits_in(Split s) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < patients.size(); ++i)
    if (split[i] == s) n += patients[i].visits.size();
  return n;
}

std::vector<std::size_t> Dataset::patient_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < patients.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

void DdiMatrix::set_pair(std::size_t i, std::size_t j) {
  if (i == j) return;  // diagonal stays zero
  entries[i * size + j] = 1;
  entries[j * size + i] = 1;
}

std::size_t DdiMatrix::edge_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = i + 1; j < size; ++j) n += at(i, j);
  return n;
}

void SyntheticConfig::validate() const {
  if (num_patients == 0) throw DataError("synthetic: num_patients must be >= 1");
  if (num_diag == 0 || num_proc == 0 || num_med == 0)
    throw DataError("synthetic: vocab sizes must be >= 1");
  if (visit_mean < 1.0) throw DataError("synthetic: visit_mean must be >= 1");
  if (diag_min < 1) throw DataError("synthetic: diag_min must be >= 1 (diag set nonempty)");
  if (diag_min > diag_max || diag_max > num_diag)
    throw DataError("synthetic: diag set-size range exceeds vocab");
  if (proc_min > proc_max || proc_max > num_proc)
    throw DataError("synthetic: proc set-size range exceeds vocab");
  if (zipf_diag <= 0.0 || zipf_proc <= 0.0 || zipf_med <= 0.0)
    throw DataError("synthetic: popularity exponents must be > 0");
  if (meds_per_diag < 1 || meds_per_diag > num_med)
    throw DataError("synthetic: meds_per_diag out of range");
  if (noise_rate < 0.0 || noise_rate > 1.0)
    throw DataError("synthetic: noise_rate must be in [0,1]");
  if (ddi_density < 0.0 || ddi_density > 1.0)
    throw DataError("synthetic: ddi_density must be in [0,1]");
}

void validate_dataset(const Dataset& dataset) {
  if (dataset.split.size() != dataset.patients.size())
    throw DataError("dataset: split assignment not aligned with patients");
  for (const auto& p : dataset.patients) {
    if (p.visits.empty())
      throw DataError("patient " + p.patient_id + ": at least one visit required");
    for (const Visit& v : p.visits) {
      validate_id_list(v.diag_ids, dataset.vocab.num_diag, "patient " + p.patient_id + " diag");
      validate_id_list(v.proc_ids, dataset.vocab.num_proc, "patient " + p.patient_id + " proc");
      validate_id_list(v.med_ids, dataset.vocab.num_med, "patient " + p.patient_id + " med");
      if (v.diag_ids.empty())
        throw DataError("patient " + p.patient_id + ": empty diagnosis set");
      if (v.med_ids.empty())
        throw DataError("patient " + p.patient_id + ": empty medication set");
    }
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  Dataset ds;

  if (!std::getline(is, line)) throw DataError("dataset file is empty: " + path.string());
  ++line_no;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("line 1: malformed header: " + std::string(e.what()));
  }
  if (!header.contains("num_diag") || !header.contains("num_proc") ||
      !header.contains("num_med"))
    throw DataError("line 1: header must carry num_diag/num_proc/num_med");
  ds.vocab.num_diag = header.at("num_diag").get<std::size_t>();
  ds.vocab.num_proc = header.at("num_proc").get<std::size_t>();
  ds.vocab.num_med = header.at("num_med").get<std::size_t>();
  if (ds.vocab.num_diag == 0 || ds.vocab.num_proc == 0 || ds.vocab.num_med == 0)
    throw DataError("line 1: vocab counts must be >= 1");

  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " +
                      std::string(e.what()));
    }
    PatientRecord patient;
    try {
      patient.patient_id = rec.at("patient_id").get<std::string>();
      ds.split.push_back(parse_split(rec.at("split").get<std::string>(), line_no));
      for (const auto& v : rec.at("visits")) {
        Visit visit;
        visit.diag_ids = parse_id_array(v.at("diag"), ds.vocab.num_diag, "diag", line_no);
        visit.proc_ids = parse_id_array(v.at("proc"), ds.vocab.num_proc, "proc", line_no);
        visit.med_ids = parse_id_array(v.at("med"), ds.vocab.num_med, "med", line_no);
        patient.visits.push_back(std::move(visit));
      }
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + std::string(e.what()));
    }
    if (patient.visits.empty())
      throw DataError("line " + std::to_string(line_no) + ": patient has no visits");
    for (const Visit& v : patient.visits) {
      if (v.diag_ids.empty())
        throw DataError("line " + std::to_string(line_no) + ": empty diagnosis set");
      if (v.med_ids.empty())
        throw DataError("line " + std::to_string(line_no) + ": empty medication set");
      if (!strictly_increasing(v.diag_ids) || !strictly_increasing(v.proc_ids) ||
          !strictly_increasing(v.med_ids))
        throw DataError("line " + std::to_string(line_no) + ": id lists must be sorted");
    }
    ds.patients.push_back(std::move(patient));
  }
  validate_dataset(ds);
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open dataset file for writing: " + path.string());
  json header;
  header["num_diag"] = dataset.vocab.num_diag;
  header["num_proc"] = dataset.vocab.num_proc;
  header["num_med"] = dataset.vocab.num_med;
  os << header.dump() << "\n";
  for (std::size_t i = 0; i < dataset.patients.size(); ++i) {
    const PatientRecord& p = dataset.patients[i];
    json rec;
    rec["patient_id"] = p.patient_id;
    rec["split"] = split_name(dataset.split[i]);
    json visits = json::array();
    for (const Visit& v : p.visits) {
      json jv;
      jv["diag"] = v.diag_ids;
      jv["proc"] = v.proc_ids;
      jv["med"] = v.med_ids;
      visits.push_back(std::move(jv));
    }
    rec["visits"] = std::move(visits);
    os << rec.dump() << "\n";
  }
  if (!os) throw DataError("write failure: " + path.string());
}

DdiMatrix load_ddi(const std::filesystem::path& path, std::size_t num_med) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open DDI file " + path.string());
  DdiMatrix ddi(num_med);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long i = -1, j = -1;
    char comma = 0;
    if (!(ls >> i >> comma >> j) || comma != ',')
      throw DataError("ddi line " + std::to_string(line_no) + ": expected 'i,j'");
    if (i < 0 || j < 0 || i >= j || static_cast<std::size_t>(j) >= num_med)
      throw DataError("ddi line " + std::to_string(line_no) + ": edge (" +
                      std::to_string(i) + "," + std::to_string(j) +
                      ") violates 0 <= i < j < " + std::to_string(num_med));
    ddi.set_pair(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return ddi;
}

void save_ddi(const DdiMatrix& ddi, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open DDI file for writing: " + path.string());
  for (std::size_t i = 0; i < ddi.size; ++i)
    for (std::size_t j = i + 1; j < ddi.size; ++j)
      if (ddi.at(i, j)) os << i << "," << j << "\n";
  if (!os) throw DataError("write failure: " + path.string());
}

std::vector<std::vector<EntityId>> latent_prescription_map(const SyntheticConfig& config) {
  config.validate();
  Rng root(config.seed);
  ZipfSampler med_sampler(config.num_med, config.zipf_med);
  std::vector<std::vector<EntityId>> map(config.num_diag);
  for (std::size_t d = 0; d < config.num_diag; ++d) {
    Rng rng = root.derive(0x100000ULL + d);
    map[d] = med_sampler.draw_distinct(rng, config.meds_per_diag);
  }
  return map;
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Rng root(config.seed);
  const auto latent = latent_prescription_map(config);
  ZipfSampler diag_sampler(config.num_diag, config.zipf_diag);
  ZipfSampler proc_sampler(config.num_proc, config.zipf_proc);

  SyntheticData out;
  out.dataset.vocab = {config.num_diag, config.num_proc, config.num_med};
  out.dataset.patients.reserve(config.num_patients);

  for (std::size_t p = 0; p < config.num_patients; ++p) {
    Rng rng = root.derive(0x200000ULL + p);
    PatientRecord patient;
    {
      std::ostringstream id;
      id << "P" << p;
      patient.patient_id = id.str();
    }
    const std::size_t n_visits = 1 + rng.poisson(config.visit_mean - 1.0);
    for (std::size_t t = 0; t < n_visits; ++t) {
      Visit v;
      const std::size_t n_diag =
          config.diag_min + rng.index(config.diag_max - config.diag_min + 1);
      v.diag_ids = diag_sampler.draw_distinct(rng, n_diag);
      const std::size_t n_proc =
          config.proc_min + rng.index(config.proc_max - config.proc_min + 1);
      if (n_proc > 0) v.proc_ids = proc_sampler.draw_distinct(rng, n_proc);

      std::set<EntityId> meds;
      for (EntityId d : v.diag_ids)
        for (EntityId m : latent[d]) meds.insert(m);
      if (config.noise_rate > 0.0) {
        std::vector<EntityId> base(meds.begin(), meds.end());
        for (EntityId m : base) {
          if (rng.next_double() >= config.noise_rate) continue;
          meds.erase(m);
          for (int attempt = 0; attempt < 20; ++attempt) {
            const EntityId repl = static_cast<EntityId>(rng.index(config.num_med));
            if (!meds.count(repl)) {
              meds.insert(repl);
              break;
            }
          }
          if (meds.empty()) meds.insert(m);  // keep the visit prescribable
        }
      }
      v.med_ids.assign(meds.begin(), meds.end());
      patient.visits.push_back(std::move(v));
    }
    out.dataset.patients.push_back(std::move(patient));
  }

  out.dataset.split.assign(out.dataset.patients.size(), Split::kTrain);
  out.dataset = split_dataset(out.dataset, SplitRatios{}, root.derive(0x5117).seed());

  // DDI edges favor med pairs that rarely co-occur in the generated corpus.
  const std::size_t m = config.num_med;
  std::vector<std::size_t> cooc(m * m, 0);
  for (const auto& patient : out.dataset.patients)
    for (const Visit& v : patient.visits)
      for (std::size_t a = 0; a < v.med_ids.size(); ++a)
        for (std::size_t b = a + 1; b < v.med_ids.size(); ++b) {
          cooc[v.med_ids[a] * m + v.med_ids[b]]++;
          cooc[v.med_ids[b] * m + v.med_ids[a]]++;
        }
  const std::size_t n_pairs = m * (m - 1) / 2;
  const std::size_t target =
      static_cast<std::size_t>(std::llround(config.ddi_density * static_cast<double>(n_pairs)));
  out.ddi = DdiMatrix(m);
  if (target > 0 && n_pairs > 0) {
    Rng rng = root.derive(0xDD1);
    struct Keyed {
      double key;
      std::size_t i, j;
    };
    std::vector<Keyed> keys;
    keys.reserve(n_pairs);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) {
        const double w = 1.0 / (1.0 + static_cast<double>(cooc[i * m + j]));
        const double u = (static_cast<double>(rng.next_u64() >> 11) + 0.5) * 0x1.0p-53;
        keys.push_back({std::pow(u, 1.0 / w), i, j});
      }
    std::sort(keys.begin(), keys.end(), [](const Keyed& a, const Keyed& b) {
      if (a.key != b.key) return a.key > b.key;
      return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });
    for (std::size_t k = 0; k < std::min(target, keys.size()); ++k)
      out.ddi.set_pair(keys[k].i, keys[k].j);
  }
  validate_dataset(out.dataset);
  return out;
}

Dataset split_dataset(const Dataset& dataset, const SplitRatios& ratios,
                      std::uint64_t seed) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (std::abs(total - 1.0) > 1e-9)
    throw DataError("split ratios must sum to 1, got " + std::to_string(total));
  const double r[3] = {ratios.train, ratios.validation, ratios.test};
  std::size_t nonzero = 0;
  for (double x : r)
    if (x > 0.0) ++nonzero;
  const std::size_t n = dataset.patients.size();
  if (n < nonzero) throw DataError("fewer patients than split buckets");

  std::size_t sizes[3];
  double fracs[3];
  std::size_t assigned = 0;
  for (int b = 0; b < 3; ++b) {
    const double exact = r[b] * static_cast<double>(n);
    sizes[b] = static_cast<std::size_t>(std::floor(exact));
    fracs[b] = exact - std::floor(exact);
    assigned += sizes[b];
  }
  std::vector<int> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return fracs[a] > fracs[b]; });
  for (std::size_t rem = n - assigned, k = 0; k < rem; ++k) sizes[order[k % 3]] += 1;

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);

  Dataset out = dataset;
  std::size_t cursor = 0;
  for (int b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < sizes[b]; ++k)
      out.split[idx[cursor++]] = static_cast<Split>(b);
  return out;
}

namespace {

enum class EntityClass : int { kDiag = 0, kProc = 1, kMed = 2 };

std::vector<EntityId>& class_list(Visit& v, EntityClass c) {
  switch (c) {
    case EntityClass::kDiag: return v.diag_ids;
    case EntityClass::kProc: return v.proc_ids;
    default: return v.med_ids;
  }
}

const std::vector<EntityId>& class_list(const Visit& v, EntityClass c) {
  return class_list(const_cast<Visit&>(v), c);
}

std::size_t class_vocab(const EntityVocab& vocab, EntityClass c) {
  switch (c) {
    case EntityClass::kDiag: return vocab.num_diag;
    case EntityClass::kProc: return vocab.num_proc;
    default: return vocab.num_med;
  }
}

// Drops visits that lost their diagnosis or medication set, then drops
// emptied patients (and their split labels).
Dataset compact_dataset(Dataset&& ds) {
  Dataset out;
  out.vocab = ds.vocab;
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    PatientRecord& p = ds.patients[i];
    PatientRecord kept;
    kept.patient_id = p.patient_id;
    for (Visit& v : p.visits)
      if (!v.diag_ids.empty() && !v.med_ids.empty()) kept.visits.push_back(std::move(v));
    if (!kept.visits.empty()) {
      out.patients.push_back(std::move(kept));
      out.split.push_back(ds.split[i]);
    }
  }
  return out;
}

}  // namespace

Dataset distort_dataset(const Dataset& dataset, int level, std::uint64_t seed) {
  if (level < 100 || level > 140 || level % 10 != 0)
    throw DataError("distortion level must be one of {100,110,120,130,140}, got " +
                    std::to_string(level));
  if (level == 100) return dataset;

  const double remove_frac = static_cast<double>(level - 100) / 100.0;
  Dataset out = dataset;
  Rng root(seed);

  for (EntityClass cls : {EntityClass::kDiag, EntityClass::kProc, EntityClass::kMed}) {
    const std::size_t vocab = class_vocab(dataset.vocab, cls);
    if (vocab == 0) continue;

    // Tier on train-split frequency: top 10% common, bottom 60% rare.
    std::vector<std::size_t> train_count(vocab, 0);
    for (std::size_t pi = 0; pi < dataset.patients.size(); ++pi) {
      if (dataset.split[pi] != Split::kTrain) continue;
      for (const Visit& v : dataset.patients[pi].visits)
        for (EntityId id : class_list(v, cls)) train_count[id]++;
    }
    std::vector<EntityId> rank(vocab);
    for (std::size_t i = 0; i < vocab; ++i) rank[i] = static_cast<EntityId>(i);
    std::stable_sort(rank.begin(), rank.end(), [&](EntityId a, EntityId b) {
      if (train_count[a] != train_count[b]) return train_count[a] > train_count[b];
      return a < b;
    });
    const std::size_t n_common =
        static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(vocab)));
    const std::size_t n_rare =
        static_cast<std::size_t>(std::llround(0.60 * static_cast<double>(vocab)));
    if (n_common + n_rare >= vocab) continue;  // no moderate tier at this vocab size
    std::vector<bool> moderate(vocab, false);
    for (std::size_t r = n_common; r < vocab - n_rare; ++r) moderate[rank[r]] = true;

    // Every occurrence of a moderate entity, across all splits.
    struct Slot {
      std::size_t patient, visit;
      EntityId id;
    };
    std::vector<Slot> slots;
    for (std::size_t pi = 0; pi < out.patients.size(); ++pi)
      for (std::size_t vi = 0; vi < out.patients[pi].visits.size(); ++vi)
        for (EntityId id : class_list(out.patients[pi].visits[vi], cls))
          if (moderate[id]) slots.push_back({pi, vi, id});
    const std::size_t n_remove = static_cast<std::size_t>(
        std::llround(remove_frac * static_cast<double>(slots.size())));
    if (n_remove == 0) continue;

    Rng rng = root.derive(static_cast<std::uint64_t>(cls) + 1);
    shuffle(slots, rng);
    // A visit must keep at least one diagnosis and one medication, so the
    // last such occurrence is never a valid removal target.
    const bool protect_last = cls != EntityClass::kProc;
    std::size_t removed = 0;
    for (const Slot& slot : slots) {
      if (removed == n_remove) break;
      auto& list = class_list(out.patients[slot.patient].visits[slot.visit], cls);
      if (protect_last && list.size() <= 1) continue;
      auto it = std::find(list.begin(), list.end(), slot.id);
      if (it != list.end()) {
        list.erase(it);
        ++removed;
      }
    }
  }
  return compact_dataset(std::move(out));
}

Dataset filter_low_frequency(const Dataset& dataset, int mu) {
  if (mu != 5 && mu != 10 && mu != 15 && mu != 20 && mu != 100)
    throw DataError("low-frequency threshold mu must be one of {5,10,15,20,100}, got " +
                    std::to_string(mu));
  if (mu == 100) return dataset;

  const std::size_t total = dataset.total_visits();
  const double cutoff = static_cast<double>(mu) / 100.0;
  auto visit_freq = [&](EntityClass cls) {
    std::vector<std::size_t> count(class_vocab(dataset.vocab, cls), 0);
    for (const auto& p : dataset.patients)
      for (const Visit& v : p.visits)
        for (EntityId id : class_list(v, cls)) count[id]++;
    return count;
  };
  const auto diag_count = visit_freq(EntityClass::kDiag);
  const auto proc_count = visit_freq(EntityClass::kProc);
  auto retained = [&](const std::vector<std::size_t>& count, EntityId id) {
    return static_cast<double>(count[id]) < cutoff * static_cast<double>(total);
  };

  Dataset out = dataset;
  for (auto& p : out.patients)
    for (Visit& v : p.visits) {
      std::erase_if(v.diag_ids, [&](EntityId id) { return !retained(diag_count, id); });
      std::erase_if(v.proc_ids, [&](EntityId id) { return !retained(proc_count, id); });
    }
  return compact_dataset(std::move(out));
}

std::vector<double> multi_hot(const std::vector<EntityId>& ids, std::size_t size) {
  std::vector<double> v(size, 0.0);
  for (EntityId id : ids) {
    if (id >= size)
      throw DataError("multi_hot: id " + std::to_string(id) + " out of bound " +
                      std::to_string(size));
    v[id] = 1.0;
  }
  return v;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  return a.vocab.num_diag == b.vocab.num_diag && a.vocab.num_proc == b.vocab.num_proc &&
         a.vocab.num_med == b.vocab.num_med && a.patients == b.patients &&
         a.split == b.split;
}

}  // namespace stratmed
