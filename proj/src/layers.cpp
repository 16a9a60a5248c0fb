#include "stratmed/layers.hpp"

#include <algorithm>
#include <stdexcept>

namespace stratmed {

namespace {

std::vector<std::size_t> to_indices(const std::vector<EntityId>& ids) {
  return {ids.begin(), ids.end()};
}

std::vector<EntityId> sorted_unique(const std::vector<EntityId>& ids) {
  std::vector<EntityId> out = ids;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

Var EmbeddingTable::lookup(Tape& t, const std::vector<EntityId>& ids) {
  for (EntityId id : ids)
    if (id >= rows())
      throw std::out_of_range("embedding '" + weights.name + "': id " + std::to_string(id) +
                              " out of range " + std::to_string(rows()));
  return t.gather_rows(t.param(weights), to_indices(ids));
}

Var EmbeddingTable::sum_rows(Tape& t, const std::vector<EntityId>& ids) {
  return t.row_sum(lookup(t, ids));
}

Var LinearLayer::forward(Tape& t, Var x, bool train, Rng& rng) {
  Var h = t.dropout(x, dropout_p, rng, train);
  h = t.add(t.matmul(h, t.param(weight)), t.param(bias));
  switch (activation) {
    case Activation::kNone: return h;
    case Activation::kRelu: return t.relu(h);
    case Activation::kSigmoid: return t.sigmoid(h);
  }
  return h;
}

GruLayer::GruLayer(const std::string& name, std::size_t dim, ParamSeeder& seeder)
    : w_z(name + ".w_z", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())),
      u_z(name + ".u_z", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())),
      b_z(name + ".b_z", uniform_init({dim}, -0.1, 0.1, seeder.next())),
      w_r(name + ".w_r", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())),
      u_r(name + ".u_r", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())),
      b_r(name + ".b_r", uniform_init({dim}, -0.1, 0.1, seeder.next())),
      w_h(name + ".w_h", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())),
      u_h(name + ".u_h", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())),
      b_h(name + ".b_h", uniform_init({dim}, -0.1, 0.1, seeder.next())) {}

Var GruLayer::step(Tape& t, Var x, Var h) {
  Var z = t.sigmoid(t.add(t.add(t.matmul(x, t.param(w_z)), t.matmul(h, t.param(u_z))),
                          t.param(b_z)));
  Var r = t.sigmoid(t.add(t.add(t.matmul(x, t.param(w_r)), t.matmul(h, t.param(u_r))),
                          t.param(b_r)));
  Var cand = t.tanh(t.add(
      t.add(t.matmul(x, t.param(w_h)), t.matmul(t.mul(r, h), t.param(u_h))), t.param(b_h)));
  Var one = t.constant(Tensor::full({hidden()}, 1.0));
  return t.add(t.mul(t.sub(one, z), h), t.mul(z, cand));
}

Var GruLayer::forward(Tape& t, const std::vector<Var>& sequence) {
  if (sequence.empty()) throw std::invalid_argument("GruLayer: empty sequence");
  Var h = t.constant(Tensor::zeros({hidden()}));
  for (Var x : sequence) h = step(t, x, h);
  return h;
}

std::vector<Parameter*> GruLayer::params() {
  return {&w_z, &u_z, &b_z, &w_r, &u_r, &b_r, &w_h, &u_h, &b_h};
}

GcnSwLayer::GcnSwLayer(const std::string& name, const RelevanceBucket& safety,
                       std::size_t dim, ParamSeeder& seeder)
    : edge_weights(name + ".edge_weights", Tensor({safety.layer_count(), 1})),
      lambda(name + ".lambda", Tensor::full({1}, 0.1)),
      transform(name + ".transform", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())) {
  // One scalar per stratification layer, starting at that layer's relevance.
  for (std::size_t l = 0; l < safety.layer_count(); ++l)
    edge_weights.value.data[l] = safety.relevances[l];
}

GcnSwLayer::Output GcnSwLayer::forward(Tape& t, const std::vector<EntityId>& med_ids,
                                       EmbeddingTable& med_table,
                                       const RelevanceBucket& safety, const DdiMatrix& ddi) {
  const std::size_t dim = med_table.dim();
  const std::vector<EntityId> meds = sorted_unique(med_ids);
  const std::size_t n = meds.size();
  if (n == 0)
    return {t.constant(Tensor::zeros({0, dim})), t.constant(Tensor::zeros({dim}))};

  Var transformed = t.matmul(med_table.lookup(t, meds), t.param(transform));
  if (n == 1) {
    Var updated = t.relu(transformed);
    return {updated, t.row_mean(updated)};
  }

  // Edge weights w_ij = layer_weight(i,j) - lambda * ddi(i,j), diagonal masked.
  std::vector<std::size_t> layer_ids(n * n, 0);
  Tensor ddi_mask({n, n});
  Tensor off_diag({n, n});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const RelevanceLookup l = relevance_lookup(safety, meds[a], meds[b]);
      layer_ids[a * n + b] = static_cast<std::size_t>(l.layer - 1);
      if (a != b) {
        ddi_mask.at(a, b) = static_cast<double>(ddi.at(meds[a], meds[b]));
        off_diag.at(a, b) = 1.0;
      }
    }
  Var layer_w = t.reshape(t.gather_rows(t.param(edge_weights), layer_ids), {n, n});
  Var w = t.sub(layer_w, t.scale_by(t.constant(std::move(ddi_mask)), t.param(lambda)));
  Var adj = t.mul(w, t.constant(std::move(off_diag)));

  Var neighbor_mean =
      t.scale(t.matmul(adj, transformed), 1.0 / static_cast<double>(n - 1));
  Var updated = t.relu(t.add(transformed, neighbor_mean));
  return {updated, t.row_mean(updated)};
}

GcnMfLayer::GcnMfLayer(const std::string& name, const RelevanceBucket& bucket,
                       std::size_t dim, ParamSeeder& seeder)
    : edge_features(name + ".edge_features", Tensor({bucket.layer_count(), dim})),
      transform(name + ".transform", uniform_init({dim, dim}, -0.1, 0.1, seeder.next())) {
  // Layer relevance broadcast across the feature dimension.
  for (std::size_t l = 0; l < bucket.layer_count(); ++l)
    for (std::size_t c = 0; c < dim; ++c)
      edge_features.value.data[l * dim + c] = bucket.relevances[l];
}

GcnMfLayer::Output GcnMfLayer::forward(Tape& t, const std::vector<EntityId>& med_ids,
                                       Var med_nodes, const std::vector<EntityId>& target_ids,
                                       EmbeddingTable& target_table,
                                       const RelevanceBucket& bucket) {
  const std::size_t dim = target_table.dim();
  const std::vector<EntityId> meds = sorted_unique(med_ids);
  const std::vector<EntityId> targets = sorted_unique(target_ids);
  if (targets.empty())
    return {t.constant(Tensor::zeros({0, dim})), t.constant(Tensor::zeros({dim}))};

  Var originals = target_table.lookup(t, targets);
  Var feature_table = t.param(edge_features);
  std::vector<Var> updated_rows;
  updated_rows.reserve(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j) {
    std::vector<Var> modulated;
    for (std::size_t i = 0; i < meds.size(); ++i) {
      const RelevanceLookup l = relevance_lookup(bucket, meds[i], targets[j]);
      if (l.erased()) continue;  // below-theta pairs carry no edge
      Var feature = t.row(feature_table, static_cast<std::size_t>(l.layer - 1));
      modulated.push_back(t.mul(t.row(med_nodes, i), feature));
    }
    if (modulated.empty()) {
      updated_rows.push_back(t.row(originals, j));  // zero in-degree keeps the embedding
    } else {
      Var mean_msg = t.row_mean(t.stack_rows(modulated));
      updated_rows.push_back(t.relu(t.matmul(mean_msg, t.param(transform))));
    }
  }
  Var nodes = t.stack_rows(updated_rows);
  return {nodes, t.row_mean(nodes)};
}

}  // namespace stratmed
