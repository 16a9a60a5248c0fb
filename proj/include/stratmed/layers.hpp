#pragma once

#include <string>
#include <vector>

#include "stratmed/autograd.hpp"
#include "stratmed/data.hpp"
#include "stratmed/stratify.hpp"

namespace stratmed {

// Hands out decorrelated per-parameter init seeds from one model seed.
class ParamSeeder {
 public:
  explicit ParamSeeder(std::uint64_t seed) : root_(seed) {}
  std::uint64_t next() { return root_.derive(counter_++).seed(); }

 private:
  Rng root_;
  std::uint64_t counter_ = 0;
};

struct EmbeddingTable {
  Parameter weights;  // [rows x dim]

  EmbeddingTable(std::string name, std::size_t rows, std::size_t dim, std::uint64_t seed)
      : weights(std::move(name), uniform_init({rows, dim}, -0.1, 0.1, seed)) {}

  std::size_t rows() const { return weights.value.shape[0]; }
  std::size_t dim() const { return weights.value.shape[1]; }

  // Row per id, [|ids| x dim]; gradients land only on looked-up rows.
  Var lookup(Tape& t, const std::vector<EntityId>& ids);
  // Multi-hot times table: the sum of looked-up rows, [dim].
  Var sum_rows(Tape& t, const std::vector<EntityId>& ids);
};

enum class Activation : std::uint8_t { kNone, kRelu, kSigmoid };

struct LinearLayer {
  Parameter weight;  // [in x out]
  Parameter bias;    // [out]
  Activation activation = Activation::kNone;
  double dropout_p = 0.0;  // applied to the input in train mode

  LinearLayer(const std::string& name, std::size_t in, std::size_t out, Activation act,
              double dropout, ParamSeeder& seeder)
      : weight(name + ".weight", uniform_init({in, out}, -0.1, 0.1, seeder.next())),
        bias(name + ".bias", uniform_init({out}, -0.1, 0.1, seeder.next())),
        activation(act),
        dropout_p(dropout) {}

  Var forward(Tape& t, Var x, bool train, Rng& rng);
  std::vector<Parameter*> params() { return {&weight, &bias}; }
};

// Standard GRU cell unrolled over a sequence; zero initial hidden state,
// returns the final hidden state.
struct GruLayer {
  Parameter w_z, u_z, b_z;
  Parameter w_r, u_r, b_r;
  Parameter w_h, u_h, b_h;

  GruLayer(const std::string& name, std::size_t dim, ParamSeeder& seeder);

  std::size_t hidden() const { return b_z.value.size(); }
  Var forward(Tape& t, const std::vector<Var>& sequence);
  Var step(Tape& t, Var x, Var h);  // one cell update
  std::vector<Parameter*> params();
};

// Safety graph over the previous visit's medications: complete graph, one
// learnable scalar weight per relevance layer (initialized to the layer's
// relevance), DDI edges penalized by a learnable lambda.
struct GcnSwLayer {
  Parameter edge_weights;  // [n_layers x 1]
  Parameter lambda;        // [1]
  Parameter transform;     // [dim x dim]

  GcnSwLayer(const std::string& name, const RelevanceBucket& safety, std::size_t dim,
             ParamSeeder& seeder);

  struct Output {
    Var nodes;   // [n x dim] updated medication embeddings
    Var pooled;  // [dim]; zero vector when med_ids is empty
  };
  Output forward(Tape& t, const std::vector<EntityId>& med_ids, EmbeddingTable& med_table,
                 const RelevanceBucket& safety, const DdiMatrix& ddi);
  std::vector<Parameter*> params() { return {&edge_weights, &lambda, &transform}; }
};

// Mapping graph from medications onto diagnosis/procedure embeddings:
// neighbor-only updates through per-layer feature vectors; targets without
// incoming edges keep their original embedding.
struct GcnMfLayer {
  Parameter edge_features;  // [n_layers x dim], row = layer relevance broadcast
  Parameter transform;      // [dim x dim]

  GcnMfLayer(const std::string& name, const RelevanceBucket& bucket, std::size_t dim,
             ParamSeeder& seeder);

  struct Output {
    Var nodes;   // [m x dim] updated target embeddings
    Var pooled;  // [dim]; zero vector when target_ids is empty
  };
  Output forward(Tape& t, const std::vector<EntityId>& med_ids, Var med_nodes,
                 const std::vector<EntityId>& target_ids, EmbeddingTable& target_table,
                 const RelevanceBucket& bucket);
  std::vector<Parameter*> params() { return {&edge_features, &transform}; }
};

// Mean over rows; an empty stack aggregates to the zero vector.
inline Var aggregate_mean(Tape& t, Var rows) { return t.row_mean(rows); }

}  // namespace stratmed
