// src/mbn.cc
//
// Copyright (c)  2026  The mbndiar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mbndiar/mbn.h"

#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace mbndiar {

namespace {

// Partial Fisher-Yates: k distinct indices of [0, n) in sampling order.
std::vector<int> SampleWithoutReplacement(int n, int k, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

void CheckLayerArgs(int n, int k, int ensemble_size) {
  if (n <= 0) throw DataError("MBN layer has no inputs");
  if (k <= 0 || ensemble_size <= 0)
    throw UsageError("MBN layer needs k >= 1 and V >= 1");
  if (n < k)
    throw DataError("MBN layer needs at least k = " + std::to_string(k) +
                    " inputs, got " + std::to_string(n));
}

MbnLayer SampleCentroids(int n, int k, int ensemble_size, uint64_t master_seed,
                         int layer_index) {
  CheckLayerArgs(n, k, ensemble_size);
  MbnLayer layer;
  layer.k = k;
  layer.ensemble_size = ensemble_size;
  layer.centroid_index.reserve(static_cast<size_t>(k) * ensemble_size);
  for (int v = 0; v < ensemble_size; ++v) {
    auto idx = SampleWithoutReplacement(
        n, k, ClusteringSeed(master_seed, layer_index, v));
    layer.centroid_index.insert(layer.centroid_index.end(), idx.begin(),
                                idx.end());
  }
  return layer;
}

}  // namespace

int FloorPolicy::Floor() const {
  if (kind == Kind::kBalanced) return (3 * value + 1) / 2;  // ceil(1.5 O)
  return value;
}

void MbnConfig::Validate() const {
  if (ensemble_size < 1) throw UsageError("MBN ensemble size V must be >= 1");
  if (k1 < 1) throw UsageError("MBN k1 must be >= 1");
  if (!(delta >= 0.0 && delta < 1.0))
    throw UsageError("MBN delta must lie in [0, 1)");
  if (floor.value < 1)
    throw UsageError("MBN floor policy needs a positive value");
}

std::vector<int> PlanLayers(const MbnConfig &config) {
  config.Validate();
  const int floor = config.floor.Floor();
  if (config.k1 < floor)
    throw DataError("k1 = " + std::to_string(config.k1) +
                    " is below the top-layer floor " + std::to_string(floor));
  std::vector<int> ks{config.k1};
  while (true) {
    // The epsilon keeps products such as 0.3 * 15 on the half-up side.
    const int next =
        static_cast<int>(std::floor(config.delta * ks.back() + 0.5 + 1e-9));
    if (next < floor || next >= ks.back()) break;
    ks.push_back(next);
  }
  return ks;
}

uint64_t ClusteringSeed(uint64_t master_seed, int layer, int clustering) {
  const uint64_t key = (static_cast<uint64_t>(layer) << 32) |
                       static_cast<uint32_t>(clustering);
  return master_seed ^ Mix64(key);
}

int Agreement(std::span<const int32_t> a, std::span<const int32_t> b) {
  int same = 0;
  for (size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return same;
}

MbnLayer TrainLayer(const RowMatrix &inputs, int k, int ensemble_size,
                    uint64_t master_seed, int layer_index) {
  MbnLayer layer = SampleCentroids(static_cast<int>(inputs.rows()), k,
                                   ensemble_size, master_seed, layer_index);
  layer.metric = LayerMetric::kPldaLlr;
  layer.dense_centroids.resize(static_cast<Eigen::Index>(layer.centroid_index.size()),
                               inputs.cols());
  for (size_t c = 0; c < layer.centroid_index.size(); ++c)
    layer.dense_centroids.row(static_cast<Eigen::Index>(c)) =
        inputs.row(layer.centroid_index[c]);
  return layer;
}

MbnLayer TrainLayer(const SparseCodes &inputs, int k, int ensemble_size,
                    uint64_t master_seed, int layer_index) {
  MbnLayer layer = SampleCentroids(inputs.Size(), k, ensemble_size,
                                   master_seed, layer_index);
  layer.metric = LayerMetric::kInnerProduct;
  auto &cc = layer.code_centroids;
  cc.num_blocks = inputs.num_blocks;
  cc.block_width = inputs.block_width;
  cc.indices.reserve(layer.centroid_index.size() * inputs.num_blocks);
  for (int idx : layer.centroid_index) {
    auto row = inputs.Row(idx);
    cc.indices.insert(cc.indices.end(), row.begin(), row.end());
  }
  return layer;
}

int NearestCentroid(const MbnLayer &layer, int v, const Eigen::VectorXd &input,
                    const PldaScorer &scorer) {
  if (layer.metric != LayerMetric::kPldaLlr)
    throw UsageError("layer does not take latent inputs");
  if (input.size() != layer.dense_centroids.cols() ||
      input.size() != scorer.Dim())
    throw DataError("input dimension " + std::to_string(input.size()) +
                    " does not match centroid dimension " +
                    std::to_string(layer.dense_centroids.cols()));
  const Eigen::Index base = static_cast<Eigen::Index>(v) * layer.k;
  int best = 0;
  double best_score = scorer.Score(layer.dense_centroids.row(base), input);
  for (int i = 1; i < layer.k; ++i) {
    const double s = scorer.Score(layer.dense_centroids.row(base + i), input);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

int NearestCentroid(const MbnLayer &layer, int v,
                    std::span<const int32_t> input) {
  if (layer.metric != LayerMetric::kInnerProduct)
    throw UsageError("layer does not take sparse-code inputs");
  if (static_cast<int>(input.size()) != layer.code_centroids.num_blocks)
    throw DataError("input has " + std::to_string(input.size()) +
                    " blocks, centroids have " +
                    std::to_string(layer.code_centroids.num_blocks));
  int best = 0, best_score = -1;
  for (int i = 0; i < layer.k; ++i) {
    const int s = Agreement(layer.code_centroids.Row(v * layer.k + i), input);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

SparseCodes Encode(const MbnLayer &layer, const RowMatrix &inputs,
                   const PldaScorer &scorer, int num_threads) {
  if (inputs.cols() != layer.dense_centroids.cols())
    throw DataError("input dimension " + std::to_string(inputs.cols()) +
                    " does not match centroid dimension " +
                    std::to_string(layer.dense_centroids.cols()));
  const int n = static_cast<int>(inputs.rows());
  const int V = layer.ensemble_size;
  SparseCodes out;
  out.num_blocks = V;
  out.block_width = layer.k;
  out.indices.assign(static_cast<size_t>(n) * V, 0);
  ParallelFor(V, num_threads, [&](int v) {
    Eigen::VectorXd row(inputs.cols());
    for (int r = 0; r < n; ++r) {
      row = inputs.row(r).transpose();
      out.indices[static_cast<size_t>(r) * V + v] =
          NearestCentroid(layer, v, row, scorer);
    }
  });
  return out;
}

SparseCodes Encode(const MbnLayer &layer, const SparseCodes &inputs,
                   int num_threads) {
  const auto &cc = layer.code_centroids;
  if (inputs.num_blocks != cc.num_blocks ||
      inputs.block_width != cc.block_width)
    throw DataError("sparse input layout does not match the layer's centroids");
  const int n = inputs.Size();
  const int V = layer.ensemble_size;
  const int blocks = cc.num_blocks;
  const int width = cc.block_width;
  const int k = layer.k;
  SparseCodes out;
  out.num_blocks = V;
  out.block_width = k;
  out.indices.assign(static_cast<size_t>(n) * V, 0);

  ParallelFor(V, num_threads, [&](int v) {
    // Inverted index: for block b and value j, the centroids whose code
    // selects j in block b. Agreement counts then cost O(blocks + hits).
    std::vector<int> offsets(static_cast<size_t>(blocks) * width + 1, 0);
    for (int i = 0; i < k; ++i) {
      auto code = cc.Row(v * k + i);
      for (int b = 0; b < blocks; ++b) ++offsets[b * width + code[b] + 1];
    }
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    std::vector<int> members(offsets.back());
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (int i = 0; i < k; ++i) {
      auto code = cc.Row(v * k + i);
      for (int b = 0; b < blocks; ++b) members[fill[b * width + code[b]]++] = i;
    }
    std::vector<int> counts(k);
    for (int r = 0; r < n; ++r) {
      std::fill(counts.begin(), counts.end(), 0);
      auto z = inputs.Row(r);
      for (int b = 0; b < blocks; ++b) {
        const int slot = b * width + z[b];
        for (int m = offsets[slot]; m < offsets[slot + 1]; ++m)
          ++counts[members[m]];
      }
      // max_element returns the first maximum: lowest index wins ties.
      out.indices[static_cast<size_t>(r) * V + v] = static_cast<int32_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  });
  return out;
}

Eigen::VectorXd MVector::ToDense() const {
  Eigen::VectorXd dense = Eigen::VectorXd::Zero(Width());
  for (int b = 0; b < NumBlocks(); ++b)
    dense(static_cast<Eigen::Index>(b) * block_width + blocks[b]) = 1.0;
  return dense;
}

std::vector<MVector> ToMVectors(const SparseCodes &codes) {
  std::vector<MVector> out(codes.Size());
  for (int r = 0; r < codes.Size(); ++r) {
    auto row = codes.Row(r);
    out[r].blocks.assign(row.begin(), row.end());
    out[r].block_width = codes.block_width;
  }
  return out;
}

std::vector<MVector> MbnModel::Transform(const RowMatrix &latents,
                                         int num_threads) const {
  if (layers.empty()) throw UsageError("MBN model has no layers");
  PldaScorer scorer(psi);
  SparseCodes codes = Encode(layers.front(), latents, scorer, num_threads);
  for (size_t l = 1; l < layers.size(); ++l)
    codes = Encode(layers[l], codes, num_threads);
  return ToMVectors(codes);
}

MbnFitResult FitTransform(const LatentSet &latents, const PldaModel &plda,
                          const MbnConfig &config, int num_threads) {
  config.Validate();
  if (latents.Dim() != plda.Dim())
    throw DataError("latent dimension " + std::to_string(latents.Dim()) +
                    " does not match PLDA dimension " +
                    std::to_string(plda.Dim()));
  const int n = latents.Size();
  const int floor = config.floor.Floor();
  if (n < floor)
    throw DataError("conversation has " + std::to_string(n) +
                    " segments, fewer than the top-layer floor " +
                    std::to_string(floor));

  MbnFitResult result;
  MbnModel &model = result.model;
  model.config = config;
  model.psi = plda.psi;
  if (n < config.k1) {
    result.warnings.push_back("conversation has " + std::to_string(n) +
                              " segments < k1 = " + std::to_string(config.k1) +
                              "; clamping k1 to " + std::to_string(n));
    model.config.k1 = n;
  }
  model.layer_sizes = PlanLayers(model.config);

  const int V = config.ensemble_size;
  PldaScorer scorer(plda.psi);
  MbnLayer bottom = TrainLayer(latents.vectors, model.layer_sizes[0], V,
                               config.seed, 0);
  SparseCodes codes = Encode(bottom, latents.vectors, scorer, num_threads);
  model.layers.push_back(std::move(bottom));
  for (size_t l = 1; l < model.layer_sizes.size(); ++l) {
    MbnLayer layer = TrainLayer(codes, model.layer_sizes[l], V, config.seed,
                                static_cast<int>(l));
    codes = Encode(layer, codes, num_threads);
    model.layers.push_back(std::move(layer));
  }
  result.mvectors = ToMVectors(codes);
  return result;
}

void WriteMbnDump(const MbnModel &model, const std::filesystem::path &path) {
  nlohmann::ordered_json j;
  j["ensemble_size"] = model.config.ensemble_size;
  j["k1"] = model.config.k1;
  j["delta"] = model.config.delta;
  j["floor"] = model.config.floor.Floor();
  j["seed"] = model.config.seed;
  j["layer_sizes"] = model.layer_sizes;
  j["layers"] = nlohmann::json::array();
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const auto &layer = model.layers[l];
    nlohmann::ordered_json jl;
    jl["k"] = layer.k;
    jl["metric"] =
        layer.metric == LayerMetric::kPldaLlr ? "plda_llr" : "inner_product";
    jl["clusterings"] = nlohmann::json::array();
    for (int v = 0; v < layer.ensemble_size; ++v) {
      auto set = layer.CentroidSet(v);
      jl["clusterings"].push_back(
          {{"seed", ClusteringSeed(model.config.seed, static_cast<int>(l), v)},
           {"centroids", std::vector<int>(set.begin(), set.end())}});
    }
    j["layers"].push_back(std::move(jl));
  }
  WriteFileAtomically(path,
                      [&](std::ostream &os) { os << j.dump(1) << '\n'; });
}

EmbeddingSet MVectorsToEmbeddingSet(std::span<const MVector> mvectors,
                                    std::span<const SegmentRecord> records) {
  if (mvectors.size() != records.size())
    throw DataError("m-vector count does not match record count");
  EmbeddingSet set;
  set.records.assign(records.begin(), records.end());
  const int width = mvectors.empty() ? 0 : mvectors.front().Width();
  set.vectors = RowMatrix::Zero(static_cast<Eigen::Index>(mvectors.size()), width);
  for (size_t r = 0; r < mvectors.size(); ++r) {
    if (mvectors[r].Width() != width)
      throw DataError("m-vectors of different widths cannot share a set");
    set.vectors.row(static_cast<Eigen::Index>(r)) = mvectors[r].ToDense().transpose();
  }
  return set;
}

}  // namespace mbndiar
