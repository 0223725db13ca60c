// include/mbndiar/mbn.h
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

#ifndef MBNDIAR_MBN_H_
#define MBNDIAR_MBN_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbndiar/common.h"
#include "mbndiar/plda.h"

namespace mbndiar {

/*
  Multilayer bootstrap network.  Each layer is an ensemble of V independent
  k-centroids clusterings; clustering v of layer l picks k_l distinct inputs
  uniformly at random as its centroids and maps an input to the one-hot code
  of its most similar centroid.  The V codes of a layer are concatenated and
  fed to the next layer.  Layer 1 compares PLDA latents by the PLDA
  log-likelihood ratio; upper layers use the inner product of the sparse
  codes, which is the number of clusterings whose codes agree.
*/

struct FloorPolicy {
  enum class Kind { kBalanced, kImbalanced };
  Kind kind = Kind::kBalanced;
  // Number of speakers O for kBalanced, the floor itself for kImbalanced.
  int value = 5;

  static FloorPolicy Balanced(int num_speakers) {
    return {Kind::kBalanced, num_speakers};
  }
  static FloorPolicy Imbalanced(int k_floor) {
    return {Kind::kImbalanced, k_floor};
  }
  // ceil(1.5 O) or the explicit floor.
  int Floor() const;
};

struct MbnConfig {
  int ensemble_size = 400;  // V
  int k1 = 50;
  double delta = 0.3;
  FloorPolicy floor;
  uint64_t seed = 0;

  void Validate() const;
};

// k_1 = k1, k_{l+1} = round(delta * k_l) (halves up), extended while the
// next value is >= the floor. Throws DataError if k1 is below the floor.
std::vector<int> PlanLayers(const MbnConfig &config);

// Seed of clustering v in layer l (both 0-based).
uint64_t ClusteringSeed(uint64_t master_seed, int layer, int clustering);

// Sparse codes of n inputs: row r holds, for each of the num_blocks
// clusterings, the index of the selected centroid in [0, block_width).
struct SparseCodes {
  int num_blocks = 0;
  int block_width = 0;
  std::vector<int32_t> indices;  // n * num_blocks, row-major

  int Size() const {
    return num_blocks == 0 ? 0 : static_cast<int>(indices.size()) / num_blocks;
  }
  int Width() const { return num_blocks * block_width; }
  std::span<const int32_t> Row(int r) const {
    return {indices.data() + static_cast<size_t>(r) * num_blocks,
            static_cast<size_t>(num_blocks)};
  }
};

// Number of blocks in which two codes select the same index; equals the
// inner product of their dense expansions.
int Agreement(std::span<const int32_t> a, std::span<const int32_t> b);

enum class LayerMetric { kPldaLlr, kInnerProduct };

struct MbnLayer {
  int k = 0;
  int ensemble_size = 0;
  LayerMetric metric = LayerMetric::kPldaLlr;
  // centroid_index[v * k + i] is the input row used as centroid i of
  // clustering v, in sampling order.
  std::vector<int> centroid_index;
  // Centroid payloads, one row per (v, i): latent vectors for kPldaLlr...
  RowMatrix dense_centroids;
  // ...or the lower layer's sparse codes for kInnerProduct.
  SparseCodes code_centroids;

  std::span<const int> CentroidSet(int v) const {
    return {centroid_index.data() + static_cast<size_t>(v) * k,
            static_cast<size_t>(k)};
  }
};

// Bottom layer over latent vectors (PLDA LLR similarity).
MbnLayer TrainLayer(const RowMatrix &inputs, int k, int ensemble_size,
                    uint64_t master_seed, int layer_index);
// Upper layer over sparse codes (inner-product similarity).
MbnLayer TrainLayer(const SparseCodes &inputs, int k, int ensemble_size,
                    uint64_t master_seed, int layer_index);

// Index of the most similar centroid of clustering v; lowest index on ties.
int NearestCentroid(const MbnLayer &layer, int v, const Eigen::VectorXd &input,
                    const PldaScorer &scorer);
int NearestCentroid(const MbnLayer &layer, int v,
                    std::span<const int32_t> input);

SparseCodes Encode(const MbnLayer &layer, const RowMatrix &inputs,
                   const PldaScorer &scorer, int num_threads = 1);
SparseCodes Encode(const MbnLayer &layer, const SparseCodes &inputs,
                   int num_threads = 1);

// Top-layer output: one active index per clustering.
struct MVector {
  std::vector<int32_t> blocks;
  int block_width = 0;

  int NumBlocks() const { return static_cast<int>(blocks.size()); }
  int Width() const { return NumBlocks() * block_width; }
  Eigen::VectorXd ToDense() const;
  bool operator==(const MVector &) const = default;
};

std::vector<MVector> ToMVectors(const SparseCodes &codes);

struct MbnModel {
  MbnConfig config;
  std::vector<int> layer_sizes;
  std::vector<MbnLayer> layers;
  Eigen::VectorXd psi;  // PLDA between-class variances for layer 1

  // Encodes latents through the whole stack.
  std::vector<MVector> Transform(const RowMatrix &latents,
                                 int num_threads = 1) const;
};

struct MbnFitResult {
  MbnModel model;
  std::vector<MVector> mvectors;
  std::vector<std::string> warnings;
};

// Trains the network on one conversation's latents and returns their
// m-vectors. If there are fewer latents than k1, k1 is clamped to their
// count (with a warning); fewer latents than the top-layer floor is an error.
MbnFitResult FitTransform(const LatentSet &latents, const PldaModel &plda,
                          const MbnConfig &config, int num_threads = 1);

// Diagnostic JSON dump: config, layer sizes, per-clustering seeds and
// centroid indices.
void WriteMbnDump(const MbnModel &model, const std::filesystem::path &path);

// m-vectors densely expanded into an EmbeddingSet of width V * k_L.
EmbeddingSet MVectorsToEmbeddingSet(std::span<const MVector> mvectors,
                                    std::span<const SegmentRecord> records);

}  // namespace mbndiar

#endif  // MBNDIAR_MBN_H_
