// include/mbndiar/clustering.h
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

#ifndef MBNDIAR_CLUSTERING_H_
#define MBNDIAR_CLUSTERING_H_

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "mbndiar/common.h"
#include "mbndiar/data_io.h"
#include "mbndiar/mbn.h"
#include "mbndiar/metrics.h"
#include "mbndiar/plda.h"

namespace mbndiar {

enum class SimilarityKind { kCosine, kPldaLlr };

struct SimilarityMatrix {
  Eigen::MatrixXd values;  // symmetric; the diagonal is never read
  SimilarityKind kind = SimilarityKind::kCosine;

  int Size() const { return static_cast<int>(values.rows()); }
};

// Throws DataError naming the first zero-norm row.
SimilarityMatrix CosineMatrix(const RowMatrix &vectors);
// Agreeing-block fraction, which is the cosine of the dense expansions.
SimilarityMatrix CosineMatrix(std::span<const MVector> mvectors);
// Pairwise PLDA log-likelihood ratios of latent vectors (baseline path).
SimilarityMatrix PldaLlrMatrix(const PldaModel &model, const RowMatrix &latents);

struct OracleStop {
  int num_clusters;
};
struct ThresholdStop {
  double tau;  // merge while the best average similarity is >= tau
};
using StopRule = std::variant<OracleStop, ThresholdStop>;

struct ClusterAssignment {
  std::vector<int> labels;  // in [0, num_clusters), first appearance order
  int num_clusters = 0;
};

struct MergeStep {
  int first;   // smallest member of the first cluster
  int second;  // smallest member of the second cluster
  double score;
};

// Average-linkage agglomerative clustering. Among equal-score candidates the
// pair whose smaller smallest-member index is lowest wins, then the one
// whose other smallest-member index is lowest. `trace`, when given,
// receives the executed merges in order.
ClusterAssignment Ahc(const SimilarityMatrix &sim, const StopRule &stop,
                      std::vector<MergeStep> *trace = nullptr);

// Hypothesis annotation with speakers "spk<label>".
Annotation AssignmentToAnnotation(std::span<const SegmentRecord> records,
                                  const ClusterAssignment &assignment);

struct DevConversation {
  SimilarityMatrix sim;
  Annotation reference;
  std::vector<SegmentRecord> segments;
};

struct ThresholdGrid {
  double lo = -0.3;
  double hi = 0.3;
  double step = 0.01;

  // lo, lo + step, ... up to hi (inclusive within rounding).
  std::vector<double> Values() const;
};

using DerScorer =
    std::function<DerBreakdown(const Annotation &, const Annotation &)>;

struct CalibrationResult {
  double tau = 0.0;
  // (tau, pooled DER) for every grid value.
  std::vector<std::pair<double, double>> curve;
};

// Threshold minimizing the pooled dev DER (total error time over total
// scored time); ties go to the smallest tau.
CalibrationResult CalibrateThreshold(std::span<const DevConversation> dev,
                                     const ThresholdGrid &grid,
                                     const DerScorer &scorer);

}  // namespace mbndiar

#endif  // MBNDIAR_CLUSTERING_H_
