// src/clustering.cc
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

#include "mbndiar/clustering.h"

#include <cmath>
#include <queue>

namespace mbndiar {

namespace {

struct Candidate {
  double score;
  int a, b;  // canonical ids, a < b
  int version_a, version_b;
};

// Priority order: higher score first, then lower (a, b).
struct CandidateLess {
  bool operator()(const Candidate &x, const Candidate &y) const {
    if (x.score != y.score) return x.score < y.score;
    if (x.a != y.a) return x.a > y.a;
    return x.b > y.b;
  }
};

}  // namespace

SimilarityMatrix CosineMatrix(const RowMatrix &vectors) {
  const Eigen::Index n = vectors.rows();
  Eigen::VectorXd sq = vectors.rowwise().squaredNorm();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(sq(i) > 0.0))
      throw DataError("cosine similarity: row " + std::to_string(i) +
                      " has zero norm");
  SimilarityMatrix sim;
  sim.kind = SimilarityKind::kCosine;
  const Eigen::MatrixXd gram = vectors * vectors.transpose();
  sim.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double c =
          std::clamp(gram(i, j) / std::sqrt(sq(i) * sq(j)), -1.0, 1.0);
      sim.values(i, j) = c;
      sim.values(j, i) = c;
    }
  }
  return sim;
}

SimilarityMatrix CosineMatrix(std::span<const MVector> mvectors) {
  const Eigen::Index n = static_cast<Eigen::Index>(mvectors.size());
  SimilarityMatrix sim;
  sim.kind = SimilarityKind::kCosine;
  sim.values.resize(n, n);
  if (n == 0) return sim;
  const int blocks = mvectors.front().NumBlocks();
  if (blocks == 0) throw DataError("cosine similarity: empty m-vector");
  for (const auto &m : mvectors)
    if (m.NumBlocks() != blocks || m.block_width != mvectors.front().block_width)
      throw DataError("cosine similarity: m-vectors differ in layout");
  for (Eigen::Index i = 0; i < n; ++i) {
    sim.values(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c =
          static_cast<double>(Agreement(mvectors[i].blocks, mvectors[j].blocks)) /
          blocks;
      sim.values(i, j) = c;
      sim.values(j, i) = c;
    }
  }
  return sim;
}

SimilarityMatrix PldaLlrMatrix(const PldaModel &model, const RowMatrix &latents) {
  if (latents.cols() != model.Dim())
    throw DataError("latent dimension does not match PLDA dimension");
  PldaScorer scorer(model.psi);
  const Eigen::Index n = latents.rows();
  SimilarityMatrix sim;
  sim.kind = SimilarityKind::kPldaLlr;
  sim.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double s = scorer.Score(latents.row(i), latents.row(j));
      sim.values(i, j) = s;
      sim.values(j, i) = s;
    }
  }
  return sim;
}

ClusterAssignment Ahc(const SimilarityMatrix &sim, const StopRule &stop,
                      std::vector<MergeStep> *trace) {
  const int n = sim.Size();
  if (n < 1) throw DataError("AHC needs at least one item");
  if (sim.values.cols() != n) throw DataError("similarity matrix is not square");
  int target = 1;
  double tau = -std::numeric_limits<double>::infinity();
  if (const auto *o = std::get_if<OracleStop>(&stop)) {
    if (o->num_clusters < 1)
      throw DataError("oracle cluster count must be >= 1");
    if (o->num_clusters > n)
      throw DataError("oracle cluster count " + std::to_string(o->num_clusters) +
                      " exceeds the number of items " + std::to_string(n));
    target = o->num_clusters;
  } else {
    tau = std::get<ThresholdStop>(stop).tau;
  }

  // Clusters are identified by their smallest member. `sums(a, c)` holds the
  // sum of pairwise similarities between clusters a and c; the average
  // linkage is sums / (size_a * size_c).
  Eigen::MatrixXd sums = sim.values;
  std::vector<int> size(n, 1), version(n, 0), parent(n);
  std::vector<char> active(n, 1);
  for (int i = 0; i < n; ++i) parent[i] = i;

  std::priority_queue<Candidate, std::vector<Candidate>, CandidateLess> heap;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      heap.push({sums(a, b), a, b, 0, 0});

  int clusters = n;
  while (clusters > target && !heap.empty()) {
    Candidate best = heap.top();
    heap.pop();
    if (!active[best.a] || !active[best.b] || version[best.a] != best.version_a ||
        version[best.b] != best.version_b)
      continue;
    if (best.score < tau) break;
    const int a = best.a, b = best.b;  // b merges into a, since a < b
    if (trace) trace->push_back({a, b, best.score});
    active[b] = 0;
    parent[b] = a;
    size[a] += size[b];
    ++version[a];
    --clusters;
    for (int c = 0; c < n; ++c) {
      if (!active[c] || c == a) continue;
      sums(a, c) += sums(b, c);
      sums(c, a) = sums(a, c);
      const double avg = sums(a, c) / (static_cast<double>(size[a]) * size[c]);
      if (a < c)
        heap.push({avg, a, c, version[a], version[c]});
      else
        heap.push({avg, c, a, version[c], version[a]});
    }
  }

  ClusterAssignment out;
  out.labels.assign(n, -1);
  std::vector<int> label_of_root(n, -1);
  for (int i = 0; i < n; ++i) {
    int r = i;
    while (parent[r] != r) r = parent[r];
    if (label_of_root[r] < 0) label_of_root[r] = out.num_clusters++;
    out.labels[i] = label_of_root[r];
  }
  return out;
}

Annotation AssignmentToAnnotation(std::span<const SegmentRecord> records,
                                  const ClusterAssignment &assignment) {
  if (records.size() != assignment.labels.size())
    throw DataError("assignment has " + std::to_string(assignment.labels.size()) +
                    " labels for " + std::to_string(records.size()) +
                    " segments");
  std::vector<std::string> speakers;
  speakers.reserve(records.size());
  for (int label : assignment.labels)
    speakers.push_back("spk" + std::to_string(label));
  return AnnotationFromSegments(records, speakers);
}

std::vector<double> ThresholdGrid::Values() const {
  if (!(step > 0.0)) throw UsageError("threshold grid step must be positive");
  if (!(lo < hi)) throw UsageError("threshold grid needs lo < hi");
  const int count = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(std::round((lo + i * step) * 1e12) / 1e12);
  return out;
}

CalibrationResult CalibrateThreshold(std::span<const DevConversation> dev,
                                     const ThresholdGrid &grid,
                                     const DerScorer &scorer) {
  if (dev.empty()) throw DataError("threshold calibration needs a dev set");
  CalibrationResult result;
  double best = std::numeric_limits<double>::infinity();
  for (double tau : grid.Values()) {
    double err = 0.0, scored = 0.0;
    for (const auto &conv : dev) {
      ClusterAssignment a = Ahc(conv.sim, ThresholdStop{tau});
      DerBreakdown d =
          scorer(conv.reference, AssignmentToAnnotation(conv.segments, a));
      err += d.der * d.scored_time;
      scored += d.scored_time;
    }
    const double pooled = err / scored;
    result.curve.emplace_back(tau, pooled);
    if (pooled < best) {
      best = pooled;
      result.tau = tau;
    }
  }
  return result;
}

}  // namespace mbndiar
