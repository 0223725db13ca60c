// include/mbndiar/metrics.h
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

#ifndef MBNDIAR_METRICS_H_
#define MBNDIAR_METRICS_H_

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbndiar/common.h"
#include "mbndiar/data_io.h"

namespace mbndiar {

struct DerOptions {
  double collar = 0.25;  // seconds on each side of every reference boundary
  bool skip_overlap = true;
};

// All rates are fractions of the scored reference speech time.
struct DerBreakdown {
  double speaker_error = 0.0;
  double missed_speech = 0.0;
  double false_alarm = 0.0;
  double der = 0.0;
  double scored_time = 0.0;  // seconds of scored reference speech

  // "DER=<x> MISS=<x> FA=<x> SPKERR=<x> SCORED=<secs>"
  std::string ReportLine() const;
  std::string HumanReadable() const;
};

// Diarization error rate with the optimal one-to-one speaker mapping, chosen
// per recording to maximize correctly attributed scored time. Throws
// DataError when there is no scored reference speech.
DerBreakdown ComputeDer(const Annotation &reference,
                        const Annotation &hypothesis,
                        const DerOptions &opts = {});

struct SpeakerMapping {
  // (recording_id, reference speaker, hypothesis speaker)
  struct Pair {
    std::string recording_id;
    std::string reference;
    std::string hypothesis;
    bool operator==(const Pair &) const = default;
  };
  std::vector<Pair> pairs;
  double total_overlap = 0.0;
};

// One-to-one mapping maximizing the total overlapped time. `opts` selects
// the scored regions; the default counts all time.
SpeakerMapping OptimalSpeakerMapping(const Annotation &reference,
                                     const Annotation &hypothesis,
                                     const DerOptions &opts = {0.0, false});

// Maximum-weight one-to-one assignment on a non-negative rows x cols weight
// matrix. Returns, for every row, its column or -1. Exhaustive (subset
// dynamic programming) when min(rows, cols) <= 8, Hungarian algorithm
// above that.
std::vector<int> MaxWeightAssignment(const Eigen::MatrixXd &weights);
// Forces the Hungarian path; exposed for testing.
std::vector<int> HungarianAssignment(const Eigen::MatrixXd &weights);

struct DtScore {
  double value = 0.0;
  int n_classes = 0;
  int dim = 0;
  // Ratio of largest to smallest eigenvalue of the regularized S_B.
  double sb_condition = 0.0;
};

// Tr(S_B^{-1} S_W) with S_W, S_B normalized by n. `labels` are arbitrary
// class ids. Throws DataError for fewer than 2 classes and NumericalError
// when S_B is singular even after the trace-scaled ridge.
DtScore ComputeDt(const RowMatrix &vectors, std::span<const int> labels);

struct PcaResult {
  RowMatrix coords;             // n x out_dims
  Eigen::VectorXd eigenvalues;  // all covariance eigenvalues, descending
  Eigen::MatrixXd components;   // d x out_dims loadings
  bool degenerate = false;      // all rows identical
};

// Mean-centred projection onto the leading principal components of the
// 1/n covariance. Each component's largest-magnitude loading is positive.
PcaResult PcaProject(const RowMatrix &vectors, int out_dims = 2);

// CSV "segment_id,pc1,pc2[,label]"; the label column carries each record's
// speaker when requested.
void WritePcaCsv(const RowMatrix &coords,
                 std::span<const SegmentRecord> records,
                 const std::filesystem::path &path, bool with_labels);

}  // namespace mbndiar

#endif  // MBNDIAR_METRICS_H_
