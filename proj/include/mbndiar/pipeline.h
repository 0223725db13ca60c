// include/mbndiar/pipeline.h
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

#ifndef MBNDIAR_PIPELINE_H_
#define MBNDIAR_PIPELINE_H_

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbndiar/clustering.h"
#include "mbndiar/data_io.h"
#include "mbndiar/mbn.h"
#include "mbndiar/metrics.h"
#include "mbndiar/plda.h"
#include "mbndiar/synth.h"

namespace mbndiar {

// Baseline: AHC on PLDA log-likelihood ratios between latents.
// Mbn: AHC on cosine similarities between m-vectors.
enum class ClusteringMode { kBaseline, kMbn };
enum class StopMode { kOracle, kThreshold };

ClusteringMode ParseClusteringMode(const std::string &s);
StopMode ParseStopMode(const std::string &s);
FloorPolicy::Kind ParseFloorKind(const std::string &s);

// Class of a segment that carries no speaker label of its own, for DT.
// kLongest takes the reference speaker overlapping it longest; kFirst takes
// the overlapping reference turn that starts first, the "first speaker"
// convention for multi-speaker segments.
enum class DtLabelPolicy { kLongest, kFirst };
DtLabelPolicy ParseDtLabelPolicy(const std::string &s);

// Parses "recording=tau" items; throws UsageError on malformed items or
// repeated recordings.
std::map<std::string, double> ParseTauOverrides(
    std::span<const std::string> items);

// MBN settings at pipeline level. With a balanced floor and
// num_speakers == 0 the floor uses each recording's reference speaker count.
struct MbnStageOptions {
  int ensemble_size = 400;
  int k1 = 50;
  double delta = 0.3;
  FloorPolicy::Kind floor_kind = FloorPolicy::Kind::kBalanced;
  int num_speakers = 0;
  int k_floor = 100;
};

struct PipelineConfig {
  std::filesystem::path train_embeddings;
  std::vector<std::filesystem::path> test_embeddings;
  std::vector<std::filesystem::path> reference_rttms;
  std::vector<std::filesystem::path> dev_embeddings;
  std::vector<std::filesystem::path> dev_rttms;
  // When set, data is generated into output_dir/data and the path fields
  // above are ignored.
  std::optional<SynthSpec> synth;
  std::filesystem::path output_dir;

  PldaOptions plda;
  MbnStageOptions mbn;
  ClusteringMode mode = ClusteringMode::kMbn;
  StopMode stop = StopMode::kOracle;
  std::optional<double> tau;  // threshold mode; calibrated on dev if unset
  // Per-recording thresholds that replace `tau` (threshold mode only).
  std::map<std::string, double> tau_overrides;
  ThresholdGrid grid;
  int num_speakers = 0;  // oracle fallback when no reference is available
  DerOptions der;
  DtLabelPolicy dt_labels = DtLabelPolicy::kLongest;
  uint64_t seed = 0;
  int jobs = 1;
};

// One recording's representations.
struct Conversation {
  std::string id;
  std::vector<SegmentRecord> records;
  RowMatrix latents;
  std::vector<MVector> mvectors;
};

// Splits a latent set by recording id (first-appearance order).
std::vector<Conversation> SplitConversations(const LatentSet &latents);

// Seed of the MBN trained on one recording; independent of processing order.
uint64_t RecordingSeed(uint64_t master_seed, const std::string &recording_id);

// Trains one MBN per conversation and fills `mvectors`. Recordings run in
// parallel on `jobs` threads. `speaker_counts` feeds the balanced floor when
// opts.num_speakers is 0. Returns the warnings in recording order.
std::vector<std::string> RunMbnStage(
    std::vector<Conversation> *conversations, const PldaModel &plda,
    const MbnStageOptions &opts, uint64_t seed,
    const std::map<std::string, int> &speaker_counts, int jobs,
    std::vector<MbnModel> *models = nullptr);

SimilarityMatrix ConversationSimilarity(const Conversation &conv,
                                        ClusteringMode mode,
                                        const PldaModel *plda);

// Speaker counts per recording from a reference annotation.
std::map<std::string, int> SpeakerCounts(const Annotation &reference);

// Class label of every segment: the record's own speaker when all records
// carry one, else a reference speaker chosen by `policy`. nullopt when some
// segment cannot be labelled.
std::optional<std::vector<std::string>> SegmentLabels(
    std::span<const SegmentRecord> records, const Annotation *reference,
    DtLabelPolicy policy = DtLabelPolicy::kLongest);

// m-vectors in sparse index form: column v holds the active index of block v.
// Cosine similarity only needs index equality, so block_width is not stored;
// reading back sets it to one more than the largest index.
EmbeddingSet MVectorIndexSet(std::span<const MVector> mvectors,
                             std::span<const SegmentRecord> records);
std::vector<MVector> MVectorsFromIndexSet(const EmbeddingSet &set);

// DT restricted to the subspace spanned by the class-mean deviations, where
// S_B has full rank; nullopt for fewer than 2 classes or coincident means.
std::optional<double> ProjectedDt(const RowMatrix &vectors,
                                  std::span<const std::string> labels);

struct RecordingResult {
  std::string recording_id;
  int num_segments = 0;
  int num_clusters = 0;
  std::optional<DerBreakdown> der;
  std::optional<double> dt_latent;
  std::optional<double> dt_mvector;
  std::optional<double> tau;  // threshold used, threshold mode only
};

struct RunReport {
  std::optional<DerBreakdown> der;   // pooled; needs a reference
  std::vector<RecordingResult> recordings;
  std::optional<double> dt_latent;   // mean over recordings
  std::optional<double> dt_mvector;  // mbn mode only
  std::optional<double> tau;         // threshold mode
  std::vector<std::string> warnings;
  std::filesystem::path report_path;

  // Mean of the per-recording DERs.
  std::optional<double> MeanDer() const;
  // Full report text written to report.txt; the first line is the DER line.
  std::string Text() const;
};

// Runs synth (optional) -> PLDA training -> latent extraction -> MBN (mbn
// mode) -> AHC -> scoring, writing every stage's artifact to output_dir.
// Files created by a failed run are removed before the error propagates.
RunReport RunPipeline(const PipelineConfig &config);

// Removes the tracked files on destruction unless Commit() was called.
class OutputTracker {
 public:
  OutputTracker() = default;
  OutputTracker(const OutputTracker &) = delete;
  OutputTracker &operator=(const OutputTracker &) = delete;
  ~OutputTracker();

  const std::filesystem::path &Track(const std::filesystem::path &path);
  void Commit() { committed_ = true; }

 private:
  std::vector<std::filesystem::path> paths_;
  bool committed_ = false;
};

}  // namespace mbndiar

#endif  // MBNDIAR_PIPELINE_H_
