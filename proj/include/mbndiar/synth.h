// include/mbndiar/synth.h
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

#ifndef MBNDIAR_SYNTH_H_
#define MBNDIAR_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mbndiar/data_io.h"

namespace mbndiar {

// Isotropic Gaussian speaker model: speaker means ~ N(0, between_scale^2 I),
// segment embeddings ~ N(mean, within_scale^2 I).
struct SynthSpec {
  int n_speakers_pool = 50;  // labelled training speakers
  int speakers_per_conversation = 5;
  int segments_per_speaker = 20;
  int n_conversations = 1;
  int n_dev_conversations = 0;
  int dim = 16;
  double between_scale = 1.0;
  double within_scale = 1.0;
  uint64_t seed = 0;
  double segment_duration = 1.5;
  double segment_shift = 0.75;

  // Throws UsageError naming the violated constraint.
  void Validate() const;
};

struct SynthConversation {
  EmbeddingSet segments;  // labelled with the true speaker
  Annotation reference;
};

struct SynthData {
  EmbeddingSet train;
  std::vector<SynthConversation> conversations;
  std::vector<SynthConversation> dev;
};

// Conversation speakers are fresh draws, disjoint from the training pool.
// Each speaker talks in one contiguous turn of segments_per_speaker
// windows; window i of a conversation starts at i * segment_shift.
SynthData Generate(const SynthSpec &spec);

struct SynthFiles {
  std::filesystem::path train;
  std::vector<std::filesystem::path> conversation_embeddings;
  std::vector<std::filesystem::path> conversation_rttms;
  std::vector<std::filesystem::path> dev_embeddings;
  std::vector<std::filesystem::path> dev_rttms;

  std::vector<std::filesystem::path> All() const;
};

// Writes train.csv, conv_NNN.{csv,rttm} and dev_NNN.{csv,rttm} into `dir`.
SynthFiles WriteSynthData(const SynthData &data,
                          const std::filesystem::path &dir);

}  // namespace mbndiar

#endif  // MBNDIAR_SYNTH_H_
