// src/synth.cc
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

#include "mbndiar/synth.h"

#include <cstdio>
#include <random>

namespace mbndiar {

namespace {

// Stream ids for sub-seeds.
constexpr uint64_t kTrainStream = 1;
constexpr uint64_t kTestStream = 2;
constexpr uint64_t kDevStream = 3;

std::string Numbered(const char *prefix, int i, int width = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

Eigen::VectorXd Gaussian(std::mt19937_64 &rng, int dim, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int j = 0; j < dim; ++j) v(j) = scale * normal(rng);
  return v;
}

SynthConversation MakeConversation(const SynthSpec &spec,
                                   const std::string &rec_id,
                                   const std::string &speaker_prefix,
                                   uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int per = spec.segments_per_speaker;
  const int n = spec.speakers_per_conversation * per;
  SynthConversation conv;
  conv.segments.vectors.resize(n, spec.dim);
  std::vector<std::string> labels;
  int row = 0;
  for (int s = 0; s < spec.speakers_per_conversation; ++s) {
    const std::string speaker = speaker_prefix + Numbered("_spk", s, 2);
    const Eigen::VectorXd mean = Gaussian(rng, spec.dim, spec.between_scale);
    for (int k = 0; k < per; ++k, ++row) {
      SegmentRecord rec;
      rec.recording_id = rec_id;
      rec.segment_id = Numbered("seg", row);
      rec.start = row * spec.segment_shift;
      rec.duration = spec.segment_duration;
      rec.speaker = speaker;
      conv.segments.records.push_back(rec);
      conv.segments.vectors.row(row) =
          (mean + Gaussian(rng, spec.dim, spec.within_scale)).transpose();
      labels.push_back(speaker);
    }
  }
  conv.reference = AnnotationFromSegments(conv.segments.records, labels);
  return conv;
}

}  // namespace

void SynthSpec::Validate() const {
  auto require = [](bool ok, const std::string &what) {
    if (!ok) throw UsageError("invalid synth spec: " + what);
  };
  require(n_speakers_pool >= 2, "n_speakers_pool must be >= 2");
  require(speakers_per_conversation >= 1,
          "speakers_per_conversation must be >= 1");
  require(speakers_per_conversation <= n_speakers_pool,
          "speakers_per_conversation (" +
              std::to_string(speakers_per_conversation) +
              ") must not exceed n_speakers_pool (" +
              std::to_string(n_speakers_pool) + ")");
  require(segments_per_speaker >= 2, "segments_per_speaker must be >= 2");
  require(n_conversations >= 0 && n_dev_conversations >= 0,
          "conversation counts must be non-negative");
  require(dim >= 1, "dim must be >= 1");
  require(between_scale > 0.0, "between_scale must be > 0");
  require(within_scale > 0.0, "within_scale must be > 0");
  require(segment_duration > 0.0, "segment_duration must be > 0");
  require(segment_shift > 0.0 && segment_shift <= segment_duration,
          "segment_shift must lie in (0, segment_duration]");
}

SynthData Generate(const SynthSpec &spec) {
  spec.Validate();
  SynthData data;

  std::mt19937_64 rng(Mix64(spec.seed ^ Mix64(kTrainStream)));
  const int per = spec.segments_per_speaker;
  data.train.vectors.resize(spec.n_speakers_pool * per, spec.dim);
  int row = 0;
  for (int s = 0; s < spec.n_speakers_pool; ++s) {
    const std::string speaker = Numbered("train_spk", s);
    const Eigen::VectorXd mean = Gaussian(rng, spec.dim, spec.between_scale);
    for (int k = 0; k < per; ++k, ++row) {
      SegmentRecord rec;
      rec.recording_id = speaker;
      rec.segment_id = Numbered("seg", k);
      rec.start = k * spec.segment_shift;
      rec.duration = spec.segment_duration;
      rec.speaker = speaker;
      data.train.records.push_back(std::move(rec));
      data.train.vectors.row(row) =
          (mean + Gaussian(rng, spec.dim, spec.within_scale)).transpose();
    }
  }

  for (int c = 0; c < spec.n_conversations; ++c) {
    const std::string id = Numbered("conv_", c, 3);
    data.conversations.push_back(MakeConversation(
        spec, id, id, Mix64(spec.seed ^ Mix64((kTestStream << 32) | c))));
  }
  for (int c = 0; c < spec.n_dev_conversations; ++c) {
    const std::string id = Numbered("dev_", c, 3);
    data.dev.push_back(MakeConversation(
        spec, id, id, Mix64(spec.seed ^ Mix64((kDevStream << 32) | c))));
  }
  return data;
}

std::vector<std::filesystem::path> SynthFiles::All() const {
  std::vector<std::filesystem::path> out{train};
  for (const auto *v : {&conversation_embeddings, &conversation_rttms,
                        &dev_embeddings, &dev_rttms})
    out.insert(out.end(), v->begin(), v->end());
  return out;
}

SynthFiles WriteSynthData(const SynthData &data,
                          const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  SynthFiles files;
  files.train = dir / "train.csv";
  WriteEmbeddings(data.train, files.train, EmbeddingFormat::kCsv);
  auto write_group = [&](const std::vector<SynthConversation> &convs,
                         std::vector<std::filesystem::path> *emb,
                         std::vector<std::filesystem::path> *rttm) {
    for (const auto &conv : convs) {
      const std::string id = conv.segments.records.front().recording_id;
      emb->push_back(dir / (id + ".csv"));
      rttm->push_back(dir / (id + ".rttm"));
      WriteEmbeddings(conv.segments, emb->back(), EmbeddingFormat::kCsv);
      WriteRttm(conv.reference, rttm->back());
    }
  };
  write_group(data.conversations, &files.conversation_embeddings,
              &files.conversation_rttms);
  write_group(data.dev, &files.dev_embeddings, &files.dev_rttms);
  return files;
}

}  // namespace mbndiar
