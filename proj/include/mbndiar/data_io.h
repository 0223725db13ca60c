// include/mbndiar/data_io.h
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

#ifndef MBNDIAR_DATA_IO_H_
#define MBNDIAR_DATA_IO_H_

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mbndiar/common.h"

namespace mbndiar {

struct SegmentRecord {
  std::string recording_id;
  std::string segment_id;
  double start = 0.0;
  double duration = 0.0;
  std::optional<std::string> speaker;

  bool operator==(const SegmentRecord &) const = default;
};

// Segment-level embeddings with their metadata; row i of `vectors` belongs
// to records[i]. The column count is the dimension, also when there are no
// rows.
struct EmbeddingSet {
  std::vector<SegmentRecord> records;
  RowMatrix vectors;

  int Size() const { return static_cast<int>(records.size()); }
  int Dim() const { return static_cast<int>(vectors.cols()); }

  // Throws DataError if any invariant is violated (row/record count,
  // positive dimension, finite values, positive durations, unique ids).
  void Validate() const;

  // Distinct recording ids in first-appearance order.
  std::vector<std::string> RecordingIds() const;

  // Rows belonging to one recording, in original order.
  EmbeddingSet Subset(const std::string &recording_id) const;

  bool operator==(const EmbeddingSet &other) const {
    return records == other.records && vectors.rows() == other.vectors.rows() &&
           vectors.cols() == other.vectors.cols() && vectors == other.vectors;
  }
};

struct AnnotationEntry {
  std::string recording_id;
  double start = 0.0;
  double duration = 0.0;
  std::string speaker;

  double End() const { return start + duration; }
  bool operator==(const AnnotationEntry &) const = default;
};

struct Annotation {
  std::vector<AnnotationEntry> entries;

  std::vector<std::string> RecordingIds() const;
  Annotation Subset(const std::string &recording_id) const;
  // Distinct speaker labels of one recording.
  std::vector<std::string> Speakers(const std::string &recording_id) const;
};

enum class EmbeddingFormat { kCsv, kBinary };

// ".bin" selects the binary format, anything else CSV.
EmbeddingFormat FormatFromPath(const std::filesystem::path &path);

EmbeddingSet ReadEmbeddings(const std::filesystem::path &path,
                            EmbeddingFormat format);
inline EmbeddingSet ReadEmbeddings(const std::filesystem::path &path) {
  return ReadEmbeddings(path, FormatFromPath(path));
}

void WriteEmbeddings(const EmbeddingSet &set,
                     const std::filesystem::path &path,
                     EmbeddingFormat format);
inline void WriteEmbeddings(const EmbeddingSet &set,
                            const std::filesystem::path &path) {
  WriteEmbeddings(set, path, FormatFromPath(path));
}

// Concatenates sets of equal dimension.
EmbeddingSet ConcatEmbeddings(std::span<const EmbeddingSet> sets);

struct RttmReadStats {
  int speaker_lines = 0;
  int skipped_lines = 0;  // non-SPEAKER type tokens
};

// Blank lines are ignored; every other line is either parsed or counted in
// skipped_lines.
Annotation ReadRttm(const std::filesystem::path &path,
                    RttmReadStats *stats = nullptr);
void WriteRttm(const Annotation &ann, const std::filesystem::path &path);
// One RTTM SPEAKER line without the trailing newline.
std::string FormatRttmLine(const AnnotationEntry &entry);

// Turns overlapping sliding-window segments of each recording into
// non-overlapping speaker turns: where consecutive segments overlap, the
// boundary is placed at the midpoint of the overlap; adjacent pieces with
// the same speaker are merged. `speakers[i]` labels `records[i]`.
Annotation AnnotationFromSegments(std::span<const SegmentRecord> records,
                                  std::span<const std::string> speakers);

// Shortest decimal text that parses back to exactly `value`.
std::string FormatDouble(double value);

// Writes through a temporary file in the same directory, then renames it
// into place.
void WriteFileAtomically(const std::filesystem::path &path,
                         const std::function<void(std::ostream &)> &writer,
                         bool binary = false);

}  // namespace mbndiar

#endif  // MBNDIAR_DATA_IO_H_
