// src/data_io.cc
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

#include "mbndiar/data_io.h"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>
#include <unordered_set>
#include <utility>

namespace mbndiar {

namespace {

constexpr char kEmbeddingMagic[4] = {'M', 'B', 'N', 'E'};
constexpr uint8_t kEmbeddingVersion = 1;
constexpr const char *kMetaColumns[] = {"recording_id", "segment_id", "start",
                                        "duration", "speaker"};

std::vector<std::string_view> Split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  size_t pos = 0;
  while (true) {
    size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

std::vector<std::string_view> SplitWhitespace(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
      ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view StripCr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

bool ParseDouble(std::string_view text, double *out) {
  if (text.empty()) return false;
  // from_chars rejects a leading '+', which some writers emit.
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), *out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

void CheckField(const std::string &value, const char *what) {
  if (value.find_first_of(",\n\r\"") != std::string::npos)
    throw DataError(std::string("cannot serialize ") + what + " '" + value +
                    "': contains a comma, quote or newline");
}

void CheckWhitespaceFree(const std::string &value, const char *what) {
  if (value.empty() ||
      std::any_of(value.begin(), value.end(),
                  [](unsigned char c) { return std::isspace(c); }))
    throw DataError(std::string("cannot write RTTM ") + what + " '" + value +
                    "': empty or contains whitespace");
}

std::string Where(const std::filesystem::path &path, int row) {
  return path.string() + ": row " + std::to_string(row);
}

// Parses the five metadata columns of one row; `row` is 1-based over data rows.
SegmentRecord ParseMeta(std::span<const std::string_view> fields,
                        const std::filesystem::path &path, int row) {
  SegmentRecord rec;
  rec.recording_id = std::string(fields[0]);
  rec.segment_id = std::string(fields[1]);
  if (rec.recording_id.empty() || rec.segment_id.empty())
    throw DataError(Where(path, row) + ": empty recording_id or segment_id");
  if (!ParseDouble(fields[2], &rec.start) || !std::isfinite(rec.start))
    throw DataError(Where(path, row) + ": malformed start '" +
                    std::string(fields[2]) + "'");
  if (!ParseDouble(fields[3], &rec.duration) || !std::isfinite(rec.duration))
    throw DataError(Where(path, row) + ": malformed duration '" +
                    std::string(fields[3]) + "'");
  if (rec.start < 0.0)
    throw DataError(Where(path, row) + ": negative start");
  if (rec.duration <= 0.0)
    throw DataError(Where(path, row) + ": non-positive duration");
  if (!fields[4].empty()) rec.speaker = std::string(fields[4]);
  return rec;
}

void CheckMetaHeader(std::span<const std::string_view> header,
                     const std::filesystem::path &path) {
  if (header.size() < 5)
    throw DataError(path.string() + ": header has fewer than 5 columns");
  for (int i = 0; i < 5; ++i) {
    if (header[i] != kMetaColumns[i])
      throw DataError(path.string() + ": header column " + std::to_string(i) +
                      " is '" + std::string(header[i]) + "', expected '" +
                      kMetaColumns[i] + "'");
  }
}

class UniqueIds {
 public:
  void Add(const SegmentRecord &rec, const std::filesystem::path &path,
           int row) {
    std::string key = rec.recording_id;
    key.push_back('\0');
    key += rec.segment_id;
    if (!seen_.insert(std::move(key)).second)
      throw DataError(Where(path, row) + ": duplicate (recording_id, "
                      "segment_id) = (" + rec.recording_id + ", " +
                      rec.segment_id + ")");
  }

 private:
  std::unordered_set<std::string> seen_;
};

void WriteMetaColumns(std::ostream &os, const SegmentRecord &rec) {
  CheckField(rec.recording_id, "recording_id");
  CheckField(rec.segment_id, "segment_id");
  os << rec.recording_id << ',' << rec.segment_id << ','
     << FormatDouble(rec.start) << ',' << FormatDouble(rec.duration) << ',';
  if (rec.speaker) {
    CheckField(*rec.speaker, "speaker");
    os << *rec.speaker;
  }
}

void WriteCsv(const EmbeddingSet &set, std::ostream &os) {
  os << "recording_id,segment_id,start,duration,speaker";
  for (int j = 0; j < set.Dim(); ++j) os << ",e" << j;
  os << '\n';
  for (int i = 0; i < set.Size(); ++i) {
    WriteMetaColumns(os, set.records[i]);
    for (int j = 0; j < set.Dim(); ++j)
      os << ',' << FormatDouble(set.vectors(i, j));
    os << '\n';
  }
}

EmbeddingSet ReadCsv(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line))
    throw DataError(path.string() + ": empty file, expected a header");
  auto header = Split(StripCr(line), ',');
  CheckMetaHeader(header, path);
  const int dim = static_cast<int>(header.size()) - 5;
  if (dim <= 0) throw DataError(path.string() + ": header declares no e* columns");
  for (int j = 0; j < dim; ++j) {
    if (header[5 + j] != "e" + std::to_string(j))
      throw DataError(path.string() + ": header column " +
                      std::to_string(5 + j) + " should be e" +
                      std::to_string(j));
  }

  EmbeddingSet set;
  std::vector<double> values;
  UniqueIds ids;
  int row = 0;
  while (std::getline(is, line)) {
    std::string_view view = StripCr(line);
    if (view.empty()) continue;
    ++row;
    auto fields = Split(view, ',');
    if (static_cast<int>(fields.size()) != dim + 5)
      throw DataError(Where(path, row) + ": dimension mismatch, " +
                      std::to_string(static_cast<int>(fields.size()) - 5) +
                      " values but header declares " + std::to_string(dim));
    SegmentRecord rec = ParseMeta(fields, path, row);
    for (int j = 0; j < dim; ++j) {
      double v;
      if (!ParseDouble(fields[5 + j], &v))
        throw DataError(Where(path, row) + ": malformed value '" +
                        std::string(fields[5 + j]) + "' in column e" +
                        std::to_string(j));
      if (!std::isfinite(v))
        throw DataError(Where(path, row) + ": non-finite value in column e" +
                        std::to_string(j));
      values.push_back(v);
    }
    ids.Add(rec, path, row);
    set.records.push_back(std::move(rec));
  }
  set.vectors = Eigen::Map<RowMatrix>(values.data(), row, dim);
  return set;
}

template <typename T>
void PutLe(std::ostream &os, T value) {
  static_assert(std::is_unsigned_v<T>);
  char bytes[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  os.write(bytes, sizeof(T));
}

template <typename T>
T GetLe(std::istream &is, const std::filesystem::path &path, const char *what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char *>(bytes), sizeof(T)))
    throw DataError(path.string() + ": truncated file while reading " + what);
  T value = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

void WriteBinary(const EmbeddingSet &set, std::ostream &os) {
  os.write(kEmbeddingMagic, 4);
  os.put(static_cast<char>(kEmbeddingVersion));
  PutLe<uint32_t>(os, static_cast<uint32_t>(set.Size()));
  PutLe<uint32_t>(os, static_cast<uint32_t>(set.Dim()));
  for (int i = 0; i < set.Size(); ++i)
    for (int j = 0; j < set.Dim(); ++j)
      PutLe<uint64_t>(os, std::bit_cast<uint64_t>(set.vectors(i, j)));
  std::ostringstream meta;
  meta << "recording_id,segment_id,start,duration,speaker\n";
  for (const auto &rec : set.records) {
    WriteMetaColumns(meta, rec);
    meta << '\n';
  }
  const std::string text = meta.str();
  PutLe<uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

EmbeddingSet ReadBinary(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kEmbeddingMagic))
    throw DataError(path.string() + ": bad magic, not an MBNE embedding file");
  int version = is.get();
  if (version != kEmbeddingVersion)
    throw DataError(path.string() + ": unsupported version " +
                    std::to_string(version));
  const uint32_t n = GetLe<uint32_t>(is, path, "row count");
  const uint32_t d = GetLe<uint32_t>(is, path, "dimension");
  if (d == 0) throw DataError(path.string() + ": dimension is zero");
  EmbeddingSet set;
  set.vectors.resize(n, d);
  for (uint32_t i = 0; i < n; ++i) {
    for (uint32_t j = 0; j < d; ++j) {
      double v = std::bit_cast<double>(GetLe<uint64_t>(is, path, "vectors"));
      if (!std::isfinite(v))
        throw DataError(Where(path, static_cast<int>(i) + 1) +
                        ": non-finite value in column e" + std::to_string(j));
      set.vectors(i, j) = v;
    }
  }
  const uint64_t meta_len = GetLe<uint64_t>(is, path, "metadata length");
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len)))
    throw DataError(path.string() + ": truncated metadata block");

  std::istringstream ms(meta);
  std::string line;
  if (!std::getline(ms, line))
    throw DataError(path.string() + ": metadata block has no header");
  auto header = Split(line, ',');
  CheckMetaHeader(header, path);
  UniqueIds ids;
  int row = 0;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    ++row;
    auto fields = Split(line, ',');
    if (fields.size() != 5)
      throw DataError(Where(path, row) + ": metadata row has " +
                      std::to_string(fields.size()) + " fields, expected 5");
    SegmentRecord rec = ParseMeta(fields, path, row);
    ids.Add(rec, path, row);
    set.records.push_back(std::move(rec));
  }
  if (set.records.size() != n)
    throw DataError(path.string() + ": " + std::to_string(set.records.size()) +
                    " metadata rows for " + std::to_string(n) + " vectors");
  return set;
}

}  // namespace

std::string FormatDouble(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void WriteFileAtomically(const std::filesystem::path &path,
                         const std::function<void(std::ostream &)> &writer,
                         bool binary) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc
                                 : std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    try {
      writer(os);
    } catch (...) {
      os.close();
      std::filesystem::remove(tmp);
      throw;
    }
    os.flush();
    if (!os) {
      std::filesystem::remove(tmp);
      throw DataError("I/O error while writing " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

void EmbeddingSet::Validate() const {
  if (vectors.rows() != static_cast<Eigen::Index>(records.size()))
    throw DataError("embedding set has " + std::to_string(vectors.rows()) +
                    " rows but " + std::to_string(records.size()) + " records");
  if (Dim() <= 0) throw DataError("embedding set has non-positive dimension");
  if (!vectors.allFinite()) {
    for (int i = 0; i < Size(); ++i)
      if (!vectors.row(i).allFinite())
        throw DataError("non-finite value in row " + std::to_string(i + 1));
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (int i = 0; i < Size(); ++i) {
    const auto &r = records[i];
    if (!(r.duration > 0.0) || !(r.start >= 0.0))
      throw DataError("row " + std::to_string(i + 1) +
                      ": start must be >= 0 and duration > 0");
    if (!seen.emplace(r.recording_id, r.segment_id).second)
      throw DataError("row " + std::to_string(i + 1) +
                      ": duplicate (recording_id, segment_id)");
  }
}

std::vector<std::string> EmbeddingSet::RecordingIds() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto &r : records)
    if (seen.insert(r.recording_id).second) out.push_back(r.recording_id);
  return out;
}

EmbeddingSet EmbeddingSet::Subset(const std::string &recording_id) const {
  std::vector<int> rows;
  for (int i = 0; i < Size(); ++i)
    if (records[i].recording_id == recording_id) rows.push_back(i);
  EmbeddingSet out;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), Dim());
  for (size_t k = 0; k < rows.size(); ++k) {
    out.records.push_back(records[rows[k]]);
    out.vectors.row(static_cast<Eigen::Index>(k)) = vectors.row(rows[k]);
  }
  return out;
}

std::vector<std::string> Annotation::RecordingIds() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto &e : entries)
    if (seen.insert(e.recording_id).second) out.push_back(e.recording_id);
  return out;
}

Annotation Annotation::Subset(const std::string &recording_id) const {
  Annotation out;
  for (const auto &e : entries)
    if (e.recording_id == recording_id) out.entries.push_back(e);
  return out;
}

std::vector<std::string> Annotation::Speakers(
    const std::string &recording_id) const {
  std::set<std::string> speakers;
  for (const auto &e : entries)
    if (e.recording_id == recording_id) speakers.insert(e.speaker);
  return {speakers.begin(), speakers.end()};
}

EmbeddingFormat FormatFromPath(const std::filesystem::path &path) {
  return path.extension() == ".bin" ? EmbeddingFormat::kBinary
                                    : EmbeddingFormat::kCsv;
}

EmbeddingSet ReadEmbeddings(const std::filesystem::path &path,
                            EmbeddingFormat format) {
  if (!std::filesystem::exists(path))
    throw DataError("no such file: " + path.string());
  return format == EmbeddingFormat::kCsv ? ReadCsv(path) : ReadBinary(path);
}

void WriteEmbeddings(const EmbeddingSet &set, const std::filesystem::path &path,
                     EmbeddingFormat format) {
  set.Validate();
  if (format == EmbeddingFormat::kCsv) {
    WriteFileAtomically(path, [&](std::ostream &os) { WriteCsv(set, os); });
  } else {
    WriteFileAtomically(
        path, [&](std::ostream &os) { WriteBinary(set, os); }, true);
  }
}

EmbeddingSet ConcatEmbeddings(std::span<const EmbeddingSet> sets) {
  EmbeddingSet out;
  if (sets.empty()) return out;
  const int dim = sets.front().Dim();
  Eigen::Index rows = 0;
  for (const auto &s : sets) {
    if (s.Dim() != dim)
      throw DataError("cannot concatenate embedding sets of dimension " +
                      std::to_string(dim) + " and " + std::to_string(s.Dim()));
    rows += s.vectors.rows();
  }
  out.vectors.resize(rows, dim);
  Eigen::Index at = 0;
  for (const auto &s : sets) {
    out.vectors.middleRows(at, s.vectors.rows()) = s.vectors;
    at += s.vectors.rows();
    out.records.insert(out.records.end(), s.records.begin(), s.records.end());
  }
  return out;
}

std::string FormatRttmLine(const AnnotationEntry &e) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f %.2f", e.start, e.duration);
  return "SPEAKER " + e.recording_id + " 1 " + buf + " <NA> <NA> " +
         e.speaker + " <NA> <NA>";
}

Annotation ReadRttm(const std::filesystem::path &path, RttmReadStats *stats) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  Annotation ann;
  RttmReadStats local;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto tokens = SplitWhitespace(line);
    if (tokens.empty()) continue;
    if (tokens[0] != "SPEAKER") {
      ++local.skipped_lines;
      continue;
    }
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    if (tokens.size() < 8)
      throw DataError(where + ": SPEAKER line has " +
                      std::to_string(tokens.size()) +
                      " fields, expected 10");
    AnnotationEntry e;
    e.recording_id = std::string(tokens[1]);
    if (!ParseDouble(tokens[3], &e.start) || !std::isfinite(e.start))
      throw DataError(where + ": malformed start time '" +
                      std::string(tokens[3]) + "'");
    if (!ParseDouble(tokens[4], &e.duration) || !std::isfinite(e.duration))
      throw DataError(where + ": malformed duration '" +
                      std::string(tokens[4]) + "'");
    if (e.duration <= 0.0)
      throw DataError(where + ": non-positive duration");
    e.speaker = std::string(tokens[7]);
    ann.entries.push_back(std::move(e));
    ++local.speaker_lines;
  }
  if (stats) *stats = local;
  return ann;
}

void WriteRttm(const Annotation &ann, const std::filesystem::path &path) {
  for (const auto &e : ann.entries) {
    CheckWhitespaceFree(e.recording_id, "recording id");
    CheckWhitespaceFree(e.speaker, "speaker");
    if (!(e.duration > 0.0))
      throw DataError("cannot write RTTM entry with non-positive duration");
  }
  WriteFileAtomically(path, [&](std::ostream &os) {
    for (const auto &e : ann.entries) os << FormatRttmLine(e) << '\n';
  });
}

Annotation AnnotationFromSegments(std::span<const SegmentRecord> records,
                                  std::span<const std::string> speakers) {
  if (records.size() != speakers.size())
    throw DataError("AnnotationFromSegments: " +
                    std::to_string(records.size()) + " segments but " +
                    std::to_string(speakers.size()) + " labels");
  // Group by recording, preserving first-appearance order of recordings.
  std::vector<std::string> order;
  std::map<std::string, std::vector<size_t>> by_rec;
  for (size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = by_rec.try_emplace(records[i].recording_id);
    if (inserted) order.push_back(records[i].recording_id);
    it->second.push_back(i);
  }
  Annotation ann;
  for (const auto &rec_id : order) {
    auto idx = by_rec[rec_id];
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return records[a].start < records[b].start;
    });
    struct Piece {
      double begin, end;
      const std::string *speaker;
    };
    std::vector<Piece> pieces;
    for (size_t k = 0; k < idx.size(); ++k) {
      const auto &r = records[idx[k]];
      double begin = r.start;
      double end = r.start + r.duration;
      if (k > 0) {
        const auto &p = records[idx[k - 1]];
        double prev_end = p.start + p.duration;
        if (prev_end > r.start) begin = 0.5 * (r.start + prev_end);
      }
      if (k + 1 < idx.size()) {
        const auto &nx = records[idx[k + 1]];
        if (end > nx.start) end = 0.5 * (nx.start + end);
      }
      if (!pieces.empty()) begin = std::max(begin, pieces.back().end);
      if (end <= begin) continue;
      const std::string *spk = &speakers[idx[k]];
      if (!pieces.empty() && *pieces.back().speaker == *spk &&
          pieces.back().end == begin) {
        pieces.back().end = end;
      } else {
        pieces.push_back({begin, end, spk});
      }
    }
    for (const auto &p : pieces)
      ann.entries.push_back({rec_id, p.begin, p.end - p.begin, *p.speaker});
  }
  return ann;
}

}  // namespace mbndiar
