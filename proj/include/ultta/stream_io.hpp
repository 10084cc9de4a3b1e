/* Copyright 2026 The ul-tta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ultta/errors.hpp"
#include "ultta/head_state.hpp"
#include "ultta/linalg.hpp"

// ULS1 stream layout, all integers and floats little-endian:
//
//   offset  size  field
//   0       4     magic "ULS1"
//   4       4     version (u32, = 1)
//   8       4     C (u32)
//   12      4     d (u32)
//   16      4     K views per sample (u32)
//   20      8     N samples (u64)
//   28      4     flags (u32; bit 0 = labels present)
//   32      4*C*d anchors, f32 row-major
//   ...     N records: K*d f32 row-major views, then a u32 label when bit 0
//           is set (0xFFFFFFFF = unlabeled)

namespace ultta {

static_assert(std::numeric_limits<float>::is_iec559, "IEEE-754 float required");

inline constexpr std::array<char, 4> kStreamMagic{'U', 'L', 'S', '1'};
inline constexpr std::uint32_t kStreamVersion = 1;
inline constexpr std::uint32_t kFlagLabels = 1u;
inline constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;
inline constexpr std::size_t kStreamHeaderBytes = 32;
inline constexpr double kFileNormTolerance = 1e-3;

namespace le {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }
inline double get_f64(const unsigned char* p) { return std::bit_cast<double>(get_u64(p)); }

// Sequential little-endian reader over an istream with exact-size reads.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // Returns false on a short read.
  bool read(std::size_t n) {
    buf_.resize(n);
    in_.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    offset_ += got;
    return got == n;
  }
  const unsigned char* data() const noexcept { return buf_.data(); }
  std::uint64_t offset() const noexcept { return offset_; }
  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::istream& in_;
  std::vector<unsigned char> buf_;
  std::uint64_t offset_ = 0;
};

}  // namespace le

struct StreamHeader {
  std::uint32_t version = kStreamVersion;
  std::uint32_t num_classes = 0;
  std::uint32_t dim = 0;
  std::uint32_t views = 1;
  std::uint64_t count = 0;
  std::uint32_t flags = kFlagLabels;

  bool has_labels() const noexcept { return (flags & kFlagLabels) != 0; }
  std::size_t record_bytes() const noexcept {
    return 4u * static_cast<std::size_t>(views) * dim + (has_labels() ? 4u : 0u);
  }
};

// One stream element: K views (view 0 is the canonical, unaugmented one).
struct SampleRecord {
  std::vector<Vec> views;
  std::optional<std::uint32_t> label;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// Incremental writer; the declared count must match the records written.
class StreamWriter {
 public:
  StreamWriter(const std::string& path, const Anchors& anchors, std::uint32_t views, std::uint64_t count,
               bool labels = true)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    if (views == 0) throw ConfigError("K must be >= 1");
    header_.num_classes = static_cast<std::uint32_t>(anchors.num_classes());
    header_.dim = static_cast<std::uint32_t>(anchors.dim());
    header_.views = views;
    header_.count = count;
    header_.flags = labels ? kFlagLabels : 0u;
    std::string buf;
    buf.append(kStreamMagic.data(), kStreamMagic.size());
    le::put_u32(buf, header_.version);
    le::put_u32(buf, header_.num_classes);
    le::put_u32(buf, header_.dim);
    le::put_u32(buf, header_.views);
    le::put_u64(buf, header_.count);
    le::put_u32(buf, header_.flags);
    for (double v : anchors.mu.data()) le::put_f32(buf, static_cast<float>(v));
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }

  void write(const SampleRecord& rec) {
    if (written_ >= header_.count) throw DataError("more records than the declared count");
    if (rec.views.size() != header_.views)
      throw DataError("record has " + std::to_string(rec.views.size()) + " views, expected " +
                      std::to_string(header_.views));
    std::string buf;
    buf.reserve(header_.record_bytes());
    for (const Vec& v : rec.views) {
      if (v.size() != header_.dim) throw DataError("record view has the wrong dimension");
      if (!all_finite(v)) throw DataError("record view is not finite");
      for (double x : v) le::put_f32(buf, static_cast<float>(x));
    }
    if (header_.has_labels()) {
      const std::uint32_t label = rec.label.value_or(kUnlabeled);
      if (label != kUnlabeled && label >= header_.num_classes)
        throw DataError("label " + std::to_string(label) + " >= C");
      le::put_u32(buf, label);
    } else if (rec.label) {
      throw DataError("labeled record in a stream declared without labels");
    }
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    ++written_;
  }

  void close() {
    if (written_ != header_.count)
      throw DataError("wrote " + std::to_string(written_) + " records, header declares " +
                      std::to_string(header_.count));
    out_.flush();
    if (!out_) throw IoError("write failure");
    out_.close();
  }

  const StreamHeader& header() const noexcept { return header_; }

 private:
  std::ofstream out_;
  StreamHeader header_;
  std::uint64_t written_ = 0;
};

inline void write_stream(const std::string& path, const Anchors& anchors, std::span<const SampleRecord> records,
                         bool labels = true) {
  const std::uint32_t views = records.empty() ? 1u : static_cast<std::uint32_t>(records.front().views.size());
  StreamWriter w(path, anchors, views, records.size(), labels);
  for (const auto& r : records) w.write(r);
  w.close();
}

// Forward-only reader. Holds the anchors and at most one decoded record.
// Views are checked against the 1e-3 file tolerance and delivered renormalized.
class StreamReader {
 public:
  explicit StreamReader(const std::string& path) : path_(path), in_(path, std::ios::binary), rd_(in_) {
    if (!in_) throw IoError("cannot open '" + path + "'");
    if (!rd_.read(kStreamHeaderBytes)) throw FormatError(path_ + ": truncated header");
    const unsigned char* p = rd_.data();
    if (std::memcmp(p, kStreamMagic.data(), 4) != 0) throw FormatError(path_ + ": bad magic");
    header_.version = le::get_u32(p + 4);
    if (header_.version != kStreamVersion)
      throw FormatError(path_ + ": unsupported version " + std::to_string(header_.version));
    header_.num_classes = le::get_u32(p + 8);
    header_.dim = le::get_u32(p + 12);
    header_.views = le::get_u32(p + 16);
    header_.count = le::get_u64(p + 20);
    header_.flags = le::get_u32(p + 28);
    if (header_.num_classes == 0 || header_.dim == 0 || header_.views == 0)
      throw FormatError(path_ + ": C, d and K must be >= 1");
    const std::size_t C = header_.num_classes;
    const std::size_t d = header_.dim;
    if (!rd_.read(4 * C * d)) throw FormatError(path_ + ": truncated anchor block");
    Matrix mu(C, d);
    for (std::size_t i = 0; i < C * d; ++i) {
      const float v = le::get_f32(rd_.data() + 4 * i);
      if (!std::isfinite(v)) throw DataError(path_ + ": non-finite anchor value");
      mu.data()[i] = v;
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (std::abs(norm2(mu.row(c)) - 1.0) > kFileNormTolerance)
        throw DataError(path_ + ": anchor row " + std::to_string(c) + " is not unit norm");
    }
    anchors_ = Anchors::from_rows(std::move(mu));
  }

  const StreamHeader& header() const noexcept { return header_; }
  const Anchors& anchors() const noexcept { return anchors_; }
  std::uint64_t records_read() const noexcept { return index_; }

  // Next record, or nullopt after the declared count. Trailing bytes after
  // the last declared record are a format error.
  std::optional<SampleRecord> next() {
    if (index_ == header_.count) {
      if (!finished_) {
        finished_ = true;
        if (!rd_.at_eof())
          throw FormatError(path_ + ": trailing data after " + std::to_string(header_.count) + " records");
      }
      return std::nullopt;
    }
    const std::uint64_t start = rd_.offset();
    if (!rd_.read(header_.record_bytes()))
      throw FormatError(path_ + ": truncated at record " + std::to_string(index_) + " (byte offset " +
                        std::to_string(start) + ")");
    const unsigned char* p = rd_.data();
    SampleRecord rec;
    rec.views.resize(header_.views);
    for (std::size_t k = 0; k < header_.views; ++k) {
      Vec& v = rec.views[k];
      v.resize(header_.dim);
      for (std::size_t j = 0; j < header_.dim; ++j) {
        const float x = le::get_f32(p + 4 * (k * header_.dim + j));
        if (!std::isfinite(x))
          throw DataError(path_ + ": non-finite value in record " + std::to_string(index_));
        v[j] = x;
      }
      const double n = norm2(v);
      if (std::abs(n - 1.0) > kFileNormTolerance)
        throw DataError(path_ + ": record " + std::to_string(index_) + " view " + std::to_string(k) +
                        " has norm " + std::to_string(n));
      for (double& x : v) x /= n;
    }
    if (header_.has_labels()) {
      const std::uint32_t label = le::get_u32(p + 4 * header_.views * header_.dim);
      if (label != kUnlabeled) {
        if (label >= header_.num_classes)
          throw DataError(path_ + ": record " + std::to_string(index_) + " label out of range");
        rec.label = label;
      }
    }
    ++index_;
    return rec;
  }

 private:
  std::string path_;
  std::ifstream in_;
  le::Reader rd_;
  StreamHeader header_;
  Anchors anchors_;
  std::uint64_t index_ = 0;
  bool finished_ = false;
};

}  // namespace ultta
