// SPDX-License-Identifier: Apache-2.0

#include "revdedup/chunker.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <memory>
#include <utility>

namespace revdedup {

namespace {

// (v(x) * x^8) mod P(x) by eight shift-and-reduce steps.
constexpr std::uint64_t mul_x8_mod(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    bool carry = (v >> 63) != 0;
    v <<= 1;
    if (carry) v ^= RollingHash::kPolynomial;
  }
  return v;
}

constexpr std::array<std::uint64_t, 256> make_append_table() {
  std::array<std::uint64_t, 256> table{};
  for (std::size_t t = 0; t < 256; ++t) {
    // t(x)*x^64 mod P = ((t(x)*x^56) * x^8) mod P
    table[t] = mul_x8_mod(static_cast<std::uint64_t>(t) << 56);
  }
  return table;
}

constexpr auto kAppendTable = make_append_table();

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  std::FILE* f = std::fopen(path.c_str(), mode);
  if (f == nullptr) {
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  return FilePtr(f);
}

}  // namespace

void ChunkingParams::validate() const {
  if (chunk_bits < 4 || chunk_bits >= segment_bits || segment_bits > 30) {
    throw UsageError(
        "chunking: require 4 <= chunk_bits < segment_bits <= 30, got n=" +
        std::to_string(chunk_bits) + " m=" + std::to_string(segment_bits));
  }
  if (window_size < 16 || window_size > 4096) {
    throw UsageError("chunking: require 16 <= window_size <= 4096, got " +
                     std::to_string(window_size));
  }
}

bool SegmentDescriptor::null() const {
  return std::all_of(chunks.begin(), chunks.end(),
                     [](const ChunkDescriptor& c) { return c.null; });
}

const std::array<std::uint64_t, 256>& RollingHash::append_table() {
  return kAppendTable;
}

RollingHash::RollingHash(std::uint32_t window_size) {
  // out_table_[b] = b(x) * x^(8*(window_size-1)) mod P
  for (std::size_t b = 0; b < 256; ++b) {
    std::uint64_t v = b;
    for (std::uint32_t i = 1; i < window_size; ++i) {
      v = mul_x8_mod(v);
    }
    out_table_[b] = v;
  }
}

Chunker::Chunker(const ChunkingParams& params, SegmentCallback emit)
    : params_(params),
      emit_(std::move(emit)),
      hash_(params.window_size),
      window_(params.window_size, 0),
      chunk_mask_((1ull << params.chunk_bits) - 1),
      segment_mask_((1ull << params.segment_bits) - 1) {
  params_.validate();
  chunk_buf_.reserve(params_.max_chunk_size());
}

void Chunker::feed(std::span<const std::uint8_t> data) {
  const std::uint32_t w = params_.window_size;
  const std::uint64_t min_chunk = params_.min_chunk_size();
  const std::uint64_t max_chunk = params_.max_chunk_size();
  std::uint64_t chunk_len = chunk_buf_.size();
  std::size_t slice_start = 0;  // bytes of `data` not yet in chunk_buf_

  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint8_t b = data[i];
    std::uint64_t h;
    if (pos_ < w) {
      h = hash_.push(b);
    } else {
      h = hash_.roll(b, window_[pos_ % w]);
    }
    window_[pos_ % w] = b;
    ++pos_;
    ++chunk_len;
    if (b != 0) chunk_zero_ = false;

    bool cut = false;
    bool segment_hash_match = false;
    if (chunk_len >= min_chunk && pos_ >= w &&
        (h & chunk_mask_) == chunk_mask_) {
      cut = true;
      segment_hash_match = (h & segment_mask_) == segment_mask_;
    } else if (chunk_len >= max_chunk) {
      cut = true;  // forced; never segment-eligible
    }

    if (cut) {
      chunk_buf_.insert(chunk_buf_.end(), data.begin() + slice_start,
                        data.begin() + i + 1);
      slice_start = i + 1;
      cut_chunk(segment_hash_match);
      chunk_len = 0;
    }
  }
  chunk_buf_.insert(chunk_buf_.end(), data.begin() + slice_start, data.end());
}

void Chunker::finish() {
  if (finished_) return;
  finished_ = true;
  if (!chunk_buf_.empty()) {
    cut_chunk(/*segment_hash_match=*/false);
  }
  close_segment();
}

void Chunker::cut_chunk(bool segment_hash_match) {
  ChunkDescriptor chunk;
  chunk.offset = pos_ - chunk_buf_.size();
  chunk.length = static_cast<std::uint32_t>(chunk_buf_.size());
  chunk.fp = sha1(chunk_buf_);
  chunk.null = chunk_zero_;

  // Close the segment first if appending would overflow it.  The closed
  // segment is at least max_segment - max_chunk >= min_segment bytes.
  if (!segment_.chunks.empty() &&
      segment_.length + chunk.length > params_.max_segment_size()) {
    close_segment();
  }
  if (segment_.chunks.empty()) {
    segment_.offset = chunk.offset;
    segment_.length = 0;
  }
  segment_sha_.update(chunk_buf_);
  segment_.length += chunk.length;
  segment_.chunks.push_back(std::move(chunk));

  // A hash-eligible segment close is deferred until the segment has
  // reached its minimum size (relevant when the overflow close above just
  // restarted the segment).
  if (segment_hash_match && segment_.length >= params_.min_segment_size()) {
    close_segment();
  }

  chunk_buf_.clear();
  chunk_zero_ = true;
}

void Chunker::close_segment() {
  if (segment_.chunks.empty()) return;
  segment_.fp = segment_sha_.finish();
  SegmentDescriptor done;
  std::swap(done, segment_);
  emit_(std::move(done));
}

std::vector<SegmentDescriptor> chunk_buffer(std::span<const std::uint8_t> data,
                                            const ChunkingParams& params) {
  std::vector<SegmentDescriptor> out;
  Chunker chunker(params,
                  [&](SegmentDescriptor&& seg) { out.push_back(std::move(seg)); });
  chunker.feed(data);
  chunker.finish();
  return out;
}

std::vector<SegmentDescriptor> chunk_file(const std::filesystem::path& path,
                                          const ChunkingParams& params) {
  FilePtr file = open_file(path, "rb");
  std::vector<SegmentDescriptor> out;
  Chunker chunker(params,
                  [&](SegmentDescriptor&& seg) { out.push_back(std::move(seg)); });
  std::vector<std::uint8_t> buf(1 << 20);
  for (;;) {
    std::size_t got = std::fread(buf.data(), 1, buf.size(), file.get());
    if (got > 0) chunker.feed(std::span(buf.data(), got));
    if (got < buf.size()) {
      if (std::ferror(file.get())) {
        throw IoError("read " + path.string() + " at byte " +
                      std::to_string(chunker.bytes_consumed()) + ": " +
                      std::strerror(errno));
      }
      break;  // EOF
    }
  }
  chunker.finish();
  return out;
}

namespace {

constexpr std::uint32_t kFlagSegmentHeader = 1u << 0;
constexpr std::uint32_t kFlagNull = 1u << 1;

void encode_record(std::uint8_t* rec, std::uint64_t offset,
                   std::uint32_t length, std::uint32_t flags,
                   const Fingerprint& fp) {
  std::memset(rec, 0, kDescriptorRecordSize);
  put_u64(rec, offset);
  put_u32(rec + 8, length);
  put_u32(rec + 12, flags);
  std::memcpy(rec + 16, fp.bytes.data(), Fingerprint::kSize);
  put_u32(rec + 36, crc32(std::span(rec, 36)));
}

void write_record(std::FILE* f, const std::uint8_t* rec,
                  const std::filesystem::path& path) {
  if (std::fwrite(rec, 1, kDescriptorRecordSize, f) != kDescriptorRecordSize) {
    throw IoError("write " + path.string() + ": " + std::strerror(errno));
  }
}

}  // namespace

void write_descriptor_file(const std::filesystem::path& path,
                           std::span<const SegmentDescriptor> segments) {
  FilePtr file = open_file(path, "wb");
  std::uint8_t rec[kDescriptorRecordSize];
  for (const SegmentDescriptor& seg : segments) {
    if (seg.length > UINT32_MAX) {
      throw IntegrityError("descriptor: segment exceeds 32-bit length");
    }
    encode_record(rec, seg.offset, static_cast<std::uint32_t>(seg.length),
                  kFlagSegmentHeader, seg.fp);
    write_record(file.get(), rec, path);
    for (const ChunkDescriptor& chunk : seg.chunks) {
      encode_record(rec, chunk.offset, chunk.length,
                    chunk.null ? kFlagNull : 0, chunk.fp);
      write_record(file.get(), rec, path);
    }
  }
  if (std::fflush(file.get()) != 0) {
    throw IoError("flush " + path.string() + ": " + std::strerror(errno));
  }
}

std::vector<SegmentDescriptor> read_descriptor_file(
    const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  std::vector<SegmentDescriptor> out;
  std::uint8_t rec[kDescriptorRecordSize];
  std::uint64_t index = 0;
  std::uint64_t pending_chunk_bytes = 0;  // declared - accumulated
  std::uint64_t next_offset = 0;

  for (;; ++index) {
    std::size_t got = std::fread(rec, 1, kDescriptorRecordSize, file.get());
    if (got == 0 && std::feof(file.get())) break;
    if (got != kDescriptorRecordSize) {
      throw IntegrityError("descriptor " + path.string() +
                           ": truncated record " + std::to_string(index));
    }
    if (get_u32(rec + 36) != crc32(std::span(rec, 36))) {
      throw IntegrityError("descriptor " + path.string() +
                           ": checksum mismatch at record " +
                           std::to_string(index));
    }
    std::uint64_t offset = get_u64(rec);
    std::uint32_t length = get_u32(rec + 8);
    std::uint32_t flags = get_u32(rec + 12);
    Fingerprint fp;
    std::memcpy(fp.bytes.data(), rec + 16, Fingerprint::kSize);

    if (flags & kFlagSegmentHeader) {
      if (pending_chunk_bytes != 0) {
        throw IntegrityError("descriptor " + path.string() +
                             ": segment shorter than declared at record " +
                             std::to_string(index));
      }
      SegmentDescriptor seg;
      seg.offset = offset;
      seg.length = length;
      seg.fp = fp;
      out.push_back(std::move(seg));
      pending_chunk_bytes = length;
      next_offset = offset;  // first chunk starts where the segment does
    } else {
      if (out.empty() || pending_chunk_bytes < length || offset != next_offset) {
        throw IntegrityError("descriptor " + path.string() +
                             ": malformed chunk record " +
                             std::to_string(index));
      }
      ChunkDescriptor chunk;
      chunk.offset = offset;
      chunk.length = length;
      chunk.fp = fp;
      chunk.null = (flags & kFlagNull) != 0;
      out.back().chunks.push_back(chunk);
      pending_chunk_bytes -= length;
      next_offset = offset + length;
    }
  }
  if (pending_chunk_bytes != 0) {
    throw IntegrityError("descriptor " + path.string() +
                         ": segment shorter than declared at end of file");
  }
  return out;
}

}  // namespace revdedup
