// SPDX-License-Identifier: Apache-2.0

#include "revdedup/metastore.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>

namespace revdedup {

namespace {

constexpr std::uint32_t kLogFileMagic = 0x474f4c52;     // "RLOG"
constexpr std::uint32_t kSegmentRecordMagic = 0x47455352;  // "RSEG"
constexpr std::uint32_t kChunkRecordMagic = 0x4b484352;    // "RCHK"
constexpr std::uint32_t kRecipeFileMagic = 0x50434552;     // "RECP"
constexpr std::uint32_t kSeriesFileMagic = 0x52455352;     // "RSER"

constexpr std::uint32_t kSegFlagArchived = 1u << 0;
constexpr std::uint32_t kSegFlagDeleted = 1u << 1;
constexpr std::uint32_t kChunkFlagRemoved = 1u << 0;
constexpr std::uint32_t kChunkFlagNull = 1u << 1;
constexpr std::uint32_t kVersionFlagDeduplicated = 1u << 0;

constexpr std::size_t kRecipeHeaderSize = 48;
constexpr std::size_t kSeriesHeaderSize = 40;
constexpr std::size_t kVersionRecordSize = 16;

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

void read_exact(std::FILE* f, std::span<std::uint8_t> out,
                const std::filesystem::path& path, const char* what) {
  if (std::fread(out.data(), 1, out.size(), f) != out.size()) {
    throw IntegrityError(path.string() + ": truncated " + what);
  }
}

void write_all(std::FILE* f, std::span<const std::uint8_t> data,
               const std::filesystem::path& path) {
  if (std::fwrite(data.data(), 1, data.size(), f) != data.size()) {
    throw IoError("write " + path.string() + ": " + std::strerror(errno));
  }
}

// Write-to-temp-then-rename so readers never observe a half-written file.
void replace_file(const std::filesystem::path& path,
                  std::span<const std::uint8_t> contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    FilePtr f = open_file(tmp, "wb");
    write_all(f.get(), contents, tmp);
    if (std::fflush(f.get()) != 0) {
      throw IoError("flush " + tmp.string() + ": " + std::strerror(errno));
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("rename " + tmp.string() + ": " + ec.message());
  }
}

}  // namespace

// --- RecordLog ----------------------------------------------------------

RecordLog::~RecordLog() {
  try {
    close();
  } catch (...) {
    // Destructor must not throw; close errors surface via explicit flush().
  }
}

void RecordLog::open(const std::filesystem::path& path,
                     std::uint32_t record_size, std::uint32_t record_magic) {
  close();
  path_ = path;
  record_size_ = record_size;
  record_magic_ = record_magic;

  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  struct stat st{};
  if (::fstat(fd_, &st) != 0) {
    throw IoError("stat " + path.string() + ": " + std::strerror(errno));
  }

  if (st.st_size == 0) {
    count_ = 0;
    std::size_t initial = kHeaderSize + 64ull * record_size_;
    if (::ftruncate(fd_, static_cast<off_t>(initial)) != 0) {
      throw IoError("grow " + path.string() + ": " + std::strerror(errno));
    }
    map_file(initial);
    write_header();
    return;
  }

  if (st.st_size < static_cast<off_t>(kHeaderSize)) {
    throw IntegrityError(path.string() + ": shorter than log header");
  }
  map_file(static_cast<std::size_t>(st.st_size));

  if (get_u32(map_) != kLogFileMagic) {
    throw IntegrityError(path.string() + ": bad log magic");
  }
  if (get_u32(map_ + 4) != record_magic_ ||
      get_u32(map_ + 8) != record_size_) {
    throw IntegrityError(path.string() + ": log type mismatch");
  }
  if (get_u32(map_ + 24) != crc32(std::span(map_, 24))) {
    throw IntegrityError(path.string() + ": log header checksum mismatch");
  }
  count_ = get_u64(map_ + 16);
  if (kHeaderSize + count_ * record_size_ > map_size_) {
    throw IntegrityError(path.string() + ": log truncated (" +
                         std::to_string(count_) + " records declared)");
  }
}

void RecordLog::close() {
  if (map_ != nullptr) {
    ::munmap(map_, map_size_);
    map_ = nullptr;
    map_size_ = 0;
  }
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void RecordLog::flush() {
  if (map_ != nullptr && ::msync(map_, map_size_, MS_SYNC) != 0) {
    throw IoError("msync " + path_.string() + ": " + std::strerror(errno));
  }
}

void RecordLog::map_file(std::size_t size) {
  if (map_ != nullptr) {
    ::munmap(map_, map_size_);
    map_ = nullptr;
  }
  void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd_, 0);
  if (p == MAP_FAILED) {
    throw IoError("mmap " + path_.string() + ": " + std::strerror(errno));
  }
  map_ = static_cast<std::uint8_t*>(p);
  map_size_ = size;
}

void RecordLog::write_header() {
  std::uint8_t h[kHeaderSize] = {};
  put_u32(h, kLogFileMagic);
  put_u32(h + 4, record_magic_);
  put_u32(h + 8, record_size_);
  put_u64(h + 16, count_);
  put_u32(h + 24, crc32(std::span(h, 24)));
  std::memcpy(map_, h, kHeaderSize);
}

void RecordLog::ensure_capacity(std::uint64_t records) {
  std::size_t needed = kHeaderSize + records * record_size_;
  if (needed <= map_size_) return;
  std::uint64_t capacity = (map_size_ - kHeaderSize) / record_size_;
  std::uint64_t grown = std::max<std::uint64_t>({records, capacity * 2, 128});
  std::size_t new_size = kHeaderSize + grown * record_size_;
  if (::ftruncate(fd_, static_cast<off_t>(new_size)) != 0) {
    throw IoError("grow " + path_.string() + ": " + std::strerror(errno));
  }
  map_file(new_size);
}

std::uint64_t RecordLog::append(std::span<const std::uint8_t> record) {
  if (record.size() != record_size_) {
    throw IntegrityError(path_.string() + ": record size mismatch on append");
  }
  ensure_capacity(count_ + 1);
  std::memcpy(map_ + kHeaderSize + count_ * record_size_, record.data(),
              record_size_);
  std::uint64_t index = count_++;
  write_header();
  return index;
}

const std::uint8_t* RecordLog::record_ptr(std::uint64_t index) const {
  if (index >= count_) {
    throw IntegrityError(path_.string() + ": record " + std::to_string(index) +
                         " out of range (count " + std::to_string(count_) +
                         ")");
  }
  return map_ + kHeaderSize + index * record_size_;
}

void RecordLog::read(std::uint64_t index, std::span<std::uint8_t> out) const {
  if (out.size() != record_size_) {
    throw IntegrityError(path_.string() + ": record size mismatch on read");
  }
  std::memcpy(out.data(), record_ptr(index), record_size_);
}

void RecordLog::write(std::uint64_t index,
                      std::span<const std::uint8_t> record) {
  if (record.size() != record_size_) {
    throw IntegrityError(path_.string() + ": record size mismatch on write");
  }
  if (index >= count_) {
    throw IntegrityError(path_.string() + ": record " + std::to_string(index) +
                         " out of range (count " + std::to_string(count_) +
                         ")");
  }
  std::memcpy(map_ + kHeaderSize + index * record_size_, record.data(),
              record_size_);
}

// --- typed record codecs -------------------------------------------------

void SegmentMeta::encode(std::span<std::uint8_t> out) const {
  if (out.size() != kSegmentRecordSize) {
    throw IntegrityError("segment record: bad encode buffer");
  }
  std::uint8_t* p = out.data();
  std::memset(p, 0, kSegmentRecordSize);
  put_u32(p, kSegmentRecordMagic);
  std::memcpy(p + 8, fp.bytes.data(), Fingerprint::kSize);
  put_u32(p + 28, container_id);
  put_u32(p + 32, offset_in_container);
  put_u32(p + 36, stored_length);
  put_u32(p + 40, original_length);
  put_u32(p + 44, ref_count);
  put_u32(p + 48, chunk_count);
  std::uint32_t flags = (archived ? kSegFlagArchived : 0) |
                        (deleted ? kSegFlagDeleted : 0);
  put_u32(p + 52, flags);
  put_u64(p + 56, chunk_log_start);
  put_u32(p + 4, crc32(std::span(p + 8, kSegmentRecordSize - 8)));
}

SegmentMeta SegmentMeta::decode(std::span<const std::uint8_t> in,
                                std::uint64_t seg_id) {
  if (in.size() != kSegmentRecordSize) {
    throw IntegrityError("segment record: bad decode buffer");
  }
  const std::uint8_t* p = in.data();
  if (get_u32(p) != kSegmentRecordMagic) {
    throw IntegrityError("segment " + std::to_string(seg_id) + ": bad magic");
  }
  if (get_u32(p + 4) != crc32(std::span(p + 8, kSegmentRecordSize - 8))) {
    throw IntegrityError("segment " + std::to_string(seg_id) +
                         ": checksum mismatch");
  }
  SegmentMeta m;
  m.seg_id = seg_id;
  std::memcpy(m.fp.bytes.data(), p + 8, Fingerprint::kSize);
  m.container_id = get_u32(p + 28);
  m.offset_in_container = get_u32(p + 32);
  m.stored_length = get_u32(p + 36);
  m.original_length = get_u32(p + 40);
  m.ref_count = get_u32(p + 44);
  m.chunk_count = get_u32(p + 48);
  std::uint32_t flags = get_u32(p + 52);
  m.archived = (flags & kSegFlagArchived) != 0;
  m.deleted = (flags & kSegFlagDeleted) != 0;
  m.chunk_log_start = get_u64(p + 56);
  return m;
}

void ChunkMeta::encode(std::span<std::uint8_t> out) const {
  if (out.size() != kChunkRecordSize) {
    throw IntegrityError("chunk record: bad encode buffer");
  }
  std::uint8_t* p = out.data();
  std::memset(p, 0, kChunkRecordSize);
  put_u32(p, kChunkRecordMagic);
  std::memcpy(p + 8, fp.bytes.data(), Fingerprint::kSize);
  put_u32(p + 28, length);
  put_u32(p + 32, removed ? UINT32_MAX : offset_in_segment);
  std::uint32_t flags =
      (removed ? kChunkFlagRemoved : 0) | (null ? kChunkFlagNull : 0);
  put_u32(p + 36, flags);
  put_u32(p + 4, crc32(std::span(p + 8, kChunkRecordSize - 8)));
}

ChunkMeta ChunkMeta::decode(std::span<const std::uint8_t> in) {
  if (in.size() != kChunkRecordSize) {
    throw IntegrityError("chunk record: bad decode buffer");
  }
  const std::uint8_t* p = in.data();
  if (get_u32(p) != kChunkRecordMagic) {
    throw IntegrityError("chunk record: bad magic");
  }
  if (get_u32(p + 4) != crc32(std::span(p + 8, kChunkRecordSize - 8))) {
    throw IntegrityError("chunk record: checksum mismatch");
  }
  ChunkMeta c;
  std::memcpy(c.fp.bytes.data(), p + 8, Fingerprint::kSize);
  c.length = get_u32(p + 28);
  std::uint32_t flags = get_u32(p + 36);
  c.removed = (flags & kChunkFlagRemoved) != 0;
  c.null = (flags & kChunkFlagNull) != 0;
  c.offset_in_segment = c.removed ? 0 : get_u32(p + 32);
  return c;
}

RecipeEntry RecipeEntry::direct(std::uint64_t seg_id,
                                std::uint32_t chunk_index,
                                std::uint32_t length) {
  RecipeEntry e;
  e.kind = EntryKind::kDirect;
  e.length = length;
  e.seg_id = seg_id;
  e.chunk_index = chunk_index;
  return e;
}

RecipeEntry RecipeEntry::indirect(std::uint64_t target_entry,
                                  std::uint32_t length) {
  RecipeEntry e;
  e.kind = EntryKind::kIndirect;
  e.length = length;
  e.target_entry = target_entry;
  return e;
}

RecipeEntry RecipeEntry::null(std::uint32_t length) {
  RecipeEntry e;
  e.kind = EntryKind::kNull;
  e.length = length;
  return e;
}

void RecipeEntry::encode(std::span<std::uint8_t> out) const {
  if (out.size() != kRecipeEntrySize) {
    throw IntegrityError("recipe entry: bad encode buffer");
  }
  std::uint8_t* p = out.data();
  std::memset(p, 0, kRecipeEntrySize);
  put_u32(p, static_cast<std::uint32_t>(kind));
  put_u32(p + 4, length);
  switch (kind) {
    case EntryKind::kDirect:
      put_u64(p + 8, seg_id);
      put_u32(p + 16, chunk_index);
      break;
    case EntryKind::kIndirect:
      put_u64(p + 8, target_entry);
      break;
    case EntryKind::kNull:
      break;
  }
  put_u32(p + 20, crc32(std::span(p, 20)));
}

RecipeEntry RecipeEntry::decode(std::span<const std::uint8_t> in) {
  if (in.size() != kRecipeEntrySize) {
    throw IntegrityError("recipe entry: bad decode buffer");
  }
  const std::uint8_t* p = in.data();
  if (get_u32(p + 20) != crc32(std::span(p, 20))) {
    throw IntegrityError("recipe entry: checksum mismatch");
  }
  std::uint32_t kind = get_u32(p);
  if (kind > static_cast<std::uint32_t>(EntryKind::kNull)) {
    throw IntegrityError("recipe entry: unknown kind " + std::to_string(kind));
  }
  RecipeEntry e;
  e.kind = static_cast<EntryKind>(kind);
  e.length = get_u32(p + 4);
  if (e.kind == EntryKind::kDirect) {
    e.seg_id = get_u64(p + 8);
    e.chunk_index = get_u32(p + 16);
  } else if (e.kind == EntryKind::kIndirect) {
    e.target_entry = get_u64(p + 8);
  }
  return e;
}

// --- SeriesState ----------------------------------------------------------

const VersionState& SeriesState::version(std::uint64_t v) const {
  if (v < first_retained || v >= next_version) {
    throw UsageError("series " + std::to_string(series_id) + ": version " +
                     std::to_string(v) + " is not retained");
  }
  return versions[v - first_retained];
}

WindowKind SeriesState::classify(std::uint64_t v) const {
  version(v);  // range check
  std::uint64_t offset = (next_version - 1) - v;
  if (offset < live_window) return WindowKind::kLive;
  if (archival_window == kAllRemaining ||
      offset < static_cast<std::uint64_t>(live_window) + archival_window) {
    return WindowKind::kArchival;
  }
  return WindowKind::kExpired;
}

// --- DedupIndex -----------------------------------------------------------

std::optional<std::uint64_t> DedupIndex::lookup(const Fingerprint& fp) const {
  std::shared_lock lock(mutex_);
  auto it = map_.find(fp);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void DedupIndex::insert(const Fingerprint& fp, std::uint64_t seg_id) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] = map_.emplace(fp, seg_id);
  if (!inserted) {
    throw IntegrityError("index: duplicate fingerprint " + fp.hex());
  }
}

void DedupIndex::erase(const Fingerprint& fp, std::uint64_t seg_id) {
  std::unique_lock lock(mutex_);
  auto it = map_.find(fp);
  // Only the owning segment may evict: a fresh segment can re-store
  // content whose archived twin is being dropped concurrently.
  if (it != map_.end() && it->second == seg_id) map_.erase(it);
}

std::size_t DedupIndex::size() const {
  std::shared_lock lock(mutex_);
  return map_.size();
}

// --- MetaStore --------------------------------------------------------------

void MetaStore::open(const std::filesystem::path& root) {
  root_ = root;
  std::filesystem::create_directories(root_ / "series");
  segments_.open(root_ / "segments.log", kSegmentRecordSize,
                 kSegmentRecordMagic);
  chunks_.open(root_ / "chunks.log", kChunkRecordSize, kChunkRecordMagic);

  // Rebuild the fingerprint index over shareable segments.
  for (std::uint64_t i = 0; i < segments_.count(); ++i) {
    SegmentMeta m = segment(i);
    if (!m.archived && !m.deleted) {
      index_.insert(m.fp, m.seg_id);
    }
  }
}

void MetaStore::flush() {
  segments_.flush();
  chunks_.flush();
}

std::uint64_t MetaStore::segment_count() const { return segments_.count(); }

SegmentMeta MetaStore::segment(std::uint64_t seg_id) const {
  return SegmentMeta::decode(
      std::span(segments_.record_ptr(seg_id), kSegmentRecordSize), seg_id);
}

std::uint64_t MetaStore::add_segment(SegmentMeta meta,
                                     std::span<const ChunkMeta> chunks) {
  if (chunks.empty()) {
    throw IntegrityError("segment must have at least one chunk");
  }
  meta.seg_id = segments_.count();
  meta.chunk_log_start = chunks_.count();
  meta.chunk_count = static_cast<std::uint32_t>(chunks.size());

  std::uint8_t crec[kChunkRecordSize];
  for (const ChunkMeta& c : chunks) {
    c.encode(crec);
    chunks_.append(crec);
  }
  std::uint8_t srec[kSegmentRecordSize];
  meta.encode(srec);
  segments_.append(srec);
  index_.insert(meta.fp, meta.seg_id);
  return meta.seg_id;
}

void MetaStore::update_segment(const SegmentMeta& meta) {
  std::uint8_t rec[kSegmentRecordSize];
  meta.encode(rec);
  segments_.write(meta.seg_id, rec);
}

ChunkMeta MetaStore::chunk(const SegmentMeta& seg, std::uint32_t index) const {
  if (index >= seg.chunk_count) {
    throw IntegrityError("segment " + std::to_string(seg.seg_id) + ": chunk " +
                         std::to_string(index) + " out of range");
  }
  return ChunkMeta::decode(std::span(
      chunks_.record_ptr(seg.chunk_log_start + index), kChunkRecordSize));
}

std::vector<ChunkMeta> MetaStore::chunks(const SegmentMeta& seg) const {
  std::vector<ChunkMeta> out;
  out.reserve(seg.chunk_count);
  for (std::uint32_t i = 0; i < seg.chunk_count; ++i) {
    out.push_back(chunk(seg, i));
  }
  return out;
}

void MetaStore::update_chunk(const SegmentMeta& seg, std::uint32_t index,
                             const ChunkMeta& chunk_meta) {
  if (index >= seg.chunk_count) {
    throw IntegrityError("segment " + std::to_string(seg.seg_id) + ": chunk " +
                         std::to_string(index) + " out of range");
  }
  std::uint8_t rec[kChunkRecordSize];
  chunk_meta.encode(rec);
  chunks_.write(seg.chunk_log_start + index, rec);
}

std::optional<std::uint64_t> MetaStore::lookup(const Fingerprint& fp) const {
  return index_.lookup(fp);
}

void MetaStore::evict_from_index(const Fingerprint& fp,
                                 std::uint64_t seg_id) {
  index_.erase(fp, seg_id);
}

std::size_t MetaStore::index_size() const { return index_.size(); }

// --- recipes ---------------------------------------------------------------

std::filesystem::path MetaStore::series_dir(std::uint64_t series) const {
  return root_ / "series" / std::to_string(series);
}

std::filesystem::path MetaStore::recipe_path(std::uint64_t series,
                                             std::uint64_t version) const {
  return series_dir(series) / ("recipe." + std::to_string(version));
}

std::filesystem::path MetaStore::state_path(std::uint64_t series) const {
  return series_dir(series) / "state";
}

bool MetaStore::recipe_exists(std::uint64_t series,
                              std::uint64_t version) const {
  return std::filesystem::exists(recipe_path(series, version));
}

void MetaStore::write_recipe(const Recipe& recipe) {
  if (recipe.info.entry_count != recipe.entries.size()) {
    throw IntegrityError("recipe: entry_count disagrees with entries");
  }
  std::vector<std::uint8_t> buf(kRecipeHeaderSize +
                                recipe.entries.size() * kRecipeEntrySize);
  std::uint8_t* p = buf.data();
  put_u32(p, kRecipeFileMagic);
  put_u64(p + 8, recipe.info.series_id);
  put_u64(p + 16, recipe.info.version);
  put_u64(p + 24, recipe.info.created_at);
  put_u64(p + 32, recipe.info.original_size);
  put_u64(p + 40, recipe.info.entry_count);
  put_u32(p + 4, crc32(std::span(p + 8, kRecipeHeaderSize - 8)));
  for (std::size_t i = 0; i < recipe.entries.size(); ++i) {
    recipe.entries[i].encode(
        std::span(p + kRecipeHeaderSize + i * kRecipeEntrySize,
                  kRecipeEntrySize));
  }
  replace_file(recipe_path(recipe.info.series_id, recipe.info.version), buf);
}

namespace {

RecipeInfo decode_recipe_header(std::span<const std::uint8_t> h,
                                const std::filesystem::path& path) {
  const std::uint8_t* p = h.data();
  if (get_u32(p) != kRecipeFileMagic) {
    throw IntegrityError(path.string() + ": bad recipe magic");
  }
  if (get_u32(p + 4) != crc32(std::span(p + 8, kRecipeHeaderSize - 8))) {
    throw IntegrityError(path.string() + ": recipe header checksum mismatch");
  }
  RecipeInfo info;
  info.series_id = get_u64(p + 8);
  info.version = get_u64(p + 16);
  info.created_at = get_u64(p + 24);
  info.original_size = get_u64(p + 32);
  info.entry_count = get_u64(p + 40);
  return info;
}

FilePtr open_recipe(const std::filesystem::path& path, const char* mode,
                    std::uint64_t series, std::uint64_t version) {
  std::FILE* f = std::fopen(path.c_str(), mode);
  if (f == nullptr) {
    if (errno == ENOENT) {
      throw UsageError("series " + std::to_string(series) + " version " +
                       std::to_string(version) + ": no such backup");
    }
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  return FilePtr(f);
}

}  // namespace

Recipe MetaStore::read_recipe(std::uint64_t series,
                              std::uint64_t version) const {
  auto path = recipe_path(series, version);
  FilePtr f = open_recipe(path, "rb", series, version);
  std::uint8_t header[kRecipeHeaderSize];
  read_exact(f.get(), header, path, "recipe header");
  Recipe recipe;
  recipe.info = decode_recipe_header(header, path);
  if (recipe.info.series_id != series || recipe.info.version != version) {
    throw IntegrityError(path.string() + ": recipe identity mismatch");
  }
  std::vector<std::uint8_t> buf(recipe.info.entry_count * kRecipeEntrySize);
  read_exact(f.get(), buf, path, "recipe entries");
  recipe.entries.reserve(recipe.info.entry_count);
  for (std::uint64_t i = 0; i < recipe.info.entry_count; ++i) {
    recipe.entries.push_back(RecipeEntry::decode(
        std::span(buf.data() + i * kRecipeEntrySize, kRecipeEntrySize)));
  }
  return recipe;
}

RecipeInfo MetaStore::recipe_info(std::uint64_t series,
                                  std::uint64_t version) const {
  auto path = recipe_path(series, version);
  FilePtr f = open_recipe(path, "rb", series, version);
  std::uint8_t header[kRecipeHeaderSize];
  read_exact(f.get(), header, path, "recipe header");
  RecipeInfo info = decode_recipe_header(header, path);
  if (info.series_id != series || info.version != version) {
    throw IntegrityError(path.string() + ": recipe identity mismatch");
  }
  return info;
}

RecipeEntry MetaStore::read_entry(std::uint64_t series, std::uint64_t version,
                                  std::uint64_t entry_index) const {
  auto path = recipe_path(series, version);
  FilePtr f = open_recipe(path, "rb", series, version);
  std::uint8_t header[kRecipeHeaderSize];
  read_exact(f.get(), header, path, "recipe header");
  RecipeInfo info = decode_recipe_header(header, path);
  if (entry_index >= info.entry_count) {
    throw IntegrityError(path.string() + ": entry " +
                         std::to_string(entry_index) + " out of range");
  }
  if (std::fseek(f.get(),
                 static_cast<long>(kRecipeHeaderSize +
                                   entry_index * kRecipeEntrySize),
                 SEEK_SET) != 0) {
    throw IoError("seek " + path.string() + ": " + std::strerror(errno));
  }
  std::uint8_t buf[kRecipeEntrySize];
  read_exact(f.get(), buf, path, "recipe entry");
  return RecipeEntry::decode(buf);
}

void MetaStore::mutate_entry(std::uint64_t series, std::uint64_t version,
                             std::uint64_t entry_index,
                             const RecipeEntry& replacement) {
  auto path = recipe_path(series, version);
  FilePtr f = open_recipe(path, "r+b", series, version);
  std::uint8_t header[kRecipeHeaderSize];
  read_exact(f.get(), header, path, "recipe header");
  RecipeInfo info = decode_recipe_header(header, path);
  if (entry_index >= info.entry_count) {
    throw IntegrityError(path.string() + ": entry " +
                         std::to_string(entry_index) + " out of range");
  }
  long pos =
      static_cast<long>(kRecipeHeaderSize + entry_index * kRecipeEntrySize);
  if (std::fseek(f.get(), pos, SEEK_SET) != 0) {
    throw IoError("seek " + path.string() + ": " + std::strerror(errno));
  }
  std::uint8_t buf[kRecipeEntrySize];
  read_exact(f.get(), buf, path, "recipe entry");
  RecipeEntry current = RecipeEntry::decode(buf);

  if (current.kind != EntryKind::kDirect ||
      (replacement.kind != EntryKind::kIndirect &&
       replacement.kind != EntryKind::kNull) ||
      current.length != replacement.length) {
    throw IntegrityError(
        path.string() + ": illegal rewrite of entry " +
        std::to_string(entry_index) +
        " (only direct->indirect and direct->null of equal length)");
  }

  replacement.encode(buf);
  if (std::fseek(f.get(), pos, SEEK_SET) != 0) {
    throw IoError("seek " + path.string() + ": " + std::strerror(errno));
  }
  write_all(f.get(), buf, path);
  if (std::fflush(f.get()) != 0) {
    throw IoError("flush " + path.string() + ": " + std::strerror(errno));
  }
}

void MetaStore::remove_recipe(std::uint64_t series, std::uint64_t version) {
  std::error_code ec;
  if (!std::filesystem::remove(recipe_path(series, version), ec) || ec) {
    throw IoError("remove recipe " + std::to_string(series) + "/" +
                  std::to_string(version) + ": " +
                  (ec ? ec.message() : "no such recipe"));
  }
}

// --- series state -------------------------------------------------------

bool MetaStore::series_exists(std::uint64_t series) const {
  return std::filesystem::exists(state_path(series));
}

void MetaStore::create_series(std::uint64_t series, std::uint32_t live_window,
                              std::uint32_t archival_window) {
  if (live_window == 0) {
    throw UsageError("series: live window must be at least 1");
  }
  if (series_exists(series)) {
    throw UsageError("series " + std::to_string(series) + " already exists");
  }
  std::filesystem::create_directories(series_dir(series));
  SeriesState state;
  state.series_id = series;
  state.live_window = live_window;
  state.archival_window = archival_window;
  write_series_state(state);
}

void MetaStore::write_series_state(const SeriesState& state) const {
  std::vector<std::uint8_t> buf(kSeriesHeaderSize +
                                state.versions.size() * kVersionRecordSize);
  std::uint8_t* p = buf.data();
  put_u32(p, kSeriesFileMagic);
  put_u64(p + 8, state.series_id);
  put_u32(p + 16, state.live_window);
  put_u32(p + 20, state.archival_window);
  put_u64(p + 24, state.first_retained);
  put_u64(p + 32, state.next_version);
  put_u32(p + 4, crc32(std::span(p + 8, kSeriesHeaderSize - 8)));
  for (std::size_t i = 0; i < state.versions.size(); ++i) {
    std::uint8_t* v = p + kSeriesHeaderSize + i * kVersionRecordSize;
    put_u64(v, state.versions[i].created_at);
    put_u32(v + 8,
            state.versions[i].deduplicated ? kVersionFlagDeduplicated : 0);
    put_u32(v + 12, crc32(std::span(v, 12)));
  }
  replace_file(state_path(state.series_id), buf);
}

SeriesState MetaStore::series_state(std::uint64_t series) const {
  auto path = state_path(series);
  std::FILE* raw = std::fopen(path.c_str(), "rb");
  if (raw == nullptr) {
    if (errno == ENOENT) {
      throw UsageError("series " + std::to_string(series) + ": unknown series");
    }
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  FilePtr f(raw);
  std::uint8_t h[kSeriesHeaderSize];
  read_exact(f.get(), h, path, "series header");
  if (get_u32(h) != kSeriesFileMagic) {
    throw IntegrityError(path.string() + ": bad series magic");
  }
  if (get_u32(h + 4) != crc32(std::span(h + 8, kSeriesHeaderSize - 8))) {
    throw IntegrityError(path.string() + ": series header checksum mismatch");
  }
  SeriesState state;
  state.series_id = get_u64(h + 8);
  state.live_window = get_u32(h + 16);
  state.archival_window = get_u32(h + 20);
  state.first_retained = get_u64(h + 24);
  state.next_version = get_u64(h + 32);
  if (state.series_id != series) {
    throw IntegrityError(path.string() + ": series identity mismatch");
  }
  if (state.first_retained > state.next_version) {
    throw IntegrityError(path.string() + ": retention range inverted");
  }
  std::uint64_t retained = state.next_version - state.first_retained;
  state.versions.reserve(retained);
  for (std::uint64_t i = 0; i < retained; ++i) {
    std::uint8_t v[kVersionRecordSize];
    read_exact(f.get(), v, path, "version record");
    if (get_u32(v + 12) != crc32(std::span(v, 12))) {
      throw IntegrityError(path.string() + ": version record checksum");
    }
    VersionState vs;
    vs.created_at = get_u64(v);
    vs.deduplicated = (get_u32(v + 8) & kVersionFlagDeduplicated) != 0;
    state.versions.push_back(vs);
  }
  return state;
}

std::vector<std::uint64_t> MetaStore::list_series() const {
  std::vector<std::uint64_t> out;
  for (const auto& entry :
       std::filesystem::directory_iterator(root_ / "series")) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() ||
        name.find_first_not_of("0123456789") != std::string::npos) {
      continue;
    }
    out.push_back(std::stoull(name));
  }
  std::sort(out.begin(), out.end());
  return out;
}

WindowTransition MetaStore::advance_window(std::uint64_t series,
                                           std::uint64_t new_version,
                                           Timestamp created_at) {
  SeriesState state = series_state(series);
  if (new_version != state.next_version) {
    throw IntegrityError("series " + std::to_string(series) + ": version " +
                         std::to_string(new_version) +
                         " is not the next version (expected " +
                         std::to_string(state.next_version) + ")");
  }
  state.versions.push_back(VersionState{created_at, false});
  state.next_version = new_version + 1;
  write_series_state(state);

  WindowTransition t;
  // With one new version, at most one crosses each boundary.
  if (new_version >= state.live_window) {
    std::uint64_t crossed = new_version - state.live_window;
    if (crossed >= state.first_retained) {
      t.entered_archival.push_back(crossed);
    }
  }
  if (state.archival_window != kAllRemaining) {
    std::uint64_t span =
        static_cast<std::uint64_t>(state.live_window) + state.archival_window;
    if (new_version >= span) {
      std::uint64_t crossed = new_version - span;
      if (crossed >= state.first_retained) {
        t.expired.push_back(crossed);
      }
    }
  }
  return t;
}

void MetaStore::mark_deduplicated(std::uint64_t series,
                                  std::uint64_t version) {
  SeriesState state = series_state(series);
  state.version(version);  // range check
  state.versions[version - state.first_retained].deduplicated = true;
  write_series_state(state);
}

void MetaStore::drop_versions_below(std::uint64_t series,
                                    std::uint64_t first_retained) {
  SeriesState state = series_state(series);
  if (first_retained < state.first_retained ||
      first_retained > state.next_version) {
    throw IntegrityError("series " + std::to_string(series) +
                         ": retention cursor may only advance");
  }
  state.versions.erase(
      state.versions.begin(),
      state.versions.begin() + (first_retained - state.first_retained));
  state.first_retained = first_retained;
  write_series_state(state);
}

}  // namespace revdedup
