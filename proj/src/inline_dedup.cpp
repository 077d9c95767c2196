// SPDX-License-Identifier: Apache-2.0

#include "revdedup/inline_dedup.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_set>

namespace revdedup {

FileByteSource::FileByteSource(const std::filesystem::path& path)
    : path_(path) {
  fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd_ < 0) {
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  struct stat st{};
  if (::fstat(fd_, &st) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("stat " + path.string() + ": " + std::strerror(errno));
  }
  size_ = static_cast<std::uint64_t>(st.st_size);
}

FileByteSource::~FileByteSource() {
  if (fd_ >= 0) ::close(fd_);
}

void FileByteSource::read(std::uint64_t offset, std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::pread(fd_, out.data() + done, out.size() - done,
                        static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("read " + path_.string() + " at byte " +
                    std::to_string(offset + done) + ": " +
                    std::strerror(errno));
    }
    if (n == 0) {
      throw IoError("read " + path_.string() + ": unexpected end at byte " +
                    std::to_string(offset + done));
    }
    done += static_cast<std::size_t>(n);
  }
}

void MemoryByteSource::read(std::uint64_t offset,
                            std::span<std::uint8_t> out) {
  if (offset + out.size() > data_.size()) {
    throw IoError("memory source: read past end");
  }
  std::memcpy(out.data(), data_.data() + offset, out.size());
}

std::vector<SegmentDescriptor> explode_to_chunks(
    std::span<const SegmentDescriptor> descriptors) {
  std::vector<SegmentDescriptor> out;
  for (const SegmentDescriptor& seg : descriptors) {
    for (const ChunkDescriptor& chunk : seg.chunks) {
      SegmentDescriptor one;
      one.offset = chunk.offset;
      one.length = chunk.length;
      one.fp = chunk.fp;  // one chunk: segment bytes == chunk bytes
      one.chunks.push_back(chunk);
      out.push_back(std::move(one));
    }
  }
  return out;
}

namespace {

void validate_descriptors(std::span<const SegmentDescriptor> descriptors,
                          std::uint64_t source_size) {
  std::uint64_t cursor = 0;
  for (const SegmentDescriptor& seg : descriptors) {
    if (seg.offset != cursor || seg.chunks.empty()) {
      throw IntegrityError("backup: descriptors do not tile the source (gap "
                           "or empty segment at byte " +
                           std::to_string(cursor) + ")");
    }
    std::uint64_t seg_bytes = 0;
    for (const ChunkDescriptor& chunk : seg.chunks) {
      if (chunk.offset != cursor + seg_bytes) {
        throw IntegrityError("backup: chunk offsets not contiguous at byte " +
                             std::to_string(cursor + seg_bytes));
      }
      seg_bytes += chunk.length;
    }
    if (seg_bytes != seg.length) {
      throw IntegrityError("backup: segment length disagrees with chunks at "
                           "byte " +
                           std::to_string(cursor));
    }
    cursor += seg.length;
  }
  if (cursor != source_size) {
    throw IntegrityError("backup: descriptors cover " + std::to_string(cursor) +
                         " bytes but source has " +
                         std::to_string(source_size));
  }
}

// Bounded hand-off queue between the source reader and the dedup stage.
// Entries arrive in segment order; a reader-side exception is re-thrown
// on the consumer side.
class SegmentFeed {
 public:
  SegmentFeed(ByteSource& source,
              std::span<const SegmentDescriptor> descriptors, bool overlap)
      : source_(source), descriptors_(descriptors), overlap_(overlap) {
    if (overlap_) {
      thread_ = std::thread([this] { reader_loop(); });
    }
  }

  ~SegmentFeed() {
    {
      std::lock_guard lock(mutex_);
      cancelled_ = true;
    }
    space_cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  // Bytes of descriptors_[index]; called with strictly increasing index.
  std::vector<std::uint8_t> next(std::size_t index) {
    if (!overlap_) {
      std::vector<std::uint8_t> bytes(descriptors_[index].length);
      source_.read(descriptors_[index].offset, bytes);
      return bytes;
    }
    std::unique_lock lock(mutex_);
    data_cv_.wait(lock, [this] { return !queue_.empty() || failure_; });
    if (failure_ && queue_.empty()) std::rethrow_exception(failure_);
    Item item = std::move(queue_.front());
    queue_.pop_front();
    lock.unlock();
    space_cv_.notify_one();
    if (item.index != index) {
      throw IntegrityError("backup: segment feed out of order");
    }
    return std::move(item.bytes);
  }

 private:
  struct Item {
    std::size_t index;
    std::vector<std::uint8_t> bytes;
  };
  static constexpr std::size_t kQueueDepth = 8;

  void reader_loop() {
    try {
      for (std::size_t i = 0; i < descriptors_.size(); ++i) {
        // Null segments are synthesized from the recipe; never read them.
        if (descriptors_[i].null()) continue;
        std::vector<std::uint8_t> bytes(descriptors_[i].length);
        source_.read(descriptors_[i].offset, bytes);
        std::unique_lock lock(mutex_);
        space_cv_.wait(lock, [this] {
          return queue_.size() < kQueueDepth || cancelled_;
        });
        if (cancelled_) return;
        queue_.push_back(Item{i, std::move(bytes)});
        lock.unlock();
        data_cv_.notify_one();
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      failure_ = std::current_exception();
      data_cv_.notify_all();
    }
  }

  ByteSource& source_;
  std::span<const SegmentDescriptor> descriptors_;
  bool overlap_;
  std::thread thread_;
  std::mutex mutex_;
  std::condition_variable data_cv_;
  std::condition_variable space_cv_;
  std::deque<Item> queue_;
  std::exception_ptr failure_;
  bool cancelled_ = false;
};

}  // namespace

BackupResult backup(Store& store, const BackupConfig& config,
                    ByteSource& source,
                    std::span<const SegmentDescriptor> descriptors) {
  std::lock_guard op_lock(store.op_mutex());
  auto start = std::chrono::steady_clock::now();

  validate_descriptors(descriptors, source.size());

  std::vector<SegmentDescriptor> exploded;
  if (config.mode == DedupMode::kChunk) {
    exploded = explode_to_chunks(descriptors);
    descriptors = exploded;
  }

  MetaStore& meta = store.meta();
  if (!meta.series_exists(config.series_id)) {
    meta.create_series(config.series_id, config.live_window,
                       config.archival_window);
  }

  BackupResult result;
  result.version = meta.series_state(config.series_id).next_version;
  result.created_at = store.allocate_timestamp();
  result.original_size = source.size();

  Recipe recipe;
  recipe.info.series_id = config.series_id;
  recipe.info.version = result.version;
  recipe.info.created_at = result.created_at;
  recipe.info.original_size = result.original_size;

  // Segments this backup references, each counted once however many
  // entries point at it.
  std::unordered_set<std::uint64_t> referenced;

  auto builder = store.containers().builder(kUndefinedTimestamp);
  SegmentFeed feed(source, descriptors, config.overlap_read);

  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const SegmentDescriptor& seg = descriptors[i];

    if (seg.null()) {
      recipe.entries.push_back(
          RecipeEntry::null(static_cast<std::uint32_t>(seg.length)));
      result.null_segments += 1;
      result.null_bytes += seg.length;
      continue;
    }

    std::uint64_t seg_id;
    if (std::optional<std::uint64_t> hit = meta.lookup(seg.fp)) {
      seg_id = *hit;
      SegmentMeta existing = meta.segment(seg_id);
      if (existing.original_length != seg.length ||
          existing.chunk_count != seg.chunks.size()) {
        throw IntegrityError(
            "backup: fingerprint hit with mismatched shape for segment " +
            std::to_string(seg_id) +
            " (store written with different chunking parameters?)");
      }
      result.duplicate_segments += 1;
      result.duplicate_bytes += seg.length;
      feed.next(i);  // drop the prefetched bytes, keeping the feed in step
    } else {
      std::vector<std::uint8_t> bytes = feed.next(i);
      seg_id = meta.segment_count();
      auto placement = builder.add(seg_id, bytes);

      SegmentMeta m;
      m.fp = seg.fp;
      m.container_id = placement.container_id;
      m.offset_in_container = placement.offset;
      m.stored_length = static_cast<std::uint32_t>(seg.length);
      m.original_length = static_cast<std::uint32_t>(seg.length);
      m.ref_count = 0;  // counted below with every other reference
      std::vector<ChunkMeta> chunk_rows;
      chunk_rows.reserve(seg.chunks.size());
      for (const ChunkDescriptor& chunk : seg.chunks) {
        ChunkMeta c;
        c.fp = chunk.fp;
        c.length = chunk.length;
        c.offset_in_segment =
            static_cast<std::uint32_t>(chunk.offset - seg.offset);
        c.null = chunk.null;
        chunk_rows.push_back(c);
      }
      std::uint64_t assigned = meta.add_segment(m, chunk_rows);
      if (assigned != seg_id) {
        throw IntegrityError("backup: segment id drifted during append");
      }
      result.unique_segments += 1;
      result.payload_bytes_written += seg.length;
    }

    referenced.insert(seg_id);
    for (std::uint32_t k = 0; k < seg.chunks.size(); ++k) {
      recipe.entries.push_back(
          RecipeEntry::direct(seg_id, k, seg.chunks[k].length));
    }
  }

  builder.seal();

  for (std::uint64_t seg_id : referenced) {
    SegmentMeta m = meta.segment(seg_id);
    m.ref_count += 1;
    meta.update_segment(m);
  }

  recipe.info.entry_count = recipe.entries.size();
  result.entry_count = recipe.entries.size();
  meta.write_recipe(recipe);
  result.transition =
      meta.advance_window(config.series_id, result.version, result.created_at);
  store.flush();

  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

}  // namespace revdedup
