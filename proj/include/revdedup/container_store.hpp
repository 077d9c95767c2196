// SPDX-License-Identifier: Apache-2.0
//
// Payload plane of the store: fixed-capacity containers of packed
// segments, each a single file `containers/ctr.<id>` with a checksummed
// header, a segment directory, and raw payload.
//
// Timestamps implement cheap deletion: a container written on behalf of a
// single backup carries that backup's creation stamp and can be reclaimed
// by comparing the stamp against a cutoff — no payload reads.  Containers
// holding shareable segments keep the undefined stamp until ownership
// collapses onto one backup (at reverse-dedup compaction), at which point
// the survivors are repacked into stamped containers.
//
// containers.log mirrors one 40-byte record per container id so `stats`
// and reclamation never have to touch container files.

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "revdedup/common.hpp"
#include "revdedup/metastore.hpp"

namespace revdedup {

inline constexpr std::uint32_t kContainerRecordSize = 40;
inline constexpr std::size_t kContainerHeaderSize = 64;
inline constexpr std::size_t kContainerDirEntrySize = 24;

struct ContainerInfo {
  std::uint32_t container_id = 0;
  Timestamp timestamp = kUndefinedTimestamp;
  std::uint64_t payload_bytes = 0;
  std::uint32_t segment_count = 0;
  bool sealed = false;
  bool deleted = false;
};

struct ContainerSegment {
  std::uint64_t seg_id = 0;
  std::uint64_t offset = 0;  // into payload
  std::uint64_t length = 0;
};

struct LoadedContainer {
  ContainerInfo info;
  std::vector<ContainerSegment> directory;
  std::vector<std::uint8_t> payload;
};

// Device-level I/O accounting.  Payload counters track container payload
// bytes only; log and header traffic is metadata and deliberately not
// counted.
struct IoCounters {
  std::atomic<std::uint64_t> containers_written{0};
  std::atomic<std::uint64_t> containers_read{0};
  std::atomic<std::uint64_t> payload_bytes_written{0};
  std::atomic<std::uint64_t> payload_bytes_read{0};

  struct Snapshot {
    std::uint64_t containers_written = 0;
    std::uint64_t containers_read = 0;
    std::uint64_t payload_bytes_written = 0;
    std::uint64_t payload_bytes_read = 0;
  };
  Snapshot snapshot() const;
  void reset();
};

class ContainerStore {
 public:
  ContainerStore() = default;
  ContainerStore(const ContainerStore&) = delete;
  ContainerStore& operator=(const ContainerStore&) = delete;
  ~ContainerStore();

  void open(const std::filesystem::path& root, std::uint64_t capacity);
  void flush();

  std::uint64_t capacity() const { return capacity_; }
  std::uint32_t container_count() const;
  ContainerInfo info(std::uint32_t id) const;
  std::vector<ContainerInfo> list() const;
  std::filesystem::path container_path(std::uint32_t id) const;

  // Packs segments into containers.  A segment larger than the remaining
  // room seals the current container and starts the next; an oversized
  // segment gets a container of its own (only an empty builder accepts a
  // segment beyond capacity).  The placement is final as soon as add()
  // returns; bytes are buffered until the container seals.
  class Builder {
   public:
    struct Placement {
      std::uint32_t container_id = 0;
      std::uint32_t offset = 0;
    };

    Placement add(std::uint64_t seg_id, std::span<const std::uint8_t> bytes);
    void seal();  // flush the open container, if any
    ~Builder();   // seals; aborts on I/O failure (call seal() explicitly)

    Builder(Builder&&) = delete;
    Builder& operator=(Builder&&) = delete;

   private:
    friend class ContainerStore;
    Builder(ContainerStore& store, Timestamp stamp)
        : store_(store), stamp_(stamp) {}

    ContainerStore& store_;
    Timestamp stamp_;
    bool open_ = false;
    std::uint32_t current_id_ = 0;
    std::vector<ContainerSegment> directory_;
    std::vector<std::uint8_t> payload_;
  };

  Builder builder(Timestamp stamp) { return Builder(*this, stamp); }

  // Whole-container read (restore, compaction, sweep).
  LoadedContainer load(std::uint32_t id);
  // Partial read of one segment's stored bytes.
  std::vector<std::uint8_t> read_payload(std::uint32_t id, std::uint64_t offset,
                                         std::uint32_t length);

  // Timestamp-guarded reclamation: refuses containers whose stamp is
  // undefined (they may hold shared segments).
  void remove(std::uint32_t id);
  // Repackaging path: drops a container that was just rewritten elsewhere.
  void retire(std::uint32_t id);

  // Hints the OS to page in upcoming containers; asynchronous, advisory,
  // silently skips ids that no longer exist.
  void prefetch(std::span<const std::uint32_t> ids);

  IoCounters& counters() { return counters_; }

 private:
  std::uint32_t allocate_id();
  void seal_container(std::uint32_t id, Timestamp stamp,
                      std::span<const ContainerSegment> directory,
                      std::span<const std::uint8_t> payload);
  void unlink_container(std::uint32_t id, const char* op);
  void prefetch_loop();

  std::filesystem::path dir_;
  std::uint64_t capacity_ = 0;
  RecordLog log_;
  IoCounters counters_;

  std::mutex prefetch_mutex_;
  std::condition_variable prefetch_cv_;
  std::deque<std::uint32_t> prefetch_queue_;
  bool prefetch_stop_ = false;
  std::thread prefetch_thread_;
};

}  // namespace revdedup
