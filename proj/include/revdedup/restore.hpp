// SPDX-License-Identifier: Apache-2.0
//
// Restore path.  A backup is materialized by resolving each recipe entry
// to either a null run or a physical chunk, then streaming the bytes out
// in entry order while fetching each needed container exactly once.
//
// Entries of reverse-deduplicated versions chain forward: an indirect
// entry names an entry in the NEXT version's recipe, so a chain walk
// terminates at the newest version in the worst case.  Resolution happens
// up front (metadata only) so the container fetch schedule — first-use
// order, last-use eviction, prefetch lookahead — is known before any
// payload is touched.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "revdedup/store.hpp"

namespace revdedup {

class Sink {
 public:
  virtual ~Sink() = default;
  virtual void write(std::span<const std::uint8_t> data) = 0;
};

class FileSink : public Sink {
 public:
  explicit FileSink(const std::filesystem::path& path);
  ~FileSink() override;
  void write(std::span<const std::uint8_t> data) override;
  void close();  // flushes; throws on failure (destructor aborts instead)

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

class NullSink : public Sink {
 public:
  void write(std::span<const std::uint8_t>) override {}
};

// Final resolution of one recipe entry.
struct Resolution {
  enum class Kind { kPhysical, kNull };
  Kind kind = Kind::kNull;
  std::uint64_t seg_id = 0;      // kPhysical
  std::uint32_t chunk_index = 0; // kPhysical
  std::uint32_t length = 0;
};

// Walks one entry's indirection chain to its physical chunk or null run.
// Chain hops may not exceed the distance to the newest retained version;
// anything longer means the store is corrupt.
Resolution resolve_entry(Store& store, std::uint64_t series,
                         std::uint64_t version, std::uint64_t entry_index);

struct RestoreOptions {
  bool prefetch = true;
  std::uint32_t prefetch_batch = 4;   // containers hinted ahead of each load
  std::size_t memo_capacity = 1 << 20;  // cached entry resolutions
};

struct RestoreResult {
  std::uint64_t bytes_emitted = 0;
  Fingerprint digest;  // SHA-1 of the emitted stream
  std::uint64_t containers_loaded = 0;
  std::uint64_t payload_bytes_read = 0;
  double elapsed_seconds = 0;
};

RestoreResult restore(Store& store, std::uint64_t series,
                      std::uint64_t version, Sink& sink,
                      const RestoreOptions& options = {});

}  // namespace revdedup
