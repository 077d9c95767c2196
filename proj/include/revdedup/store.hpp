// SPDX-License-Identifier: Apache-2.0
//
// Store facade: binds the metadata plane and the payload plane under one
// root directory and owns the store-wide logical clock.
//
//   <root>/store.meta       format version, container capacity, clock
//   <root>/segments.log     metadata plane (MetaStore)
//   <root>/chunks.log       metadata plane (MetaStore)
//   <root>/series/...       metadata plane (MetaStore)
//   <root>/containers.log   payload plane (ContainerStore)
//   <root>/containers/...   payload plane (ContainerStore)

#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <vector>

#include "revdedup/container_store.hpp"
#include "revdedup/metastore.hpp"

namespace revdedup {

struct StoreOptions {
  std::uint64_t container_capacity = 32ull << 20;
};

class Store {
 public:
  Store() = default;
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // create() initializes a fresh root (which must not already hold a
  // store); open() loads an existing one and rebuilds the index.
  void create(const std::filesystem::path& root, const StoreOptions& options);
  void open(const std::filesystem::path& root);
  void flush();

  MetaStore& meta() { return meta_; }
  const MetaStore& meta() const { return meta_; }
  ContainerStore& containers() { return containers_; }
  const ContainerStore& containers() const { return containers_; }
  const std::filesystem::path& root() const { return root_; }
  std::uint64_t container_capacity() const { return capacity_; }

  // Strictly monotonic store-local clock; persisted on every allocation.
  Timestamp allocate_timestamp();
  Timestamp peek_timestamp() const { return next_timestamp_; }

  // Stored bytes of one segment (partial container read).
  std::vector<std::uint8_t> segment_bytes(const SegmentMeta& seg);

  // Top-level operations (backup, dedup jobs, restore, reclamation)
  // serialize on this; the parallelism that matters lives inside them.
  std::mutex& op_mutex() { return op_mutex_; }

 private:
  void write_store_meta();
  void read_store_meta();

  std::filesystem::path root_;
  std::uint64_t capacity_ = 0;
  Timestamp next_timestamp_ = 1;
  MetaStore meta_;
  ContainerStore containers_;
  std::mutex op_mutex_;
};

}  // namespace revdedup
