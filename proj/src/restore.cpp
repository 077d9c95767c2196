// SPDX-License-Identifier: Apache-2.0

#include "revdedup/restore.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <map>
#include <unordered_map>
#include <vector>

namespace revdedup {

FileSink::FileSink(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
}

FileSink::~FileSink() {
  if (fd_ >= 0) ::close(fd_);
}

void FileSink::write(std::span<const std::uint8_t> data) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::write(fd_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write " + path_.string() + ": " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void FileSink::close() {
  if (fd_ < 0) return;
  bool ok = ::fsync(fd_) == 0;
  ok = (::close(fd_) == 0) && ok;
  fd_ = -1;
  if (!ok) {
    throw IoError("close " + path_.string() + ": " + std::strerror(errno));
  }
}

namespace {

std::string entry_name(std::uint64_t series, std::uint64_t version,
                       std::uint64_t entry) {
  return "series " + std::to_string(series) + " version " +
         std::to_string(version) + " entry " + std::to_string(entry);
}

// Shared chain walker.  `recipe_of` returns the (cached) recipe of a
// version; the memo short-circuits chains that were walked before.
class Resolver {
 public:
  Resolver(Store& store, std::uint64_t series, std::size_t memo_capacity)
      : store_(store), series_(series), memo_capacity_(memo_capacity) {
    newest_ = store_.meta().series_state(series).next_version;
    if (newest_ == 0) {
      throw UsageError("series " + std::to_string(series) +
                       ": no backups to restore");
    }
    --newest_;
  }

  Resolution resolve(std::uint64_t version, std::uint64_t entry_index) {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> walked;
    std::uint64_t v = version;
    std::uint64_t e = entry_index;
    Resolution result;
    for (;;) {
      auto key = std::make_pair(v, e);
      if (auto it = memo_.find(key); it != memo_.end()) {
        result = it->second;
        break;
      }
      if (v > newest_) {
        throw IntegrityError("restore: chain from " +
                             entry_name(series_, version, entry_index) +
                             " runs past the newest version");
      }
      const Recipe& recipe = recipe_of(v);
      if (e >= recipe.entries.size()) {
        throw IntegrityError("restore: dangling entry reference at " +
                             entry_name(series_, v, e));
      }
      const RecipeEntry& entry = recipe.entries[e];
      if (entry.kind == EntryKind::kIndirect) {
        walked.push_back(key);
        ++v;
        e = entry.target_entry;
        continue;
      }
      if (entry.kind == EntryKind::kNull) {
        result.kind = Resolution::Kind::kNull;
        result.length = entry.length;
      } else {
        result.kind = Resolution::Kind::kPhysical;
        result.seg_id = entry.seg_id;
        result.chunk_index = entry.chunk_index;
        result.length = entry.length;
      }
      remember(key, result);
      break;
    }
    // Every hop of the chain resolves to the same place; lengths must
    // agree or the chain is corrupt.
    for (auto& key : walked) {
      const RecipeEntry& entry = recipe_of(key.first).entries[key.second];
      if (entry.length != result.length) {
        throw IntegrityError("restore: chain length mismatch at " +
                             entry_name(series_, key.first, key.second));
      }
      remember(key, result);
    }
    return result;
  }

  const Recipe& recipe_of(std::uint64_t version) {
    auto it = recipes_.find(version);
    if (it == recipes_.end()) {
      it = recipes_.emplace(version,
                            store_.meta().read_recipe(series_, version))
               .first;
    }
    return it->second;
  }

 private:
  struct KeyHash {
    std::size_t operator()(
        const std::pair<std::uint64_t, std::uint64_t>& k) const noexcept {
      return std::hash<std::uint64_t>{}(k.first * 0x9e3779b97f4a7c15ull ^
                                        k.second);
    }
  };

  void remember(const std::pair<std::uint64_t, std::uint64_t>& key,
                const Resolution& r) {
    if (memo_.size() >= memo_capacity_) {
      memo_.clear();  // crude but bounded; hit rates recover immediately
    }
    memo_.emplace(key, r);
  }

  Store& store_;
  std::uint64_t series_;
  std::size_t memo_capacity_;
  std::uint64_t newest_ = 0;
  std::unordered_map<std::uint64_t, Recipe> recipes_;
  std::unordered_map<std::pair<std::uint64_t, std::uint64_t>, Resolution,
                     KeyHash>
      memo_;
};

}  // namespace

Resolution resolve_entry(Store& store, std::uint64_t series,
                         std::uint64_t version, std::uint64_t entry_index) {
  Resolver resolver(store, series, /*memo_capacity=*/1024);
  return resolver.resolve(version, entry_index);
}

RestoreResult restore(Store& store, std::uint64_t series,
                      std::uint64_t version, Sink& sink,
                      const RestoreOptions& options) {
  std::lock_guard op_lock(store.op_mutex());
  auto start = std::chrono::steady_clock::now();

  MetaStore& meta = store.meta();
  meta.series_state(series);  // UsageError for unknown series
  if (!meta.recipe_exists(series, version)) {
    throw UsageError("series " + std::to_string(series) + " version " +
                     std::to_string(version) + ": no such backup");
  }

  Resolver resolver(store, series, options.memo_capacity);
  const Recipe recipe = resolver.recipe_of(version);

  // Resolve everything first: restore planning is metadata-only.
  std::vector<Resolution> plan;
  plan.reserve(recipe.entries.size());
  for (std::uint64_t e = 0; e < recipe.entries.size(); ++e) {
    plan.push_back(resolver.resolve(version, e));
  }

  // Fetch schedule: container of each physical entry, first-use order,
  // last-use positions for eviction.
  std::vector<std::uint32_t> entry_container(plan.size(), UINT32_MAX);
  std::unordered_map<std::uint64_t, SegmentMeta> seg_cache;
  std::vector<std::uint32_t> first_use_order;
  std::unordered_map<std::uint32_t, std::size_t> last_use;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (plan[i].kind != Resolution::Kind::kPhysical) continue;
    auto it = seg_cache.find(plan[i].seg_id);
    if (it == seg_cache.end()) {
      it = seg_cache.emplace(plan[i].seg_id, meta.segment(plan[i].seg_id))
               .first;
    }
    const SegmentMeta& seg = it->second;
    if (seg.deleted) {
      throw IntegrityError("restore: segment " + std::to_string(seg.seg_id) +
                           " was reclaimed (dangling reference from " +
                           entry_name(series, version, i) + ")");
    }
    entry_container[i] = seg.container_id;
    if (last_use.find(seg.container_id) == last_use.end()) {
      first_use_order.push_back(seg.container_id);
    }
    last_use[seg.container_id] = i;
  }

  std::unordered_map<std::uint32_t, std::size_t> first_use_pos;
  for (std::size_t i = 0; i < first_use_order.size(); ++i) {
    first_use_pos.emplace(first_use_order[i], i);
  }

  RestoreResult result;
  Sha1Stream digest;
  std::unordered_map<std::uint32_t, LoadedContainer> held;
  static const std::vector<std::uint8_t> kZeros(1 << 16, 0);

  for (std::size_t i = 0; i < plan.size(); ++i) {
    const Resolution& r = plan[i];
    if (r.kind == Resolution::Kind::kNull) {
      std::uint64_t remaining = r.length;
      while (remaining > 0) {
        std::size_t n =
            static_cast<std::size_t>(std::min<std::uint64_t>(remaining,
                                                             kZeros.size()));
        std::span<const std::uint8_t> zeros(kZeros.data(), n);
        sink.write(zeros);
        digest.update(zeros);
        remaining -= n;
      }
      result.bytes_emitted += r.length;
      continue;
    }

    const SegmentMeta& seg = seg_cache.at(r.seg_id);
    std::uint32_t cid = seg.container_id;
    auto held_it = held.find(cid);
    if (held_it == held.end()) {
      if (options.prefetch) {
        // Hint the next batch of first-use containers while this one is
        // being read.
        std::size_t pos = first_use_pos.at(cid);
        std::vector<std::uint32_t> ahead;
        for (std::size_t k = pos + 1;
             k < first_use_order.size() && ahead.size() < options.prefetch_batch;
             ++k) {
          ahead.push_back(first_use_order[k]);
        }
        store.containers().prefetch(ahead);
      }
      LoadedContainer loaded = store.containers().load(cid);
      result.containers_loaded += 1;
      result.payload_bytes_read += loaded.payload.size();
      held_it = held.emplace(cid, std::move(loaded)).first;
    }
    const LoadedContainer& container = held_it->second;

    ChunkMeta chunk = meta.chunk(seg, r.chunk_index);
    if (chunk.removed) {
      throw IntegrityError("restore: chunk " + std::to_string(r.chunk_index) +
                           " of segment " + std::to_string(r.seg_id) +
                           " was removed (dangling reference from " +
                           entry_name(series, version, i) + ")");
    }
    if (chunk.length != r.length) {
      throw IntegrityError("restore: entry/chunk length mismatch at " +
                           entry_name(series, version, i));
    }
    std::uint64_t begin = static_cast<std::uint64_t>(seg.offset_in_container) +
                          chunk.offset_in_segment;
    if (begin + chunk.length > container.payload.size()) {
      throw IntegrityError("restore: chunk bytes fall outside container " +
                           std::to_string(cid));
    }
    std::span<const std::uint8_t> bytes(container.payload.data() + begin,
                                        chunk.length);
    sink.write(bytes);
    digest.update(bytes);
    result.bytes_emitted += chunk.length;

    if (last_use.at(cid) == i) {
      held.erase(cid);
    }
  }

  if (result.bytes_emitted != recipe.info.original_size) {
    throw IntegrityError("restore: emitted " +
                         std::to_string(result.bytes_emitted) +
                         " bytes but the backup recorded " +
                         std::to_string(recipe.info.original_size));
  }
  result.digest = digest.finish();
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

}  // namespace revdedup
