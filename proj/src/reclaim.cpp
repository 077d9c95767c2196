// SPDX-License-Identifier: Apache-2.0

#include "revdedup/reclaim.hpp"

#include <chrono>
#include <map>
#include <mutex>
#include <set>
#include <vector>

namespace revdedup {

namespace {

struct ExpiredVersion {
  std::uint64_t series_id = 0;
  std::uint64_t version = 0;
  bool deduplicated = false;
};

// Versions past their retention windows and created before the cutoff,
// oldest first per series.  Creation times grow with the version number,
// so both conditions cut a prefix.
std::vector<ExpiredVersion> find_expired(MetaStore& meta, Timestamp before) {
  std::vector<ExpiredVersion> out;
  for (std::uint64_t series : meta.list_series()) {
    SeriesState st = meta.series_state(series);
    for (std::uint64_t v = st.first_retained; v < st.next_version; ++v) {
      if (st.classify(v) != WindowKind::kExpired) break;  // windows are ordered
      if (st.version(v).created_at >= before) break;
      out.push_back({series, v, st.version(v).deduplicated});
    }
  }
  return out;
}

// A cutoff may only carve a prefix of already-expired versions; reaching
// any version the windows still retain is a caller error.
void check_cutoff(MetaStore& meta, Timestamp before) {
  if (before == kNoCutoff) return;
  for (std::uint64_t series : meta.list_series()) {
    SeriesState st = meta.series_state(series);
    for (std::uint64_t v = st.first_retained; v < st.next_version; ++v) {
      if (st.version(v).created_at >= before) break;
      if (st.classify(v) != WindowKind::kExpired)
        throw UsageError("cutoff " + std::to_string(before) +
                         " reaches series " + std::to_string(series) +
                         " version " + std::to_string(v) +
                         ", which is still inside its retention window");
    }
  }
}

// Drops the expired recipes and version states.  For a version that
// never went through out-of-line deduplication the recipe still holds
// live references, so they are retired here to keep the reference
// counts equal to a recount over retained recipes.
std::uint64_t drop_expired(MetaStore& meta,
                           const std::vector<ExpiredVersion>& expired) {
  std::map<std::uint64_t, std::uint64_t> first_survivor;
  for (const ExpiredVersion& ev : expired) {
    if (!ev.deduplicated) {
      Recipe recipe = meta.read_recipe(ev.series_id, ev.version);
      std::set<std::uint64_t> referenced;
      for (const RecipeEntry& e : recipe.entries)
        if (e.kind == EntryKind::kDirect) referenced.insert(e.seg_id);
      for (std::uint64_t s : referenced) {
        SegmentMeta sm = meta.segment(s);
        if (sm.ref_count == 0)
          throw IntegrityError("segment " + std::to_string(s) +
                               ": reference count underflow while expiring");
        sm.ref_count -= 1;
        meta.update_segment(sm);
      }
    }
    meta.remove_recipe(ev.series_id, ev.version);
    first_survivor[ev.series_id] = ev.version + 1;
  }
  for (const auto& [series, first] : first_survivor)
    meta.drop_versions_below(series, first);
  return expired.size();
}

// Oldest creation time among all still-retained versions; containers
// stamped strictly earlier can no longer be referenced.
Timestamp retained_floor(Store& store) {
  Timestamp floor = store.peek_timestamp();
  for (std::uint64_t series : store.meta().list_series()) {
    SeriesState st = store.meta().series_state(series);
    if (st.first_retained == st.next_version) continue;  // empty series
    Timestamp oldest = st.version(st.first_retained).created_at;
    if (oldest < floor) floor = oldest;
  }
  return floor;
}

}  // namespace

DeleteResult delete_expired(Store& store, Timestamp before) {
  auto t0 = std::chrono::steady_clock::now();
  std::scoped_lock lock(store.op_mutex());
  MetaStore& meta = store.meta();
  DeleteResult result;

  check_cutoff(meta, before);
  std::vector<ExpiredVersion> expired = find_expired(meta, before);
  for (const ExpiredVersion& ev : expired) {
    if (!ev.deduplicated)
      throw UsageError(
          "series " + std::to_string(ev.series_id) + " version " +
          std::to_string(ev.version) +
          " expired without out-of-line deduplication; run the "
          "deduplication pass first or reclaim with mark-and-sweep");
  }
  if (expired.empty()) return result;

  result.versions_dropped = drop_expired(meta, expired);
  Timestamp floor = retained_floor(store);

  // Containers whose stamp proves every referencing backup is gone.
  std::set<std::uint32_t> doomed;
  for (const ContainerInfo& info : store.containers().list()) {
    if (!info.sealed || info.deleted) continue;
    if (info.timestamp == kUndefinedTimestamp) continue;
    if (info.timestamp >= floor) continue;
    doomed.insert(info.container_id);
    result.payload_bytes_freed += info.payload_bytes;
  }

  // Retire their segment rows.  Stamped containers only ever hold
  // segments that compaction archived, so this is a metadata sweep.
  for (std::uint64_t s = 0; s < meta.segment_count(); ++s) {
    SegmentMeta sm = meta.segment(s);
    if (sm.deleted || doomed.count(sm.container_id) == 0) continue;
    if (!sm.archived || sm.ref_count != 0)
      throw IntegrityError("container " + std::to_string(sm.container_id) +
                           " is timestamped but holds live segment " +
                           std::to_string(s));
    sm.deleted = true;
    meta.update_segment(sm);
    result.segments_deleted += 1;
  }

  for (std::uint32_t id : doomed) {
    store.containers().remove(id);
    result.containers_removed += 1;
  }

  store.flush();
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

SweepResult mark_and_sweep(Store& store, Timestamp before) {
  auto t0 = std::chrono::steady_clock::now();
  std::scoped_lock lock(store.op_mutex());
  MetaStore& meta = store.meta();
  SweepResult result;

  check_cutoff(meta, before);
  result.versions_dropped = drop_expired(meta, find_expired(meta, before));

  // Mark: everything the retained recipes can still reach physically.
  // Redirection chains always end in some retained recipe's physical
  // entry, so scanning physical entries alone covers them.
  std::set<std::uint64_t> keep;
  for (std::uint64_t series : meta.list_series()) {
    SeriesState st = meta.series_state(series);
    for (std::uint64_t v = st.first_retained; v < st.next_version; ++v) {
      Recipe recipe = meta.read_recipe(series, v);
      for (const RecipeEntry& e : recipe.entries)
        if (e.kind == EntryKind::kDirect) keep.insert(e.seg_id);
    }
  }

  // Sweep: every container is read back in full; ones holding
  // unreachable segments are rewritten without them, under the same
  // timestamp, and the originals retired.
  std::vector<ContainerInfo> active = store.containers().list();
  for (const ContainerInfo& info : active) {
    if (!info.sealed || info.deleted) continue;
    LoadedContainer loaded = store.containers().load(info.container_id);
    result.containers_scanned += 1;
    result.payload_bytes_scanned += loaded.payload.size();

    std::vector<ContainerSegment> kept;
    std::vector<ContainerSegment> dropped;
    for (const ContainerSegment& cs : loaded.directory) {
      if (keep.count(cs.seg_id)) {
        kept.push_back(cs);
      } else {
        dropped.push_back(cs);
      }
    }
    if (dropped.empty()) continue;

    if (!kept.empty()) {
      ContainerStore::Builder builder =
          store.containers().builder(info.timestamp);
      for (const ContainerSegment& cs : kept) {
        SegmentMeta sm = meta.segment(cs.seg_id);
        auto placement = builder.add(
            cs.seg_id, std::span<const std::uint8_t>(
                           loaded.payload.data() + cs.offset, cs.length));
        sm.container_id = placement.container_id;
        sm.offset_in_container = placement.offset;
        meta.update_segment(sm);
      }
      builder.seal();
      result.containers_rewritten += 1;
    }
    for (const ContainerSegment& cs : dropped) {
      SegmentMeta sm = meta.segment(cs.seg_id);
      sm.deleted = true;
      meta.update_segment(sm);
      meta.evict_from_index(sm.fp, sm.seg_id);
      result.segments_deleted += 1;
      result.payload_bytes_freed += cs.length;
    }
    store.containers().retire(info.container_id);
    result.containers_removed += 1;
  }

  store.flush();
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

}  // namespace revdedup
