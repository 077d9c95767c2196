// SPDX-License-Identifier: Apache-2.0

#include "revdedup/reverse_dedup.hpp"

#include <chrono>
#include <map>
#include <mutex>
#include <set>
#include <unordered_map>

namespace revdedup {

namespace {

// Physical target of one of the next version's entries.
struct Target {
  std::uint32_t entry = 0;
  std::uint32_t length = 0;
};

using ChunkIndex = std::unordered_map<Fingerprint, Target, FingerprintHash>;

// Fingerprint -> first entry of `next` that carries the chunk.  Only
// physical entries participate; null and already-redirected entries of
// the next version cannot anchor anyone else's bytes.
ChunkIndex build_next_index(MetaStore& meta, const Recipe& next) {
  ChunkIndex index;
  for (std::uint32_t j = 0; j < next.entries.size(); ++j) {
    const RecipeEntry& e = next.entries[j];
    if (e.kind != EntryKind::kDirect) continue;
    ChunkMeta c = meta.chunk(meta.segment(e.seg_id), e.chunk_index);
    index.emplace(c.fp, Target{j, e.length});
  }
  return index;
}

}  // namespace

CompactedSegment compact_segment(const SegmentMeta& seg,
                                 std::span<const ChunkMeta> chunks,
                                 std::span<const std::uint8_t> payload) {
  if (chunks.size() != seg.chunk_count)
    throw IntegrityError("segment " + std::to_string(seg.seg_id) +
                         ": chunk row count mismatch");
  CompactedSegment out;
  out.chunks.assign(chunks.begin(), chunks.end());
  for (ChunkMeta& c : out.chunks) {
    if (c.removed) continue;
    if (std::uint64_t(c.offset_in_segment) + c.length > payload.size())
      throw IntegrityError("segment " + std::to_string(seg.seg_id) +
                           ": chunk extends past stored payload");
    std::uint32_t new_offset = static_cast<std::uint32_t>(out.payload.size());
    out.payload.insert(out.payload.end(),
                       payload.begin() + c.offset_in_segment,
                       payload.begin() + c.offset_in_segment + c.length);
    c.offset_in_segment = new_offset;
  }
  return out;
}

ReverseJobResult reverse_deduplicate(Store& store, std::uint64_t series_id,
                                     std::uint64_t version) {
  auto t0 = std::chrono::steady_clock::now();
  std::scoped_lock lock(store.op_mutex());
  MetaStore& meta = store.meta();

  SeriesState st = meta.series_state(series_id);
  if (version + 1 >= st.next_version)
    throw UsageError("series " + std::to_string(series_id) + " version " +
                     std::to_string(version) +
                     ": no newer backup to deduplicate against");
  VersionState vs = st.version(version);
  if (vs.deduplicated)
    throw UsageError("version " + std::to_string(version) +
                     " is already deduplicated");
  if (st.classify(version) == WindowKind::kLive)
    throw UsageError("version " + std::to_string(version) +
                     " is still inside the live window");

  Recipe recipe = meta.read_recipe(series_id, version);
  Recipe next = meta.read_recipe(series_id, version + 1);

  ReverseJobResult result;
  result.series_id = series_id;
  result.version = version;

  // Validate before mutating: an un-deduplicated recipe holds only
  // physical and null entries.
  std::set<std::uint64_t> referenced;
  for (const RecipeEntry& e : recipe.entries) {
    if (e.kind == EntryKind::kIndirect)
      throw IntegrityError("version " + std::to_string(version) +
                           " already contains redirections");
    if (e.kind == EntryKind::kDirect) referenced.insert(e.seg_id);
  }

  // 1. Retire this backup's reference on every segment it uses.  A
  // count that reaches zero proves no other un-deduplicated backup can
  // reach the segment directly, which is what licenses removal below.
  std::set<std::uint64_t> unshared;
  for (std::uint64_t s : referenced) {
    SegmentMeta sm = meta.segment(s);
    if (sm.ref_count == 0)
      throw IntegrityError("segment " + std::to_string(s) +
                           ": reference count underflow");
    sm.ref_count -= 1;
    meta.update_segment(sm);
    if (sm.ref_count == 0) unshared.insert(s);
  }

  // 2. What the next version holds, by chunk content.
  ChunkIndex index = build_next_index(meta, next);

  // 3. Rewrite this version's entries and collect physical removals.
  std::map<std::uint64_t, std::set<std::uint32_t>> removals;
  for (std::uint32_t i = 0; i < recipe.entries.size(); ++i) {
    const RecipeEntry& e = recipe.entries[i];
    if (e.kind != EntryKind::kDirect) continue;
    bool shared = unshared.count(e.seg_id) == 0;
    ChunkMeta c = meta.chunk(meta.segment(e.seg_id), e.chunk_index);
    if (!shared && c.null) {
      meta.mutate_entry(series_id, version, i, RecipeEntry::null(e.length));
      removals[e.seg_id].insert(e.chunk_index);
      result.entries_nulled += 1;
      continue;
    }
    auto it = index.find(c.fp);
    if (it == index.end()) continue;  // stays physical
    if (it->second.length != e.length)
      throw IntegrityError("chunk fingerprint matches across different "
                           "lengths; refusing to redirect");
    meta.mutate_entry(series_id, version, i,
                      RecipeEntry::indirect(it->second.entry, e.length));
    result.entries_redirected += 1;
    if (!shared) removals[e.seg_id].insert(e.chunk_index);
  }

  for (const auto& [s, chunk_ids] : removals) {
    SegmentMeta sm = meta.segment(s);
    for (std::uint32_t ci : chunk_ids) {
      ChunkMeta c = meta.chunk(sm, ci);
      if (c.removed) continue;
      c.removed = true;
      meta.update_chunk(sm, ci, c);
      result.chunks_removed += 1;
      result.bytes_removed += c.length;
    }
  }

  // 4. Repack every container that now holds an unshared segment.
  std::set<std::uint32_t> selected;
  for (std::uint64_t s : unshared) selected.insert(meta.segment(s).container_id);

  std::uint32_t first_new_id = store.containers().container_count();
  {
    ContainerStore::Builder stamped = store.containers().builder(vs.created_at);
    ContainerStore::Builder unstamped =
        store.containers().builder(kUndefinedTimestamp);

    for (std::uint32_t cid : selected) {
      ContainerInfo info = store.containers().info(cid);
      if (info.timestamp != kUndefinedTimestamp)
        throw IntegrityError("container " + std::to_string(cid) +
                             " was already timestamped; unshared segments "
                             "cannot live there");
      LoadedContainer loaded = store.containers().load(cid);
      for (const ContainerSegment& cs : loaded.directory) {
        SegmentMeta sm = meta.segment(cs.seg_id);
        if (sm.deleted)
          throw IntegrityError("container " + std::to_string(cid) +
                               " still holds deleted segment " +
                               std::to_string(cs.seg_id));
        std::span<const std::uint8_t> bytes(loaded.payload.data() + cs.offset,
                                            cs.length);
        if (sm.ref_count > 0) {
          // Still shared with newer backups: move whole, stay unstamped.
          auto placement = unstamped.add(cs.seg_id, bytes);
          sm.container_id = placement.container_id;
          sm.offset_in_container = placement.offset;
          meta.update_segment(sm);
          result.segments_relocated += 1;
          continue;
        }
        // Exclusively owned by deduplicated history now: squeeze out the
        // removed chunks and retire the fingerprint from inline dedup.
        CompactedSegment comp =
            compact_segment(sm, meta.chunks(sm), bytes);
        for (std::uint32_t ci = 0; ci < comp.chunks.size(); ++ci)
          meta.update_chunk(sm, ci, comp.chunks[ci]);
        meta.evict_from_index(sm.fp, sm.seg_id);
        sm.archived = true;
        if (comp.payload.empty()) {
          sm.deleted = true;
          sm.stored_length = 0;
          result.segments_dropped += 1;
        } else {
          auto placement = stamped.add(cs.seg_id, comp.payload);
          sm.container_id = placement.container_id;
          sm.offset_in_container = placement.offset;
          sm.stored_length = static_cast<std::uint32_t>(comp.payload.size());
          result.segments_compacted += 1;
        }
        meta.update_segment(sm);
      }
    }
    stamped.seal();
    unstamped.seal();
  }

  for (std::uint32_t id = first_new_id; id < store.containers().container_count();
       ++id) {
    if (store.containers().info(id).timestamp == kUndefinedTimestamp)
      result.containers_unstamped += 1;
    else
      result.containers_stamped += 1;
  }

  // 5. Only now drop the originals; every surviving byte already lives
  // in its new home.
  for (std::uint32_t cid : selected) {
    store.containers().retire(cid);
    result.containers_retired += 1;
  }

  meta.mark_deduplicated(series_id, version);
  store.flush();

  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

std::optional<std::uint64_t> next_pending(Store& store,
                                          std::uint64_t series_id) {
  SeriesState st = store.meta().series_state(series_id);
  for (std::uint64_t v = st.first_retained; v + 1 < st.next_version; ++v) {
    if (st.version(v).deduplicated) continue;
    if (st.classify(v) == WindowKind::kLive) break;  // newer ones are too
    return v;
  }
  return std::nullopt;
}

std::vector<ReverseJobResult> deduplicate_pending(Store& store,
                                                  std::uint64_t series_id) {
  std::vector<ReverseJobResult> results;
  while (auto v = next_pending(store, series_id))
    results.push_back(reverse_deduplicate(store, series_id, *v));
  return results;
}

}  // namespace revdedup
