// SPDX-License-Identifier: Apache-2.0

#include "revdedup/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>

#include "revdedup/inline_dedup.hpp"
#include "revdedup/restore.hpp"
#include "revdedup/reverse_dedup.hpp"

namespace revdedup {

ChunkingParams desk_chunking() {
  ChunkingParams p;
  p.chunk_bits = 12;    // 4 KiB average chunks
  p.segment_bits = 18;  // 256 KiB average segments
  return p;
}

std::uint64_t stored_payload_bytes(Store& store) {
  std::uint64_t total = 0;
  for (const ContainerInfo& info : store.containers().list())
    if (info.sealed && !info.deleted) total += info.payload_bytes;
  return total;
}

WorkloadParams workload_from(const BenchConfig& config) {
  WorkloadParams params = WorkloadParams::preset(config.preset);
  params.scale = config.scale;
  if (config.weeks != 0) params.weeks = config.weeks;
  if (config.seed != 0) params.seed = config.seed;
  return params;
}

void write_config_echo(std::ostream& out, const BenchConfig& config) {
  WorkloadParams params = workload_from(config);
  out << "# preset=" << config.preset << " scale=" << params.scale
      << " weeks=" << params.weeks << " series=" << params.series_count
      << " seed=" << params.seed << "\n";
  out << "# chunk_bits=" << config.chunking.chunk_bits
      << " segment_bits=" << config.chunking.segment_bits
      << " container=" << config.container_capacity
      << " live_window=" << config.live_window << "\n";
}

namespace {

// One destination in a timeline run: a store plus the policy used to
// fill it.
struct SinkSpec {
  Store* store = nullptr;
  DedupMode mode = DedupMode::kSegment;
  bool run_jobs = false;
  ChunkingParams chunking;
  std::uint64_t live_window = 1;
  std::uint64_t archival_window = kAllRemaining;
};

bool same_chunking(const ChunkingParams& a, const ChunkingParams& b) {
  return a.chunk_bits == b.chunk_bits && a.segment_bits == b.segment_bits &&
         a.window_size == b.window_size;
}

// Feeds every weekly snapshot of every series to every sink.  Snapshots
// are chunked once per distinct chunking setting, not once per sink.
void run_timeline(
    const WorkloadParams& params, std::vector<SinkSpec>& sinks,
    const std::function<void(std::uint64_t week, std::uint64_t logical)>&
        at_week) {
  std::vector<SeriesGenerator> generators;
  generators.reserve(params.series_count);
  for (std::uint64_t s = 0; s < params.series_count; ++s)
    generators.emplace_back(params, s);

  std::uint64_t logical = 0;
  for (std::uint64_t week = 0; week <= params.weeks; ++week) {
    if (week > 0)
      for (SeriesGenerator& gen : generators) gen.advance_week();
    for (std::uint64_t s = 0; s < params.series_count; ++s) {
      std::vector<std::uint8_t> image = generators[s].snapshot();
      logical += image.size();
      std::vector<bool> done(sinks.size(), false);
      for (std::size_t i = 0; i < sinks.size(); ++i) {
        if (done[i]) continue;
        auto descriptors = chunk_buffer(image, sinks[i].chunking);
        for (std::size_t j = i; j < sinks.size(); ++j) {
          if (done[j] || !same_chunking(sinks[i].chunking, sinks[j].chunking))
            continue;
          BackupConfig bc;
          bc.series_id = s + 1;
          bc.mode = sinks[j].mode;
          bc.live_window = sinks[j].live_window;
          bc.archival_window = sinks[j].archival_window;
          MemoryByteSource source(image);
          backup(*sinks[j].store, bc, source, descriptors);
          if (sinks[j].run_jobs) deduplicate_pending(*sinks[j].store, s + 1);
          done[j] = true;
        }
      }
    }
    if (at_week) at_week(week, logical);
  }
}

// Fresh store under `path`, clearing any previous run's leftovers.
void create_store(Store& store, const std::filesystem::path& path,
                  std::uint64_t container_capacity) {
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path.parent_path());
  StoreOptions opts;
  opts.container_capacity = container_capacity;
  store.create(path, opts);
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<SavingRow> run_saving_bench(const BenchConfig& config) {
  WorkloadParams params = workload_from(config);
  Store chunk_store, segment_store, reverse_store;
  create_store(chunk_store, config.workdir / "saving" / "chunk",
               config.container_capacity);
  create_store(segment_store, config.workdir / "saving" / "segment",
               config.container_capacity);
  create_store(reverse_store, config.workdir / "saving" / "reverse",
               config.container_capacity);

  std::vector<SinkSpec> sinks(3);
  sinks[0] = {&chunk_store, DedupMode::kChunk, false, config.chunking,
              config.live_window, config.archival_window};
  sinks[1] = {&segment_store, DedupMode::kSegment, false, config.chunking,
              config.live_window, config.archival_window};
  sinks[2] = {&reverse_store, DedupMode::kSegment, true, config.chunking,
              config.live_window, config.archival_window};

  std::vector<SavingRow> rows;
  run_timeline(params, sinks, [&](std::uint64_t week, std::uint64_t logical) {
    SavingRow row;
    row.week = week;
    row.logical_bytes = logical;
    row.chunk_stored = stored_payload_bytes(chunk_store);
    row.segment_stored = stored_payload_bytes(segment_store);
    row.reverse_stored = stored_payload_bytes(reverse_store);
    rows.push_back(row);
  });
  return rows;
}

void write_saving_csv(const std::filesystem::path& path,
                      const BenchConfig& config,
                      const std::vector<SavingRow>& rows) {
  std::ofstream out = open_csv(path);
  write_config_echo(out, config);
  out << "# stored payload by policy; saving = 1 - stored/logical\n";
  out << "week,logical_bytes,chunk_stored,segment_stored,reverse_stored,"
         "chunk_saving,segment_saving,reverse_saving\n";
  for (const SavingRow& r : rows) {
    auto saving = [&](std::uint64_t stored) {
      return r.logical_bytes == 0
                 ? 0.0
                 : 1.0 - double(stored) / double(r.logical_bytes);
    };
    out << r.week << ',' << r.logical_bytes << ',' << r.chunk_stored << ','
        << r.segment_stored << ',' << r.reverse_stored << ','
        << fixed6(saving(r.chunk_stored)) << ','
        << fixed6(saving(r.segment_stored)) << ','
        << fixed6(saving(r.reverse_stored)) << "\n";
  }
}

std::vector<FragmentationRow> run_restore_bench(const BenchConfig& config) {
  WorkloadParams params = workload_from(config);
  Store store;
  create_store(store, config.workdir / "restore" / "store",
               config.container_capacity);
  std::vector<SinkSpec> sinks(1);
  sinks[0] = {&store, DedupMode::kSegment, true, config.chunking,
              config.live_window, config.archival_window};
  run_timeline(params, sinks, nullptr);

  std::vector<FragmentationRow> rows;
  for (std::uint64_t s = 0; s < params.series_count; ++s) {
    SeriesState st = store.meta().series_state(s + 1);
    for (std::uint64_t v = st.first_retained; v < st.next_version; ++v) {
      NullSink sink;
      RestoreResult r = restore(store, s + 1, v, sink);
      FragmentationRow row;
      row.series = s + 1;
      row.version = v;
      row.age_weeks = st.next_version - 1 - v;
      row.bytes = r.bytes_emitted;
      row.containers_loaded = r.containers_loaded;
      row.containers_per_gib =
          r.bytes_emitted == 0
              ? 0.0
              : double(r.containers_loaded) * double(1ull << 30) /
                    double(r.bytes_emitted);
      row.seconds = r.elapsed_seconds;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_restore_csv(const std::filesystem::path& path,
                       const BenchConfig& config,
                       const std::vector<FragmentationRow>& rows) {
  std::ofstream out = open_csv(path);
  write_config_echo(out, config);
  out << "# read locality by backup age; age 0 = newest\n";
  out << "series,version,age_weeks,bytes,containers_loaded,containers_per_gib,"
         "seconds\n";
  for (const FragmentationRow& r : rows) {
    out << r.series << ',' << r.version << ',' << r.age_weeks << ',' << r.bytes
        << ',' << r.containers_loaded << ',' << fixed6(r.containers_per_gib)
        << ',' << fixed6(r.seconds) << "\n";
  }
}

DeletionReport run_deletion_bench(const BenchConfig& config) {
  WorkloadParams params = workload_from(config);
  std::uint64_t archival = config.archival_window == kAllRemaining
                               ? 4
                               : config.archival_window;

  Store by_timestamp, by_sweep;
  create_store(by_timestamp, config.workdir / "deletion" / "timestamp",
               config.container_capacity);
  create_store(by_sweep, config.workdir / "deletion" / "sweep",
               config.container_capacity);
  std::vector<SinkSpec> sinks(2);
  sinks[0] = {&by_timestamp, DedupMode::kSegment, true, config.chunking,
              config.live_window, archival};
  sinks[1] = {&by_sweep, DedupMode::kSegment, true, config.chunking,
              config.live_window, archival};
  run_timeline(params, sinks, nullptr);

  DeletionReport report;
  by_timestamp.containers().counters().reset();
  report.timestamp_result = delete_expired(by_timestamp);
  report.timestamp_io = by_timestamp.containers().counters().snapshot();

  by_sweep.containers().counters().reset();
  report.sweep_result = mark_and_sweep(by_sweep);
  report.sweep_io = by_sweep.containers().counters().snapshot();

  report.versions_dropped = report.timestamp_result.versions_dropped;
  report.remaining_timestamp = stored_payload_bytes(by_timestamp);
  report.remaining_sweep = stored_payload_bytes(by_sweep);
  return report;
}

void write_deletion_csv(const std::filesystem::path& path,
                        const BenchConfig& config,
                        const DeletionReport& report) {
  std::ofstream out = open_csv(path);
  write_config_echo(out, config);
  out << "# identical twin stores, one strategy each\n";
  out << "strategy,versions_dropped,payload_bytes_freed,payload_bytes_read,"
         "payload_bytes_written,containers_read,remaining_payload,seconds\n";
  out << "timestamp," << report.timestamp_result.versions_dropped << ','
      << report.timestamp_result.payload_bytes_freed << ','
      << report.timestamp_io.payload_bytes_read << ','
      << report.timestamp_io.payload_bytes_written << ','
      << report.timestamp_io.containers_read << ','
      << report.remaining_timestamp << ','
      << fixed6(report.timestamp_result.elapsed_seconds) << "\n";
  out << "mark_and_sweep," << report.sweep_result.versions_dropped << ','
      << report.sweep_result.payload_bytes_freed << ','
      << report.sweep_io.payload_bytes_read << ','
      << report.sweep_io.payload_bytes_written << ','
      << report.sweep_io.containers_read << ',' << report.remaining_sweep
      << ',' << fixed6(report.sweep_result.elapsed_seconds) << "\n";
}

std::vector<SegmentSweepRow> run_segment_sweep(
    const BenchConfig& config, const std::vector<unsigned>& segment_bits) {
  std::vector<SegmentSweepRow> rows;
  for (unsigned bits : segment_bits) {
    BenchConfig c = config;
    c.chunking.segment_bits = bits;
    c.chunking.validate();
    WorkloadParams params = workload_from(c);
    Store store;
    create_store(store,
                 c.workdir / "segsweep" / ("m" + std::to_string(bits)),
                 c.container_capacity);
    std::vector<SinkSpec> sinks(1);
    sinks[0] = {&store, DedupMode::kSegment, false, c.chunking,
                c.live_window, c.archival_window};
    std::uint64_t logical = 0;
    run_timeline(params, sinks,
                 [&](std::uint64_t, std::uint64_t l) { logical = l; });
    rows.push_back({bits, logical, stored_payload_bytes(store)});
  }
  return rows;
}

void write_segment_sweep_csv(const std::filesystem::path& path,
                             const BenchConfig& config,
                             const std::vector<SegmentSweepRow>& rows) {
  std::ofstream out = open_csv(path);
  write_config_echo(out, config);
  out << "# inline-only saving as segments grow coarser\n";
  out << "segment_bits,avg_segment_bytes,logical_bytes,stored,saving\n";
  for (const SegmentSweepRow& r : rows) {
    double saving = r.logical_bytes == 0
                        ? 0.0
                        : 1.0 - double(r.stored) / double(r.logical_bytes);
    out << r.segment_bits << ',' << (1ull << r.segment_bits) << ','
        << r.logical_bytes << ',' << r.stored << ',' << fixed6(saving)
        << "\n";
  }
}

std::vector<LiveWindowRow> run_live_window_sweep(
    const BenchConfig& config, const std::vector<std::uint64_t>& windows) {
  std::vector<LiveWindowRow> rows;
  for (std::uint64_t live : windows) {
    BenchConfig c = config;
    c.live_window = live;
    WorkloadParams params = workload_from(c);
    Store store;
    create_store(store,
                 c.workdir / "livesweep" / ("w" + std::to_string(live)),
                 c.container_capacity);
    std::vector<SinkSpec> sinks(1);
    sinks[0] = {&store, DedupMode::kSegment, true, c.chunking, live,
                c.archival_window};
    run_timeline(params, sinks, nullptr);
    rows.push_back({live, stored_payload_bytes(store)});
  }
  return rows;
}

void write_live_window_csv(const std::filesystem::path& path,
                           const BenchConfig& config,
                           const std::vector<LiveWindowRow>& rows) {
  std::ofstream out = open_csv(path);
  write_config_echo(out, config);
  out << "# stored payload as the un-deduplicated window grows\n";
  out << "live_window,stored\n";
  for (const LiveWindowRow& r : rows)
    out << r.live_window << ',' << r.stored << "\n";
}

}  // namespace revdedup
