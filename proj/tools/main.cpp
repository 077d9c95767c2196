// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface.  One subcommand per pipeline stage:
//
//   gen        synthesize a weekly backup series to image files
//   chunk      chunk a file into a descriptor listing
//   backup     ingest a backup (inline dedup) into a store
//   revdedup   run the out-of-line deduplication job(s) for a series
//   restore    materialize a backup to a file
//   delete     reclaim expired backups (timestamp or mark-and-sweep)
//   stats      store summary as CSV
//   bench      measurement experiments, reports written as CSV
//
// Results print as `key=value` lines on stdout, one fact per line, so
// scripts can grep instead of parse.  Errors map to exit codes:
// 1 usage, 2 store integrity, 3 I/O.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "revdedup/bench.hpp"
#include "revdedup/chunker.hpp"
#include "revdedup/inline_dedup.hpp"
#include "revdedup/reclaim.hpp"
#include "revdedup/restore.hpp"
#include "revdedup/reverse_dedup.hpp"
#include "revdedup/workload.hpp"

namespace fs = std::filesystem;
using namespace revdedup;

namespace {

// "1/64" or "64" -> 64.  The scale is the reduction divisor k.
std::uint64_t parse_scale(const std::string& text) {
  std::string body = text;
  if (body.rfind("1/", 0) == 0) body = body.substr(2);
  std::uint64_t k = 0;
  try {
    std::size_t used = 0;
    k = std::stoull(body, &used);
    if (used != body.size()) k = 0;
  } catch (const std::exception&) {
    k = 0;
  }
  if (k == 0) throw UsageError("bad scale '" + text + "', want k or 1/k");
  return k;
}

void print_kv(const char* key, std::uint64_t value) {
  std::cout << key << '=' << value << '\n';
}

void print_kv(const char* key, const std::string& value) {
  std::cout << key << '=' << value << '\n';
}

void print_kv(const char* key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  std::cout << key << '=' << buf << '\n';
}

// --- gen -----------------------------------------------------------------

struct GenArgs {
  std::string dataset = "sg1";
  std::string scale = "1/64";
  std::uint64_t weeks = 0;  // 0 = preset default
  std::uint64_t series_index = 0;
  std::uint64_t seed = 0;  // 0 = preset default
  fs::path out = "dataset";
};

int cmd_gen(const GenArgs& args) {
  WorkloadParams params = WorkloadParams::preset(args.dataset);
  params.scale = parse_scale(args.scale);
  if (args.weeks != 0) params.weeks = args.weeks;
  if (args.seed != 0) params.seed = args.seed;
  if (args.series_index >= params.series_count)
    throw UsageError("series index " + std::to_string(args.series_index) +
                     " out of range; dataset has " +
                     std::to_string(params.series_count) + " series");

  fs::create_directories(args.out);
  std::ofstream manifest(args.out / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (args.out / "manifest.csv").string());
  manifest << "week,size,digest\n";

  SeriesGenerator gen(params, args.series_index);
  std::uint64_t total = 0;
  for (std::uint64_t week = 0; week <= params.weeks; ++week) {
    if (week > 0) gen.advance_week();
    std::vector<std::uint8_t> image = gen.snapshot();
    fs::path file = args.out / ("week" + std::to_string(week) + ".img");
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(image.data()),
              static_cast<std::streamsize>(image.size()));
    if (!out) throw IoError("short write to " + file.string());
    manifest << week << ',' << image.size() << ',' << sha1(image).hex()
             << '\n';
    total += image.size();
  }
  print_kv("weeks", params.weeks + 1);
  print_kv("bytes", total);
  print_kv("manifest", (args.out / "manifest.csv").string());
  return 0;
}

// --- chunk ---------------------------------------------------------------

struct ChunkArgs {
  fs::path input;
  fs::path out;
  ChunkingParams params = desk_chunking();
};

int cmd_chunk(const ChunkArgs& args) {
  args.params.validate();
  std::vector<SegmentDescriptor> segments = chunk_file(args.input, args.params);
  write_descriptor_file(args.out, segments);
  std::uint64_t chunks = 0, bytes = 0;
  for (const SegmentDescriptor& s : segments) {
    chunks += s.chunks.size();
    bytes += s.length;
  }
  print_kv("segments", segments.size());
  print_kv("chunks", chunks);
  print_kv("bytes", bytes);
  print_kv("descriptors", args.out.string());
  return 0;
}

// --- backup --------------------------------------------------------------

struct BackupArgs {
  std::uint64_t series = 1;
  fs::path input;
  fs::path descriptors;  // empty = chunk inline
  std::string mode = "segment";
  std::uint64_t live_window = 1;
  std::uint64_t archival_window = 0;  // 0 = keep all remaining
  std::uint64_t container_mib = 32;
  ChunkingParams params = desk_chunking();
};

int cmd_backup(Store& store, const BackupArgs& args, bool overlap) {
  args.params.validate();
  std::vector<SegmentDescriptor> segments =
      args.descriptors.empty() ? chunk_file(args.input, args.params)
                               : read_descriptor_file(args.descriptors);

  BackupConfig config;
  config.series_id = args.series;
  config.mode = args.mode == "conv" ? DedupMode::kChunk : DedupMode::kSegment;
  config.live_window = static_cast<std::uint32_t>(args.live_window);
  config.archival_window =
      args.archival_window == 0
          ? kAllRemaining
          : static_cast<std::uint32_t>(args.archival_window);
  config.overlap_read = overlap;

  FileByteSource source(args.input);
  BackupResult r = backup(store, config, source, segments);
  print_kv("version", r.version);
  print_kv("created_at", r.created_at);
  print_kv("original_bytes", r.original_size);
  print_kv("bytes_written", r.payload_bytes_written);
  print_kv("duplicate_bytes", r.duplicate_bytes);
  print_kv("null_bytes", r.null_bytes);
  print_kv("elapsed_seconds", r.elapsed_seconds);
  return 0;
}

// --- revdedup ------------------------------------------------------------

int cmd_revdedup(Store& store, std::uint64_t series,
                 std::optional<std::uint64_t> version) {
  std::vector<ReverseJobResult> jobs;
  auto before = store.containers().counters().snapshot();
  if (version) {
    jobs.push_back(reverse_deduplicate(store, series, *version));
  } else {
    jobs = deduplicate_pending(store, series);
  }
  auto after = store.containers().counters().snapshot();

  std::uint64_t reclaimed = 0;
  double elapsed = 0;
  for (const ReverseJobResult& job : jobs) {
    reclaimed += job.bytes_removed;
    elapsed += job.elapsed_seconds;
  }
  print_kv("jobs", jobs.size());
  if (!jobs.empty()) {
    print_kv("first_version", jobs.front().version);
    print_kv("last_version", jobs.back().version);
  }
  print_kv("containers_loaded", after.containers_read - before.containers_read);
  print_kv("bytes_reclaimed", reclaimed);
  print_kv("elapsed_seconds", elapsed);
  return 0;
}

// --- restore ---------------------------------------------------------------

int cmd_restore(Store& store, std::uint64_t series, std::uint64_t version,
                const fs::path& output, const RestoreOptions& options) {
  FileSink sink(output);
  RestoreResult r = restore(store, series, version, sink, options);
  sink.close();
  print_kv("digest", r.digest.hex());
  print_kv("bytes", r.bytes_emitted);
  print_kv("containers_read", r.containers_loaded);
  print_kv("payload_bytes_read", r.payload_bytes_read);
  print_kv("elapsed_seconds", r.elapsed_seconds);
  return 0;
}

// --- delete ----------------------------------------------------------------

int cmd_delete(Store& store, const std::string& strategy, Timestamp before) {
  auto io0 = store.containers().counters().snapshot();
  if (strategy == "revdedup") {
    DeleteResult r = delete_expired(store, before);
    auto io1 = store.containers().counters().snapshot();
    print_kv("strategy", strategy);
    print_kv("versions_dropped", r.versions_dropped);
    print_kv("containers_deleted", r.containers_removed);
    print_kv("containers_read", io1.containers_read - io0.containers_read);
    print_kv("payload_bytes_read",
             io1.payload_bytes_read - io0.payload_bytes_read);
    print_kv("bytes_reclaimed", r.payload_bytes_freed);
    print_kv("elapsed_seconds", r.elapsed_seconds);
  } else {
    SweepResult r = mark_and_sweep(store, before);
    auto io1 = store.containers().counters().snapshot();
    print_kv("strategy", strategy);
    print_kv("versions_dropped", r.versions_dropped);
    print_kv("containers_deleted", r.containers_removed);
    print_kv("containers_read", io1.containers_read - io0.containers_read);
    print_kv("payload_bytes_read",
             io1.payload_bytes_read - io0.payload_bytes_read);
    print_kv("containers_rewritten", r.containers_rewritten);
    print_kv("bytes_reclaimed", r.payload_bytes_freed);
    print_kv("elapsed_seconds", r.elapsed_seconds);
  }
  return 0;
}

// --- stats -----------------------------------------------------------------

int cmd_stats(Store& store) {
  MetaStore& meta = store.meta();
  std::cout << "# store=" << store.root().string() << "\n";
  std::cout << "series,first_retained,next_version,live_window,"
               "archival_window,live,archival,expired,deduplicated,"
               "logical_bytes\n";
  std::uint64_t logical = 0;
  for (std::uint64_t series : meta.list_series()) {
    SeriesState st = meta.series_state(series);
    std::uint64_t live = 0, archival = 0, expired = 0, dedup = 0,
                  series_logical = 0;
    for (std::uint64_t v = st.first_retained; v < st.next_version; ++v) {
      switch (st.classify(v)) {
        case WindowKind::kLive: live += 1; break;
        case WindowKind::kArchival: archival += 1; break;
        case WindowKind::kExpired: expired += 1; break;
      }
      if (st.version(v).deduplicated) dedup += 1;
      series_logical += meta.recipe_info(series, v).original_size;
    }
    logical += series_logical;
    std::cout << series << ',' << st.first_retained << ',' << st.next_version
              << ',' << st.live_window << ','
              << (st.archival_window == kAllRemaining
                      ? std::string("all")
                      : std::to_string(st.archival_window))
              << ',' << live << ',' << archival << ',' << expired << ','
              << dedup << ',' << series_logical << "\n";
  }

  std::uint64_t active = 0, stamped = 0;
  std::uint64_t stored = stored_payload_bytes(store);
  for (const ContainerInfo& info : store.containers().list()) {
    if (!info.sealed || info.deleted) continue;
    active += 1;
    if (info.timestamp != kUndefinedTimestamp) stamped += 1;
  }
  std::cout << "# totals\n";
  std::cout << "containers_active," << active << "\n";
  std::cout << "containers_stamped," << stamped << "\n";
  std::cout << "segments," << meta.segment_count() << "\n";
  std::cout << "logical_bytes," << logical << "\n";
  std::cout << "stored_payload," << stored << "\n";
  double saving = logical == 0 ? 0.0 : 1.0 - double(stored) / double(logical);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", saving);
  std::cout << "saving," << buf << "\n";

  auto io = store.containers().counters().snapshot();
  std::cout << "# io_counters\n";
  std::cout << "containers_written," << io.containers_written << "\n";
  std::cout << "containers_read," << io.containers_read << "\n";
  std::cout << "payload_bytes_written," << io.payload_bytes_written << "\n";
  std::cout << "payload_bytes_read," << io.payload_bytes_read << "\n";
  return 0;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string experiment = "all";
  std::string dataset = "sg1";
  std::string scale = "1/64";
  std::uint64_t weeks = 0;
  std::uint64_t seed = 0;
  std::uint64_t live_window = 1;
  std::uint64_t container_mib = 2;
  ChunkingParams params = desk_chunking();
  fs::path out = "bench";
};

void bench_storage(const BenchConfig& config, const fs::path& out) {
  std::vector<SavingRow> weekly = run_saving_bench(config);
  write_saving_csv(out / "saving_weekly.csv", config, weekly);
  print_kv("report", (out / "saving_weekly.csv").string());

  unsigned m = config.chunking.segment_bits;
  std::vector<unsigned> sweep = {m - 2, m, m + 1};
  std::vector<SegmentSweepRow> rows = run_segment_sweep(config, sweep);
  write_segment_sweep_csv(out / "segment_sweep.csv", config, rows);
  print_kv("report", (out / "segment_sweep.csv").string());

  // Combined view: saving per dedup policy and granularity.
  const SavingRow& last = weekly.back();
  auto saving = [&](std::uint64_t stored) {
    return 1.0 - double(stored) / double(last.logical_bytes);
  };
  std::ofstream combined(out / "storage.csv", std::ios::trunc);
  write_config_echo(combined, config);
  combined << "mode,segment_bits,saving\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", saving(last.chunk_stored));
  combined << "conv," << config.chunking.chunk_bits << ',' << buf << "\n";
  for (const SegmentSweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f",
                  1.0 - double(r.stored) / double(r.logical_bytes));
    combined << "inline," << r.segment_bits << ',' << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "%.6f", saving(last.reverse_stored));
  combined << "reverse," << m << ',' << buf << "\n";
  print_kv("report", (out / "storage.csv").string());
  print_kv("saving_conv", saving(last.chunk_stored));
  print_kv("saving_inline", saving(last.segment_stored));
  print_kv("saving_reverse", saving(last.reverse_stored));
}

void bench_restore_frag(const BenchConfig& config, const fs::path& out) {
  std::vector<FragmentationRow> rows = run_restore_bench(config);
  write_restore_csv(out / "restore_frag.csv", config, rows);
  print_kv("report", (out / "restore_frag.csv").string());
  if (!rows.empty()) {
    print_kv("containers_oldest", rows.front().containers_loaded);
    print_kv("containers_newest", rows.back().containers_loaded);
  }
}

void bench_delete(const BenchConfig& config, const fs::path& out) {
  DeletionReport report = run_deletion_bench(config);
  write_deletion_csv(out / "deletion.csv", config, report);
  print_kv("report", (out / "deletion.csv").string());
  print_kv("versions_dropped", report.versions_dropped);
  print_kv("timestamp_payload_read", report.timestamp_io.payload_bytes_read);
  print_kv("sweep_payload_read", report.sweep_io.payload_bytes_read);
  print_kv("timestamp_freed", report.timestamp_result.payload_bytes_freed);
  print_kv("sweep_freed", report.sweep_result.payload_bytes_freed);
}

void bench_window_sweep(const BenchConfig& config, const fs::path& out) {
  std::vector<std::uint64_t> windows = {1, 3, 5};
  std::vector<LiveWindowRow> rows = run_live_window_sweep(config, windows);
  write_live_window_csv(out / "live_window.csv", config, rows);
  print_kv("report", (out / "live_window.csv").string());
  for (const LiveWindowRow& r : rows)
    print_kv(("stored_w" + std::to_string(r.live_window)).c_str(), r.stored);
}

int cmd_bench(const BenchArgs& args) {
  args.params.validate();
  BenchConfig config;
  config.preset = args.dataset;
  config.scale = parse_scale(args.scale);
  config.weeks = args.weeks;
  config.seed = args.seed;
  config.live_window = args.live_window;
  config.container_capacity = args.container_mib << 20;
  config.chunking = args.params;
  config.workdir = args.out / "work";
  fs::create_directories(args.out);

  bool all = args.experiment == "all";
  if (all || args.experiment == "storage") bench_storage(config, args.out);
  if (all || args.experiment == "restore-frag")
    bench_restore_frag(config, args.out);
  if (all || args.experiment == "delete") bench_delete(config, args.out);
  if (all || args.experiment == "window-sweep")
    bench_window_sweep(config, args.out);
  fs::remove_all(config.workdir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deduplicating backup store"};
  app.require_subcommand(1);

  std::string store_path = "store";
  std::uint64_t threads = 2;
  std::uint64_t seed = 0;
  app.add_option("--store", store_path, "store directory")
      ->capture_default_str();
  app.add_option("--threads", threads,
                 "worker threads (1 disables read/write overlap)")
      ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{256}))
      ->capture_default_str();
  app.add_option("--seed", seed, "workload seed override (0 = preset)")
      ->capture_default_str();

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "synthesize a backup series");
  gen->add_option("--dataset", gen_args.dataset, "sg1..sg5 or gp")
      ->capture_default_str();
  gen->add_option("--scale", gen_args.scale, "reduction divisor k or 1/k")
      ->capture_default_str();
  gen->add_option("--weeks", gen_args.weeks, "weeks to simulate (0 = preset)");
  gen->add_option("--series-index", gen_args.series_index,
                  "which series of a multi-client dataset");
  gen->add_option("--out", gen_args.out, "output directory")
      ->capture_default_str();

  ChunkArgs chunk_args;
  CLI::App* chunk = app.add_subcommand("chunk", "write a descriptor listing");
  chunk->add_option("--input", chunk_args.input, "file to chunk")
      ->required()
      ->check(CLI::ExistingFile);
  chunk->add_option("--out", chunk_args.out, "descriptor file")->required();
  chunk->add_option("--chunk-bits", chunk_args.params.chunk_bits,
                    "average chunk size exponent")
      ->capture_default_str();
  chunk->add_option("--segment-bits", chunk_args.params.segment_bits,
                    "average segment size exponent")
      ->capture_default_str();

  BackupArgs backup_args;
  CLI::App* bak = app.add_subcommand("backup", "ingest one backup");
  bak->add_option("--series", backup_args.series, "series id")
      ->capture_default_str();
  bak->add_option("--input", backup_args.input, "file to back up")
      ->required()
      ->check(CLI::ExistingFile);
  bak->add_option("--descriptors", backup_args.descriptors,
                  "precomputed descriptor file (default: chunk now)")
      ->check(CLI::ExistingFile);
  bak->add_option("--mode", backup_args.mode, "segment or conv")
      ->check(CLI::IsMember({"segment", "conv"}))
      ->capture_default_str();
  bak->add_option("--live-window", backup_args.live_window,
                  "live versions kept un-deduplicated (new series only)")
      ->capture_default_str();
  bak->add_option("--archival-window", backup_args.archival_window,
                  "versions kept past live before expiry; 0 keeps all")
      ->capture_default_str();
  bak->add_option("--container-mib", backup_args.container_mib,
                  "container capacity when creating the store")
      ->capture_default_str();
  bak->add_option("--chunk-bits", backup_args.params.chunk_bits,
                  "average chunk size exponent")
      ->capture_default_str();
  bak->add_option("--segment-bits", backup_args.params.segment_bits,
                  "average segment size exponent")
      ->capture_default_str();

  std::uint64_t rd_series = 1;
  std::optional<std::uint64_t> rd_version;
  CLI::App* rev = app.add_subcommand("revdedup", "out-of-line deduplication");
  rev->add_option("--series", rd_series, "series id")->capture_default_str();
  rev->add_option("--version", rd_version,
                  "single version (default: drain the backlog)");

  std::uint64_t rs_series = 1, rs_version = 0;
  fs::path rs_output;
  RestoreOptions rs_options;
  CLI::App* res = app.add_subcommand("restore", "materialize a backup");
  res->add_option("--series", rs_series, "series id")->capture_default_str();
  res->add_option("--version", rs_version, "version to restore")->required();
  res->add_option("--output", rs_output, "output file")->required();
  res->add_flag("--prefetch,!--no-prefetch", rs_options.prefetch,
                "overlap container reads with writeback")
      ->capture_default_str();

  std::string del_strategy = "revdedup";
  Timestamp del_before = kNoCutoff;
  CLI::App* del = app.add_subcommand("delete", "reclaim expired backups");
  del->add_option("--strategy", del_strategy, "revdedup or marksweep")
      ->check(CLI::IsMember({"revdedup", "marksweep"}))
      ->capture_default_str();
  del->add_option("--before", del_before,
                  "only versions created before this timestamp");

  CLI::App* stats = app.add_subcommand("stats", "store summary as CSV");

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "measurement experiments");
  bench
      ->add_option("experiment", bench_args.experiment,
                   "storage, restore-frag, delete, window-sweep or all")
      ->check(CLI::IsMember(
          {"storage", "restore-frag", "delete", "window-sweep", "all"}))
      ->capture_default_str();
  bench->add_option("--dataset", bench_args.dataset, "sg1..sg5 or gp")
      ->capture_default_str();
  bench->add_option("--scale", bench_args.scale, "reduction divisor k or 1/k")
      ->capture_default_str();
  bench->add_option("--weeks", bench_args.weeks, "weeks (0 = preset)");
  bench->add_option("--live-window", bench_args.live_window, "live window")
      ->capture_default_str();
  bench->add_option("--container-mib", bench_args.container_mib,
                    "container capacity")
      ->capture_default_str();
  bench->add_option("--chunk-bits", bench_args.params.chunk_bits,
                    "average chunk size exponent")
      ->capture_default_str();
  bench->add_option("--segment-bits", bench_args.params.segment_bits,
                    "average segment size exponent")
      ->capture_default_str();
  bench->add_option("--out", bench_args.out, "report directory")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      gen_args.seed = seed;
      return cmd_gen(gen_args);
    }
    if (chunk->parsed()) return cmd_chunk(chunk_args);
    if (bak->parsed()) {
      Store store;
      if (fs::exists(fs::path(store_path) / "store.meta")) {
        store.open(store_path);
      } else {
        StoreOptions opts;
        opts.container_capacity = backup_args.container_mib << 20;
        store.create(store_path, opts);
      }
      return cmd_backup(store, backup_args, threads > 1);
    }
    if (rev->parsed()) {
      Store store;
      store.open(store_path);
      return cmd_revdedup(store, rd_series, rd_version);
    }
    if (res->parsed()) {
      Store store;
      store.open(store_path);
      return cmd_restore(store, rs_series, rs_version, rs_output, rs_options);
    }
    if (del->parsed()) {
      Store store;
      store.open(store_path);
      return cmd_delete(store, del_strategy, del_before);
    }
    if (stats->parsed()) {
      Store store;
      store.open(store_path);
      return cmd_stats(store);
    }
    if (bench->parsed()) {
      bench_args.seed = seed;
      return cmd_bench(bench_args);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
