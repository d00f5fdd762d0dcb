#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avm/ingest.hpp"

namespace avm::store {

struct ManifestEntry {
  Date date;
  std::string file;  // relative to the store directory
  std::size_t record_count = 0;
  std::string checksum;
};

struct SeenRange {
  Date first_seen;
  Date last_seen;
  std::uint64_t content_hash = 0;  // of the version at last_seen, snapshot_date excluded
  bool operator==(const SeenRange&) const = default;
};

struct IngestSummary {
  std::size_t added = 0;
  std::size_t duplicates = 0;  // id known, content unchanged
  std::size_t updated = 0;     // id known, content changed
  IngestSummary& operator+=(const IngestSummary& o) {
    added += o.added;
    duplicates += o.duplicates;
    updated += o.updated;
    return *this;
  }
};

enum class Direction { TooHigh, TooLow, AboutRight };
enum class ReasonCode { Condition, View, Noise, Renovation, Other };
std::string_view to_string(Direction d);
std::string_view to_string(ReasonCode r);

inline constexpr std::size_t kMaxFreeTextChars = 1000;

struct FeedbackRecord {
  std::string timestamp;  // ISO-8601 UTC
  nlohmann::json query_echo = nlohmann::json::object();
  double estimate_chf = 0;
  Direction direction = Direction::AboutRight;
  std::optional<ReasonCode> reason;
  std::optional<std::string> free_text;
};

/// Throws DomainError listing every bad field ("field: reason; ...").
FeedbackRecord feedback_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeedbackRecord& f);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

/// FNV-1a 64-bit digest, hex encoded with an "fnv1a64:" prefix.
std::string checksum_of(std::string_view bytes);

/// Append-only directory of daily JSON Lines snapshots:
///
///   <dir>/manifest.json            {"snapshots": [{date, file, record_count, checksum}]}
///   <dir>/snapshots/YYYY-MM-DD.jsonl
///   <dir>/feedback.jsonl
///
/// Snapshot files are never rewritten once listed in the manifest. One
/// writer at a time; readers may run concurrently with each other.
class SnapshotStore {
 public:
  /// Opens (creating if needed) the store at `dir`, verifies every checksum
  /// and rebuilds the dedup index. Throws IoError on a checksum mismatch.
  explicit SnapshotStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  /// Every listing must carry `date` as its snapshot_date and ids must be
  /// unique within the batch (DomainError otherwise). Re-appending a date
  /// with identical content is a no-op that reports every row as a
  /// duplicate; different content for a finalized date is a ConflictError.
  IngestSummary append_snapshot(const Date& date, std::span<const CleanListing> listings);

  /// Latest version of each listing_id among records whose snapshot_date is
  /// in `period`, filtered by zip (empty = all) and offer kind. Ordered by
  /// the snapshot in which that version appears, then file line.
  std::vector<CleanListing> query_listings(const Period& period, const std::set<int>& zips = {},
                                           std::optional<OfferKind> kind = std::nullopt) const;

  /// Streams the query_listings result without materializing it. Returns
  /// the number of records written. CSV output always has a header row.
  std::size_t export_clean(std::ostream& out, const Period& period, std::optional<OfferKind> kind,
                           ingest::Format format) const;

  std::vector<ManifestEntry> manifest() const;
  std::map<std::string, SeenRange> dedup_index() const;
  /// Re-hashes every snapshot file against the manifest.
  bool verify() const;

  void append_feedback(const FeedbackRecord& f);
  std::vector<FeedbackRecord> feedback_log() const;

 private:
  struct Pick {
    std::size_t file = 0;
    std::size_t line = 0;
  };
  using Visitor = std::function<void(std::size_t file, std::size_t line, const CleanListing&)>;

  void scan_locked(const Visitor& visit) const;
  std::map<std::string, Pick> pick_latest_locked(const Period& period, const std::set<int>& zips,
                                                 std::optional<OfferKind> kind) const;
  void write_manifest_locked() const;
  void index_record_locked(const Date& date, const CleanListing& l, IngestSummary* summary);

  std::filesystem::path dir_;
  std::map<Date, ManifestEntry> manifest_;
  std::map<std::string, SeenRange> index_;
  mutable std::shared_mutex mu_;
  mutable std::mutex feedback_mu_;
};

/// Groups `listings` by snapshot_date and appends each group in date order.
IngestSummary append_by_date(SnapshotStore& store, std::span<const CleanListing> listings);

}  // namespace avm::store
