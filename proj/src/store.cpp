#include "avm/store.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace avm::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t content_hash(const CleanListing& l) {
  json j = to_json(l);
  j.erase("snapshot_date");
  return fnv1a(j.dump());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomically(const fs::path& p, std::string_view bytes) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

CleanListing clean_from_line(const std::string& line, const fs::path& file, std::size_t line_no) {
  try {
    auto v = ingest::validate(raw_listing_from_json(json::parse(line)));
    if (auto* c = std::get_if<CleanListing>(&v)) return std::move(*c);
    throw DomainError(std::get<ingest::RejectReport>(v).failed_rules.front());
  } catch (const std::exception& e) {
    throw IoError(file.string() + ":" + std::to_string(line_no) + ": corrupt record (" + e.what() + ")");
  }
}

std::string serialize_snapshot(std::span<const CleanListing> listings) {
  std::ostringstream out;
  for (const auto& l : listings) ingest::write_jsonl_row(out, l.to_raw());
  return out.str();
}

// Lowercase with '_' and '-' dropped, so "TooHigh", "too_high" and
// "too-high" all compare equal.
std::string enum_key(std::string_view s) {
  std::string k;
  for (char c : s)
    if (c != '_' && c != '-' && c != ' ') k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return k;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::string checksum_of(std::string_view bytes) { return "fnv1a64:" + hex64(fnv1a(bytes)); }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// feedback records

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::TooHigh: return "too_high";
    case Direction::TooLow: return "too_low";
    case Direction::AboutRight: return "about_right";
  }
  return "?";
}

std::string_view to_string(ReasonCode r) {
  switch (r) {
    case ReasonCode::Condition: return "condition";
    case ReasonCode::View: return "view";
    case ReasonCode::Noise: return "noise";
    case ReasonCode::Renovation: return "renovation";
    case ReasonCode::Other: return "other";
  }
  return "?";
}

FeedbackRecord feedback_from_json(const json& j) {
  if (!j.is_object()) throw DomainError("body: expected JSON object");
  FeedbackRecord f;
  std::vector<std::string> errs;

  if (j.contains("timestamp")) {
    if (j["timestamp"].is_string()) f.timestamp = j["timestamp"].get<std::string>();
    else errs.push_back("timestamp: expected string");
  }
  if (j.contains("query_echo")) f.query_echo = j["query_echo"];
  if (j.contains("estimate_chf")) {
    if (j["estimate_chf"].is_number()) f.estimate_chf = j["estimate_chf"].get<double>();
    else errs.push_back("estimate_chf: expected number");
  }

  const char* dir_key = j.contains("user_direction") ? "user_direction" : "direction";
  if (!j.contains(dir_key)) {
    errs.push_back("user_direction: missing");
  } else if (!j[dir_key].is_string()) {
    errs.push_back("user_direction: expected string");
  } else {
    const std::string k = enum_key(j[dir_key].get<std::string>());
    if (k == "toohigh") f.direction = Direction::TooHigh;
    else if (k == "toolow") f.direction = Direction::TooLow;
    else if (k == "aboutright") f.direction = Direction::AboutRight;
    else errs.push_back("user_direction: expected too_high|too_low|about_right");
  }

  const char* reason_key = j.contains("reason_code") ? "reason_code" : "reason";
  if (j.contains(reason_key) && !j[reason_key].is_null()) {
    const std::string k = j[reason_key].is_string() ? enum_key(j[reason_key].get<std::string>()) : "";
    if (k == "condition") f.reason = ReasonCode::Condition;
    else if (k == "view") f.reason = ReasonCode::View;
    else if (k == "noise") f.reason = ReasonCode::Noise;
    else if (k == "renovation") f.reason = ReasonCode::Renovation;
    else if (k == "other") f.reason = ReasonCode::Other;
    else errs.push_back("reason_code: expected condition|view|noise|renovation|other");
  }

  if (j.contains("free_text") && !j["free_text"].is_null()) {
    if (!j["free_text"].is_string()) {
      errs.push_back("free_text: expected string");
    } else {
      f.free_text = j["free_text"].get<std::string>();
      if (utf8_length(*f.free_text) > kMaxFreeTextChars)
        errs.push_back("free_text: longer than " + std::to_string(kMaxFreeTextChars) + " characters");
    }
  }

  if (!errs.empty()) {
    std::string msg;
    for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e;
    throw DomainError(msg);
  }
  return f;
}

json to_json(const FeedbackRecord& f) {
  json j{{"timestamp", f.timestamp},
         {"query_echo", f.query_echo},
         {"estimate_chf", f.estimate_chf},
         {"user_direction", to_string(f.direction)}};
  if (f.reason) j["reason_code"] = to_string(*f.reason);
  if (f.free_text) j["free_text"] = *f.free_text;
  return j;
}

// ---------------------------------------------------------------------------
// SnapshotStore

SnapshotStore::SnapshotStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "snapshots");
  const fs::path mpath = dir_ / "manifest.json";
  if (fs::exists(mpath)) {
    json m;
    try {
      m = json::parse(read_file(mpath));
    } catch (const json::exception& e) {
      throw IoError("manifest " + mpath.string() + " is not valid JSON: " + e.what());
    }
    for (const auto& e : m.at("snapshots")) {
      ManifestEntry me;
      me.date = Date::parse_or_throw(e.at("date").get<std::string>());
      me.file = e.at("file").get<std::string>();
      me.record_count = e.at("record_count").get<std::size_t>();
      me.checksum = e.at("checksum").get<std::string>();
      manifest_[me.date] = me;
    }
  }
  for (const auto& [date, me] : manifest_) {
    const std::string bytes = read_file(dir_ / me.file);
    if (checksum_of(bytes) != me.checksum) throw IoError("checksum mismatch for " + (dir_ / me.file).string());
  }
  std::vector<Date> dates;
  for (const auto& [date, me] : manifest_) dates.push_back(date);
  scan_locked([&](std::size_t file, std::size_t, const CleanListing& l) { index_record_locked(dates[file], l, nullptr); });
}

void SnapshotStore::index_record_locked(const Date& date, const CleanListing& l, IngestSummary* summary) {
  const std::uint64_t h = content_hash(l);
  auto it = index_.find(l.listing_id);
  if (it == index_.end()) {
    index_.emplace(l.listing_id, SeenRange{date, date, h});
    if (summary) ++summary->added;
    return;
  }
  SeenRange& s = it->second;
  if (summary) ++(s.content_hash == h ? summary->duplicates : summary->updated);
  s.first_seen = std::min(s.first_seen, date);
  if (date >= s.last_seen) {
    s.last_seen = date;
    s.content_hash = h;
  }
}

void SnapshotStore::write_manifest_locked() const {
  json arr = json::array();
  for (const auto& [d, me] : manifest_)
    arr.push_back({{"date", d.to_string()}, {"file", me.file}, {"record_count", me.record_count}, {"checksum", me.checksum}});
  write_atomically(dir_ / "manifest.json", json{{"format", "avm.store"}, {"version", 1}, {"snapshots", arr}}.dump(2));
}

IngestSummary SnapshotStore::append_snapshot(const Date& date, std::span<const CleanListing> listings) {
  std::set<std::string_view> ids;
  for (const auto& l : listings) {
    if (l.snapshot_date != date)
      throw DomainError("snapshot_date: listing " + l.listing_id + " is dated " + l.snapshot_date.to_string() +
                        ", snapshot is " + date.to_string());
    if (!ids.insert(l.listing_id).second)
      throw DomainError("listing_id: " + l.listing_id + " appears twice in snapshot " + date.to_string());
  }
  const std::string bytes = serialize_snapshot(listings);
  const std::string sum = checksum_of(bytes);

  std::unique_lock lock(mu_);
  if (auto it = manifest_.find(date); it != manifest_.end()) {
    if (it->second.checksum != sum)
      throw ConflictError("snapshot " + date.to_string() + " already finalized with different content");
    return IngestSummary{0, listings.size(), 0};
  }

  ManifestEntry me{date, "snapshots/" + date.to_string() + ".jsonl", listings.size(), sum};
  write_atomically(dir_ / me.file, bytes);
  manifest_[date] = me;
  write_manifest_locked();

  IngestSummary s;
  for (const auto& l : listings) index_record_locked(date, l, &s);
  return s;
}

void SnapshotStore::scan_locked(const Visitor& visit) const {
  std::size_t fi = 0;
  for (const auto& [date, me] : manifest_) {
    const fs::path p = dir_ / me.file;
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      if (line.empty()) continue;
      visit(fi, ln, clean_from_line(line, p, ln));
    }
    ++fi;
  }
}

std::map<std::string, SnapshotStore::Pick> SnapshotStore::pick_latest_locked(const Period& period,
                                                                             const std::set<int>& zips,
                                                                             std::optional<OfferKind> kind) const {
  // Latest in-period version per id; zip/kind filters apply to that version.
  std::map<std::string, std::pair<Pick, bool>> best;
  scan_locked([&](std::size_t file, std::size_t line, const CleanListing& l) {
    if (!period.contains(l.snapshot_date)) return;
    const bool keep = (zips.empty() || zips.count(l.zip)) && (!kind || l.offer_kind == *kind);
    best[l.listing_id] = {Pick{file, line}, keep};
  });
  std::map<std::string, Pick> out;
  for (auto& [id, pk] : best)
    if (pk.second) out.emplace(id, pk.first);
  return out;
}

std::vector<CleanListing> SnapshotStore::query_listings(const Period& period, const std::set<int>& zips,
                                                        std::optional<OfferKind> kind) const {
  std::shared_lock lock(mu_);
  const auto picks = pick_latest_locked(period, zips, kind);
  std::vector<CleanListing> out;
  out.reserve(picks.size());
  scan_locked([&](std::size_t file, std::size_t line, const CleanListing& l) {
    auto it = picks.find(l.listing_id);
    if (it != picks.end() && it->second.file == file && it->second.line == line) out.push_back(l);
  });
  return out;
}

std::size_t SnapshotStore::export_clean(std::ostream& out, const Period& period, std::optional<OfferKind> kind,
                                        ingest::Format format) const {
  std::shared_lock lock(mu_);
  const auto picks = pick_latest_locked(period, {}, kind);
  if (format == ingest::Format::Csv) ingest::write_csv_header(out);
  std::size_t n = 0;
  scan_locked([&](std::size_t file, std::size_t line, const CleanListing& l) {
    auto it = picks.find(l.listing_id);
    if (it == picks.end() || it->second.file != file || it->second.line != line) return;
    if (format == ingest::Format::Csv) ingest::write_csv_row(out, l.to_raw());
    else ingest::write_jsonl_row(out, l.to_raw());
    ++n;
  });
  out.flush();
  return n;
}

std::vector<ManifestEntry> SnapshotStore::manifest() const {
  std::shared_lock lock(mu_);
  std::vector<ManifestEntry> out;
  for (const auto& [d, me] : manifest_) out.push_back(me);
  return out;
}

std::map<std::string, SeenRange> SnapshotStore::dedup_index() const {
  std::shared_lock lock(mu_);
  return index_;
}

bool SnapshotStore::verify() const {
  std::shared_lock lock(mu_);
  for (const auto& [d, me] : manifest_) {
    if (!fs::exists(dir_ / me.file)) return false;
    if (checksum_of(read_file(dir_ / me.file)) != me.checksum) return false;
  }
  return true;
}

void SnapshotStore::append_feedback(const FeedbackRecord& f) {
  if (f.free_text && utf8_length(*f.free_text) > kMaxFreeTextChars)
    throw DomainError("free_text: longer than " + std::to_string(kMaxFreeTextChars) + " characters");
  std::lock_guard lock(feedback_mu_);
  std::ofstream out(dir_ / "feedback.jsonl", std::ios::app);
  if (!out) throw IoError("cannot append to " + (dir_ / "feedback.jsonl").string());
  out << to_json(f).dump() << '\n';
}

std::vector<FeedbackRecord> SnapshotStore::feedback_log() const {
  std::lock_guard lock(feedback_mu_);
  std::vector<FeedbackRecord> out;
  std::ifstream in(dir_ / "feedback.jsonl");
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(feedback_from_json(json::parse(line)));
  return out;
}

IngestSummary append_by_date(SnapshotStore& store, std::span<const CleanListing> listings) {
  std::map<Date, std::vector<CleanListing>> groups;
  for (const auto& l : listings) groups[l.snapshot_date].push_back(l);
  IngestSummary total;
  for (const auto& [d, rows] : groups) total += store.append_snapshot(d, rows);
  return total;
}

}  // namespace avm::store
