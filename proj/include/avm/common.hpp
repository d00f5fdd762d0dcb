#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace avm {

// Error taxonomy. Every module throws one of these; callers that need to
// distinguish kinds catch the specific type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error { using Error::Error; };
struct EmptyData : Error { using Error::Error; };
struct InsufficientData : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct ContractViolation : Error { using Error::Error; };
struct NotFound : Error { using Error::Error; };
struct Unavailable : Error { using Error::Error; };
struct ConflictError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };

struct ParseError : Error {
  ParseError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " at byte " + std::to_string(byte_offset)), offset(byte_offset) {}
  std::uint64_t offset;
};

/// Calendar date (proleptic Gregorian), ISO-8601 text form YYYY-MM-DD.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  static std::optional<Date> parse(std::string_view iso);
  static Date parse_or_throw(std::string_view iso);
  std::string to_string() const;
  bool valid() const;
  /// Days since 1970-01-01.
  long days_since_epoch() const;
  static Date from_days_since_epoch(long days);
  Date plus_days(long n) const { return from_days_since_epoch(days_since_epoch() + n); }

  auto operator<=>(const Date&) const = default;
};

/// Inclusive date range.
struct Period {
  Date start;
  Date end;
  bool contains(const Date& d) const { return start <= d && d <= end; }
};

/// Seeded generator with draws that are stable across standard libraries
/// (std:: distributions are implementation-defined, these are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace avm
