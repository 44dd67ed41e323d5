#pragma once

#include <chrono>
#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace wwf {

// Calendar day (proleptic Gregorian), stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;

  static std::optional<Date> try_parse(std::string_view iso);
  static Date parse(std::string_view iso);  // throws DataError
  static Date from_ymd(int year, unsigned month, unsigned day);
  static constexpr Date from_serial(long serial) { return Date(serial); }

  long serial() const { return serial_; }
  std::string iso() const;

  int year() const;
  unsigned month() const;
  unsigned day() const;
  unsigned iso_weekday() const;  // Monday = 1 .. Sunday = 7
  unsigned iso_week() const;     // 1..53

  Date operator+(long days) const { return Date(serial_ + days); }
  Date operator-(long days) const { return Date(serial_ - days); }
  long operator-(Date other) const { return serial_ - other.serial_; }
  auto operator<=>(const Date&) const = default;

 private:
  constexpr explicit Date(long serial) : serial_(serial) {}
  std::chrono::year_month_day ymd() const;

  long serial_ = 0;
};

}  // namespace wwf
