#include "wwf/date.hpp"

#include <charconv>
#include <cstdio>

#include "wwf/error.hpp"

namespace wwf {

namespace {

bool parse_uint(std::string_view s, int& out) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::optional<Date> Date::try_parse(std::string_view iso) {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_uint(iso.substr(0, 4), y) || !parse_uint(iso.substr(5, 2), m) || !parse_uint(iso.substr(8, 2), d))
    return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(static_cast<unsigned>(m)),
                                  std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok()) return std::nullopt;
  return Date(std::chrono::sys_days(ymd).time_since_epoch().count());
}

Date Date::parse(std::string_view iso) {
  auto d = try_parse(iso);
  if (!d) throw DataError("invalid date '" + std::string(iso) + "', expected YYYY-MM-DD");
  return *d;
}

Date Date::from_ymd(int year, unsigned month, unsigned day) {
  std::chrono::year_month_day ymd{std::chrono::year(year), std::chrono::month(month), std::chrono::day(day)};
  if (!ymd.ok()) throw DataError("invalid calendar date");
  return Date(std::chrono::sys_days(ymd).time_since_epoch().count());
}

std::chrono::year_month_day Date::ymd() const {
  return std::chrono::year_month_day(std::chrono::sys_days(std::chrono::days(serial_)));
}

std::string Date::iso() const {
  const auto d = ymd();
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

int Date::year() const { return static_cast<int>(ymd().year()); }
unsigned Date::month() const { return static_cast<unsigned>(ymd().month()); }
unsigned Date::day() const { return static_cast<unsigned>(ymd().day()); }

unsigned Date::iso_weekday() const {
  return std::chrono::weekday(std::chrono::sys_days(std::chrono::days(serial_))).iso_encoding();
}

unsigned Date::iso_week() const {
  // The ISO week belongs to the year containing its Thursday.
  const Date thursday = *this + (4 - static_cast<long>(iso_weekday()));
  const Date jan1 = from_ymd(thursday.year(), 1, 1);
  return static_cast<unsigned>((thursday - jan1) / 7 + 1);
}

}  // namespace wwf
