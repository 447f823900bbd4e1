#pragma once

#include <cstdint>
#include <cstdio>
#include <compare>
#include <string>
#include <string_view>

#include "riskgraph/errors.hpp"

namespace riskgraph {

// Day-resolution calendar date stored as days since 1970-01-01.
// Conversions use the standard civil-from-days / days-from-civil algorithms,
// valid far beyond any claims span we care about.
class Date {
public:
    Date() = default;
    explicit Date(int32_t serial) : serial_(serial) {}

    static Date from_ymd(int y, int m, int d) {
        y -= m <= 2;
        const int era = (y >= 0 ? y : y - 399) / 400;
        const unsigned yoe = static_cast<unsigned>(y - era * 400);
        const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
        const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        return Date(era * 146097 + static_cast<int>(doe) - 719468);
    }

    struct Ymd { int year; int month; int day; };

    Ymd ymd() const {
        int32_t z = serial_ + 719468;
        const int era = (z >= 0 ? z : z - 146096) / 146097;
        const unsigned doe = static_cast<unsigned>(z - era * 146097);
        const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
        const int y = static_cast<int>(yoe) + era * 400;
        const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
        const unsigned mp = (5 * doy + 2) / 153;
        const unsigned d = doy - (153 * mp + 2) / 5 + 1;
        const unsigned m = mp + (mp < 10 ? 3 : -9);
        return {y + (m <= 2), static_cast<int>(m), static_cast<int>(d)};
    }

    int year() const { return ymd().year; }
    int month() const { return ymd().month; }
    int day() const { return ymd().day; }

    // (year, month) bucket used for month-level record counting.
    int32_t month_key() const {
        Ymd v = ymd();
        return v.year * 12 + (v.month - 1);
    }

    int32_t serial() const { return serial_; }

    Date plus_days(int32_t n) const { return Date(serial_ + n); }
    Date minus_days(int32_t n) const { return Date(serial_ - n); }

    friend int32_t days_between(Date a, Date b) { return b.serial_ - a.serial_; }

    auto operator<=>(const Date&) const = default;

    std::string iso() const {
        Ymd v = ymd();
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", v.year, v.month, v.day);
        return buf;
    }

    static Date parse_iso(std::string_view s) {
        int y = 0, m = 0, d = 0;
        if (s.size() != 10 || s[4] != '-' || s[7] != '-' ||
            std::sscanf(std::string(s).c_str(), "%d-%d-%d", &y, &m, &d) != 3 ||
            m < 1 || m > 12 || d < 1 || d > 31) {
            data_error("bad_date", "expected YYYY-MM-DD, got '" + std::string(s) + "'");
        }
        Date date = from_ymd(y, m, d);
        Ymd back = date.ymd();
        if (back.year != y || back.month != m || back.day != d) {
            data_error("bad_date", "no such calendar day: '" + std::string(s) + "'");
        }
        return date;
    }

private:
    int32_t serial_ = 0;
};

// Window lengths expressed in "years" are fixed 365-day spans so that window
// containment relations hold exactly regardless of leap days.
constexpr int32_t kDaysPerYear = 365;

inline int32_t years_to_days(int years) { return years * kDaysPerYear; }

}  // namespace riskgraph
