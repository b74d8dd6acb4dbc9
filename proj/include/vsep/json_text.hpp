#pragma once

// Small helpers for writing canonical JSON text by hand. nlohmann::json is
// used for reading; writing goes through here so number formatting is fixed.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <system_error>

#include <json.hpp>

#include "vsep/error.hpp"

namespace vsep::json_text {

/// Shortest decimal that round-trips to the same double.
inline void append_double(std::string& out, double x) {
    if (!std::isfinite(x)) throw NumericError("cannot serialize non-finite number");
    if (x == 0.0 && std::signbit(x)) {
        out += "-0.0";
        return;
    }
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    out.append(buf.data(), res.ptr);
}

/// Fixed 17 significant digits, used by the model file.
inline void append_double17(std::string& out, double x) {
    if (!std::isfinite(x)) throw NumericError("cannot serialize non-finite number");
    std::array<char, 40> buf{};
    const int n = std::snprintf(buf.data(), buf.size(), "%.17g", x);
    out.append(buf.data(), static_cast<std::size_t>(n));
}

inline void append_string(std::string& out, std::string_view s) { out += nlohmann::json(s).dump(); }

template <typename Fmt>
void append_array(std::string& out, std::span<const double> xs, Fmt fmt) {
    out += '[';
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        fmt(out, xs[i]);
    }
    out += ']';
}

inline void append_array(std::string& out, std::span<const double> xs) { append_array(out, xs, append_double); }

/// Parses one JSON document, rejecting duplicate object keys.
inline nlohmann::json parse_strict(std::string_view text) {
    std::vector<std::vector<std::string>> keys;
    std::string duplicate;
    auto cb = [&](int, nlohmann::json::parse_event_t ev, nlohmann::json& parsed) {
        using E = nlohmann::json::parse_event_t;
        if (ev == E::object_start) {
            keys.emplace_back();
        } else if (ev == E::object_end) {
            if (!keys.empty()) keys.pop_back();
        } else if (ev == E::key && !keys.empty()) {
            auto k = parsed.get<std::string>();
            for (const auto& seen : keys.back())
                if (seen == k && duplicate.empty()) duplicate = k;
            keys.back().push_back(std::move(k));
        }
        return true;
    };
    auto j = nlohmann::json::parse(text.begin(), text.end(), cb);
    if (!duplicate.empty()) throw DataError("duplicate key \"" + duplicate + "\"");
    return j;
}

}  // namespace vsep::json_text
