#pragma once

/**
 * @file csv.hpp
 * @brief Minimal CSV writer: comma separated, '.' decimal, '#' metadata lines,
 *        LF endings, shortest round-trip number formatting (byte-stable output).
 */

#include "kolmo/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace kolmo {

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& out) : out_(&out) {}

    void meta(std::string_view key, std::string_view value) { *out_ << "# " << key << ": " << value << '\n'; }
    void meta(std::string_view key, double value) { meta(key, format_double(value)); }

    void header(const std::vector<std::string>& names) { row_strings(names); }

    void row(std::initializer_list<double> values) { row(std::vector<double>(values)); }
    void row(const std::vector<double>& values) {
        bool first = true;
        for (double v : values) {
            if (!first) *out_ << ',';
            *out_ << format_double(v);
            first = false;
        }
        *out_ << '\n';
    }

    void row_strings(const std::vector<std::string>& cells) {
        bool first = true;
        for (const auto& c : cells) {
            if (!first) *out_ << ',';
            *out_ << escape(c);
            first = false;
        }
        *out_ << '\n';
    }

    static std::string escape(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string out = "\"";
        for (char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        return out + '"';
    }

private:
    std::ostream* out_;
};

/// Opens `path` for binary writing (LF endings on every platform).
inline std::ofstream open_csv(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open output file " + path);
    return f;
}

} // namespace kolmo
