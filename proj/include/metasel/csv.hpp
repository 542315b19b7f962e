#pragma once

// Minimal CSV writing and reading for the result tables. Fields never
// contain commas or quotes, so no quoting is done.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "metasel/binary_io.hpp"
#include "metasel/errors.hpp"

namespace metasel::csv {

/// Shortest text that parses back to the same double; "inf", "-inf", "nan" otherwise.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError("not a number: '" + s + "'");
    return v;
}

class Table {
   public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

    void add(std::vector<std::string> row) {
        if (row.size() != header_.size()) {
            throw DimensionError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                                 std::to_string(header_.size()));
        }
        rows_.push_back(std::move(row));
    }

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header_.size(); ++i)
            if (header_[i] == name) return i;
        throw DataError("csv has no column '" + name + "'");
    }

    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& f) {
            for (std::size_t i = 0; i < f.size(); ++i) {
                if (i) out += ',';
                out += f[i];
            }
            out += '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

    void save(const std::filesystem::path& path) const { io::write_text_atomic(path, str()); }

    static Table parse(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        auto fields = [](const std::string& l) {
            std::vector<std::string> f;
            std::string cur;
            for (char ch : l) {
                if (ch == ',') {
                    f.push_back(cur);
                    cur.clear();
                } else if (ch != '\r') {
                    cur += ch;
                }
            }
            f.push_back(cur);
            return f;
        };
        if (!std::getline(in, line)) throw DataError("csv is empty");
        Table t(fields(line));
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            t.add(fields(line));
        }
        return t;
    }

    static Table load(const std::filesystem::path& path) {
        auto bytes = io::read_file(path);
        return parse(std::string(bytes.begin(), bytes.end()));
    }

   private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

}  // namespace metasel::csv
