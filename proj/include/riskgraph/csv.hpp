#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "riskgraph/errors.hpp"

namespace riskgraph {

// Shortest round-trip decimal representation; stable across runs.
inline std::string fmt_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string csv_quote(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : path_(path), out_(path) {
        if (!out_) data_error("io_error", "cannot open for writing: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << csv_quote(fields[i]);
        }
        out_ << '\n';
    }

    void close() {
        out_.close();
        if (!out_) data_error("io_error", "write failed: " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

struct CsvFile {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name, const std::string& path) const {
        for (size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        data_error("missing_column", path + ": no column '" + name + "'");
    }
};

inline std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline CsvFile read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) data_error("missing_file", "cannot open: " + path);
    CsvFile file;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == EOF) break;
        auto fields = parse_csv_line(line);
        if (first) {
            file.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != file.header.size()) {
                data_error("bad_row", path + ": row with " + std::to_string(fields.size()) +
                                          " fields, header has " + std::to_string(file.header.size()));
            }
            file.rows.push_back(std::move(fields));
        }
    }
    if (first) data_error("empty_file", path + ": missing header");
    return file;
}

inline int64_t parse_int(const std::string& s, const std::string& what) {
    int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        data_error("bad_integer", what + ": '" + s + "'");
    }
    return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        data_error("bad_number", what + ": '" + s + "'");
    }
    return v;
}

}  // namespace riskgraph
