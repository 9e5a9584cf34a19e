#include "depthprune/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "depthprune/errors.hpp"

namespace depthprune {

namespace {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_real(std::string_view s, std::size_t line) {
    double v = 0.0;
    const std::string text(s);
    std::size_t used = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) {
        throw ParseError("line " + std::to_string(line) + ": bad number '" + text + "'", line);
    }
    return v;
}

}  // namespace

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IoError("failed writing '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move output into place at '" + path.string() + "'");
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_report(std::vector<RecoveryRecord> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const RecoveryRecord& a, const RecoveryRecord& b) {
        if (a.strategy != b.strategy) return a.strategy < b.strategy;
        return a.seed < b.seed;
    });
    std::string text(kReportHeader);
    text += '\n';
    for (const RecoveryRecord& r : rows) {
        if (r.strategy.find_first_of(",\n") != std::string::npos) {
            throw ContractError("strategy name '" + r.strategy + "' cannot appear in a CSV field");
        }
        text += r.strategy + ',' + std::to_string(r.seed) + ',' + r.mask.to_string() + ',' +
                format_real(r.loss_init) + ',' + format_real(r.loss_final) + ',' +
                format_real(r.recovery_ratio) + '\n';
    }
    return text;
}

std::vector<RecoveryRecord> parse_report(std::string_view text) {
    std::vector<RecoveryRecord> rows;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line_no == 1) {
            if (line != kReportHeader) throw ParseError("unexpected report header", 0);
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 6) {
            throw ParseError("line " + std::to_string(line_no) + ": expected 6 fields", line_no);
        }
        RecoveryRecord r;
        r.strategy = std::string(f[0]);
        auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.seed);
        if (ec != std::errc() || p != f[1].data() + f[1].size()) {
            throw ParseError("line " + std::to_string(line_no) + ": bad seed", line_no);
        }
        r.mask = PruneMask::from_string(f[2]);
        r.loss_init = parse_real(f[3], line_no);
        r.loss_final = parse_real(f[4], line_no);
        r.recovery_ratio = parse_real(f[5], line_no);
        rows.push_back(std::move(r));
    }
    if (line_no == 0) throw ParseError("empty report", 0);
    return rows;
}

void write_report(std::span<const RecoveryRecord> rows, const std::filesystem::path& path) {
    write_text_file(path, format_report({rows.begin(), rows.end()}));
}

void recoverability_report(std::span<const RecoveryRecord> records,
                           const std::filesystem::path& path) {
    if (records.empty()) throw ContractError("recoverability report needs at least one record");
    write_report(records, path);
}

}  // namespace depthprune
