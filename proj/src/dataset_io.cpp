#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "invsen/datagen.hpp"
#include "invsen/error.hpp"
#include "invsen/fsutil.hpp"

namespace invsen::datagen {

namespace {

constexpr std::string_view kHeaderTag = "# invsen-dataset v1";

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::size_t header_field(const std::filesystem::path& path, const std::string& header, const std::string& key) {
    const std::string probe = " " + key + "=";
    const auto pos = header.find(probe);
    if (pos == std::string::npos) fail(path, 1, "header lacks '" + key + "='");
    const char* begin = header.data() + pos + probe.size();
    const char* end = header.data() + header.size();
    std::size_t value = 0;
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc{} || (res.ptr != end && *res.ptr != ' ')) {
        fail(path, 1, "malformed value for '" + key + "'");
    }
    return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open dataset '" + path.string() + "'");
    std::string header;
    if (!std::getline(in, header)) fail(path, 1, "empty file");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header.rfind(kHeaderTag, 0) != 0) fail(path, 1, "missing '# invsen-dataset v1' header");

    const std::size_t n = header_field(path, header, "n");
    const std::size_t d = header_field(path, header, "d");
    const std::size_t has_s = header_field(path, header, "has_s");
    const std::size_t has_b = header_field(path, header, "has_b");
    if (has_s > 1 || has_b > 1) fail(path, 1, "has_s/has_b must be 0 or 1");
    if (d == 0) fail(path, 1, "d must be positive");

    const std::size_t expected_fields = d + has_s + has_b;
    Dataset ds;
    ds.x = Matrix(n, d);
    std::vector<int> s, b;
    std::string line;
    std::size_t row = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto content = trim(line);
        if (content.empty()) continue;
        if (row >= n) fail(path, line_no, "header declares n=" + std::to_string(n) + " but more rows follow");
        const auto fields = split_fields(content);
        if (fields.size() != expected_fields) {
            fail(path, line_no, "expected " + std::to_string(expected_fields) + " fields, found " +
                                    std::to_string(fields.size()));
        }
        for (std::size_t c = 0; c < d; ++c) {
            const auto f = trim(fields[c]);
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc{} || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
                fail(path, line_no, "field " + std::to_string(c + 1) + " is not a finite number");
            }
            ds.x(row, c) = v;
        }
        auto parse_label = [&](std::size_t idx, const char* what) {
            const auto f = trim(fields[idx]);
            int v = 0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc{} || res.ptr != f.data() + f.size() || v < 0) {
                fail(path, line_no, std::string(what) + " label is not a non-negative integer");
            }
            return v;
        };
        if (has_s) s.push_back(parse_label(d, "cluster"));
        if (has_b) b.push_back(parse_label(d + has_s, "bias"));
        ++row;
    }
    if (row != n) {
        fail(path, line_no, "header declares n=" + std::to_string(n) + " but file has " + std::to_string(row) + " rows");
    }
    if (has_s) ds.s = ClusterLabels::from(std::move(s));
    if (has_b) ds.b = std::move(b);
    ds.name = path.stem().string();
    ds.provenance.source = path.string();
    if (options.normalize) normalize_samples(ds.x);
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    dataset.validate();
    std::ostringstream os;
    os << kHeaderTag << " n=" << dataset.n() << " d=" << dataset.d() << " has_s=" << (dataset.s ? 1 : 0)
       << " has_b=" << (dataset.b ? 1 : 0) << '\n';
    for (std::size_t r = 0; r < dataset.n(); ++r) {
        const auto row = dataset.x.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) os << ',';
            os << format_double(row[c]);
        }
        if (dataset.s) os << ',' << dataset.s->labels[r];
        if (dataset.b) os << ',' << (*dataset.b)[r];
        os << '\n';
    }
    write_file_atomic(path, os.str());
}

}  // namespace invsen::datagen
