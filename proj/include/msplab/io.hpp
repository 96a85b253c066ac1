#pragma once

// CSV and SVG artifacts. Every file opens with a block of "# key=value"
// metadata lines followed by a fixed CSV header.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "tracking.hpp"

namespace msplab {

inline constexpr const char* kManifestHeader = "id,tag,original_label,assigned_label,source_index";
inline constexpr const char* kTraceHeader = "epoch,example_id,subset,msp,rank";
inline constexpr const char* kReportHeader =
    "epoch,auroc,iqr_overlap,atypical_q1,atypical_med,atypical_q3,noisy_q1,noisy_med,noisy_q3";
inline constexpr const char* kComparisonHeader = "variant,epoch,auroc,iqr_overlap";

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string metadata_block(const Metadata& meta) {
    std::string out;
    for (const auto& [k, v] : meta) out += "# " + k + "=" + v + "\n";
    return out;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

/// Split into metadata, the header line and data rows.
struct CsvDocument {
    std::map<std::string, std::string> meta;
    std::string header;
    std::vector<std::vector<std::string>> rows;

    std::string meta_value(const std::string& key) const {
        auto it = meta.find(key);
        return it == meta.end() ? std::string() : it->second;
    }
};

inline CsvDocument parse_csv(const std::string& text, const std::string& expected_header, const std::string& origin) {
    CsvDocument doc;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto body = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
            const auto eq = body.find('=');
            if (eq != std::string::npos) doc.meta[body.substr(0, eq)] = body.substr(eq + 1);
            continue;
        }
        if (!have_header) {
            if (line != expected_header) {
                throw FormatError(origin + ": expected header '" + expected_header + "', found '" + line + "'");
            }
            doc.header = line;
            have_header = true;
            continue;
        }
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        doc.rows.push_back(std::move(fields));
    }
    if (!have_header) throw FormatError(origin + ": missing CSV header");
    return doc;
}

inline std::size_t parse_index(const std::string& s, const std::string& origin) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw FormatError(origin + ": expected an integer, got '" + s + "'");
    }
}

// ---------------------------------------------------------------------------
// manifest

inline std::string manifest_csv(const StratifiedDataset& ds, const Metadata& meta) {
    std::string out = metadata_block(meta);
    out += kManifestHeader;
    out += '\n';
    for (const auto& e : ds.examples) {
        out += std::to_string(e.id) + "," + std::string(tag_name(e.tag)) + "," + std::to_string(e.original_label) + "," +
               std::to_string(e.assigned_label) + "," + std::to_string(e.source_index) + "\n";
    }
    return out;
}

struct ManifestRow {
    std::size_t id, original_label, assigned_label, source_index;
    Tag tag;
};

inline std::vector<ManifestRow> parse_manifest(const CsvDocument& doc, const std::string& origin) {
    std::vector<ManifestRow> rows;
    for (const auto& f : doc.rows) {
        if (f.size() != 5) throw FormatError(origin + ": manifest rows need 5 fields");
        const auto tag = parse_tag(f[1]);
        if (!tag) throw FormatError(origin + ": unknown tag '" + f[1] + "'");
        rows.push_back({parse_index(f[0], origin), parse_index(f[2], origin), parse_index(f[3], origin),
                        parse_index(f[4], origin), *tag});
        if (rows.back().id != rows.size() - 1) throw FormatError(origin + ": manifest ids must be 0..N-1 in order");
    }
    return rows;
}

// ---------------------------------------------------------------------------
// trace

inline void append_trace_rows(std::string& out, const MspTracker& tracker) {
    const auto& tags = tracker.tags();
    for (int e = 1; e <= static_cast<int>(tracker.epochs()); ++e) {
        const auto& msp = tracker.row(e);
        const auto ranks = rank_examples(msp);
        for (std::size_t id = 0; id < msp.size(); ++id) {
            out += std::to_string(e) + "," + std::to_string(id) + "," + std::string(tag_name(tags[id])) + "," +
                   fixed6(msp[id]) + "," + std::to_string(ranks[id]) + "\n";
        }
    }
}

inline std::string trace_csv(const MspTracker& tracker, const Metadata& meta, const Metadata& footer = {}) {
    std::string out = metadata_block(meta);
    out += kTraceHeader;
    out += '\n';
    append_trace_rows(out, tracker);
    out += metadata_block(footer);
    return out;
}

/// A trace read back from disk: ranks and tags per epoch plus the MSP column.
struct LoadedTrace {
    std::map<std::string, std::string> meta;
    std::vector<Tag> tags;
    std::vector<RankRow> ranks;     // [epoch - 1][id]
    std::vector<MspRow> msp;        // [epoch - 1][id], 6-decimal precision
};

inline LoadedTrace load_trace(const std::filesystem::path& path) {
    const auto doc = parse_csv(read_text(path), kTraceHeader, path.string());
    LoadedTrace trace;
    trace.meta = doc.meta;
    std::size_t n = 0;
    for (const auto& f : doc.rows) {
        if (f.size() != 5) throw FormatError(path.string() + ": trace rows need 5 fields");
        n = std::max(n, parse_index(f[1], path.string()) + 1);
    }
    std::vector<std::vector<bool>> seen;
    for (const auto& f : doc.rows) {
        const auto epoch = parse_index(f[0], path.string());
        const auto id = parse_index(f[1], path.string());
        const auto tag = parse_tag(f[2]);
        if (!tag) throw FormatError(path.string() + ": unknown subset '" + f[2] + "'");
        if (epoch < 1) throw FormatError(path.string() + ": epochs are 1-based");
        if (epoch > trace.ranks.size()) {
            if (epoch != trace.ranks.size() + 1) throw FormatError(path.string() + ": epochs out of order");
            trace.ranks.emplace_back(n, 0);
            trace.msp.emplace_back(n, 0.0);
            seen.emplace_back(n, false);
        }
        if (seen[epoch - 1][id]) throw FormatError(path.string() + ": duplicate row for epoch/id");
        seen[epoch - 1][id] = true;
        trace.ranks[epoch - 1][id] = parse_index(f[4], path.string());
        trace.msp[epoch - 1][id] = std::stod(f[3]);
        if (trace.tags.size() < n) trace.tags.resize(n, Tag::Typical);
        trace.tags[id] = *tag;
    }
    for (const auto& s : seen)
        for (bool b : s)
            if (!b) throw FormatError(path.string() + ": an epoch does not cover every example");
    return trace;
}

// ---------------------------------------------------------------------------
// separation report

inline std::string report_csv(const SeparationReport& report, const Metadata& meta) {
    std::string out = metadata_block(meta);
    out += kReportHeader;
    out += '\n';
    for (const auto& e : report.epochs) {
        out += std::to_string(e.epoch) + "," + fixed6(e.auroc) + "," + fixed6(e.iqr_overlap) + "," +
               fixed6(e.atypical.q1) + "," + fixed6(e.atypical.median) + "," + fixed6(e.atypical.q3) + "," +
               fixed6(e.noisy.q1) + "," + fixed6(e.noisy.median) + "," + fixed6(e.noisy.q3) + "\n";
    }
    return out;
}

inline std::string comparison_csv(const std::vector<std::pair<std::string, SeparationReport>>& reports,
                                  const Metadata& meta) {
    std::string out = metadata_block(meta);
    out += kComparisonHeader;
    out += '\n';
    for (const auto& [variant, report] : reports)
        for (const auto& e : report.epochs)
            out += variant + "," + std::to_string(e.epoch) + "," + fixed6(e.auroc) + "," + fixed6(e.iqr_overlap) + "\n";
    return out;
}

/// Box plot of per-epoch rank distributions: one atypical and one noisy box
/// per epoch, whiskers at the stratum min/max.
inline std::string boxplot_svg(const std::string& title, const std::vector<RankRow>& ranks, const std::vector<Tag>& tags) {
    const double width = 60.0 + 24.0 * static_cast<double>(ranks.size()), height = 320.0;
    const double top = 30.0, bottom = 280.0, left = 50.0;
    const std::size_t n = tags.size();
    auto y = [&](double rank) { return bottom - (bottom - top) * rank / static_cast<double>(n > 1 ? n - 1 : 1); };
    std::ostringstream svg;
    svg.setf(std::ios::fixed);
    svg.precision(2);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"12\">" << title << " (MSP rank by epoch)</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"4\" y=\"" << top + 4 << "\" font-size=\"10\">" << (n ? n - 1 : 0) << "</text>\n";
    svg << "<text x=\"4\" y=\"" << bottom << "\" font-size=\"10\">0</text>\n";
    const std::pair<Tag, const char*> strata[] = {{Tag::Atypical, "#1f77b4"}, {Tag::Noisy, "#d62728"}};
    for (std::size_t e = 0; e < ranks.size(); ++e) {
        const double x0 = left + 8.0 + 24.0 * static_cast<double>(e);
        for (std::size_t s = 0; s < 2; ++s) {
            const auto [tag, colour] = strata[s];
            auto v = values_with_tag(std::span<const std::size_t>(ranks[e]), std::span<const Tag>(tags), tag);
            if (v.empty()) continue;
            std::sort(v.begin(), v.end());
            const double q1 = quantile_sorted(v, 0.25), med = quantile_sorted(v, 0.5), q3 = quantile_sorted(v, 0.75);
            const double x = x0 + 10.0 * static_cast<double>(s), cx = x + 4.0;
            svg << "<g class=\"" << tag_name(tag) << "\" data-epoch=\"" << e + 1 << "\">";
            svg << "<line x1=\"" << cx << "\" y1=\"" << y(v.front()) << "\" x2=\"" << cx << "\" y2=\"" << y(v.back())
                << "\" stroke=\"" << colour << "\"/>";
            svg << "<rect x=\"" << x << "\" y=\"" << y(q3) << "\" width=\"8\" height=\"" << y(q1) - y(q3)
                << "\" fill=\"" << colour << "\" fill-opacity=\"0.4\" stroke=\"" << colour << "\"/>";
            svg << "<line x1=\"" << x << "\" y1=\"" << y(med) << "\" x2=\"" << x + 8.0 << "\" y2=\"" << y(med)
                << "\" stroke=\"black\"/>";
            svg << "</g>\n";
        }
        if ((e + 1) % 5 == 0 || e == 0) {
            svg << "<text x=\"" << x0 << "\" y=\"" << bottom + 14 << "\" font-size=\"9\">" << e + 1 << "</text>\n";
        }
    }
    svg << "<text x=\"" << left << "\" y=\"" << height - 8 << "\" font-size=\"10\" fill=\"#1f77b4\">atypical</text>\n";
    svg << "<text x=\"" << left + 60 << "\" y=\"" << height - 8 << "\" font-size=\"10\" fill=\"#d62728\">noisy</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

} // namespace msplab
