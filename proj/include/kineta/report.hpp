#pragma once

// Comparison-table rendering for metric reports: one row per system plus the
// real control row, best/second-best markers per metric with the proper
// orientation (R-Precision and d-hat up, FID down, Diversity closest to the
// real row), and per-metric CSV series for external plotting.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kineta/core.hpp"
#include "kineta/evalmetrics.hpp"

namespace kineta::report {

enum class Orientation { higher, lower, closest_to_real };

struct MetricColumn {
    std::string header;
    Orientation orient;
    double (*get)(const metrics::MetricReport&);
};

inline const std::vector<MetricColumn>& metric_columns() {
    static const std::vector<MetricColumn> cols = {
        {"R@1 ^", Orientation::higher, [](const metrics::MetricReport& r) { return r.r_top1; }},
        {"R@2 ^", Orientation::higher, [](const metrics::MetricReport& r) { return r.r_top2; }},
        {"R@3 ^", Orientation::higher, [](const metrics::MetricReport& r) { return r.r_top3; }},
        {"FID v", Orientation::lower, [](const metrics::MetricReport& r) { return r.fid_value; }},
        {"Diversity ->", Orientation::closest_to_real,
         [](const metrics::MetricReport& r) { return r.diversity_value; }},
        {"d-hat ^", Orientation::higher, [](const metrics::MetricReport& r) { return r.mean_d_hat; }},
    };
    return cols;
}

struct RenderedTable {
    std::string text;
    std::vector<std::string> warnings;
};

// Rows keep input order except the real row, which is pinned first. Markers:
// ** best, * second best, among non-real rows only; ties share the marker.
inline RenderedTable comparison_table(std::vector<metrics::MetricReport> rows) {
    RenderedTable out;

    std::map<std::string, std::string> fingerprints;
    std::map<std::string, int> sample_counts;
    for (const auto& r : rows) {
        auto it = fingerprints.find(r.system);
        if (it != fingerprints.end() && it->second != r.config_fingerprint)
            out.warnings.push_back("system '" + r.system + "' appears with different config fingerprints");
        fingerprints[r.system] = r.config_fingerprint;
        sample_counts[r.system] = r.sample_count;
    }

    std::stable_sort(rows.begin(), rows.end(), [](const metrics::MetricReport& a, const metrics::MetricReport& b) {
        return (a.system == "real") > (b.system == "real");
    });
    const metrics::MetricReport* real = nullptr;
    for (const auto& r : rows)
        if (r.system == "real") real = &r;

    const auto& cols = metric_columns();
    // rank each metric over the non-real rows
    std::vector<std::vector<int>> medal(rows.size(), std::vector<int>(cols.size(), 0)); // 2 best, 1 second
    size_t contenders = 0;
    for (const auto& r : rows) contenders += r.system != "real";
    for (size_t c = 0; c < cols.size(); ++c) {
        if (contenders < 2) break; // a single system row gets no markers
        auto score = [&](const metrics::MetricReport& r) {
            double v = cols[c].get(r);
            switch (cols[c].orient) {
                case Orientation::higher: return -v;
                case Orientation::lower: return v;
                case Orientation::closest_to_real:
                    return real ? std::abs(v - cols[c].get(*real)) : v;
            }
            return v;
        };
        std::vector<double> scores;
        for (const auto& r : rows)
            if (r.system != "real") scores.push_back(score(r));
        std::vector<double> sorted = scores;
        std::sort(sorted.begin(), sorted.end());
        double best = sorted[0];
        double second = sorted.size() > 1 ? sorted[1] : best;
        for (double s : sorted)
            if (s > best) {
                second = s;
                break;
            }
        size_t si = 0;
        for (size_t ri = 0; ri < rows.size(); ++ri) {
            if (rows[ri].system == "real") continue;
            double s = scores[si++];
            if (s == best)
                medal[ri][c] = 2;
            else if (s == second && second != best)
                medal[ri][c] = 1;
        }
    }

    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"system"};
    for (const auto& c : cols) header.push_back(c.header);
    header.push_back("samples");
    cells.push_back(header);
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        std::vector<std::string> row{rows[ri].system};
        for (size_t c = 0; c < cols.size(); ++c) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.4f", cols[c].get(rows[ri]));
            std::string cell = buf;
            if (medal[ri][c] == 2) cell += " **";
            if (medal[ri][c] == 1) cell += " *";
            row.push_back(cell);
        }
        row.push_back(std::to_string(rows[ri].sample_count));
        cells.push_back(row);
    }

    std::vector<size_t> widths(cells[0].size(), 0);
    for (const auto& row : cells)
        for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    std::string text;
    for (size_t r = 0; r < cells.size(); ++r) {
        for (size_t c = 0; c < cells[r].size(); ++c) {
            std::string cell = cells[r][c];
            cell.resize(widths[c], ' ');
            text += cell;
            if (c + 1 < cells[r].size()) text += "  ";
        }
        text += '\n';
        if (r == 0) {
            for (size_t c = 0; c < widths.size(); ++c) {
                text += std::string(widths[c], '-');
                if (c + 1 < widths.size()) text += "  ";
            }
            text += '\n';
        }
    }
    out.text = std::move(text);
    return out;
}

// One CSV per metric: system,value — the data behind comparison plots.
inline void write_metric_series(const std::vector<metrics::MetricReport>& rows, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    struct Series {
        const char* file;
        double (*get)(const metrics::MetricReport&);
    };
    const std::vector<Series> series = {
        {"r_precision_top1.csv", [](const metrics::MetricReport& r) { return r.r_top1; }},
        {"r_precision_top2.csv", [](const metrics::MetricReport& r) { return r.r_top2; }},
        {"r_precision_top3.csv", [](const metrics::MetricReport& r) { return r.r_top3; }},
        {"fid.csv", [](const metrics::MetricReport& r) { return r.fid_value; }},
        {"diversity.csv", [](const metrics::MetricReport& r) { return r.diversity_value; }},
        {"mean_d_hat.csv", [](const metrics::MetricReport& r) { return r.mean_d_hat; }},
    };
    for (const auto& s : series) {
        std::ofstream os(std::filesystem::path(out_dir) / s.file);
        os << "system,value\n";
        char buf[48];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%.6f", s.get(r));
            os << r.system << ',' << buf << '\n';
        }
    }
}

}  // namespace kineta::report
