#pragma once

// Plot-ready CSVs from one or more trial records: one series per record.

#include "tailgen/creative/record.hpp"
#include "tailgen/harness/files.hpp"

#include <map>
#include <sstream>

namespace tailgen {

/// Tag for a scatter point: the id of the first negative cluster whose 2-sigma region contains it.
inline std::string cluster_tag(const NegativeClusterSet& clusters, const Vector& reduced) {
    for (std::size_t i = 0; i < clusters.size(); ++i)
        if (clusters[i].density.mahalanobis(reduced) <= 2.0)
            return clusters[i].id.empty() ? "neg" + std::to_string(i) : clusters[i].id;
    return "none";
}

/// Unique, file-name-safe series names derived from record labels.
inline std::vector<std::string> series_names(const std::vector<TrialRecord>& records) {
    std::vector<std::string> names;
    std::map<std::string, int> seen;
    for (const auto& r : records) {
        std::string base;
        for (char c : r.label) base += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
        if (base.empty()) base = "trial";
        const int n = ++seen[base];
        names.push_back(n == 1 ? base : base + "_" + std::to_string(n));
    }
    return names;
}

inline std::vector<fs::path> write_report(const std::vector<TrialRecord>& records, const fs::path& out_dir) {
    const auto names = series_names(records);
    std::vector<fs::path> written;

    std::ostringstream pct, loss;
    CsvWriter wp(pct), wl(loss);
    wp.row({"series", "iteration", "median_percentile", "mean_mahalanobis", "frac_beyond_3sigma"});
    wl.row({"series", "iteration", "branch", "creative_loss", "anchor_loss", "neg_loss", "grad_norm"});

    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        for (const auto& s : rec.snapshots)
            wp.row({names[r], std::to_string(s.iteration), format_double(s.stats.median_percentile),
                    format_double(s.stats.mean_mahalanobis), format_double(s.stats.frac_beyond_3sigma)});
        for (const auto& row : rec.rows)
            wl.row({names[r], std::to_string(row.iteration), to_string(row.branch), format_double(row.creative_loss),
                    format_double(row.anchor_loss), format_double(row.neg_loss), format_double(row.grad_norm)});

        NegativeClusterSet clusters = rec.initial_clusters;
        for (const auto& c : rec.commands)
            if (c.command.type == TrialCommand::Type::AddNegativeCluster) clusters.push_back(c.command.cluster);

        std::ostringstream sc;
        CsvWriter ws(sc);
        ws.row({"iteration", "x", "y", "cluster_tag"});
        for (const auto& s : rec.snapshots) {
            for (Eigen::Index j = 0; j < s.reduced.cols(); ++j) {
                const Vector p = s.reduced.col(j);
                ws.row({std::to_string(s.iteration), format_double(p[0]), format_double(p.size() > 1 ? p[1] : 0.0),
                        cluster_tag(clusters, p)});
            }
        }
        const fs::path sp = out_dir / ("scatter_" + names[r] + ".csv");
        write_text_file(sp, sc.str());
        written.push_back(sp);
    }

    write_text_file(out_dir / "percentile_vs_iteration.csv", pct.str());
    write_text_file(out_dir / "loss_vs_iteration.csv", loss.str());
    written.insert(written.begin(), {out_dir / "percentile_vs_iteration.csv", out_dir / "loss_vs_iteration.csv"});
    return written;
}

}  // namespace tailgen
