#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "vsal/data.hpp"
#include "vsal/losses.hpp"
#include "vsal/stns.hpp"

namespace vsal {

namespace detail {

/// Exact Mann-Whitney area: fraction of (pos, neg) pairs won, ties half.
/// Equivalent to ROC integration with thresholds at every distinct value.
inline double pairwise_auc(std::vector<double> pos, std::vector<double> neg) {
    if (pos.empty() || neg.empty())
        throw DegenerateMapError("AUC needs at least one positive and one negative");
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    double wins = 0.0, ties = 0.0;
    std::size_t lt = 0, le = 0;  // negatives strictly below / not above current positive
    for (double p : pos) {
        while (lt < neg.size() && neg[lt] < p) ++lt;
        if (le < lt) le = lt;
        while (le < neg.size() && neg[le] <= p) ++le;
        wins += static_cast<double>(lt);
        ties += static_cast<double>(le - lt);
    }
    return (wins + 0.5 * ties) / (static_cast<double>(pos.size()) * neg.size());
}

inline void split_by_fixations(const Tensor& Y, const Tensor& P, std::vector<double>& pos,
                               std::vector<double>& neg) {
    if (Y.ndim() != 2 || !same_shape(Y, P))
        throw DimensionError("AUC expects two equal 2-D maps, got " + shape_str(Y.shape()) +
                             " and " + shape_str(P.shape()));
    for (std::size_t i = 0; i < Y.numel(); ++i) {
        const double m = P.data()[i];
        if (m != 0.0 && m != 1.0) throw DataError("fixation map must be binary");
        (m == 1.0 ? pos : neg).push_back(Y.data()[i]);
    }
}

}  // namespace detail

/// AUC-Judd: fixated cells against all remaining cells.
inline double auc_judd(const Tensor& Y, const Tensor& P) {
    std::vector<double> pos, neg;
    detail::split_by_fixations(Y, P, pos, neg);
    if (pos.empty()) throw NoFixationsError("auc_judd: no fixated cells");
    return detail::pairwise_auc(std::move(pos), std::move(neg));
}

/// Shuffled AUC. Negatives come from `pool` (a binary map of fixation cells
/// from other videos). Sampling procedure is contractual so oracles can
/// replicate it: one mt19937_64 seeded once serves all splits in order; each
/// split takes a fresh row-major list of pool cell indices and runs a partial
/// Fisher-Yates (j <- j + uniform_index(rng, M - j)) to draw
/// k = min(pool size, #positives) cells without replacement.
inline double shuffled_auc(const Tensor& Y, const Tensor& P, const Tensor& pool, int splits,
                           std::uint64_t seed) {
    if (splits < 1) throw ConfigError("shuffled_auc needs splits >= 1");
    std::vector<double> pos, rest;
    detail::split_by_fixations(Y, P, pos, rest);
    if (pos.empty()) throw NoFixationsError("shuffled_auc: no fixated cells");
    if (!same_shape(Y, pool))
        throw DimensionError("negative pool shape " + shape_str(pool.shape()) +
                             " does not match map " + shape_str(Y.shape()));
    std::vector<std::size_t> pool_cells;
    for (std::size_t i = 0; i < pool.numel(); ++i) {
        const double m = pool.data()[i];
        if (m != 0.0 && m != 1.0) throw DataError("negative pool must be binary");
        if (m == 1.0) pool_cells.push_back(i);
    }
    if (pool_cells.empty()) throw DataError("shuffled_auc: empty negative pool");
    const std::size_t k = std::min(pool_cells.size(), pos.size());
    std::mt19937_64 rng(seed);
    double acc = 0.0;
    for (int s = 0; s < splits; ++s) {
        std::vector<std::size_t> idx = pool_cells;
        std::vector<double> neg;
        neg.reserve(k);
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t u = j + detail::uniform_index(rng, idx.size() - j);
            std::swap(idx[j], idx[u]);
            neg.push_back(Y.data()[idx[j]]);
        }
        acc += detail::pairwise_auc(pos, std::move(neg));
    }
    return acc / splits;
}

inline double nss_metric(const Tensor& Y, const Tensor& P) { return -nss_loss(Y, P).value(); }
inline double cc_metric(const Tensor& Y, const Tensor& Q) { return -cc_loss(Y, Q).value(); }

/// Histogram intersection of the two maps after unit-sum normalization.
inline double sim_metric(const Tensor& Y, const Tensor& Q) {
    detail::check_map_pair(Y, Q, "sim_metric");
    double ys = 0.0, qs = 0.0;
    for (double v : Y.data()) {
        if (v < 0.0) throw DataError("sim_metric expects non-negative maps");
        ys += v;
    }
    for (double v : Q.data()) {
        if (v < 0.0) throw DataError("sim_metric expects non-negative maps");
        qs += v;
    }
    if (ys <= 0.0 || qs <= 0.0) throw DegenerateMapError("sim_metric: map without mass");
    double sim = 0.0;
    for (std::size_t i = 0; i < Y.numel(); ++i)
        sim += std::min(Y.data()[i] / ys, Q.data()[i] / qs);
    return sim;
}

/// Average-annotation map: all fixations accumulated, blurred, peak-normalized.
inline Tensor center_bias_map(const std::vector<FixationRecord>& records, int H, int W,
                              double sigma) {
    if (records.empty()) throw NoFixationsError("center_bias_map: no records");
    if (sigma <= 0.0) throw ConfigError("center_bias_map needs sigma > 0");
    Tensor map({H, W});
    for (const FixationRecord& r : records) {
        if (r.x < 0 || r.x >= W || r.y < 0 || r.y >= H)
            throw DataError("fixation out of bounds in center_bias_map");
        detail::add_truncated_gaussian(map, r.y, r.x, sigma);
    }
    double peak = 0.0;
    for (double v : map.data()) peak = std::max(peak, v);
    for (double& v : map.data()) v /= peak;
    return map;
}

/// Corner-aligned bilinear resize for 2-D maps (evaluation-side utility,
/// not differentiable).
inline Tensor resize_bilinear(const Tensor& src, int H, int W) {
    if (src.ndim() != 2) throw DimensionError("resize_bilinear expects a 2-D map");
    if (H < 1 || W < 1) throw DimensionError("resize target must be positive");
    const int h = src.dim(0), w = src.dim(1);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y) {
        const double fy = H == 1 ? 0.0 : static_cast<double>(y) * (h - 1) / (H - 1);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - y0;
        for (int x = 0; x < W; ++x) {
            const double fx = W == 1 ? 0.0 : static_cast<double>(x) * (w - 1) / (W - 1);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - x0;
            const double top = src.at(y0, x0) + tx * (src.at(y0, x1) - src.at(y0, x0));
            const double bot = src.at(y1, x0) + tx * (src.at(y1, x1) - src.at(y1, x0));
            out.at(y, x) = top + ty * (bot - top);
        }
    }
    return out;
}

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"auc_judd", "sauc", "nss", "cc", "sim"};
    return names;
}

struct FrameMetrics {
    std::string video_id;
    int frame_idx = 0;
    std::map<std::string, double> values;
    std::map<std::string, std::string> skipped;  // metric -> reason
};

struct MetricReport {
    std::vector<FrameMetrics> frames;
    std::map<std::string, std::map<std::string, double>> per_video;  // video -> metric -> mean
    std::map<std::string, double> dataset_means;                     // metric -> mean over videos
    std::map<std::string, int> skip_counts;                          // metric -> skipped frames
    std::vector<std::string> missing;                                // absent prediction files
    std::vector<std::string> unexpected;                             // predictions with no ground truth
};

struct EvalOptions {
    int splits = 100;
    std::uint64_t seed = 0;
    double sigma = 0.0;  // 0 -> dataset sigma
    std::filesystem::path shuffle_pool;  // optional dataset supplying s-AUC negatives
};

/// Predictions live under pred_dir/<video_id>/map_00000.stns at any
/// resolution; they are bilinearly resized to ground-truth resolution first.
/// Per-video means run over defined frames; dataset means are unweighted
/// over videos.
inline MetricReport evaluate_dataset(const std::filesystem::path& pred_dir,
                                     const std::filesystem::path& gt_dir,
                                     const EvalOptions& opt = {}) {
    VideoDataset ds = VideoDataset::open(gt_dir);
    const double sigma = opt.sigma > 0.0 ? opt.sigma : ds.sigma();
    const int S = ds.size();

    // Negative pools for s-AUC: fixation cells of every *other* video.
    std::map<std::string, Tensor> pools;
    {
        std::vector<FixationRecord> pool_records;
        if (opt.shuffle_pool.empty()) {
            pool_records = ds.all_records();
        } else {
            VideoDataset pool_ds = VideoDataset::open(opt.shuffle_pool);
            if (pool_ds.size() != S)
                throw DataError("shuffle pool resolution differs from ground truth");
            pool_records = pool_ds.all_records();
        }
        for (const auto& id : ds.video_ids()) {
            Tensor pool({S, S});
            for (const FixationRecord& r : pool_records)
                if (r.video_id != id) pool.at(r.y, r.x) = 1.0;
            pools.emplace(id, pool);
        }
    }

    MetricReport report;
    if (std::filesystem::exists(pred_dir))
        for (const auto& entry : std::filesystem::directory_iterator(pred_dir)) {
            if (!entry.is_directory()) continue;
            const std::string id = entry.path().filename().string();
            const auto& ids = ds.video_ids();
            if (std::find(ids.begin(), ids.end(), id) == ids.end())
                report.unexpected.push_back(id);
        }
    std::sort(report.unexpected.begin(), report.unexpected.end());
    for (const auto& id : ds.video_ids()) {
        for (int t = 0; t < ds.frame_count(id); ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "map_%05d.stns", t);
            const auto pred_path = pred_dir / id / name;
            if (!std::filesystem::exists(pred_path)) {
                report.missing.push_back(id + "/" + name);
                continue;
            }
            Tensor pred = load_stns(pred_path);
            if (pred.ndim() != 2)
                throw DataError("prediction " + pred_path.string() + " is not a 2-D map");
            if (pred.dim(0) != S || pred.dim(1) != S) pred = resize_bilinear(pred, S, S);

            FrameMetrics fm;
            fm.video_id = id;
            fm.frame_idx = t;
            const auto& recs = ds.records_for(id, t);
            Tensor P = rasterize(recs, S, S);
            auto guard = [&fm](const std::string& metric, auto&& fn) {
                try {
                    fm.values[metric] = fn();
                } catch (const Error& e) {
                    fm.skipped[metric] = e.what();
                }
            };
            guard("auc_judd", [&] { return auc_judd(pred, P); });
            guard("sauc", [&] {
                return shuffled_auc(pred, P, pools.at(id), opt.splits, opt.seed);
            });
            guard("nss", [&] { return nss_metric(pred, P); });
            if (recs.empty()) {
                fm.skipped["cc"] = "no fixations";
                fm.skipped["sim"] = "no fixations";
            } else {
                Tensor Q = densify(P, sigma);
                guard("cc", [&] { return cc_metric(pred, Q); });
                guard("sim", [&] { return sim_metric(pred, Q); });
            }
            report.frames.push_back(std::move(fm));
        }
    }

    for (const auto& metric : metric_names()) {
        std::map<std::string, std::pair<double, int>> acc;  // video -> (sum, n)
        for (const FrameMetrics& fm : report.frames) {
            auto it = fm.values.find(metric);
            if (it != fm.values.end()) {
                acc[fm.video_id].first += it->second;
                acc[fm.video_id].second += 1;
            } else {
                report.skip_counts[metric] += 1;
            }
        }
        double total = 0.0;
        int videos = 0;
        for (const auto& [video, sums] : acc) {
            const double mean = sums.first / sums.second;
            report.per_video[video][metric] = mean;
            total += mean;
            ++videos;
        }
        if (videos > 0) report.dataset_means[metric] = total / videos;
    }
    return report;
}

/// Line-oriented human-readable table.
inline void write_report_text(const MetricReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path.string());
    out << "scope";
    for (const auto& m : metric_names()) out << "\t" << m;
    out << "\n";
    auto row = [&](const std::string& scope, const std::map<std::string, double>& values) {
        out << scope;
        for (const auto& m : metric_names()) {
            auto it = values.find(m);
            out << "\t";
            if (it == values.end()) out << "-";
            else out << it->second;
        }
        out << "\n";
    };
    for (const auto& [video, values] : report.per_video) row("video:" + video, values);
    row("dataset", report.dataset_means);
    for (const auto& [metric, count] : report.skip_counts)
        out << "skipped\t" << metric << "\t" << count << "\n";
    for (const auto& m : report.missing) out << "missing\t" << m << "\n";
    for (const auto& m : report.unexpected) out << "unexpected\t" << m << "\n";
}

/// Machine-readable rows: metric,video_id,frame_idx,value.
inline void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path.string());
    out << std::setprecision(17) << "metric,video_id,frame_idx,value\n";
    for (const FrameMetrics& fm : report.frames)
        for (const auto& metric : metric_names()) {
            auto it = fm.values.find(metric);
            if (it != fm.values.end())
                out << metric << "," << fm.video_id << "," << fm.frame_idx << "," << it->second
                    << "\n";
        }
}

}  // namespace vsal
