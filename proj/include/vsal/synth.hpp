#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vsal/data.hpp"

namespace vsal {

struct SynthConfig {
    int videos = 2;
    int frames = 24;
    int size = 96;
    std::uint64_t seed = 7;
    int observers = 3;
    double sigma = 0.0;  // densify sigma recorded in meta; 0 -> size/32
};

struct Blob {
    double cy = 0, cx = 0;  // centre
    double vy = 0, vx = 0;  // per-frame velocity
    double radius = 0;      // Gaussian sigma of the intensity profile
    double color[3] = {0, 0, 0};
};

/// Everything derived for one video: rendered frames (0..255), per-frame blob
/// states, and the programme-defined fixations at jittered blob centres.
struct SynthVideo {
    std::string id;
    std::vector<Tensor> frames;                // [S,S,3]
    std::vector<std::vector<Blob>> blobs;      // per frame
    std::vector<FixationRecord> fixations;
};

namespace detail {

inline std::uint64_t synth_video_seed(std::uint64_t seed, int video) {
    return seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(video + 1));
}

}  // namespace detail

/// Deterministic renderer for video `v`: two Gaussian blobs bouncing over a
/// static vertical-gradient background. Fixations are blob centres plus a
/// jitter below radius/2, so they always land inside the 2*radius blob mask.
///
/// Draw order per video (contractual): background base and gradient (3+3),
/// then per blob radius, cy, cx, vy, vx, colour (3); then per frame, per
/// blob, per observer the jitter pair (dy, dx).
inline SynthVideo synth_render_video(const SynthConfig& cfg, int v) {
    const int S = cfg.size;
    if (cfg.videos < 1 || cfg.frames < 1 || S < 16)
        throw ConfigError("synth needs videos >= 1, frames >= 1, size >= 16");
    std::mt19937_64 rng(detail::synth_video_seed(cfg.seed, v));
    SynthVideo video;
    {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "v%03d", v);
        video.id = buf;
    }
    double base[3], grad[3];
    for (double& b : base) b = detail::uniform_real(rng, 0.0, 60.0);
    for (double& g : grad) g = detail::uniform_real(rng, 0.0, 40.0);

    const int kBlobs = 2;
    std::vector<Blob> blobs(kBlobs);
    for (Blob& b : blobs) {
        b.radius = detail::uniform_real(rng, S / 16.0, S / 10.0);
        const double margin = 2.0 * b.radius;
        b.cy = detail::uniform_real(rng, margin, S - 1 - margin);
        b.cx = detail::uniform_real(rng, margin, S - 1 - margin);
        b.vy = detail::uniform_real(rng, -S / 40.0, S / 40.0);
        b.vx = detail::uniform_real(rng, -S / 40.0, S / 40.0);
        for (double& c : b.color) c = detail::uniform_real(rng, 120.0, 255.0);
    }

    for (int t = 0; t < cfg.frames; ++t) {
        Tensor frame({S, S, 3});
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                for (int c = 0; c < 3; ++c)
                    frame.at(y, x, c) = base[c] + grad[c] * static_cast<double>(y) / S;
        for (const Blob& b : blobs) {
            const double inv = 1.0 / (2.0 * b.radius * b.radius);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const double d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
                    const double w = std::exp(-d2 * inv);
                    for (int c = 0; c < 3; ++c) frame.at(y, x, c) += b.color[c] * w;
                }
        }
        for (double& px : frame.data()) px = std::min(255.0, std::max(0.0, px));
        video.frames.push_back(frame);
        video.blobs.push_back(blobs);

        for (int bi = 0; bi < kBlobs; ++bi)
            for (int o = 0; o < cfg.observers; ++o) {
                const Blob& b = blobs[bi];
                const double dy = detail::uniform_real(rng, -b.radius / 2.0, b.radius / 2.0);
                const double dx = detail::uniform_real(rng, -b.radius / 2.0, b.radius / 2.0);
                FixationRecord rec;
                rec.video_id = video.id;
                rec.frame_idx = t;
                rec.observer_id = "o" + std::to_string(o);
                rec.y = static_cast<int>(std::lround(b.cy + dy));
                rec.x = static_cast<int>(std::lround(b.cx + dx));
                video.fixations.push_back(rec);
            }

        for (Blob& b : blobs) {
            const double margin = 2.0 * b.radius;
            b.cy += b.vy;
            b.cx += b.vx;
            if (b.cy < margin) { b.cy = 2 * margin - b.cy; b.vy = -b.vy; }
            if (b.cy > S - 1 - margin) { b.cy = 2 * (S - 1 - margin) - b.cy; b.vy = -b.vy; }
            if (b.cx < margin) { b.cx = 2 * margin - b.cx; b.vx = -b.vx; }
            if (b.cx > S - 1 - margin) { b.cx = 2 * (S - 1 - margin) - b.cx; b.vx = -b.vx; }
        }
    }
    return video;
}

/// Split rule: everything trains below three videos; from three up, the last
/// max(1, N/5) ids validate. Test stays empty at desk scale.
inline DatasetSplit synth_split(const std::vector<std::string>& ids) {
    DatasetSplit split;
    const std::size_t n = ids.size();
    const std::size_t n_val = n >= 3 ? std::max<std::size_t>(1, n / 5) : 0;
    for (std::size_t i = 0; i < n; ++i)
        (i < n - n_val ? split.train : split.val).push_back(ids[i]);
    return split;
}

/// Writes the full dataset layout consumed by VideoDataset::open.
inline void generate_synthetic_dataset(const std::filesystem::path& out, const SynthConfig& cfg) {
    std::filesystem::create_directories(out / "videos");
    std::vector<std::string> ids;
    std::vector<FixationRecord> all;
    for (int v = 0; v < cfg.videos; ++v) {
        SynthVideo video = synth_render_video(cfg, v);
        ids.push_back(video.id);
        const auto dir = out / "videos" / video.id;
        std::filesystem::create_directories(dir);
        for (int t = 0; t < cfg.frames; ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%05d.stns", t);
            save_stns(dir / name, video.frames[t]);
        }
        all.insert(all.end(), video.fixations.begin(), video.fixations.end());
    }
    save_fixations(out / "fixations.csv", all);
    synth_split(ids).save(out / "splits.txt");
    std::ofstream meta(out / "meta.txt");
    meta << "size = " << cfg.size << "\n";
    meta << "videos = " << cfg.videos << "\n";
    meta << "frames_per_video = " << cfg.frames << "\n";
    meta << "sigma = " << (cfg.sigma > 0.0 ? cfg.sigma : cfg.size / 32.0) << "\n";
    meta << "seed = " << cfg.seed << "\n";
    meta << "observers = " << cfg.observers << "\n";
}

}  // namespace vsal
