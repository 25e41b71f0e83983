#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vsal/stns.hpp"
#include "vsal/tensor.hpp"

namespace vsal {

struct FixationRecord {
    std::string video_id;
    int frame_idx = 0;
    std::string observer_id;
    int x = 0;  // column
    int y = 0;  // row
};

namespace detail {

/// Unbiased bounded draw with a fixed algorithm (rejection on the biased top
/// of the 64-bit range, then modulo) so sampling is part of the contract and
/// oracles can replay it engine-step for engine-step.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) throw ConfigError("uniform_index over empty range");
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

/// Uniform real in [lo, hi) built from the top 53 bits of one engine draw.
inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
}

/// Adds a truncated Gaussian (radius 4*sigma) centred at (cy,cx) into map.
inline void add_truncated_gaussian(Tensor& map, double cy, double cx, double sigma) {
    const int H = map.dim(0), W = map.dim(1);
    const double r = 4.0 * sigma;
    const double r2 = r * r;
    const int y0 = std::max(0, static_cast<int>(std::ceil(cy - r)));
    const int y1 = std::min(H - 1, static_cast<int>(std::floor(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::ceil(cx - r)));
    const int x1 = std::min(W - 1, static_cast<int>(std::floor(cx + r)));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            if (d2 <= r2) map.at(y, x) += std::exp(-d2 * inv);
        }
}

}  // namespace detail

/// Parses the fixation CSV (header `video_id,frame_idx,observer_id,x,y`).
/// Malformed or out-of-bounds rows are skipped and reported with line numbers
/// through `diagnostics`; W/H are the declared video resolution.
inline std::vector<FixationRecord> load_fixations(const std::filesystem::path& path, int W, int H,
                                                  std::vector<std::string>* diagnostics = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open fixation file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty fixation file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "video_id,frame_idx,observer_id,x,y")
        throw DataError("bad fixation header in " + path.string() + ": " + line);
    std::vector<FixationRecord> records;
    int lineno = 1;
    auto report = [&](const std::string& why) {
        if (diagnostics)
            diagnostics->push_back("line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(pos));
                break;
            }
            fields.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (fields.size() != 5) {
            report("expected 5 fields, got " + std::to_string(fields.size()));
            continue;
        }
        FixationRecord rec;
        rec.video_id = fields[0];
        rec.observer_id = fields[2];
        try {
            std::size_t used = 0;
            rec.frame_idx = std::stoi(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument(fields[1]);
            rec.x = std::stoi(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument(fields[3]);
            rec.y = std::stoi(fields[4], &used);
            if (used != fields[4].size()) throw std::invalid_argument(fields[4]);
        } catch (const std::exception&) {
            report("non-integer field");
            continue;
        }
        if (rec.frame_idx < 0) {
            report("negative frame index");
            continue;
        }
        if (rec.x < 0 || rec.x >= W || rec.y < 0 || rec.y >= H) {
            report("fixation (" + std::to_string(rec.x) + "," + std::to_string(rec.y) +
                   ") outside " + std::to_string(W) + "x" + std::to_string(H));
            continue;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline void save_fixations(const std::filesystem::path& path,
                           const std::vector<FixationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write fixation file: " + path.string());
    out << "video_id,frame_idx,observer_id,x,y\n";
    for (const FixationRecord& r : records)
        out << r.video_id << "," << r.frame_idx << "," << r.observer_id << "," << r.x << ","
            << r.y << "\n";
}

/// Binary fixation map for one frame; duplicates collapse to a single 1.
inline Tensor rasterize(const std::vector<FixationRecord>& records, int H, int W) {
    Tensor P({H, W});
    for (const FixationRecord& r : records) {
        if (r.x < 0 || r.x >= W || r.y < 0 || r.y >= H)
            throw DataError("fixation out of bounds in rasterize");
        P.at(r.y, r.x) = 1.0;
    }
    return P;
}

/// Continuous ground truth: sum of truncated Gaussians at fixations,
/// renormalized to unit sum.
inline Tensor densify(const Tensor& P, double sigma) {
    if (P.ndim() != 2) throw DimensionError("densify expects a 2-D map");
    if (sigma <= 0.0) throw ConfigError("densify needs sigma > 0");
    Tensor Q(P.shape());
    const int H = P.dim(0), W = P.dim(1);
    std::size_t fixations = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (P.at(y, x) == 1.0) {
                detail::add_truncated_gaussian(Q, y, x, sigma);
                ++fixations;
            } else if (P.at(y, x) != 0.0) {
                throw DataError("densify expects a binary map");
            }
    if (fixations == 0) throw NoFixationsError("densify: no fixations to blur");
    double s = 0.0;
    for (double v : Q.data()) s += v;
    for (double& v : Q.data()) v /= s;
    return Q;
}

/// Block reduction rules for bringing ground truth to prediction resolution:
/// a low-res cell is fixated iff any covered pixel is.
inline Tensor downsample_fixation_map(const Tensor& P, int h, int w) {
    if (P.ndim() != 2) throw DimensionError("expected 2-D fixation map");
    const int H = P.dim(0), W = P.dim(1);
    if (h <= 0 || w <= 0 || H % h != 0 || W % w != 0)
        throw DimensionError("cannot reduce " + shape_str(P.shape()) + " to " +
                             std::to_string(h) + "x" + std::to_string(w));
    const int by = H / h, bx = W / w;
    Tensor out({h, w});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (P.at(y, x) != 0.0) out.at(y / by, x / bx) = 1.0;
    return out;
}

/// Box-average then renormalize to unit sum.
inline Tensor downsample_distribution(const Tensor& Q, int h, int w) {
    if (Q.ndim() != 2) throw DimensionError("expected 2-D distribution");
    const int H = Q.dim(0), W = Q.dim(1);
    if (h <= 0 || w <= 0 || H % h != 0 || W % w != 0)
        throw DimensionError("cannot reduce " + shape_str(Q.shape()) + " to " +
                             std::to_string(h) + "x" + std::to_string(w));
    const int by = H / h, bx = W / w;
    Tensor out({h, w});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(y / by, x / bx) += Q.at(y, x);
    double s = 0.0;
    for (double v : out.data()) s += v;
    if (s <= 0.0) throw DegenerateMapError("distribution has no mass after reduction");
    for (double& v : out.data()) v /= s;
    return out;
}

struct DatasetSplit {
    std::vector<std::string> train, val, test;

    static DatasetSplit load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open split manifest: " + path.string());
        DatasetSplit split;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const std::size_t comma = line.find(',');
            if (comma == std::string::npos)
                throw DataError("split manifest line " + std::to_string(lineno) +
                                " is not `split,video_id`: " + line);
            const std::string which = line.substr(0, comma);
            const std::string id = line.substr(comma + 1);
            if (which == "train") split.train.push_back(id);
            else if (which == "val") split.val.push_back(id);
            else if (which == "test") split.test.push_back(id);
            else
                throw DataError("unknown split name at line " + std::to_string(lineno) + ": " +
                                which);
        }
        return split;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write split manifest: " + path.string());
        for (const auto& id : train) out << "train," << id << "\n";
        for (const auto& id : val) out << "val," << id << "\n";
        for (const auto& id : test) out << "test," << id << "\n";
    }

    /// Splits must partition the dataset: pairwise disjoint, union = all ids.
    void validate(const std::vector<std::string>& all_ids) const {
        std::set<std::string> seen;
        auto absorb = [&](const std::vector<std::string>& part, const char* name) {
            for (const auto& id : part)
                if (!seen.insert(id).second)
                    throw DataError("video " + id + " listed twice (last in " + name + ")");
        };
        absorb(train, "train");
        absorb(val, "val");
        absorb(test, "test");
        for (const auto& id : all_ids)
            if (!seen.count(id)) throw DataError("video " + id + " missing from split manifest");
        for (const auto& id : seen)
            if (std::find(all_ids.begin(), all_ids.end(), id) == all_ids.end())
                throw DataError("split manifest names unknown video " + id);
    }
};

/// On-disk dataset handle.
///
///   root/meta.txt            `key = value`: size, videos, frames_per_video,
///                            sigma, seed, observers
///   root/fixations.csv       header `video_id,frame_idx,observer_id,x,y`
///   root/splits.txt          `split,video_id` lines
///   root/videos/<id>/frame_00000.stns   [S,S,3] float32, 0..255
class VideoDataset {
public:
    static VideoDataset open(const std::filesystem::path& root) {
        VideoDataset ds;
        ds.root_ = root;
        std::ifstream meta(root / "meta.txt");
        if (!meta) throw DataError("missing dataset meta: " + (root / "meta.txt").string());
        std::string line;
        while (std::getline(meta, line)) {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            auto trim = [](std::string& s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t") + 1);
            };
            trim(key);
            trim(val);
            if (key == "size") ds.size_ = std::stoi(val);
            else if (key == "sigma") ds.sigma_ = std::stod(val);
        }
        if (ds.size_ <= 0) throw DataError("dataset meta lacks a positive `size`");
        if (ds.sigma_ <= 0.0) ds.sigma_ = ds.size_ / 32.0;

        const auto videos_dir = root / "videos";
        if (!std::filesystem::is_directory(videos_dir))
            throw DataError("missing videos directory: " + videos_dir.string());
        for (const auto& entry : std::filesystem::directory_iterator(videos_dir))
            if (entry.is_directory()) ds.ids_.push_back(entry.path().filename().string());
        std::sort(ds.ids_.begin(), ds.ids_.end());
        if (ds.ids_.empty()) throw DataError("dataset has no videos: " + root.string());
        for (const auto& id : ds.ids_) {
            int count = 0;
            while (std::filesystem::exists(ds.frame_path(id, count))) ++count;
            if (count == 0) throw DataError("video " + id + " has no frames");
            ds.frames_[id] = count;
        }
        for (FixationRecord& rec :
             load_fixations(root / "fixations.csv", ds.size_, ds.size_, nullptr))
            ds.fixations_[rec.video_id][rec.frame_idx].push_back(std::move(rec));
        ds.split_ = DatasetSplit::load(root / "splits.txt");
        ds.split_.validate(ds.ids_);
        return ds;
    }

    const std::filesystem::path& root() const { return root_; }
    int size() const { return size_; }
    double sigma() const { return sigma_; }
    const std::vector<std::string>& video_ids() const { return ids_; }
    const DatasetSplit& split() const { return split_; }
    int frame_count(const std::string& id) const {
        auto it = frames_.find(id);
        if (it == frames_.end()) throw DataError("unknown video " + id);
        return it->second;
    }

    std::filesystem::path frame_path(const std::string& id, int t) const {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05d.stns", t);
        return root_ / "videos" / id / name;
    }

    /// Frame scaled from stored 0..255 to [0,1].
    Tensor load_frame(const std::string& id, int t) const {
        Tensor raw = load_stns(frame_path(id, t));
        if (raw.ndim() != 3 || raw.dim(2) != 3)
            throw DataError("frame " + frame_path(id, t).string() + " is not [H,W,3]");
        for (double& v : raw.data()) v /= 255.0;
        return raw;
    }

    const std::vector<FixationRecord>& records_for(const std::string& id, int t) const {
        static const std::vector<FixationRecord> empty;
        auto v = fixations_.find(id);
        if (v == fixations_.end()) return empty;
        auto f = v->second.find(t);
        return f == v->second.end() ? empty : f->second;
    }

    Tensor fixation_map(const std::string& id, int t) const {
        return rasterize(records_for(id, t), size_, size_);
    }

    /// Unit-sum ground truth; fixation-free frames fall back to uniform.
    Tensor density_map(const std::string& id, int t) const {
        const auto& recs = records_for(id, t);
        if (recs.empty())
            return Tensor::full({size_, size_}, 1.0 / (static_cast<double>(size_) * size_));
        return densify(rasterize(recs, size_, size_), sigma_);
    }

    std::vector<FixationRecord> all_records() const {
        std::vector<FixationRecord> out;
        for (const auto& [id, by_frame] : fixations_)
            for (const auto& [t, recs] : by_frame)
                out.insert(out.end(), recs.begin(), recs.end());
        return out;
    }

private:
    std::filesystem::path root_;
    int size_ = 0;
    double sigma_ = 0.0;
    std::vector<std::string> ids_;
    std::map<std::string, int> frames_;
    std::map<std::string, std::map<int, std::vector<FixationRecord>>> fixations_;
    DatasetSplit split_;
};

struct VideoBatch {
    std::string video_id;
    int start = 0;
    std::vector<Tensor> frames;  // [S,S,3] in [0,1]
    std::vector<Tensor> P;       // [S,S] binary
    std::vector<Tensor> Q;       // [S,S] unit sum
};

/// Draw order (contractual): video index among eligible ids, then start
/// offset. Both via detail::uniform_index on the caller's engine.
inline std::pair<std::string, int> choose_video_window(const VideoDataset& ds,
                                                       std::mt19937_64& rng,
                                                       const std::vector<std::string>& ids,
                                                       int length) {
    if (length < 1) throw ConfigError("batch length must be >= 1");
    std::vector<std::string> eligible;
    for (const auto& id : ids)
        if (ds.frame_count(id) >= length) eligible.push_back(id);
    if (eligible.empty())
        throw DataError("no video offers " + std::to_string(length) + " consecutive frames");
    const std::string video = eligible[detail::uniform_index(rng, eligible.size())];
    const int slack = ds.frame_count(video) - length;
    const int start =
        static_cast<int>(detail::uniform_index(rng, static_cast<std::uint64_t>(slack) + 1));
    return {video, start};
}

inline VideoBatch sample_video_batch(const VideoDataset& ds, std::mt19937_64& rng,
                                     const std::vector<std::string>& ids, int length = 20) {
    VideoBatch batch;
    std::tie(batch.video_id, batch.start) = choose_video_window(ds, rng, ids, length);
    for (int t = batch.start; t < batch.start + length; ++t) {
        batch.frames.push_back(ds.load_frame(batch.video_id, t));
        batch.P.push_back(ds.fixation_map(batch.video_id, t));
        batch.Q.push_back(ds.density_map(batch.video_id, t));
    }
    return batch;
}

struct ImageBatch {
    std::vector<std::pair<std::string, int>> items;  // (video_id, frame)
    std::vector<Tensor> frames;
    std::vector<Tensor> P;
    std::vector<Tensor> Q;
};

/// Treats every frame of every listed video as a still image. With at least
/// `count` candidates a partial Fisher-Yates draws without replacement;
/// fewer candidates fall back to independent draws with replacement.
inline std::vector<std::pair<std::string, int>> choose_images(const VideoDataset& ds,
                                                              std::mt19937_64& rng,
                                                              const std::vector<std::string>& ids,
                                                              int count) {
    if (count < 1) throw ConfigError("batch size must be >= 1");
    std::vector<std::pair<std::string, int>> candidates;
    for (const auto& id : ids)
        for (int t = 0; t < ds.frame_count(id); ++t) candidates.emplace_back(id, t);
    if (candidates.empty()) throw DataError("no still images to sample from");
    std::vector<std::pair<std::string, int>> items;
    if (candidates.size() >= static_cast<std::size_t>(count)) {
        for (int j = 0; j < count; ++j) {
            const std::size_t u =
                j + detail::uniform_index(rng, candidates.size() - static_cast<std::size_t>(j));
            std::swap(candidates[j], candidates[u]);
            items.push_back(candidates[j]);
        }
    } else {
        for (int j = 0; j < count; ++j)
            items.push_back(candidates[detail::uniform_index(rng, candidates.size())]);
    }
    return items;
}

inline ImageBatch sample_image_batch(const VideoDataset& ds, std::mt19937_64& rng,
                                     const std::vector<std::string>& ids, int count = 20) {
    ImageBatch batch;
    batch.items = choose_images(ds, rng, ids, count);
    for (const auto& [id, t] : batch.items) {
        batch.frames.push_back(ds.load_frame(id, t));
        batch.P.push_back(ds.fixation_map(id, t));
        batch.Q.push_back(ds.density_map(id, t));
    }
    return batch;
}

}  // namespace vsal
