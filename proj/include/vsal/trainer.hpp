#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vsal/data.hpp"
#include "vsal/losses.hpp"
#include "vsal/model.hpp"

namespace vsal {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments shaped like the parameter. The step counter advances only when the
/// parameter is actually updated, so a masked parameter keeps its bias
/// correction consistent with the updates it has seen.
struct AdamSlot {
    Tensor m, v;
    long steps = 0;
};

struct OptimState {
    AdamConfig cfg;
    std::map<std::string, AdamSlot> slots;

    AdamSlot& slot_for(const std::string& name, const Shape& shape) {
        auto it = slots.find(name);
        if (it == slots.end()) it = slots.emplace(name, AdamSlot{Tensor(shape), Tensor(shape)}).first;
        if (it->second.m.shape() != shape)
            throw DimensionError("optimizer state shape mismatch for " + name);
        return it->second;
    }
};

/// One bias-corrected Adam update over `params`, reading each tensor's grad
/// buffer. All gradients are validated before anything mutates, so a
/// non-finite gradient aborts the whole step and names its parameter.
/// Masking works by omission: a parameter not passed here keeps its values,
/// moments, and step count bit-identical.
inline void adam_step(const std::vector<std::pair<std::string, Tensor>>& params,
                      OptimState& state, double lr) {
    for (const auto& [name, t] : params)
        for (double g : t.grad())
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + name);
    for (const auto& [name, t] : params) {
        AdamSlot& slot = state.slot_for(name, t.shape());
        ++slot.steps;
        const double c1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(slot.steps));
        const double c2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(slot.steps));
        Tensor param = t;  // shared handle into the model
        for (std::size_t i = 0; i < param.numel(); ++i) {
            const double g = t.grad()[i];
            double& m = slot.m.data()[i];
            double& v = slot.v.data()[i];
            m = state.cfg.beta1 * m + (1.0 - state.cfg.beta1) * g;
            v = state.cfg.beta2 * v + (1.0 - state.cfg.beta2) * g * g;
            param.data()[i] -= lr * (m / c1) / (std::sqrt(v / c2) + state.cfg.eps);
        }
    }
}

/// Step decay: base_lr / 10^floor(epoch/2).
inline double lr_for_epoch(double base_lr, int epoch) {
    if (epoch < 0) throw ConfigError("epoch must be non-negative");
    return base_lr / std::pow(10.0, epoch / 2);
}

struct TrainConfig {
    // optimization
    double base_lr = 1e-4;
    int epochs = 10;
    int steps_per_epoch = 10;  // video+image batch pairs per epoch
    int batch_frames = 20;     // window length, also the image batch size
    int patience = 2;          // epochs of no validation improvement before stopping
    std::uint64_t seed = 0;
    bool freeze_encoder = false;
    LossWeights weights;
    // model geometry (so one config file drives construction and training)
    int input_size = 96;
    std::vector<int> widths = {16, 32, 64, 64, 64};
    int attention_channels = 16;
    int hidden_channels = 32;
    bool attention_enabled = true;
    bool residual = true;

    ModelConfig to_model_config() const {
        ModelConfig m;
        m.encoder.input_size = input_size;
        m.encoder.widths = widths;
        m.attention_channels = attention_channels;
        m.hidden_channels = hidden_channels;
        m.attention_enabled = attention_enabled;
        m.residual = residual;
        return m;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, int lineno) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("line " + std::to_string(lineno) + ": expected boolean, got '" + v + "'");
}

}  // namespace detail

/// Line-oriented `key = value` file; '#' starts a comment; unknown keys are
/// rejected with their line number.
inline TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path.string());
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            if (key == "base_lr") cfg.base_lr = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "steps_per_epoch") cfg.steps_per_epoch = std::stoi(value);
            else if (key == "batch_frames") cfg.batch_frames = std::stoi(value);
            else if (key == "patience") cfg.patience = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "freeze_encoder") cfg.freeze_encoder = detail::parse_bool(value, lineno);
            else if (key == "alpha1") cfg.weights.alpha1 = std::stod(value);
            else if (key == "alpha2") cfg.weights.alpha2 = std::stod(value);
            else if (key == "input_size") cfg.input_size = std::stoi(value);
            else if (key == "widths") cfg.widths = detail::parse_shape_csv(value);
            else if (key == "attention_channels") cfg.attention_channels = std::stoi(value);
            else if (key == "hidden_channels") cfg.hidden_channels = std::stoi(value);
            else if (key == "attention_enabled")
                cfg.attention_enabled = detail::parse_bool(value, lineno);
            else if (key == "residual") cfg.residual = detail::parse_bool(value, lineno);
            else
                throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key +
                                  "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("line " + std::to_string(lineno) + ": bad value '" + value +
                              "' for " + key);
        }
    }
    if (cfg.epochs < 1 || cfg.steps_per_epoch < 1 || cfg.batch_frames < 1 || cfg.patience < 0)
        throw ConfigError("config values out of range");
    return cfg;
}

/// Aggregate loss terms of one batch, evaluated untraced for logging.
struct LossTerms {
    double total = 0.0, kl = 0.0, cc = 0.0, nss = 0.0;
};

namespace detail {

inline LossTerms loss_terms(const std::vector<Tensor>& Y, const std::vector<Tensor>& P,
                            const std::vector<Tensor>& Q, const LossWeights& w) {
    LossTerms t;
    for (std::size_t i = 0; i < Y.size(); ++i) {
        Tensor kl = kl_div(Y[i], Q[i], w.eps);
        Tensor cc = cc_loss(Y[i], Q[i], w.eps);
        t.kl += kl.value();
        t.cc += cc.value();
        if (fixation_count(P[i]) > 0) {
            Tensor nss = nss_loss(Y[i], P[i], w.eps);
            t.nss += nss.value();
        }
    }
    t.total = t.kl + w.alpha1 * t.cc + w.alpha2 * t.nss;
    return t;
}

inline bool lstm_or_readout(const std::string& name) {
    return name.rfind("lstm_", 0) == 0 || name.rfind("readout_", 0) == 0;
}

inline bool encoder_param(const std::string& name) { return name.rfind("enc", 0) == 0; }

/// Parameters Adam may touch for one batch type. Image batches exclude the
/// convLSTM and readout entirely (the masking contract) and the encoder when
/// frozen; video batches exclude only the frozen encoder.
inline std::vector<std::pair<std::string, Tensor>> trainable_params(const SaliencyModel& model,
                                                                    bool video_batch,
                                                                    bool freeze_encoder) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : model.named_params()) {
        if (freeze_encoder && encoder_param(name)) continue;
        if (!video_batch && lstm_or_readout(name)) continue;
        out.emplace_back(name, t);
    }
    return out;
}

inline void zero_all_grads(const SaliencyModel& model) {
    for (const auto& [name, t] : model.named_params()) {
        Tensor handle = t;
        handle.zero_grad();
    }
}

inline std::vector<Tensor> to_feature_res_P(const std::vector<Tensor>& P, int side) {
    std::vector<Tensor> out;
    out.reserve(P.size());
    for (const Tensor& p : P) out.push_back(downsample_fixation_map(p, side, side));
    return out;
}

inline std::vector<Tensor> to_feature_res_Q(const std::vector<Tensor>& Q, int side) {
    std::vector<Tensor> out;
    out.reserve(Q.size());
    for (const Tensor& q : Q) out.push_back(downsample_distribution(q, side, side));
    return out;
}

}  // namespace detail

/// Mean per-window L^d over non-overlapping windows (starts 0, L, 2L, ...)
/// of every listed video, evaluated untraced. NaN when no window fits.
inline double validation_loss(const SaliencyModel& model, const VideoDataset& ds,
                              const std::vector<std::string>& ids, int window,
                              const LossWeights& w = {}) {
    if (window < 1) throw ConfigError("validation window must be >= 1");
    const int side = model.config().encoder.feature_side();
    double total = 0.0;
    int windows = 0;
    for (const auto& id : ids)
        for (int start = 0; start + window <= ds.frame_count(id); start += window) {
            std::vector<Tensor> frames, P, Q;
            for (int t = start; t < start + window; ++t) {
                frames.push_back(ds.load_frame(id, t));
                P.push_back(ds.fixation_map(id, t));
                Q.push_back(ds.density_map(id, t));
            }
            SequenceOutput out = model.forward_sequence(frames);
            Tensor L = video_loss(out.Y, detail::to_feature_res_P(P, side),
                                  detail::to_feature_res_Q(Q, side), w);
            total += L.value();
            ++windows;
        }
    return windows ? total / windows : std::numeric_limits<double>::quiet_NaN();
}

struct TrainResult {
    int epochs_run = 0;
    bool early_stopped = false;
    int best_epoch = -1;  // -1: no validation video, checkpoint holds the final state
    double best_val = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> video_losses;  // chronological, one per video batch
    std::vector<double> image_losses;  // chronological, one per image batch
    std::vector<double> val_losses;    // one per completed epoch
    std::filesystem::path checkpoint;  // best (or final) model
};

/// Alternating-batch training: every step runs one video batch through the
/// full model under L^d, then one image batch through encoder+attention under
/// L^s (skipped entirely for ablated models). Deterministic for a fixed
/// seed/config/data triple. Divergence saves the pre-step parameters to
/// out_dir/last_good and rethrows.
inline TrainResult train(SaliencyModel& model, const VideoDataset& videos,
                         const VideoDataset& statics, const TrainConfig& cfg,
                         const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir / "train_log.txt", std::ios::app);
    if (!log) throw DataError("cannot open training log in " + out_dir.string());

    const auto& train_ids =
        videos.split().train.empty() ? videos.video_ids() : videos.split().train;
    const auto& static_ids =
        statics.split().train.empty() ? statics.video_ids() : statics.split().train;
    const auto& val_ids = videos.split().val;
    const int side = model.config().encoder.feature_side();
    const bool use_images = model.config().attention_enabled;

    std::mt19937_64 rng(cfg.seed);
    OptimState opt;
    TrainResult result;
    result.checkpoint = out_dir / "best";
    double best_val = std::numeric_limits<double>::infinity();
    int since_improvement = 0;
    long step = 0;

    auto run_batch = [&](bool video_batch, const std::vector<Tensor>& frames,
                         const std::vector<Tensor>& P, const std::vector<Tensor>& Q,
                         double lr) {
        detail::zero_all_grads(model);
        std::vector<Tensor> maps;
        {
            GradTape tape;
            if (video_batch) {
                maps = model.forward_sequence(frames).Y;
            } else {
                for (const Tensor& img : frames) {
                    Tensor M = model.attention_forward(model.encode(img));
                    maps.push_back(reshape(M, {side, side}));
                }
            }
            Tensor L = video_loss(maps, P, Q, cfg.weights);
            if (!std::isfinite(L.value()))
                throw NumericalError(std::string(video_batch ? "video" : "image") +
                                     " batch loss is not finite at step " +
                                     std::to_string(step));
            tape.backward(L);
        }
        adam_step(detail::trainable_params(model, video_batch, cfg.freeze_encoder), opt, lr);
        return detail::loss_terms(maps, P, Q, cfg.weights);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_for_epoch(cfg.base_lr, epoch);
        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            try {
                ++step;
                VideoBatch vb = sample_video_batch(videos, rng, train_ids, cfg.batch_frames);
                LossTerms vt = run_batch(true, vb.frames, detail::to_feature_res_P(vb.P, side),
                                         detail::to_feature_res_Q(vb.Q, side), lr);
                result.video_losses.push_back(vt.total);
                log << "step " << step << " type video lr " << lr << " loss " << vt.total
                    << " kl " << vt.kl << " cc " << vt.cc << " nss " << vt.nss << "\n";
                if (!use_images) continue;
                ++step;
                ImageBatch ib = sample_image_batch(statics, rng, static_ids, cfg.batch_frames);
                LossTerms it = run_batch(false, ib.frames, detail::to_feature_res_P(ib.P, side),
                                         detail::to_feature_res_Q(ib.Q, side), lr);
                result.image_losses.push_back(it.total);
                log << "step " << step << " type image lr " << lr << " loss " << it.total
                    << " kl " << it.kl << " cc " << it.cc << " nss " << it.nss << "\n";
            } catch (const NumericalError& e) {
                model.save(out_dir / "last_good");
                log << "aborted: " << e.what() << "\n";
                throw;
            }
        }

        result.epochs_run = epoch + 1;
        const double val = validation_loss(model, videos, val_ids, cfg.batch_frames, cfg.weights);
        result.val_losses.push_back(val);
        if (std::isnan(val)) {
            log << "epoch " << epoch << " lr " << lr << " val none\n";
            continue;
        }
        const bool improved = val < best_val;
        log << "epoch " << epoch << " lr " << lr << " val " << val
            << (improved ? " improved" : " no-improvement") << "\n";
        if (improved) {
            best_val = val;
            result.best_epoch = epoch;
            result.best_val = val;
            since_improvement = 0;
            model.save(result.checkpoint);
        } else if (++since_improvement >= cfg.patience) {
            result.early_stopped = true;
            log << "early stop after epoch " << epoch << "\n";
            break;
        }
    }

    if (result.best_epoch < 0) model.save(result.checkpoint);  // no validation signal
    return result;
}

}  // namespace vsal
