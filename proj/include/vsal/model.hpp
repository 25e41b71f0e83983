#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vsal/ops.hpp"
#include "vsal/stns.hpp"

namespace vsal {

/// Encoder geometry. Five conv3x3+relu blocks with 2x max-pooling after the
/// first three, so the feature grid sits at a fixed 1/8 of the input side.
struct EncoderConfig {
    int input_size = 96;
    std::vector<int> widths = {16, 32, 64, 64, 64};

    static constexpr int kRatio = 8;

    int feature_side() const {
        if (input_size <= 0 || input_size % kRatio != 0)
            throw ConfigError("input side " + std::to_string(input_size) +
                              " is not divisible by " + std::to_string(kRatio));
        return input_size / kRatio;
    }
    int feature_channels() const {
        if (widths.size() != 5) throw ConfigError("encoder expects exactly 5 block widths");
        return widths.back();
    }
    Shape feature_shape() const { return {feature_side(), feature_side(), feature_channels()}; }
};

struct ModelConfig {
    EncoderConfig encoder;
    int attention_channels = 16;
    int hidden_channels = 32;
    bool attention_enabled = true;  // false = ablated model, features pass through untouched
    bool residual = true;
};

struct ConvLSTMState {
    Tensor H;  // [h,w,Ch]
    Tensor C;  // [h,w,Ch]
};

/// One recurrence step, gates kept for inspection.
struct ConvLSTMOut {
    Tensor H, C;
    Tensor i, f, o;
};

struct SequenceOutput {
    std::vector<Tensor> Y;  // per-frame saliency maps [h,w]
    std::vector<Tensor> M;  // per-frame attention maps [h,w] (zeros when disabled)
};

namespace detail {

inline Tensor he_kernel(Shape shape, std::mt19937_64& rng) {
    const int k = shape[0];
    const int cin = shape[2];
    const double stddev = std::sqrt(2.0 / (static_cast<double>(k) * k * cin));
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape), true);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

inline std::string shape_csv(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(s[i]);
    }
    return out;
}

inline Shape parse_shape_csv(const std::string& text) {
    Shape s;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        s.push_back(std::stoi(text.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return s;
}

}  // namespace detail

/// Fig.-3-style attentive CNN-convLSTM saliency model. Parameters are shared
/// tensor handles: optimizers mutate them in place through named_params().
class SaliencyModel {
public:
    explicit SaliencyModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        const int side = cfg_.encoder.feature_side();
        const auto& w = cfg_.encoder.widths;
        if (w.size() != 5) throw ConfigError("encoder expects exactly 5 block widths");
        const int Cf = cfg_.encoder.feature_channels();
        const int Ca = cfg_.attention_channels;
        const int Ch = cfg_.hidden_channels;

        int cin = 3;
        for (int b = 0; b < 5; ++b) {
            const std::string tag = "enc" + std::to_string(b + 1);
            add_param(tag + "_kernel", {3, 3, cin, w[b]});
            add_param(tag + "_bias", {w[b]});
            cin = w[b];
        }
        add_param("att1_kernel", {3, 3, Cf, Ca});
        add_param("att1_bias", {Ca});
        add_param("att2_kernel", {3, 3, Ca, Ca});
        add_param("att2_bias", {Ca});
        add_param("att3_kernel", {3, 3, Ca, 1});
        add_param("att3_bias", {1});
        for (const char* g : {"i", "f", "c", "o"}) {
            const std::string gate(g);
            add_param("lstm_wx_" + gate, {3, 3, Cf, Ch});
            add_param("lstm_wh_" + gate, {3, 3, Ch, Ch});
            if (gate != "c") add_param("lstm_wc_" + gate, {side, side, Ch});
            add_param("lstm_b_" + gate, {Ch});
        }
        add_param("readout_kernel", {1, 1, Ch, 1});
        add_param("readout_bias", {1});
    }

    /// He fan-in kernels, zero biases except forget bias +1, zero peepholes.
    void init_params(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& [name, t] : params_) {
            const bool kernel = name.find("_kernel") != std::string::npos ||
                                name.find("lstm_wx") == 0 || name.find("lstm_wh") == 0;
            if (kernel) {
                Tensor fresh = detail::he_kernel(t.shape(), rng);
                std::copy(fresh.data().begin(), fresh.data().end(), t.data().begin());
            } else {
                std::fill(t.data().begin(), t.data().end(),
                          name == "lstm_b_f" ? 1.0 : 0.0);
            }
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& config() { return cfg_; }

    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }

    Tensor param(const std::string& name) const {
        for (const auto& [n, t] : params_)
            if (n == name) return t;
        throw ConfigError("unknown parameter " + name);
    }

    Tensor encode(const Tensor& frame) const {
        const int S = cfg_.encoder.input_size;
        if (frame.ndim() != 3 || frame.dim(0) != S || frame.dim(1) != S || frame.dim(2) != 3)
            throw DimensionError("encode expects [" + std::to_string(S) + "," +
                                 std::to_string(S) + ",3], got " + shape_str(frame.shape()));
        Tensor x = frame;
        for (int b = 0; b < 5; ++b) {
            const std::string tag = "enc" + std::to_string(b + 1);
            x = relu(conv2d(x, param(tag + "_kernel"), param(tag + "_bias"), 1, 1));
            if (b < 3) x = max_pool2d(x, 2, 2);
        }
        return x;
    }

    /// Pre-upsample attention map at 1/4 of the feature grid.
    Tensor attention_coarse(const Tensor& X) const {
        if (X.ndim() != 3 || X.dim(2) != cfg_.encoder.feature_channels())
            throw DimensionError("attention expects feature tensor, got " +
                                 shape_str(X.shape()));
        if (X.dim(0) % 4 != 0 || X.dim(1) % 4 != 0)
            throw ConfigError("attention needs spatial dims divisible by 4, got " +
                              shape_str(X.shape()));
        Tensor a = relu(conv2d(X, param("att1_kernel"), param("att1_bias"), 1, 1));
        a = max_pool2d(a, 2, 2);
        a = relu(conv2d(a, param("att2_kernel"), param("att2_bias"), 1, 1));
        a = max_pool2d(a, 2, 2);
        return sigmoid(conv2d(a, param("att3_kernel"), param("att3_bias"), 1, 1));
    }

    Tensor attention_forward(const Tensor& X) const {
        return upsample_bilinear(attention_coarse(X), 4);
    }

    /// Residual: Xhat = (1+M) o X; non-residual: Xhat = M o X.
    static Tensor enhance(const Tensor& X, const Tensor& M, bool residual) {
        if (M.ndim() != 3 || M.dim(2) != 1 || M.dim(0) != X.dim(0) || M.dim(1) != X.dim(1))
            throw DimensionError("attention map " + shape_str(M.shape()) +
                                 " does not match features " + shape_str(X.shape()));
        return residual ? hadamard(X, add_const(M, 1.0)) : hadamard(X, M);
    }

    ConvLSTMState zero_state() const {
        const int side = cfg_.encoder.feature_side();
        return {Tensor({side, side, cfg_.hidden_channels}),
                Tensor({side, side, cfg_.hidden_channels})};
    }

    // i,f read the previous cell through the peepholes; o reads the new one.
    ConvLSTMOut convlstm_step(const Tensor& Xhat, const ConvLSTMState& state) const {
        const int side = cfg_.encoder.feature_side();
        const int Ch = cfg_.hidden_channels;
        if (Xhat.ndim() != 3 || Xhat.dim(0) != side || Xhat.dim(1) != side)
            throw DimensionError("convlstm input " + shape_str(Xhat.shape()) +
                                 " does not match feature side " + std::to_string(side));
        if (state.H.shape() != Shape{side, side, Ch} || state.C.shape() != Shape{side, side, Ch})
            throw DimensionError("convlstm state shape mismatch");
        Tensor zb({Ch});
        auto gate_pre = [&](const char* g) {
            const std::string s(g);
            return add(conv2d(Xhat, param("lstm_wx_" + s), param("lstm_b_" + s), 1, 1),
                       conv2d(state.H, param("lstm_wh_" + s), zb, 1, 1));
        };
        Tensor i = sigmoid(add(gate_pre("i"), hadamard(param("lstm_wc_i"), state.C)));
        Tensor f = sigmoid(add(gate_pre("f"), hadamard(param("lstm_wc_f"), state.C)));
        Tensor g = tanh_op(gate_pre("c"));
        Tensor C = add(hadamard(f, state.C), hadamard(i, g));
        Tensor o = sigmoid(add(gate_pre("o"), hadamard(param("lstm_wc_o"), C)));
        Tensor H = hadamard(o, tanh_op(C));
        return {H, C, i, f, o};
    }

    Tensor readout(const Tensor& H) const {
        Tensor y = sigmoid(conv2d(H, param("readout_kernel"), param("readout_bias"), 1, 0));
        return reshape(y, {y.dim(0), y.dim(1)});
    }

    SequenceOutput forward_sequence(const std::vector<Tensor>& frames) const {
        if (frames.empty()) throw DimensionError("forward_sequence needs at least one frame");
        SequenceOutput out;
        ConvLSTMState state = zero_state();
        const int side = cfg_.encoder.feature_side();
        for (const Tensor& frame : frames) {
            Tensor X = encode(frame);
            Tensor xhat;
            if (cfg_.attention_enabled) {
                Tensor M = attention_forward(X);
                out.M.push_back(reshape(M, {side, side}));
                xhat = enhance(X, M, cfg_.residual);
            } else {
                out.M.push_back(Tensor({side, side}));
                xhat = X;
            }
            ConvLSTMOut step = convlstm_step(xhat, state);
            state = {step.H, step.C};
            out.Y.push_back(readout(step.H));
        }
        return out;
    }

    SequenceOutput forward_sequence(const Tensor& frames) const {
        if (frames.ndim() != 4) throw DimensionError("expected [T,S,S,3] frame stack");
        std::vector<Tensor> list;
        for (int t = 0; t < frames.dim(0); ++t) list.push_back(slice_frame(frames, t));
        return forward_sequence(list);
    }

    static Tensor slice_frame(const Tensor& stack, int t) {
        if (stack.ndim() != 4 || t < 0 || t >= stack.dim(0))
            throw DimensionError("bad frame index " + std::to_string(t) + " for stack " +
                                 shape_str(stack.shape()));
        const int S0 = stack.dim(1), S1 = stack.dim(2), C = stack.dim(3);
        Tensor frame({S0, S1, C});
        const std::size_t n = frame.numel();
        const double* src = stack.data().data() + static_cast<std::size_t>(t) * n;
        std::copy(src, src + n, frame.data().begin());
        return frame;
    }

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        {
            std::ofstream cfg(dir / "model.txt");
            cfg << "input_size = " << cfg_.encoder.input_size << "\n";
            cfg << "widths = ";
            for (std::size_t i = 0; i < cfg_.encoder.widths.size(); ++i)
                cfg << (i ? "," : "") << cfg_.encoder.widths[i];
            cfg << "\n";
            cfg << "attention_channels = " << cfg_.attention_channels << "\n";
            cfg << "hidden_channels = " << cfg_.hidden_channels << "\n";
            cfg << "attention_enabled = " << (cfg_.attention_enabled ? 1 : 0) << "\n";
            cfg << "residual = " << (cfg_.residual ? 1 : 0) << "\n";
        }
        std::ofstream manifest(dir / "params.txt");
        for (const auto& [name, t] : params_) {
            const std::string file = name + ".stns";
            manifest << name << " " << detail::shape_csv(t.shape()) << " " << file << "\n";
            save_stns(dir / file, t);
        }
    }

    static SaliencyModel load(const std::filesystem::path& dir) {
        std::ifstream cfg_in(dir / "model.txt");
        if (!cfg_in) throw DataError("missing model config: " + (dir / "model.txt").string());
        ModelConfig cfg;
        std::string line;
        while (std::getline(cfg_in, line)) {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            std::string val = line.substr(eq + 1);
            auto trim = [](std::string& s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t") + 1);
            };
            trim(key);
            trim(val);
            try {
                if (key == "input_size") cfg.encoder.input_size = std::stoi(val);
                else if (key == "widths") {
                    cfg.encoder.widths.clear();
                    for (int w : detail::parse_shape_csv(val)) cfg.encoder.widths.push_back(w);
                } else if (key == "attention_channels") cfg.attention_channels = std::stoi(val);
                else if (key == "hidden_channels") cfg.hidden_channels = std::stoi(val);
                else if (key == "attention_enabled") cfg.attention_enabled = std::stoi(val) != 0;
                else if (key == "residual") cfg.residual = std::stoi(val) != 0;
                else throw DataError("unknown model config key: " + key);
            } catch (const std::invalid_argument&) {
                throw DataError("bad value for model config key " + key + ": " + val);
            }
        }
        SaliencyModel model(cfg);
        std::ifstream manifest(dir / "params.txt");
        if (!manifest) throw DataError("missing manifest: " + (dir / "params.txt").string());
        std::size_t loaded = 0;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string name, shape_text, file;
            if (!(row >> name >> shape_text >> file))
                throw DataError("malformed manifest line: " + line);
            Tensor stored = load_stns(dir / file);
            Tensor dst = model.param(name);
            if (stored.shape() != dst.shape())
                throw DataError("checkpoint shape mismatch for " + name + ": stored " +
                                shape_str(stored.shape()) + ", model wants " +
                                shape_str(dst.shape()));
            std::copy(stored.data().begin(), stored.data().end(), dst.data().begin());
            ++loaded;
        }
        if (loaded != model.params_.size())
            throw DataError("checkpoint lists " + std::to_string(loaded) + " parameters, model has " +
                            std::to_string(model.params_.size()));
        return model;
    }

private:
    void add_param(std::string name, Shape shape) {
        params_.emplace_back(std::move(name), Tensor(std::move(shape), true));
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace vsal
