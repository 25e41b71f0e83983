// vsal: dataset synthesis, training, prediction, evaluation, and self checks.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "vsal/metrics.hpp"
#include "vsal/synth.hpp"
#include "vsal/trainer.hpp"

namespace fs = std::filesystem;
using namespace vsal;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string wall_clock_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

/// One manifest beside every artifact. Deterministic except the wall_clock line.
void write_manifest(const fs::path& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& fields) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << "command = " << command << "\n";
    out << "version = " << kVersion << "\n";
    out << "wall_clock = " << wall_clock_utc() << "\n";
    for (const auto& [key, value] : fields) out << key << " = " << value << "\n";
}

void ensure_output_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force)
            throw DataError("output directory " + dir.string() +
                            " is not empty (pass --force to replace it)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

void ensure_output_file(const fs::path& file, bool force) {
    if (fs::exists(file) && !force)
        throw DataError("output file " + file.string() + " exists (pass --force to replace it)");
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::string bool_str(bool v) { return v ? "true" : "false"; }

// ---------------------------------------------------------------------------
// synth

int run_synth(const fs::path& out, int videos, int frames, int size, std::uint64_t seed,
              int observers, double sigma, bool force) {
    ensure_output_dir(out, force);
    SynthConfig cfg;
    cfg.videos = videos;
    cfg.frames = frames;
    cfg.size = size;
    cfg.seed = seed;
    cfg.observers = observers;
    cfg.sigma = sigma;
    generate_synthetic_dataset(out, cfg);
    const double resolved_sigma = sigma > 0.0 ? sigma : size / 32.0;
    write_manifest(out / "manifest.txt", "synth",
                   {{"out", out.string()},
                    {"videos", std::to_string(videos)},
                    {"frames", std::to_string(frames)},
                    {"size", std::to_string(size)},
                    {"seed", std::to_string(seed)},
                    {"observers", std::to_string(observers)},
                    {"sigma", std::to_string(resolved_sigma)}});
    std::cout << "wrote " << videos << " videos x " << frames << " frames to " << out.string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

std::string widths_str(const std::vector<int>& widths) {
    std::string out;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(widths[i]);
    }
    return out;
}

int run_train(const fs::path& data, const fs::path& statics, const fs::path& config,
              const fs::path& out, bool force) {
    ensure_output_dir(out, force);
    TrainConfig cfg = parse_train_config(config);
    VideoDataset videos = VideoDataset::open(data);
    VideoDataset stills = statics.empty() ? videos : VideoDataset::open(statics);

    SaliencyModel model(cfg.to_model_config());
    model.init_params(cfg.seed);
    TrainResult result = train(model, videos, stills, cfg, out);

    write_manifest(out / "manifest.txt", "train",
                   {{"data", data.string()},
                    {"static", (statics.empty() ? data : statics).string()},
                    {"config", config.string()},
                    {"out", out.string()},
                    {"base_lr", std::to_string(cfg.base_lr)},
                    {"epochs", std::to_string(cfg.epochs)},
                    {"steps_per_epoch", std::to_string(cfg.steps_per_epoch)},
                    {"batch_frames", std::to_string(cfg.batch_frames)},
                    {"patience", std::to_string(cfg.patience)},
                    {"seed", std::to_string(cfg.seed)},
                    {"freeze_encoder", bool_str(cfg.freeze_encoder)},
                    {"alpha1", std::to_string(cfg.weights.alpha1)},
                    {"alpha2", std::to_string(cfg.weights.alpha2)},
                    {"input_size", std::to_string(cfg.input_size)},
                    {"widths", widths_str(cfg.widths)},
                    {"attention_channels", std::to_string(cfg.attention_channels)},
                    {"hidden_channels", std::to_string(cfg.hidden_channels)},
                    {"attention_enabled", bool_str(cfg.attention_enabled)},
                    {"residual", bool_str(cfg.residual)}});
    std::cout << "trained " << result.epochs_run << " epoch(s); checkpoint at "
              << result.checkpoint.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// predict

Tensor resize_frame(const Tensor& frame, int S) {
    if (frame.ndim() != 3 || frame.dim(2) != 3)
        throw DataError("expected an [H,W,3] frame, got " + shape_str(frame.shape()));
    if (frame.dim(0) == S && frame.dim(1) == S) return frame;
    Tensor out({S, S, 3});
    for (int c = 0; c < 3; ++c) {
        Tensor ch({frame.dim(0), frame.dim(1)});
        for (int y = 0; y < frame.dim(0); ++y)
            for (int x = 0; x < frame.dim(1); ++x) ch.at(y, x) = frame.at(y, x, c);
        Tensor r = resize_bilinear(ch, S, S);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) out.at(y, x, c) = r.at(y, x);
    }
    return out;
}

int run_predict(const fs::path& ckpt, const fs::path& video, const fs::path& out, bool force) {
    SaliencyModel model = SaliencyModel::load(ckpt);
    const int S = model.config().encoder.input_size;

    std::vector<Tensor> raw;
    for (int t = 0;; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05d.stns", t);
        if (!fs::exists(video / name)) break;
        raw.push_back(load_stns(video / name));
    }
    if (raw.empty()) throw DataError("no frame_%05d.stns files under " + video.string());

    const int H = raw.front().dim(0), W = raw.front().dim(1);
    std::vector<Tensor> frames;
    for (const Tensor& r : raw) {
        if (r.ndim() != 3 || r.dim(0) != H || r.dim(1) != W || r.dim(2) != 3)
            throw DataError("frames disagree on shape; expected [" + std::to_string(H) + "," +
                            std::to_string(W) + ",3]");
        Tensor scaled(r.shape());
        for (std::size_t i = 0; i < r.numel(); ++i) scaled.data()[i] = r.data()[i] / 255.0;
        frames.push_back(resize_frame(scaled, S));
    }

    ensure_output_dir(out, force);
    SequenceOutput result = model.forward_sequence(frames);
    for (std::size_t t = 0; t < result.Y.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "map_%05zu.stns", t);
        save_stns(out / name, resize_bilinear(result.Y[t], H, W));
    }
    write_manifest(out / "manifest.txt", "predict",
                   {{"ckpt", ckpt.string()},
                    {"video", video.string()},
                    {"out", out.string()},
                    {"frames", std::to_string(raw.size())},
                    {"model_input", std::to_string(S)},
                    {"map_size", std::to_string(H) + "x" + std::to_string(W)}});
    std::cout << "wrote " << result.Y.size() << " saliency maps to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int run_eval(const fs::path& pred, const fs::path& gt, const fs::path& out,
             const fs::path& shuffle_pool, int splits, std::uint64_t seed, double sigma,
             bool force) {
    ensure_output_file(out, force);
    EvalOptions opt;
    opt.splits = splits;
    opt.seed = seed;
    opt.sigma = sigma;
    opt.shuffle_pool = shuffle_pool;
    MetricReport report = evaluate_dataset(pred, gt, opt);
    write_report_text(report, out);
    write_report_csv(report, fs::path(out.string() + ".csv"));
    write_manifest(fs::path(out.string() + ".manifest"), "eval",
                   {{"pred", pred.string()},
                    {"gt", gt.string()},
                    {"out", out.string()},
                    {"splits", std::to_string(splits)},
                    {"seed", std::to_string(seed)},
                    {"sigma", std::to_string(sigma)},
                    {"shuffle_pool", shuffle_pool.string()}});
    std::cout << "evaluated " << report.frames.size() << " frames";
    if (!report.missing.empty()) std::cout << " (" << report.missing.size() << " missing)";
    std::cout << "; report at " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// selfcheck oracles (independent re-derivations, mirroring the test suite)

double fd_grad_check(const std::function<Tensor()>& forward, std::vector<Tensor> leaves) {
    for (auto& t : leaves) t.zero_grad();
    {
        GradTape tape;
        Tensor loss = forward();
        tape.backward(loss);
    }
    const double h = 1e-5;
    double max_rel = 0.0;
    for (auto& leaf : leaves)
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const double orig = leaf.data()[i];
            leaf.data()[i] = orig + h;
            const double fp = forward().value();
            leaf.data()[i] = orig - h;
            const double fm = forward().value();
            leaf.data()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = leaf.grad()[i];
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    return max_rel;
}

Tensor random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                      bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (double& v : t.data()) v = detail::uniform_real(rng, lo, hi);
    return t;
}

double pairwise_auc_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
    double score = 0.0;
    for (double p : pos)
        for (double n : neg) score += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return score / (static_cast<double>(pos.size()) * neg.size());
}

struct ScalarLstmRef {
    // centre taps of every 3x3 kernel; at 1x1 resolution the convolution
    // reduces to these weights alone.
    std::vector<std::vector<double>> wx_i, wx_f, wx_c, wx_o;  // [cin][cout]
    std::vector<std::vector<double>> wh_i, wh_f, wh_c, wh_o;
    std::vector<double> pc_i, pc_f, pc_o, b_i, b_f, b_c, b_o;

    static std::vector<std::vector<double>> taps(const Tensor& k) {
        std::vector<std::vector<double>> w(k.dim(2), std::vector<double>(k.dim(3)));
        for (int ci = 0; ci < k.dim(2); ++ci)
            for (int co = 0; co < k.dim(3); ++co) w[ci][co] = k.at(1, 1, ci, co);
        return w;
    }

    explicit ScalarLstmRef(const SaliencyModel& m) {
        wx_i = taps(m.param("lstm_wx_i"));
        wx_f = taps(m.param("lstm_wx_f"));
        wx_c = taps(m.param("lstm_wx_c"));
        wx_o = taps(m.param("lstm_wx_o"));
        wh_i = taps(m.param("lstm_wh_i"));
        wh_f = taps(m.param("lstm_wh_f"));
        wh_c = taps(m.param("lstm_wh_c"));
        wh_o = taps(m.param("lstm_wh_o"));
        pc_i = m.param("lstm_wc_i").data();
        pc_f = m.param("lstm_wc_f").data();
        pc_o = m.param("lstm_wc_o").data();
        b_i = m.param("lstm_b_i").data();
        b_f = m.param("lstm_b_f").data();
        b_c = m.param("lstm_b_c").data();
        b_o = m.param("lstm_b_o").data();
    }

    static std::vector<double> matvec(const std::vector<std::vector<double>>& w,
                                      const std::vector<double>& x, std::size_t cout) {
        std::vector<double> y(cout, 0.0);
        for (std::size_t ci = 0; ci < w.size(); ++ci)
            for (std::size_t co = 0; co < cout; ++co) y[co] += w[ci][co] * x[ci];
        return y;
    }

    void step(const std::vector<double>& x, std::vector<double>& H, std::vector<double>& C) const {
        const std::size_t n = b_i.size();
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        auto xi = matvec(wx_i, x, n), xf = matvec(wx_f, x, n), xc = matvec(wx_c, x, n),
             xo = matvec(wx_o, x, n);
        auto hi = matvec(wh_i, H, n), hf = matvec(wh_f, H, n), hc = matvec(wh_c, H, n),
             ho = matvec(wh_o, H, n);
        std::vector<double> nh(n), nc(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double i = sig(xi[j] + hi[j] + b_i[j] + pc_i[j] * C[j]);
            const double f = sig(xf[j] + hf[j] + b_f[j] + pc_f[j] * C[j]);
            const double g = std::tanh(xc[j] + hc[j] + b_c[j]);
            nc[j] = f * C[j] + i * g;
            const double o = sig(xo[j] + ho[j] + b_o[j] + pc_o[j] * nc[j]);
            nh[j] = o * std::tanh(nc[j]);
        }
        H = nh;
        C = nc;
    }
};

// Each suite returns an empty string on success or a replayable failure note.
using Suite = std::function<std::string()>;

std::string check(bool ok, const std::string& detail) { return ok ? "" : detail; }

std::string suite_autodiff_gradients() {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        Tensor x = random_uniform({5, 5, 2}, rng, -1.0, 1.0, true);
        Tensor k = random_uniform({3, 3, 2, 2}, rng, -0.5, 0.5, true);
        Tensor b = random_uniform({2}, rng, -0.5, 0.5, true);
        double err = fd_grad_check(
            [&] { return sum(sigmoid(max_pool2d(conv2d(x, k, b, 1, 1), 2, 2))); }, {x, k, b});
        if (err >= 1e-4) return "conv/pool/sigmoid seed=" + std::to_string(seed);

        Tensor Y = random_uniform({4, 4}, rng, 0.05, 1.0, true);
        Tensor Q = random_uniform({4, 4}, rng, 0.05, 1.0);
        Tensor P({4, 4});
        P.at(1, 2) = 1.0;
        P.at(3, 0) = 1.0;
        err = fd_grad_check([&] { return combined_loss(Y, P, Q); }, {Y});
        if (err >= 1e-4) return "combined_loss seed=" + std::to_string(seed);
    }
    return "";
}

std::string suite_convlstm_scalar_oracle() {
    ModelConfig cfg;
    cfg.encoder.input_size = 8;  // feature side 1: convolutions reduce to centre taps
    cfg.encoder.widths = {2, 2, 2, 2, 3};
    cfg.hidden_channels = 2;
    cfg.attention_enabled = false;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SaliencyModel model(cfg);
        model.init_params(seed);
        std::mt19937_64 rng(seed * 77);
        for (const auto& [name, t] : model.named_params())
            if (name.rfind("lstm_", 0) == 0) {
                Tensor h = t;
                for (double& v : h.data()) v = detail::uniform_real(rng, -1.0, 1.0);
            }
        ScalarLstmRef ref(model);
        ConvLSTMState state = model.zero_state();
        std::vector<double> H(2, 0.0), C(2, 0.0);
        for (int t = 0; t < 3; ++t) {
            Tensor x({1, 1, 3});
            std::vector<double> xs(3);
            for (int c = 0; c < 3; ++c) {
                xs[c] = detail::uniform_real(rng, -1.0, 1.0);
                x.at(0, 0, c) = xs[c];
            }
            ConvLSTMOut out = model.convlstm_step(x, state);
            state = {out.H, out.C};
            ref.step(xs, H, C);
            for (int j = 0; j < 2; ++j) {
                if (std::abs(out.H.at(0, 0, j) - H[j]) > 1e-10 ||
                    std::abs(out.C.at(0, 0, j) - C[j]) > 1e-10)
                    return "state mismatch seed=" + std::to_string(seed) +
                           " step=" + std::to_string(t);
                for (const Tensor* gate : {&out.i, &out.f, &out.o})
                    if (gate->at(0, 0, j) <= 0.0 || gate->at(0, 0, j) >= 1.0)
                        return "gate range seed=" + std::to_string(seed);
                if (std::abs(out.H.at(0, 0, j)) >= 1.0)
                    return "|H| bound seed=" + std::to_string(seed);
            }
        }
    }
    return "";
}

std::string suite_loss_closed_forms(double kl_eps) {
    std::mt19937_64 rng(11);
    Tensor Q = random_uniform({5, 4}, rng, 0.05, 1.0);
    double s = 0.0;
    for (double v : Q.data()) s += v;
    for (double& v : Q.data()) v /= s;

    std::string r = check(std::abs(kl_div(Q, Q).value()) < 1e-9, "KL(Q,Q) != 0 seed=11");
    if (!r.empty()) return r;

    // eps-sensitive direct summation: this is where --inject-fault kl_eps bites.
    Tensor Y = random_uniform({5, 4}, rng, 0.05, 1.0);
    const double eps_ref = LossWeights{}.eps;
    double ys = 0.0, qs = 0.0;
    for (std::size_t i = 0; i < Y.numel(); ++i) {
        ys += Y.data()[i] + eps_ref;
        qs += Q.data()[i] + eps_ref;
    }
    double kl_direct = 0.0;
    for (std::size_t i = 0; i < Y.numel(); ++i) {
        const double y = (Y.data()[i] + eps_ref) / ys;
        const double q = (Q.data()[i] + eps_ref) / qs;
        kl_direct += q * std::log(q / y);
    }
    r = check(std::abs(kl_div(Y, Q, kl_eps).value() - kl_direct) < 1e-9,
              "KL direct summation seed=11 (eps=" + std::to_string(kl_eps) + ")");
    if (!r.empty()) return r;

    Tensor Y2(Q.shape());
    for (std::size_t i = 0; i < Q.numel(); ++i) Y2.data()[i] = 2.0 * Q.data()[i] + 1.0;
    r = check(std::abs(cc_loss(Y2, Q).value() + 1.0) < 1e-6, "cc_loss(2Q+1,Q) != -1");
    if (!r.empty()) return r;

    Tensor P({5, 4});
    P.at(2, 2) = 1.0;
    P.at(0, 3) = 1.0;
    Tensor Ya = random_uniform({5, 4}, rng, -1.0, 1.0);
    Tensor Yb(Ya.shape());
    for (std::size_t i = 0; i < Ya.numel(); ++i) Yb.data()[i] = 3.0 * Ya.data()[i] - 0.5;
    r = check(std::abs(nss_loss(Ya, P).value() - nss_loss(Yb, P).value()) < 1e-6,
              "NSS affine invariance seed=11");
    if (!r.empty()) return r;

    Tensor Yc = random_uniform({5, 4}, rng, 0.05, 1.0);
    const double combined = combined_loss(Yc, P, Q).value();
    const double parts = kl_div(Yc, Q).value() + 0.1 * cc_loss(Yc, Q).value() +
                         0.1 * nss_loss(Yc, P).value();
    return check(std::abs(combined - parts) < 1e-9, "alpha weighting != 0.1/0.1");
}

std::string suite_metric_pair_counting() {
    for (std::uint64_t seed = 20; seed < 40; ++seed) {
        std::mt19937_64 rng(seed);
        Tensor Y = random_uniform({6, 6}, rng, 0.0, 1.0);
        Tensor P({6, 6});
        for (int k = 0; k < 6; ++k) P.data()[detail::uniform_index(rng, P.numel())] = 1.0;
        P.data()[35] = 0.0;
        std::size_t fixated = 0;
        for (double v : P.data()) fixated += v == 1.0;
        if (fixated == 0) continue;
        std::vector<double> pos, neg;
        for (std::size_t i = 0; i < Y.numel(); ++i)
            (P.data()[i] == 1.0 ? pos : neg).push_back(Y.data()[i]);
        if (std::abs(auc_judd(Y, P) - pairwise_auc_oracle(pos, neg)) > 1e-9)
            return "auc_judd oracle seed=" + std::to_string(seed);
    }
    return "";
}

std::string suite_metric_direct_formulas() {
    for (std::uint64_t seed = 50; seed < 70; ++seed) {
        std::mt19937_64 rng(seed);
        Tensor Y = random_uniform({5, 7}, rng, 0.0, 1.0);
        Tensor Q = random_uniform({5, 7}, rng, 0.01, 1.0);
        Tensor P({5, 7});
        P.data()[detail::uniform_index(rng, P.numel())] = 1.0;

        const std::size_t n = Y.numel();
        double my = 0.0, mq = 0.0;
        for (double v : Y.data()) my += v;
        for (double v : Q.data()) mq += v;
        my /= n;
        mq /= n;
        double vy = 0.0, vq = 0.0, cov = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            vy += (Y.data()[i] - my) * (Y.data()[i] - my);
            vq += (Q.data()[i] - mq) * (Q.data()[i] - mq);
            cov += (Y.data()[i] - my) * (Q.data()[i] - mq);
        }
        vy /= n;
        vq /= n;
        cov /= n;
        if (std::abs(cc_metric(Y, Q) - cov / std::sqrt(vy * vq)) > 1e-9)
            return "cc formula seed=" + std::to_string(seed);

        double nss = 0.0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (P.data()[i] == 1.0) {
                nss += (Y.data()[i] - my) / std::sqrt(vy);
                ++hits;
            }
        if (std::abs(nss_metric(Y, P) - nss / hits) > 1e-9)
            return "nss formula seed=" + std::to_string(seed);

        double ys = 0.0, qs = 0.0, sim = 0.0;
        for (double v : Y.data()) ys += v;
        for (double v : Q.data()) qs += v;
        for (std::size_t i = 0; i < n; ++i)
            sim += std::min(Y.data()[i] / ys, Q.data()[i] / qs);
        if (std::abs(sim_metric(Y, Q) - sim) > 1e-9)
            return "sim formula seed=" + std::to_string(seed);
    }
    return "";
}

std::string suite_attention_contracts() {
    std::mt19937_64 rng(91);
    Tensor X = random_uniform({8, 8, 3}, rng, -1.0, 1.0);
    Tensor M0({8, 8, 1});
    Tensor enhanced = SaliencyModel::enhance(X, M0, true);
    for (std::size_t i = 0; i < X.numel(); ++i)
        if (enhanced.data()[i] != X.data()[i]) return "enhance with M=0 not bit-identical";

    ModelConfig cfg;
    cfg.encoder.input_size = 224;  // feature grid 28x28, coarse attention 7x7
    cfg.encoder.widths = {2, 2, 3, 3, 4};
    cfg.attention_channels = 2;
    SaliencyModel model(cfg);
    model.init_params(7);
    Tensor feat = random_uniform({28, 28, 4}, rng, -1.0, 1.0);
    Tensor coarse = model.attention_coarse(feat);
    if (coarse.dim(0) != 7 || coarse.dim(1) != 7) return "28x28 features gave no 7x7 coarse map";
    Tensor M = model.attention_forward(feat);
    for (double v : M.data())
        if (v < 0.0 || v > 1.0) return "attention map left [0,1] seed=7";
    return "";
}

std::string suite_rng_contracts() {
    std::mt19937_64 rng(123), replay(123);
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t n = 1 + i % 17;
        const std::uint64_t v = detail::uniform_index(rng, n);
        if (v >= n) return "uniform_index out of range i=" + std::to_string(i);
        // documented rejection construction
        const std::uint64_t max = std::mt19937_64::max();
        const std::uint64_t limit = max - max % n;
        std::uint64_t raw = replay();
        while (raw >= limit) raw = replay();
        if (v != raw % n) return "uniform_index contract i=" + std::to_string(i);
    }
    for (int i = 0; i < 1000; ++i) {
        const double v = detail::uniform_real(rng, -2.0, 3.0);
        if (v < -2.0 || v >= 3.0) return "uniform_real range i=" + std::to_string(i);
    }
    return "";
}

std::string suite_checkpoint_roundtrip() {
    ModelConfig cfg;
    cfg.encoder.input_size = 32;
    cfg.encoder.widths = {2, 2, 3, 3, 4};
    cfg.attention_channels = 2;
    cfg.hidden_channels = 2;
    SaliencyModel model(cfg);
    model.init_params(13);
    const fs::path dir = fs::temp_directory_path() / "vsal_selfcheck_ckpt";
    fs::remove_all(dir);
    model.save(dir);
    SaliencyModel back = SaliencyModel::load(dir);
    fs::remove_all(dir);
    for (const auto& [name, t] : model.named_params()) {
        Tensor loaded = back.param(name);
        for (std::size_t i = 0; i < t.numel(); ++i)
            if (loaded.data()[i] != static_cast<double>(static_cast<float>(t.data()[i])))
                return "round trip differs in " + name;
    }
    return "";
}

int run_selfcheck(const std::string& fault) {
    const double kl_eps = fault == "kl_eps" ? 1e-2 : LossWeights{}.eps;
    const std::vector<std::pair<std::string, Suite>> suites = {
        {"autodiff_gradients", suite_autodiff_gradients},
        {"convlstm_scalar_oracle", suite_convlstm_scalar_oracle},
        {"loss_closed_forms", [kl_eps] { return suite_loss_closed_forms(kl_eps); }},
        {"metric_pair_counting", suite_metric_pair_counting},
        {"metric_direct_formulas", suite_metric_direct_formulas},
        {"attention_contracts", suite_attention_contracts},
        {"rng_contracts", suite_rng_contracts},
        {"checkpoint_roundtrip", suite_checkpoint_roundtrip},
    };
    int failed = 0;
    for (const auto& [name, suite] : suites) {
        const std::string detail = suite();
        if (detail.empty()) {
            std::cout << "ok   " << name << "\n";
        } else {
            std::cout << "FAIL " << name << ": " << detail << "\n";
            ++failed;
        }
    }
    std::cout << "selfcheck: " << (suites.size() - failed) << "/" << suites.size()
              << " property suites passed\n";
    return failed == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vsal: attentive video saliency toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic moving-blob dataset");
    fs::path synth_out;
    int synth_videos = 2, synth_frames = 24, synth_size = 96, synth_observers = 3;
    std::uint64_t synth_seed = 7;
    double synth_sigma = 0.0;
    bool synth_force = false;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--videos", synth_videos, "number of videos")->check(CLI::PositiveNumber);
    synth->add_option("--frames", synth_frames, "frames per video")->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size, "square frame side")->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--observers", synth_observers, "synthetic observers per frame")
        ->check(CLI::PositiveNumber);
    synth->add_option("--sigma", synth_sigma, "densify sigma (0: size/32)");
    synth->add_flag("--force", synth_force, "replace a non-empty output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    fs::path train_data, train_static, train_config, train_out;
    bool train_force = false;
    train_cmd->add_option("--data", train_data, "video dataset directory")->required();
    train_cmd->add_option("--static", train_static, "static-image dataset (default: --data)");
    train_cmd->add_option("--config", train_config, "key = value training config")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_flag("--force", train_force, "replace a non-empty output directory");

    // predict
    auto* predict = app.add_subcommand("predict", "write per-frame saliency maps for one video");
    fs::path pred_ckpt, pred_video, pred_out;
    bool pred_force = false;
    predict->add_option("--ckpt", pred_ckpt, "checkpoint directory")->required();
    predict->add_option("--video", pred_video, "directory of frame_%05d.stns frames")->required();
    predict->add_option("--out", pred_out, "output directory")->required();
    predict->add_flag("--force", pred_force, "replace a non-empty output directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compare predictions against ground truth");
    fs::path eval_pred, eval_gt, eval_out, eval_pool;
    int eval_splits = 100;
    std::uint64_t eval_seed = 0;
    double eval_sigma = 0.0;
    bool eval_force = false;
    eval_cmd->add_option("--pred", eval_pred, "prediction directory")->required();
    eval_cmd->add_option("--gt", eval_gt, "ground-truth dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "report file (CSV written beside it)")->required();
    eval_cmd->add_option("--shuffle-pool", eval_pool, "dataset supplying s-AUC negatives");
    eval_cmd->add_option("--splits", eval_splits, "s-AUC resampling count")
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", eval_seed, "s-AUC sampling seed");
    eval_cmd->add_option("--sigma", eval_sigma, "densify sigma (0: dataset value)");
    eval_cmd->add_flag("--force", eval_force, "replace an existing report");

    // selfcheck
    auto* selfcheck = app.add_subcommand("selfcheck", "run built-in property suites");
    std::string fault;
    selfcheck->add_option("--inject-fault", fault, "testing hook: corrupt a named property")
        ->check(CLI::IsMember({"kl_eps"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed())
            return run_synth(synth_out, synth_videos, synth_frames, synth_size, synth_seed,
                             synth_observers, synth_sigma, synth_force);
        if (train_cmd->parsed())
            return run_train(train_data, train_static, train_config, train_out, train_force);
        if (predict->parsed()) return run_predict(pred_ckpt, pred_video, pred_out, pred_force);
        if (eval_cmd->parsed())
            return run_eval(eval_pred, eval_gt, eval_out, eval_pool, eval_splits, eval_seed,
                            eval_sigma, eval_force);
        if (selfcheck->parsed()) return run_selfcheck(fault);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
