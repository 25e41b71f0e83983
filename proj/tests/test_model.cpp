#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "testutil.hpp"
#include "vsal/model.hpp"

using namespace vsal;
using vsal::testing::fill_uniform;
using vsal::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.encoder.input_size = 32;
    cfg.encoder.widths = {4, 4, 4, 4, 4};
    cfg.attention_channels = 2;
    cfg.hidden_channels = 3;
    return cfg;
}

ModelConfig unit_config() {
    // Feature grid 1x1: convolutions degenerate to per-channel linear maps.
    ModelConfig cfg;
    cfg.encoder.input_size = 8;
    cfg.encoder.widths = {4, 4, 4, 4, 4};
    cfg.hidden_channels = 3;
    return cfg;
}

void randomize_params(SaliencyModel& model, std::mt19937_64& rng, double lo = -0.5,
                      double hi = 0.5) {
    for (const auto& [name, t] : model.named_params()) {
        Tensor handle = t;
        fill_uniform(handle, rng, lo, hi);
    }
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop peephole LSTM over channel vectors; the 1x1 conv3x3(pad 1)
// touches only the kernel's centre tap, so gates reduce to matrix products.
struct ScalarLstmRef {
    int cf, ch;
    std::vector<double> wxi, whi, wci, bi;
    std::vector<double> wxf, whf, wcf, bf;
    std::vector<double> wxc, whc, bc;
    std::vector<double> wxo, who, wco, bo;

    static std::vector<double> centre_taps(const Tensor& ker) {
        const int cin = ker.dim(2), cout = ker.dim(3);
        std::vector<double> m(static_cast<std::size_t>(cin) * cout);
        for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
                m[static_cast<std::size_t>(ci) * cout + co] = ker.at(1, 1, ci, co);
        return m;
    }

    explicit ScalarLstmRef(const SaliencyModel& model) {
        cf = model.config().encoder.feature_channels();
        ch = model.config().hidden_channels;
        wxi = centre_taps(model.param("lstm_wx_i"));
        whi = centre_taps(model.param("lstm_wh_i"));
        wxf = centre_taps(model.param("lstm_wx_f"));
        whf = centre_taps(model.param("lstm_wh_f"));
        wxc = centre_taps(model.param("lstm_wx_c"));
        whc = centre_taps(model.param("lstm_wh_c"));
        wxo = centre_taps(model.param("lstm_wx_o"));
        who = centre_taps(model.param("lstm_wh_o"));
        wci = model.param("lstm_wc_i").data();
        wcf = model.param("lstm_wc_f").data();
        wco = model.param("lstm_wc_o").data();
        bi = model.param("lstm_b_i").data();
        bf = model.param("lstm_b_f").data();
        bc = model.param("lstm_b_c").data();
        bo = model.param("lstm_b_o").data();
    }

    std::vector<double> matvec(const std::vector<double>& m, const std::vector<double>& x,
                               int cin) const {
        std::vector<double> out(ch, 0.0);
        for (int co = 0; co < ch; ++co)
            for (int ci = 0; ci < cin; ++ci)
                out[co] += x[ci] * m[static_cast<std::size_t>(ci) * ch + co];
        return out;
    }

    struct Step {
        std::vector<double> i, f, o, c, h;
    };

    Step step(const std::vector<double>& x, const std::vector<double>& h_prev,
              const std::vector<double>& c_prev) const {
        Step s;
        s.i.resize(ch);
        s.f.resize(ch);
        s.o.resize(ch);
        s.c.resize(ch);
        s.h.resize(ch);
        auto xi = matvec(wxi, x, cf), hi = matvec(whi, h_prev, ch);
        auto xf = matvec(wxf, x, cf), hf = matvec(whf, h_prev, ch);
        auto xc = matvec(wxc, x, cf), hc = matvec(whc, h_prev, ch);
        auto xo = matvec(wxo, x, cf), ho = matvec(who, h_prev, ch);
        for (int k = 0; k < ch; ++k) {
            s.i[k] = sigmoid_ref(xi[k] + hi[k] + wci[k] * c_prev[k] + bi[k]);
            s.f[k] = sigmoid_ref(xf[k] + hf[k] + wcf[k] * c_prev[k] + bf[k]);
            const double g = std::tanh(xc[k] + hc[k] + bc[k]);
            s.c[k] = s.f[k] * c_prev[k] + s.i[k] * g;
            s.o[k] = sigmoid_ref(xo[k] + ho[k] + wco[k] * s.c[k] + bo[k]);
            s.h[k] = s.o[k] * std::tanh(s.c[k]);
        }
        return s;
    }
};

}  // namespace

TEST(Encoder, FeatureShapeMatchesRatio) {
    EncoderConfig desk;
    EXPECT_EQ(desk.feature_shape(), (Shape{12, 12, 64}));
    EncoderConfig full;
    full.input_size = 224;
    full.widths = {64, 128, 256, 512, 512};
    EXPECT_EQ(full.feature_shape(), (Shape{28, 28, 512}));
    EncoderConfig bad;
    bad.input_size = 100;
    EXPECT_THROW(bad.feature_side(), ConfigError);
}

TEST(Encoder, RunsAtTinyScale) {
    SaliencyModel model(tiny_config());
    model.init_params(1);
    std::mt19937_64 rng(2);
    Tensor frame = random_tensor({32, 32, 3}, rng, 0, 1);
    Tensor feats = model.encode(frame);
    EXPECT_EQ(feats.shape(), (Shape{4, 4, 4}));
    Tensor again = model.encode(frame);
    for (std::size_t i = 0; i < feats.numel(); ++i)
        EXPECT_EQ(feats.data()[i], again.data()[i]);
}

TEST(Encoder, ZeroParamsPropagateZeros) {
    SaliencyModel model(tiny_config());  // params allocated as zeros
    Tensor frame({32, 32, 3});
    Tensor feats = model.encode(frame);
    for (double v : feats.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Encoder, WrongFrameShapeRejected) {
    SaliencyModel model(tiny_config());
    EXPECT_THROW(model.encode(Tensor({16, 16, 3})), DimensionError);
    EXPECT_THROW(model.encode(Tensor({32, 32, 1})), DimensionError);
}

TEST(Attention, ZeroParamsGiveHalfEverywhere) {
    SaliencyModel model(tiny_config());
    Tensor X({4, 4, 4});
    Tensor M = model.attention_forward(X);
    ASSERT_EQ(M.shape(), (Shape{4, 4, 1}));
    for (double v : M.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Attention, FullScaleGeometryInternalMap) {
    ModelConfig cfg = tiny_config();
    cfg.encoder.input_size = 224;
    SaliencyModel model(cfg);
    model.init_params(3);
    std::mt19937_64 rng(4);
    Tensor X = random_tensor({28, 28, 4}, rng);
    Tensor coarse = model.attention_coarse(X);
    EXPECT_EQ(coarse.shape(), (Shape{7, 7, 1}));
    Tensor M = model.attention_forward(X);
    EXPECT_EQ(M.shape(), (Shape{28, 28, 1}));
}

TEST(Attention, OutputsWithinUnitIntervalAndMatchComposition) {
    SaliencyModel model(tiny_config());
    std::mt19937_64 rng(5);
    randomize_params(model, rng);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor X = random_tensor({4, 4, 4}, rng, -2, 2);
        Tensor M = model.attention_forward(X);
        for (double v : M.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        // Re-derive the branch from the individual ops.
        Tensor a = relu(conv2d(X, model.param("att1_kernel"), model.param("att1_bias"), 1, 1));
        a = max_pool2d(a, 2, 2);
        a = relu(conv2d(a, model.param("att2_kernel"), model.param("att2_bias"), 1, 1));
        a = max_pool2d(a, 2, 2);
        a = sigmoid(conv2d(a, model.param("att3_kernel"), model.param("att3_bias"), 1, 1));
        Tensor want = upsample_bilinear(a, 4);
        ASSERT_EQ(M.shape(), want.shape());
        for (std::size_t i = 0; i < M.numel(); ++i) EXPECT_EQ(M.data()[i], want.data()[i]);
    }
}

TEST(Attention, IndivisibleDimsRejected) {
    SaliencyModel model(tiny_config());
    EXPECT_THROW(model.attention_coarse(Tensor({6, 6, 4})), ConfigError);
    EXPECT_THROW(model.attention_coarse(Tensor({4, 4, 2})), DimensionError);
}

TEST(Attention, ChannelPermutationEquivariance) {
    // Permuting encoder output channels together with the attention branch's
    // matching input channels must leave M unchanged.
    ModelConfig cfg = tiny_config();
    cfg.encoder.widths = {4, 4, 4, 4, 2};
    SaliencyModel model(cfg);
    model.init_params(6);
    std::mt19937_64 rng(7);
    randomize_params(model, rng);
    Tensor frame = random_tensor({32, 32, 3}, rng, 0, 1);
    Tensor before = model.attention_forward(model.encode(frame));

    Tensor enc5k = model.param("enc5_kernel");  // [3,3,4,2]
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
            for (int ci = 0; ci < 4; ++ci)
                std::swap(enc5k.at(ky, kx, ci, 0), enc5k.at(ky, kx, ci, 1));
    Tensor enc5b = model.param("enc5_bias");
    std::swap(enc5b.data()[0], enc5b.data()[1]);
    Tensor att1k = model.param("att1_kernel");  // [3,3,2,Ca]
    for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
            for (int co = 0; co < 2; ++co)
                std::swap(att1k.at(ky, kx, 0, co), att1k.at(ky, kx, 1, co));

    Tensor after = model.attention_forward(model.encode(frame));
    for (std::size_t i = 0; i < before.numel(); ++i)
        EXPECT_NEAR(before.data()[i], after.data()[i], 1e-12);
}

TEST(Enhance, ResidualWithZeroMapIsBitIdentity) {
    std::mt19937_64 rng(8);
    Tensor X = random_tensor({4, 4, 4}, rng, -3, 3);
    Tensor M({4, 4, 1});
    Tensor out = SaliencyModel::enhance(X, M, true);
    for (std::size_t i = 0; i < X.numel(); ++i) EXPECT_EQ(out.data()[i], X.data()[i]);
}

TEST(Enhance, ResidualWithOnesDoubles) {
    std::mt19937_64 rng(9);
    Tensor X = random_tensor({4, 4, 4}, rng);
    Tensor M = Tensor::full({4, 4, 1}, 1.0);
    Tensor out = SaliencyModel::enhance(X, M, true);
    for (std::size_t i = 0; i < X.numel(); ++i)
        EXPECT_DOUBLE_EQ(out.data()[i], 2.0 * X.data()[i]);
}

TEST(Enhance, NonResidualWithZeroMapAnnihilates) {
    std::mt19937_64 rng(10);
    Tensor X = random_tensor({4, 4, 4}, rng);
    Tensor M({4, 4, 1});
    Tensor out = SaliencyModel::enhance(X, M, false);
    for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Enhance, ShapeMismatchRejected) {
    Tensor X({4, 4, 4});
    EXPECT_THROW(SaliencyModel::enhance(X, Tensor({4, 3, 1}), true), DimensionError);
    EXPECT_THROW(SaliencyModel::enhance(X, Tensor({4, 4, 2}), true), DimensionError);
}

TEST(ConvLstm, ZeroEverythingGivesHalfGates) {
    SaliencyModel model(unit_config());
    Tensor X({1, 1, 4});
    ConvLSTMOut out = model.convlstm_step(X, model.zero_state());
    for (double v : out.i.data()) EXPECT_DOUBLE_EQ(v, 0.5);
    for (double v : out.f.data()) EXPECT_DOUBLE_EQ(v, 0.5);
    for (double v : out.o.data()) EXPECT_DOUBLE_EQ(v, 0.5);
    for (double v : out.C.data()) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : out.H.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ConvLstm, SaturatedGatesPreserveMemory) {
    SaliencyModel model(unit_config());
    Tensor bf = model.param("lstm_b_f");
    std::fill(bf.data().begin(), bf.data().end(), 20.0);
    Tensor bi = model.param("lstm_b_i");
    std::fill(bi.data().begin(), bi.data().end(), -20.0);
    std::mt19937_64 rng(11);
    ConvLSTMState state = model.zero_state();
    fill_uniform(state.C, rng, -1, 1);
    Tensor X = random_tensor({1, 1, 4}, rng);
    ConvLSTMOut out = model.convlstm_step(X, state);
    for (std::size_t k = 0; k < out.C.numel(); ++k)
        EXPECT_NEAR(out.C.data()[k], state.C.data()[k], 1e-6);
}

TEST(ConvLstm, MatchesScalarPeepholeReference) {
    std::mt19937_64 rng(12);
    for (int inst = 0; inst < 20; ++inst) {
        SaliencyModel model(unit_config());
        randomize_params(model, rng, -1.0, 1.0);
        ScalarLstmRef ref(model);
        const int cf = ref.cf, ch = ref.ch;
        std::vector<double> h(ch), c(ch), x(cf);
        ConvLSTMState state = model.zero_state();
        for (int t = 0; t < 3; ++t) {
            Tensor X({1, 1, cf});
            for (int k = 0; k < cf; ++k) {
                x[k] = std::uniform_real_distribution<double>(-1, 1)(rng);
                X.data()[k] = x[k];
            }
            ConvLSTMOut out = model.convlstm_step(X, state);
            ScalarLstmRef::Step want = ref.step(x, h, c);
            for (int k = 0; k < ch; ++k) {
                EXPECT_NEAR(out.i.data()[k], want.i[k], 1e-10);
                EXPECT_NEAR(out.f.data()[k], want.f[k], 1e-10);
                EXPECT_NEAR(out.o.data()[k], want.o[k], 1e-10);
                EXPECT_NEAR(out.C.data()[k], want.c[k], 1e-10);
                EXPECT_NEAR(out.H.data()[k], want.h[k], 1e-10);
                EXPECT_GT(out.i.data()[k], 0.0);
                EXPECT_LT(out.i.data()[k], 1.0);
                EXPECT_LT(std::abs(out.H.data()[k]), 1.0);
            }
            state = {out.H, out.C};
            h = want.h;
            c = want.c;
        }
    }
}

TEST(ConvLstm, StateShapeMismatchRejected) {
    SaliencyModel model(unit_config());
    ConvLSTMState bad{Tensor({1, 1, 2}), Tensor({1, 1, 2})};
    EXPECT_THROW(model.convlstm_step(Tensor({1, 1, 4}), bad), DimensionError);
    EXPECT_THROW(model.convlstm_step(Tensor({2, 2, 4}), model.zero_state()), DimensionError);
}

TEST(Readout, ZeroParamsGiveHalf) {
    SaliencyModel model(tiny_config());
    Tensor H({4, 4, 3});
    Tensor Y = model.readout(H);
    ASSERT_EQ(Y.shape(), (Shape{4, 4}));
    for (double v : Y.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Readout, MatchesConvSigmoidComposition) {
    SaliencyModel model(tiny_config());
    std::mt19937_64 rng(13);
    randomize_params(model, rng);
    Tensor H = random_tensor({4, 4, 3}, rng);
    Tensor Y = model.readout(H);
    Tensor want = sigmoid(conv2d(H, model.param("readout_kernel"), model.param("readout_bias")));
    for (std::size_t i = 0; i < Y.numel(); ++i) EXPECT_EQ(Y.data()[i], want.data()[i]);
    for (double v : Y.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(ForwardSequence, SingleFrameBaseCase) {
    SaliencyModel model(tiny_config());
    std::mt19937_64 rng(14);
    randomize_params(model, rng);
    Tensor frame = random_tensor({32, 32, 3}, rng, 0, 1);
    SequenceOutput out = model.forward_sequence(std::vector<Tensor>{frame});
    ASSERT_EQ(out.Y.size(), 1u);
    ASSERT_EQ(out.M.size(), 1u);

    Tensor X = model.encode(frame);
    Tensor M = model.attention_forward(X);
    Tensor xhat = SaliencyModel::enhance(X, M, true);
    ConvLSTMOut step = model.convlstm_step(xhat, model.zero_state());
    Tensor want = model.readout(step.H);
    for (std::size_t i = 0; i < want.numel(); ++i) EXPECT_EQ(out.Y[0].data()[i], want.data()[i]);
}

TEST(ForwardSequence, SaturatedForgetKeepsOutputsConstant) {
    SaliencyModel model(tiny_config());
    Tensor bf = model.param("lstm_b_f");
    std::fill(bf.data().begin(), bf.data().end(), 20.0);
    Tensor bi = model.param("lstm_b_i");
    std::fill(bi.data().begin(), bi.data().end(), -20.0);
    std::mt19937_64 rng(15);
    Tensor frame = random_tensor({32, 32, 3}, rng, 0, 1);
    SequenceOutput out = model.forward_sequence(std::vector<Tensor>(5, frame));
    ASSERT_EQ(out.Y.size(), 5u);
    for (int t = 1; t < 5; ++t)
        for (std::size_t i = 0; i < out.Y[0].numel(); ++i)
            EXPECT_NEAR(out.Y[t].data()[i], out.Y[0].data()[i], 1e-12);
}

TEST(ForwardSequence, MatchesManualUnrolling) {
    SaliencyModel model(tiny_config());
    std::mt19937_64 rng(16);
    randomize_params(model, rng);
    std::vector<Tensor> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(random_tensor({32, 32, 3}, rng, 0, 1));
    SequenceOutput out = model.forward_sequence(frames);

    ConvLSTMState state = model.zero_state();
    for (int t = 0; t < 3; ++t) {
        Tensor X = model.encode(frames[t]);
        Tensor M = model.attention_forward(X);
        ConvLSTMOut step = model.convlstm_step(SaliencyModel::enhance(X, M, true), state);
        state = {step.H, step.C};
        Tensor want = model.readout(step.H);
        for (std::size_t i = 0; i < want.numel(); ++i)
            EXPECT_EQ(out.Y[t].data()[i], want.data()[i]);
        for (std::size_t i = 0; i < out.M[t].numel(); ++i)
            EXPECT_EQ(out.M[t].data()[i], M.data()[i]);
    }
}

TEST(ForwardSequence, EmptyInputRejected) {
    SaliencyModel model(tiny_config());
    EXPECT_THROW(model.forward_sequence(std::vector<Tensor>{}), DimensionError);
}

TEST(ForwardSequence, StackOverloadMatchesListOverload) {
    SaliencyModel model(tiny_config());
    std::mt19937_64 rng(17);
    randomize_params(model, rng);
    Tensor stack = random_tensor({2, 32, 32, 3}, rng, 0, 1);
    std::vector<Tensor> list = {SaliencyModel::slice_frame(stack, 0),
                                SaliencyModel::slice_frame(stack, 1)};
    SequenceOutput a = model.forward_sequence(stack);
    SequenceOutput b = model.forward_sequence(list);
    ASSERT_EQ(a.Y.size(), b.Y.size());
    for (std::size_t t = 0; t < a.Y.size(); ++t)
        for (std::size_t i = 0; i < a.Y[t].numel(); ++i)
            EXPECT_EQ(a.Y[t].data()[i], b.Y[t].data()[i]);
}

TEST(ForwardSequence, AblatedModelSkipsAttention) {
    ModelConfig cfg = tiny_config();
    cfg.attention_enabled = false;
    SaliencyModel model(cfg);
    model.init_params(18);
    std::mt19937_64 rng(19);
    Tensor frame = random_tensor({32, 32, 3}, rng, 0, 1);
    SequenceOutput out = model.forward_sequence(std::vector<Tensor>{frame});
    for (double v : out.M[0].data()) EXPECT_DOUBLE_EQ(v, 0.0);

    // Identical to residual enhancement with M forced to zero.
    Tensor X = model.encode(frame);
    ConvLSTMOut step =
        model.convlstm_step(SaliencyModel::enhance(X, Tensor({4, 4, 1}), true),
                            model.zero_state());
    Tensor want = model.readout(step.H);
    for (std::size_t i = 0; i < want.numel(); ++i) EXPECT_EQ(out.Y[0].data()[i], want.data()[i]);
}

TEST(Init, BiasAndPeepholeConventions) {
    SaliencyModel model(tiny_config());
    model.init_params(20);
    for (double v : model.param("lstm_b_f").data()) EXPECT_DOUBLE_EQ(v, 1.0);
    for (const char* name : {"enc1_bias", "att1_bias", "lstm_b_i", "lstm_b_c", "lstm_b_o",
                             "readout_bias", "lstm_wc_i", "lstm_wc_f", "lstm_wc_o"})
        for (double v : model.param(name).data()) EXPECT_DOUBLE_EQ(v, 0.0);
    double sumsq = 0.0;
    for (double v : model.param("enc1_kernel").data()) sumsq += v * v;
    EXPECT_GT(sumsq, 0.0);
}

TEST(Init, SeedDeterminism) {
    SaliencyModel a(tiny_config()), b(tiny_config()), c(tiny_config());
    a.init_params(21);
    b.init_params(21);
    c.init_params(22);
    bool any_diff = false;
    for (std::size_t p = 0; p < a.named_params().size(); ++p) {
        const Tensor& ta = a.named_params()[p].second;
        const Tensor& tb = b.named_params()[p].second;
        const Tensor& tc = c.named_params()[p].second;
        for (std::size_t i = 0; i < ta.numel(); ++i) {
            EXPECT_EQ(ta.data()[i], tb.data()[i]);
            if (ta.data()[i] != tc.data()[i]) any_diff = true;
        }
    }
    EXPECT_TRUE(any_diff);
}

TEST(Checkpoint, RoundTripRestoresParamsAndConfig) {
    auto dir = std::filesystem::temp_directory_path() / "vsal_ckpt_roundtrip";
    std::filesystem::remove_all(dir);
    ModelConfig cfg = tiny_config();
    cfg.residual = false;
    SaliencyModel model(cfg);
    model.init_params(23);
    model.save(dir);
    SaliencyModel back = SaliencyModel::load(dir);
    EXPECT_EQ(back.config().encoder.input_size, 32);
    EXPECT_EQ(back.config().encoder.widths, cfg.encoder.widths);
    EXPECT_FALSE(back.config().residual);
    EXPECT_TRUE(back.config().attention_enabled);
    for (std::size_t p = 0; p < model.named_params().size(); ++p) {
        const auto& [name, orig] = model.named_params()[p];
        Tensor loaded = back.param(name);
        ASSERT_EQ(loaded.shape(), orig.shape());
        for (std::size_t i = 0; i < orig.numel(); ++i)
            EXPECT_EQ(loaded.data()[i], static_cast<double>(static_cast<float>(orig.data()[i])))
                << name;
    }
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MissingOrInconsistentFilesRejected) {
    auto dir = std::filesystem::temp_directory_path() / "vsal_ckpt_bad";
    std::filesystem::remove_all(dir);
    SaliencyModel model(tiny_config());
    model.init_params(24);
    model.save(dir);
    std::filesystem::remove(dir / "enc3_kernel.stns");
    EXPECT_THROW(SaliencyModel::load(dir), DataError);
    model.save(dir);
    // Truncate the manifest: parameter count no longer matches.
    {
        std::ifstream in(dir / "params.txt");
        std::string first;
        std::getline(in, first);
        in.close();
        std::ofstream out(dir / "params.txt", std::ios::trunc);
        out << first << "\n";
    }
    EXPECT_THROW(SaliencyModel::load(dir), DataError);
    std::filesystem::remove_all(dir);
    EXPECT_THROW(SaliencyModel::load(dir), DataError);
}

TEST(Model, GradFlowsThroughEveryParameterGroup) {
    SaliencyModel model(tiny_config());
    model.init_params(25);
    std::mt19937_64 rng(26);
    std::vector<Tensor> frames = {random_tensor({32, 32, 3}, rng, 0, 1),
                                  random_tensor({32, 32, 3}, rng, 0, 1)};
    GradTape tape;
    SequenceOutput out = model.forward_sequence(frames);
    Tensor loss = Tensor::scalar(0.0);
    {
        // Quadratic pushes nonzero signal through both heads.
        for (const Tensor& y : out.Y) loss = add(loss, sum(hadamard(y, y)));
        for (const Tensor& m : out.M) loss = add(loss, sum(hadamard(m, m)));
    }
    tape.backward(loss);
    for (const auto& [name, t] : model.named_params()) {
        double norm = 0.0;
        for (double g : t.grad()) norm += g * g;
        // Zero-initialized peepholes still receive gradient through C o W paths.
        EXPECT_GT(norm, 0.0) << "no gradient reached " << name;
    }
}
