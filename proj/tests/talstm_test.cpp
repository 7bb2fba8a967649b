#include "geonav/talstm.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <gtest/gtest.h>
#include <random>

#include "geonav/angles.hpp"

using namespace geonav;
using namespace geonav::talstm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "geonav_talstm_test";
    fs::create_directories(dir);
    return dir;
}

// Straight-line transcription of the cell equations, kept independent of the
// library implementation.
LstmState lstm_reference(const LstmParams& p, const VectorXd& x, const VectorXd& h_prev,
                         const VectorXd& c_prev) {
    const int H = static_cast<int>(h_prev.size());
    VectorXd hx(h_prev.size() + x.size());
    hx << h_prev, x;
    LstmState out;
    out.h = VectorXd(H);
    out.c = VectorXd(H);
    for (int j = 0; j < H; ++j) {
        double af = p.b_f[j], ai = p.b_i[j], ao = p.b_o[j], ag = p.b_g[j];
        for (int k = 0; k < hx.size(); ++k) {
            af += p.w_f(j, k) * hx[k];
            ai += p.w_i(j, k) * hx[k];
            ao += p.w_o(j, k) * hx[k];
            ag += p.w_g(j, k) * hx[k];
        }
        const double f = 1.0 / (1.0 + std::exp(-af));
        const double i = 1.0 / (1.0 + std::exp(-ai));
        const double o = 1.0 / (1.0 + std::exp(-ao));
        const double g = std::tanh(ag);
        out.c[j] = f * c_prev[j] + i * g;
        out.h[j] = o * std::tanh(out.c[j]);
    }
    return out;
}

LstmParams zero_lstm(int hidden, int input) {
    LstmParams p;
    p.w_f = MatrixXd::Zero(hidden, hidden + input);
    p.w_i = MatrixXd::Zero(hidden, hidden + input);
    p.w_o = MatrixXd::Zero(hidden, hidden + input);
    p.w_g = MatrixXd::Zero(hidden, hidden + input);
    p.b_f = VectorXd::Zero(hidden);
    p.b_i = VectorXd::Zero(hidden);
    p.b_o = VectorXd::Zero(hidden);
    p.b_g = VectorXd::Zero(hidden);
    return p;
}

// Trajectory generator: integrates a heading profile at a fixed step length
// over linear declination/inclination fields.
SequenceSeries make_sequence(int windows, int T, double (*heading)(int),
                             double step_m = 4000.0) {
    std::vector<nav::SamplePoint> track;
    std::vector<double> headings;
    double x = 0.0, y = 0.0;
    for (int k = 0; k < windows * T; ++k) {
        const double d = 2.0 + 3e-5 * x + 1e-5 * y;
        const double i = 30.0 + 1e-5 * x - 4e-5 * y;
        track.push_back({x, y, d, i});
        const double th = heading(k);
        headings.push_back(th);
        x += std::cos(deg2rad(th)) * step_m;
        y += std::sin(deg2rad(th)) * step_m;
    }
    return slice_windows(track, headings, T);
}

double wavy_heading(int k) { return 40.0 + 25.0 * std::sin(k / 9.0); }
double constant_heading(int) { return 30.0; }

Dataset wavy_dataset(int sequences, int windows, int T) {
    Dataset data;
    for (int s = 0; s < sequences; ++s) {
        SequenceSeries seq = make_sequence(windows, T, &wavy_heading);
        // offset the trajectories so they are not identical
        for (WindowSeries& w : seq) {
            w.inputs.col(0).array() += 500.0 * s;
            w.inputs.col(1).array() += 300.0 * s;
        }
        data.sequences.push_back(std::move(seq));
    }
    return data;
}

} // namespace

// ---------------------------------------------------------------------------
// Cell
// ---------------------------------------------------------------------------

TEST(LstmStep, ZeroParametersClosedForm) {
    const LstmParams p = zero_lstm(3, 2);
    VectorXd x = VectorXd::Zero(2);
    VectorXd h0 = VectorXd::Zero(3);
    VectorXd c0(3);
    c0 << 1.0, -2.0, 0.5;
    const LstmState s = lstm_step(p, x, h0, c0);
    for (int j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(s.c[j], 0.5 * c0[j]);
        EXPECT_DOUBLE_EQ(s.h[j], 0.5 * std::tanh(0.5 * c0[j]));
    }
}

TEST(LstmStep, OriginIsAFixedPoint) {
    const LstmParams p = zero_lstm(4, 3);
    const LstmState s =
        lstm_step(p, VectorXd::Zero(3), VectorXd::Zero(4), VectorXd::Zero(4));
    EXPECT_DOUBLE_EQ(s.h.norm(), 0.0);
    EXPECT_DOUBLE_EQ(s.c.norm(), 0.0);
}

TEST(LstmStep, MatchesIndependentReferenceOnRandomInstances) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        LstmParams p = zero_lstm(4, 3);
        for (MatrixXd* w : {&p.w_f, &p.w_i, &p.w_o, &p.w_g}) {
            for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = u(rng);
        }
        for (VectorXd* b : {&p.b_f, &p.b_i, &p.b_o, &p.b_g}) {
            for (Eigen::Index i = 0; i < b->size(); ++i) (*b)[i] = u(rng);
        }
        VectorXd x(3), h(4), c(4);
        for (int i = 0; i < 3; ++i) x[i] = u(rng);
        for (int i = 0; i < 4; ++i) {
            h[i] = u(rng);
            c[i] = u(rng);
        }
        const LstmState got = lstm_step(p, x, h, c);
        const LstmState want = lstm_reference(p, x, h, c);
        for (int j = 0; j < 4; ++j) {
            EXPECT_NEAR(got.h[j], want.h[j], 1e-14);
            EXPECT_NEAR(got.c[j], want.c[j], 1e-14);
        }
    }
}

TEST(LstmStep, HiddenStateIsBoundedByOne) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        LstmParams p = zero_lstm(4, 3);
        for (MatrixXd* w : {&p.w_f, &p.w_i, &p.w_o, &p.w_g}) {
            for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = u(rng);
        }
        VectorXd x(3), h(4), c(4);
        for (int i = 0; i < 3; ++i) x[i] = u(rng);
        for (int i = 0; i < 4; ++i) {
            h[i] = u(rng) / 5.0;
            c[i] = u(rng);
        }
        const LstmState s = lstm_step(p, x, h, c);
        for (int j = 0; j < 4; ++j) EXPECT_LT(std::abs(s.h[j]), 1.0);
    }
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

TEST(Softmax, NonNegativeAndNormalized) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (int trial = 0; trial < 200; ++trial) {
        VectorXd logits(7);
        for (int i = 0; i < 7; ++i) logits[i] = u(rng);
        const VectorXd w = softmax(logits);
        double sum = 0.0;
        for (int i = 0; i < 7; ++i) {
            EXPECT_GE(w[i], 0.0);
            sum += w[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Softmax, SaturatesOnDominantLogit) {
    VectorXd logits(5);
    logits << 0.0, -1.0, 20.0, 0.5, -2.0;
    const VectorXd w = softmax(logits);
    EXPECT_GT(w[2], 0.999);
}

TEST(Softmax, ArgmaxInvariantUnderConstantShift) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        VectorXd logits(6);
        for (int i = 0; i < 6; ++i) logits[i] = u(rng);
        Eigen::Index argmax_base, argmax_shifted;
        softmax(logits).maxCoeff(&argmax_base);
        softmax((logits.array() + 123.5).matrix()).maxCoeff(&argmax_shifted);
        EXPECT_EQ(argmax_base, argmax_shifted);
    }
}

// ---------------------------------------------------------------------------
// Window forward
// ---------------------------------------------------------------------------

TEST(ForwardWindow, AttentionWeightsAreNormalized) {
    TaLstmModel m = make_model(8, 6, 42);
    ForwardState state = make_state(m);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int w = 0; w < 4; ++w) {
        MatrixXd inputs(8, 4);
        VectorXd teacher(8);
        for (int k = 0; k < 8; ++k) {
            inputs(k, 0) = 1000 * u(rng);
            inputs(k, 1) = 1000 * u(rng);
            inputs(k, 2) = 5 * u(rng);
            inputs(k, 3) = 30 + 5 * u(rng);
            teacher[k] = 90 * u(rng);
        }
        const WindowForward out = forward_window(m, inputs, teacher, state);
        EXPECT_NEAR(out.local_attention.sum(), 1.0, 1e-12);
        EXPECT_NEAR(out.global_attention.sum(), 1.0, 1e-12);
        EXPECT_EQ(out.global_attention.size(), w + 1);
        EXPECT_EQ(out.prediction_deg.size(), 8);
        for (int k = 0; k < 8; ++k) {
            EXPECT_GE(out.local_attention[k], 0.0);
            EXPECT_GT(out.prediction_deg[k], -180.0);
            EXPECT_LE(out.prediction_deg[k], 180.0);
        }
    }
}

TEST(ForwardWindow, EqualLogitsGiveUniformLocalAttention) {
    TaLstmModel m = make_model(5, 4, 1);
    m.attention.v_e.setZero(); // every logit collapses to zero
    ForwardState state = make_state(m);
    MatrixXd inputs = MatrixXd::Random(5, 4);
    VectorXd teacher = VectorXd::Random(5);
    const WindowForward out = forward_window(m, inputs, teacher, state);
    for (int k = 0; k < 5; ++k) {
        EXPECT_NEAR(out.local_attention[k], 0.2, 1e-12);
    }
}

TEST(ForwardWindow, DominantInputSaturatesLocalAttention) {
    TaLstmModel m = make_model(4, 3, 2);
    // Logit = 20 * tanh(first input feature): +-20 separation between steps.
    m.attention.w_e.setZero();
    m.attention.b_e.setZero();
    m.attention.u_e.setZero();
    m.attention.v_e.setZero();
    m.attention.v_e[0] = 20.0;
    m.attention.u_e(0, 0) = 1.0;
    m.norm.input_mean.setZero();
    m.norm.input_std.setOnes();
    MatrixXd inputs = MatrixXd::Zero(4, 4);
    inputs(2, 0) = 5.0;  // tanh saturates near +1
    for (int k = 0; k < 4; ++k) {
        if (k != 2) inputs(k, 0) = -5.0;
    }
    ForwardState state = make_state(m);
    const WindowForward out = forward_window(m, inputs, VectorXd::Zero(4), state);
    EXPECT_GT(out.local_attention[2], 0.999);
}

TEST(ForwardWindow, FirstWindowGlobalAttentionIsDegenerate) {
    TaLstmModel m = make_model(6, 5, 3);
    ForwardState state = make_state(m);
    const MatrixXd inputs = MatrixXd::Random(6, 4);
    const VectorXd teacher = VectorXd::Random(6);
    const WindowForward out = forward_window(m, inputs, teacher, state);
    ASSERT_EQ(out.global_attention.size(), 1);
    EXPECT_DOUBLE_EQ(out.global_attention[0], 1.0);
    for (int j = 0; j < 5; ++j) {
        EXPECT_DOUBLE_EQ(out.context[j], out.h_e[j]);
    }
}

TEST(ForwardWindow, ContextEqualsStateWhenEncoderStatesRepeat) {
    TaLstmModel m = make_model(4, 3, 5);
    // Forget gate pinned shut: every window ends in the same encoder state.
    m.encoder.w_f.setZero();
    m.encoder.w_i.setZero();
    m.encoder.w_o.setZero();
    m.encoder.w_g.setZero();
    m.encoder.b_f.setConstant(-30.0);
    m.encoder.b_i.setConstant(0.3);
    m.encoder.b_o.setConstant(0.2);
    m.encoder.b_g.setConstant(0.7);
    ForwardState state = make_state(m);
    WindowForward out;
    for (int w = 0; w < 3; ++w) {
        out = forward_window(m, MatrixXd::Random(4, 4), VectorXd::Random(4), state);
    }
    ASSERT_EQ(out.global_attention.size(), 3);
    for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(out.context[j], out.h_e[j], 1e-9);
    }
}

TEST(ForwardWindow, DeterministicForIdenticalInputs) {
    const TaLstmModel m = make_model(6, 5, 11);
    const MatrixXd inputs = MatrixXd::Random(6, 4);
    const VectorXd teacher = VectorXd::Random(6);
    ForwardState s1 = make_state(m), s2 = make_state(m);
    const WindowForward a = forward_window(m, inputs, teacher, s1);
    const WindowForward b = forward_window(m, inputs, teacher, s2);
    for (int k = 0; k < 6; ++k) {
        EXPECT_EQ(a.prediction_deg[k], b.prediction_deg[k]);
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TEST(Train, RejectsEmptyDatasetAndZeroEpochs) {
    TaLstmModel m = make_model(10, 6, 1);
    Dataset empty;
    TrainingOptions opts;
    EXPECT_THROW(train(m, empty, opts), std::invalid_argument);

    Dataset data = wavy_dataset(1, 4, 10);
    opts.epochs = 0;
    try {
        train(m, data, opts);
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& ex) {
        EXPECT_NE(std::string(ex.what()).find("no training performed"), std::string::npos);
    }
}

TEST(Train, LossFallsOverFirstTenEpochs) {
    TaLstmModel m = make_model(10, 8, 7);
    Dataset data = wavy_dataset(3, 8, 10);
    TrainingOptions opts;
    opts.epochs = 10;
    opts.train_ratio = 1.0;
    opts.validation_share = 0.0;
    opts.seed = 5;
    train(m, data, opts);
    ASSERT_EQ(m.meta.train_loss.size(), 10u);
    EXPECT_LT(m.meta.train_loss[9], m.meta.train_loss[0]);
    const double first_half = (m.meta.train_loss[0] + m.meta.train_loss[1] +
                               m.meta.train_loss[2] + m.meta.train_loss[3] +
                               m.meta.train_loss[4]) /
                              5.0;
    const double second_half = (m.meta.train_loss[5] + m.meta.train_loss[6] +
                                m.meta.train_loss[7] + m.meta.train_loss[8] +
                                m.meta.train_loss[9]) /
                               5.0;
    EXPECT_LT(second_half, first_half);
}

TEST(Train, ZeroHeadGivesZeroInitialLossOnZeroTargets) {
    TaLstmModel m = make_model(6, 5, 13);
    m.attention.w_y.setZero();
    m.attention.b_w.setZero();
    m.attention.v_y.setZero();
    m.attention.b_y.setZero();
    Dataset data = wavy_dataset(1, 3, 6);
    for (WindowSeries& w : data.sequences[0]) w.targets_deg.setZero();
    EXPECT_DOUBLE_EQ(evaluate_loss(m, data), 0.0);
}

TEST(Train, InitialLossEqualsMeanSquaredPredictionOnZeroTargets) {
    TaLstmModel m = make_model(6, 5, 17);
    Dataset data = wavy_dataset(1, 3, 6);
    for (WindowSeries& w : data.sequences[0]) w.targets_deg.setZero();

    ForwardState state = make_state(m);
    double expected = 0.0;
    int pairs = 0;
    std::vector<VectorXd> preds;
    for (const WindowSeries& w : data.sequences[0]) {
        preds.push_back(
            forward_window(m, w.inputs, w.targets_deg, state).prediction_deg);
    }
    for (std::size_t w = 0; w + 1 < preds.size(); ++w) {
        double acc = 0.0;
        for (int k = 0; k < 6; ++k) {
            const double p = preds[w][k] / m.norm.target_scale;
            acc += p * p;
        }
        expected += acc / 6.0;
        ++pairs;
    }
    expected /= pairs;
    EXPECT_NEAR(evaluate_loss(m, data), expected, 1e-12);
}

TEST(Train, OverfitsASingleWindow) {
    TaLstmModel m = make_model(8, 8, 19);
    Dataset data;
    data.sequences.push_back(make_sequence(1, 8, &wavy_heading));
    TrainingOptions opts;
    opts.epochs = 500;
    opts.learning_rate = 0.02;
    opts.drop_factor = 1.0;
    opts.train_ratio = 1.0;
    opts.validation_share = 0.0;
    opts.seed = 3;
    train(m, data, opts);
    EXPECT_LT(m.meta.train_loss.back(), 1e-3);
}

TEST(Train, OverfitsConstantHeadingTrajectory) {
    TaLstmModel m = make_model(10, 12, 23);
    Dataset data;
    data.sequences.push_back(make_sequence(4, 10, &constant_heading));
    TrainingOptions opts;
    opts.epochs = 8000;
    opts.learning_rate = 0.15;
    opts.drop_factor = 0.98;
    opts.drop_period = 200;
    opts.train_ratio = 1.0;
    opts.validation_share = 0.0;
    opts.seed = 29;
    train(m, data, opts);
    EXPECT_LT(m.meta.train_loss.back(), 1.5e-6);

    // Deployment-style forecasts over the same trajectory: the teacher is
    // the model's previous window forecast, as in a mission.
    ForwardState state = make_state(m);
    std::vector<VectorXd> preds;
    VectorXd teacher = data.sequences[0][0].targets_deg;
    for (const WindowSeries& w : data.sequences[0]) {
        const WindowForward out = forward_window(m, w.inputs, teacher, state);
        teacher = out.prediction_deg;
        preds.push_back(out.prediction_deg);
    }
    for (std::size_t w = 0; w + 1 < preds.size(); ++w) {
        for (int k = 0; k < 10; ++k) {
            EXPECT_NEAR(preds[w][k], 30.0, 0.5);
        }
    }
}

TEST(Train, DeterministicForFixedSeed) {
    Dataset data = wavy_dataset(2, 4, 8);
    TrainingOptions opts;
    opts.epochs = 5;
    opts.seed = 77;
    TaLstmModel a = make_model(8, 6, 123);
    TaLstmModel b = make_model(8, 6, 123);
    train(a, data, opts);
    train(b, data, opts);
    EXPECT_TRUE(a.attention.w_y.isApprox(b.attention.w_y, 0.0));
    EXPECT_TRUE(a.encoder.w_f.isApprox(b.encoder.w_f, 0.0));
    EXPECT_TRUE(a.decoder.w_g.isApprox(b.decoder.w_g, 0.0));
    ASSERT_EQ(a.meta.train_loss.size(), b.meta.train_loss.size());
    for (std::size_t i = 0; i < a.meta.train_loss.size(); ++i) {
        EXPECT_EQ(a.meta.train_loss[i], b.meta.train_loss[i]);
    }
}

TEST(Train, DivergenceRaisesTrainingError) {
    TaLstmModel m = make_model(8, 6, 31);
    Dataset data = wavy_dataset(2, 4, 8);
    TrainingOptions opts;
    opts.epochs = 200;
    opts.learning_rate = 1e6;
    opts.clip_norm = 0.0; // disable clipping so the blowup is observable
    opts.train_ratio = 1.0;
    opts.validation_share = 0.0;
    EXPECT_THROW(train(m, data, opts), TrainingError);
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

namespace {

Dataset gradcheck_dataset(int T) {
    Dataset data;
    data.sequences.push_back(make_sequence(3, T, &wavy_heading));
    return data;
}

// Standardizes the model's input normalization to the dataset so the cells
// operate away from saturation, as they would after training.
void fit_norm(TaLstmModel& m, const Dataset& data) {
    Eigen::Vector4d sum = Eigen::Vector4d::Zero(), sq = Eigen::Vector4d::Zero();
    long n = 0;
    for (const SequenceSeries& seq : data.sequences) {
        for (const WindowSeries& w : seq) {
            for (int k = 0; k < w.inputs.rows(); ++k) {
                for (int j = 0; j < 4; ++j) {
                    sum[j] += w.inputs(k, j);
                    sq[j] += w.inputs(k, j) * w.inputs(k, j);
                }
                ++n;
            }
        }
    }
    for (int j = 0; j < 4; ++j) {
        m.norm.input_mean[j] = sum[j] / n;
        const double var = sq[j] / n - m.norm.input_mean[j] * m.norm.input_mean[j];
        m.norm.input_std[j] = std::max(std::sqrt(std::max(var, 0.0)), 1e-9);
    }
}

} // namespace

TEST(GradientCheck, BackpropMatchesFiniteDifferences) {
    TaLstmModel m = make_model(6, 5, 37, 4, 4.0);
    const Dataset data = gradcheck_dataset(6);
    fit_norm(m, data);
    const double err = gradient_check(m, data, 1e-5);
    EXPECT_LE(err, 1e-4) << "max relative gradient error " << err;
}

TEST(GradientCheck, BiasOnlySubsetHoldsTheSameTolerance) {
    TaLstmModel m = make_model(6, 5, 41, 4, 4.0);
    const Dataset data = gradcheck_dataset(6);
    fit_norm(m, data);
    GradientCheckOptions opts;
    opts.name_filter = ".b_";
    const double err = gradient_check(m, data, 1e-5, opts);
    EXPECT_LE(err, 1e-4);
}

TEST(GradientCheck, CorruptedGradientFailsLoudly) {
    TaLstmModel m = make_model(6, 5, 43, 4, 4.0);
    const Dataset data = gradcheck_dataset(6);
    fit_norm(m, data);
    GradientCheckOptions opts;
    opts.corrupt_output_grad = true;
    const double err = gradient_check(m, data, 1e-5, opts);
    EXPECT_GT(err, 0.1);
}

TEST(GradientCheck, RejectsEpsilonOutsideRange) {
    const TaLstmModel m = make_model(6, 5, 47);
    const Dataset data = gradcheck_dataset(6);
    EXPECT_THROW(gradient_check(m, data, 1e-8), std::invalid_argument);
    EXPECT_THROW(gradient_check(m, data, 1e-2), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

TEST(ModelIO, RoundTripPreservesPredictionsBitExactly) {
    TaLstmModel m = make_model(8, 6, 53);
    Dataset data = wavy_dataset(1, 4, 8);
    TrainingOptions opts;
    opts.epochs = 3;
    opts.train_ratio = 1.0;
    train(m, data, opts);

    const fs::path path = temp_dir() / "roundtrip.talstm";
    save_model(m, path);
    const TaLstmModel loaded = load_model(path);

    EXPECT_EQ(loaded.window_len, m.window_len);
    EXPECT_EQ(loaded.trained, m.trained);
    ASSERT_EQ(loaded.reference_discrepancies.size(), m.reference_discrepancies.size());

    const MatrixXd inputs = MatrixXd::Random(8, 4);
    const VectorXd teacher = VectorXd::Random(8);
    ForwardState s1 = make_state(m), s2 = make_state(loaded);
    const WindowForward a = forward_window(m, inputs, teacher, s1);
    const WindowForward b = forward_window(loaded, inputs, teacher, s2);
    for (int k = 0; k < 8; ++k) {
        EXPECT_EQ(a.prediction_deg[k], b.prediction_deg[k]);
    }
}

TEST(ModelIO, WrongMagicIsRejected) {
    const fs::path path = temp_dir() / "not_a_model.bin";
    std::ofstream os(path, std::ios::binary);
    os << "NOTMODEL and some garbage";
    os.close();
    EXPECT_THROW(load_model(path), std::runtime_error);
}

TEST(ModelIO, TamperedWindowLengthNamesTheMismatch) {
    TaLstmModel m = make_model(8, 6, 59);
    const fs::path path = temp_dir() / "tampered.talstm";
    save_model(m, path);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(8); // first header field after the magic
        const std::uint32_t bad_t = 9;
        f.write(reinterpret_cast<const char*>(&bad_t), sizeof(bad_t));
    }
    try {
        load_model(path);
        FAIL() << "expected a dimension mismatch error";
    } catch (const std::runtime_error& ex) {
        EXPECT_NE(std::string(ex.what()).find("window length"), std::string::npos);
    }
}

TEST(ModelIO, TruncatedFileIsRejected) {
    TaLstmModel m = make_model(8, 6, 61);
    const fs::path path = temp_dir() / "truncated.talstm";
    save_model(m, path);
    const auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    try {
        load_model(path);
        FAIL() << "expected a truncation error";
    } catch (const std::runtime_error& ex) {
        EXPECT_NE(std::string(ex.what()).find("truncated"), std::string::npos);
    }
}

TEST(ModelIO, SaveIsByteStableForIdenticalModels) {
    TaLstmModel a = make_model(8, 6, 67);
    TaLstmModel b = make_model(8, 6, 67);
    const fs::path pa = temp_dir() / "stable_a.talstm";
    const fs::path pb = temp_dir() / "stable_b.talstm";
    save_model(a, pa);
    save_model(b, pb);
    std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
    const std::string ca((std::istreambuf_iterator<char>(fa)), {});
    const std::string cb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(ca, cb);
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

TEST(DatasetCsv, RoundTripsSequences) {
    Dataset data = wavy_dataset(2, 3, 5);
    const fs::path path = temp_dir() / "dataset.csv";
    write_dataset_csv(data, path);
    const Dataset loaded = read_dataset_csv(path, 5);
    ASSERT_EQ(loaded.sequences.size(), 2u);
    for (int s = 0; s < 2; ++s) {
        ASSERT_EQ(loaded.sequences[s].size(), 3u);
        for (int w = 0; w < 3; ++w) {
            const WindowSeries& a = data.sequences[s][w];
            const WindowSeries& b = loaded.sequences[s][w];
            EXPECT_TRUE(a.inputs.isApprox(b.inputs, 0.0));
            EXPECT_TRUE(a.targets_deg.isApprox(b.targets_deg, 0.0));
        }
    }
}

// ---------------------------------------------------------------------------
// Mission adapter
// ---------------------------------------------------------------------------

TEST(TaLstmPredictor, RefusesUntrainedModels) {
    const TaLstmModel m = make_model(5, 4, 71);
    TaLstmPredictor predictor(m);
    std::vector<nav::SamplePoint> inputs(5);
    std::vector<double> flown(5, 0.0);
    EXPECT_THROW(predictor.predict_next(inputs, flown), TrainingError);
}
