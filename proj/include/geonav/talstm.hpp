// Multi-input multi-output LSTM with local (encoder) and global (decoder)
// temporal attention, trained from scratch by backpropagation through time
// to forecast heading-angle windows from position/declination/inclination
// windows.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "geonav/nav_core.hpp"

namespace geonav::talstm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Gate parameters of one LSTM cell. Each matrix multiplies the
/// concatenation [h_prev; x].
struct LstmParams {
    MatrixXd w_f, w_i, w_o, w_g; // hidden x (hidden + input)
    VectorXd b_f, b_i, b_o, b_g; // hidden
};

/// One cell update:
///   f,i,o = sigmoid(W [h;x] + b), g = tanh(W_g [h;x] + b_g)
///   c = f.c_prev + i.g, h = o.tanh(c)
struct LstmState {
    VectorXd h, c;
};
LstmState lstm_step(const LstmParams& params, const VectorXd& x,
                    const VectorXd& h_prev, const VectorXd& c_prev);

/// Numerically stable softmax used by both attention stages.
VectorXd softmax(const VectorXd& logits);

/// Attention, fusion, and output-head parameters.
struct AttentionParams {
    // Local (encoder) attention: logits over the T steps of a window,
    // conditioned on the previous encoder state and on [x_k; teacher].
    MatrixXd w_e; // attn x 2*hidden
    MatrixXd u_e; // attn x (input + T)
    VectorXd b_e; // attn
    VectorXd v_e; // attn
    // Global (decoder) attention over stored encoder states.
    MatrixXd w_d; // attn x 2*hidden
    MatrixXd u_d; // attn x hidden
    VectorXd b_d; // attn
    VectorXd v_d; // attn
    // Fully connected fusion of [weighted inputs, context, teacher].
    MatrixXd w_n; // dec_in x (input*T + hidden + T)
    VectorXd b_n; // dec_in
    // Output head: pred = V_y^T (W_y [h_d; c_d] + b_w) + b_y.
    MatrixXd w_y; // out_proj x 2*hidden
    VectorXd b_w; // out_proj
    MatrixXd v_y; // out_proj x T
    VectorXd b_y; // T
};

/// Per-feature standardization for the inputs and a fixed angular scale for
/// the heading targets.
struct Normalization {
    Eigen::Vector4d input_mean = Eigen::Vector4d::Zero();
    Eigen::Vector4d input_std = Eigen::Vector4d::Ones();
    double target_scale = 180.0;
};

struct TrainingMeta {
    int epochs = 0;
    double final_learning_rate = 0.0;
    std::vector<double> train_loss;
    std::vector<double> val_loss; // NaN entries when no validation split
};

struct TaLstmModel {
    int window_len = 20;
    int input_dim = 4;
    int hidden = 20;
    int attn = 20;
    int dec_in = 20;
    int out_proj = 20;
    LstmParams encoder;
    LstmParams decoder;
    AttentionParams attention;
    Normalization norm;
    TrainingMeta meta;
    // Per-step |analytic - predicted| discrepancies collected on anomaly-free
    // data after training; seeds the mission anomaly reference.
    std::vector<double> reference_discrepancies;
    bool trained = false;
};

/// Fresh model with seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights,
/// zero biases, and the forget-gate bias at +1. `init_scale` widens the
/// uniform bound; gradient checking uses a wider draw so every pathway
/// carries a gradient well above finite-difference noise.
TaLstmModel make_model(int window_len, int hidden, std::uint64_t seed,
                       int input_dim = 4, double init_scale = 1.0);

/// One input/target window. Inputs are raw (meters and degrees): rows are
/// steps, columns are (l_x, l_y, D, I). Targets are headings in degrees.
struct WindowSeries {
    MatrixXd inputs;      // T x 4
    VectorXd targets_deg; // T
    int window_index = 0;
};

/// Consecutive windows of one trajectory; encoder/decoder state chains
/// across them.
using SequenceSeries = std::vector<WindowSeries>;

struct Dataset {
    std::vector<SequenceSeries> sequences;

    int window_count() const;
};

/// Splits one trajectory log into consecutive windows (remainder dropped).
SequenceSeries slice_windows(std::span<const nav::SamplePoint> track,
                             std::span<const double> headings_deg, int window_len);

/// Training dataset CSV with columns n, k, l_x, l_y, D, I, theta. Window
/// indices restart at 1 for each stored sequence.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path, int window_len);

/// Recurrent state carried across windows during prediction.
struct ForwardState {
    VectorXd h_e, c_e, h_d, c_d;
    std::vector<VectorXd> encoder_history; // h_e after each processed window
};
ForwardState make_state(const TaLstmModel& model);

/// Everything a single window pass exposes for inspection.
struct WindowForward {
    VectorXd local_attention;   // a_k over the T steps, sums to 1
    VectorXd global_attention;  // beta over stored encoder states, sums to 1
    MatrixXd weighted_inputs;   // T x input_dim, normalized inputs * a_k
    VectorXd context;           // global-attention mix of encoder states
    VectorXd h_e, c_e, h_d, c_d;
    VectorXd prediction_deg;    // forecast for the next window, wrapped
};

/// Runs local attention + encoder over one window, then global attention,
/// fusion, decoder, and the output head. `teacher_deg` is the ground-truth
/// heading window during training and the previous forecast in deployment.
/// Advances `state`.
WindowForward forward_window(const TaLstmModel& model, const MatrixXd& inputs_raw,
                             const VectorXd& teacher_deg, ForwardState& state);

struct TrainingOptions {
    int epochs = 50;
    double learning_rate = 0.005;
    double drop_factor = 0.9;
    int drop_period = 10;      // epochs between learning-rate drops
    int batch_windows = 20;    // windows per parameter update
    double train_ratio = 0.7;
    double validation_share = 0.2; // share of the training pool held out
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
};

class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Mini-batch gradient descent on the wrapped mean squared heading error,
/// backpropagated through encoder, attention, fusion, decoder, and head.
/// Fills the loss traces and the anomaly reference, and marks the model
/// trained. Throws TrainingError on a non-finite loss and
/// std::invalid_argument on an empty dataset or a non-positive epoch count.
void train(TaLstmModel& model, const Dataset& data, const TrainingOptions& options);

/// Mean wrapped squared error of the model's forecasts over a dataset, in
/// normalized units (degrees / target_scale).
double evaluate_loss(const TaLstmModel& model, const Dataset& data);

struct GradientCheckOptions {
    int min_coords = 200;      // sampled coordinates, spread over every tensor
    std::uint64_t seed = 7;
    bool corrupt_output_grad = false; // negative-control hook: doubles dW_y
    std::string name_filter;   // when set, only tensors whose name contains it
};

/// Max relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
/// between backpropagated and central finite-difference gradients on a
/// seeded random sequence. Epsilon must lie in [1e-7, 1e-3].
double gradient_check(const TaLstmModel& model, const Dataset& data, double epsilon,
                      const GradientCheckOptions& options = {});

/// Versioned binary container, magic "TALSTM1". Round-trips bit-exactly.
void save_model(const TaLstmModel& model, const std::filesystem::path& path);
TaLstmModel load_model(const std::filesystem::path& path);

/// Adapts a trained model to the mission loop: tracks recurrent state and
/// feeds each window's previous forecast back as the teacher series.
class TaLstmPredictor final : public nav::WindowPredictor {
  public:
    explicit TaLstmPredictor(const TaLstmModel& model);

    std::vector<double> predict_next(const std::vector<nav::SamplePoint>& window_inputs,
                                     const std::vector<double>& flown_headings_deg) override;
    int window_len() const override { return model_.window_len; }
    std::span<const double> reference_discrepancies() const override;

  private:
    const TaLstmModel& model_;
    ForwardState state_;
    std::optional<VectorXd> last_prediction_deg_;
};

} // namespace geonav::talstm
