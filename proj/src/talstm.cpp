#include "geonav/talstm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "geonav/angles.hpp"

namespace geonav::talstm {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Smallest signed difference on the normalized heading circle (period 2,
// i.e. degrees / 180).
double wrap_unit(double v) {
    double r = std::fmod(v + 1.0, 2.0);
    if (r < 0.0) r += 2.0;
    r -= 1.0;
    return r == -1.0 ? 1.0 : r;
}

// Adjoint of y = softmax(x) given dL/dy.
VectorXd softmax_backward(const VectorXd& y, const VectorXd& dy) {
    const double dot = y.dot(dy);
    return (y.array() * (dy.array() - dot)).matrix();
}

struct CellCache {
    VectorXd x, h_prev, c_prev;
    VectorXd f, i, o, g, c, tanh_c;
};

LstmState cell_forward(const LstmParams& p, const VectorXd& x, const VectorXd& h_prev,
                       const VectorXd& c_prev, CellCache* cache) {
    VectorXd hx(h_prev.size() + x.size());
    hx << h_prev, x;
    VectorXd f = (p.w_f * hx + p.b_f).unaryExpr([](double v) { return sigmoid(v); });
    VectorXd i = (p.w_i * hx + p.b_i).unaryExpr([](double v) { return sigmoid(v); });
    VectorXd o = (p.w_o * hx + p.b_o).unaryExpr([](double v) { return sigmoid(v); });
    VectorXd g = ((p.w_g * hx + p.b_g).array().tanh()).matrix();
    VectorXd c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    VectorXd tanh_c = (c.array().tanh()).matrix();
    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->f = f;
        cache->i = i;
        cache->o = o;
        cache->g = g;
        cache->c = c;
        cache->tanh_c = tanh_c;
    }
    return {o.cwiseProduct(tanh_c), std::move(c)};
}

struct LstmGrads {
    MatrixXd w_f, w_i, w_o, w_g;
    VectorXd b_f, b_i, b_o, b_g;
};

LstmGrads zero_like(const LstmParams& p) {
    return {MatrixXd::Zero(p.w_f.rows(), p.w_f.cols()),
            MatrixXd::Zero(p.w_i.rows(), p.w_i.cols()),
            MatrixXd::Zero(p.w_o.rows(), p.w_o.cols()),
            MatrixXd::Zero(p.w_g.rows(), p.w_g.cols()),
            VectorXd::Zero(p.b_f.size()), VectorXd::Zero(p.b_i.size()),
            VectorXd::Zero(p.b_o.size()), VectorXd::Zero(p.b_g.size())};
}

// Adjoints of one cell update; returns gradients w.r.t. x, h_prev, c_prev.
void cell_backward(const LstmParams& p, const CellCache& s, const VectorXd& dh,
                   const VectorXd& dc_in, LstmGrads& g, VectorXd& dx,
                   VectorXd& dh_prev, VectorXd& dc_prev) {
    const VectorXd dc =
        (dc_in.array() + dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square()))
            .matrix();
    const VectorXd do_ = dh.cwiseProduct(s.tanh_c);
    const VectorXd df = dc.cwiseProduct(s.c_prev);
    const VectorXd di = dc.cwiseProduct(s.g);
    const VectorXd dg = dc.cwiseProduct(s.i);

    const VectorXd daf = (df.array() * s.f.array() * (1.0 - s.f.array())).matrix();
    const VectorXd dai = (di.array() * s.i.array() * (1.0 - s.i.array())).matrix();
    const VectorXd dao = (do_.array() * s.o.array() * (1.0 - s.o.array())).matrix();
    const VectorXd dag = (dg.array() * (1.0 - s.g.array().square())).matrix();

    VectorXd hx(s.h_prev.size() + s.x.size());
    hx << s.h_prev, s.x;

    g.w_f.noalias() += daf * hx.transpose();
    g.w_i.noalias() += dai * hx.transpose();
    g.w_o.noalias() += dao * hx.transpose();
    g.w_g.noalias() += dag * hx.transpose();
    g.b_f += daf;
    g.b_i += dai;
    g.b_o += dao;
    g.b_g += dag;

    VectorXd dhx = p.w_f.transpose() * daf + p.w_i.transpose() * dai +
                   p.w_o.transpose() * dao + p.w_g.transpose() * dag;
    dh_prev = dhx.head(s.h_prev.size());
    dx = dhx.tail(s.x.size());
    dc_prev = dc.cwiseProduct(s.f);
}

struct WindowCache {
    MatrixXd x_norm;   // T x F
    VectorXd teacher;  // T, normalized
    VectorXd h_e_prev, c_e_prev, h_d_prev, c_d_prev;
    MatrixXd attn_tanh; // A x T
    VectorXd a;         // T
    MatrixXd xbar;      // T x F
    std::vector<CellCache> enc;
    MatrixXd gattn_tanh; // A x n
    VectorXd beta;       // n
    VectorXd context;    // H
    VectorXd fusion_in;  // F*T + H + T
    CellCache dec;
    VectorXd q;    // out_proj
    VectorXd pred; // T, normalized
};

struct Gradients {
    LstmGrads encoder, decoder;
    MatrixXd w_e, u_e;
    VectorXd b_e, v_e;
    MatrixXd w_d, u_d;
    VectorXd b_d, v_d;
    MatrixXd w_n;
    VectorXd b_n;
    MatrixXd w_y;
    VectorXd b_w;
    MatrixXd v_y;
    VectorXd b_y;
};

Gradients zero_gradients(const TaLstmModel& m) {
    Gradients g;
    g.encoder = zero_like(m.encoder);
    g.decoder = zero_like(m.decoder);
    const AttentionParams& a = m.attention;
    g.w_e = MatrixXd::Zero(a.w_e.rows(), a.w_e.cols());
    g.u_e = MatrixXd::Zero(a.u_e.rows(), a.u_e.cols());
    g.b_e = VectorXd::Zero(a.b_e.size());
    g.v_e = VectorXd::Zero(a.v_e.size());
    g.w_d = MatrixXd::Zero(a.w_d.rows(), a.w_d.cols());
    g.u_d = MatrixXd::Zero(a.u_d.rows(), a.u_d.cols());
    g.b_d = VectorXd::Zero(a.b_d.size());
    g.v_d = VectorXd::Zero(a.v_d.size());
    g.w_n = MatrixXd::Zero(a.w_n.rows(), a.w_n.cols());
    g.b_n = VectorXd::Zero(a.b_n.size());
    g.w_y = MatrixXd::Zero(a.w_y.rows(), a.w_y.cols());
    g.b_w = VectorXd::Zero(a.b_w.size());
    g.v_y = MatrixXd::Zero(a.v_y.rows(), a.v_y.cols());
    g.b_y = VectorXd::Zero(a.b_y.size());
    return g;
}

struct TensorRef {
    const char* name;
    double* data;
    Eigen::Index size;
};

template <typename Params>
std::vector<TensorRef> tensor_refs(Params& p) {
    std::vector<TensorRef> refs;
    auto add = [&refs](const char* name, auto& m) {
        refs.push_back({name, m.data(), m.size()});
    };
    add("enc.w_f", p.encoder.w_f);
    add("enc.w_i", p.encoder.w_i);
    add("enc.w_o", p.encoder.w_o);
    add("enc.w_g", p.encoder.w_g);
    add("enc.b_f", p.encoder.b_f);
    add("enc.b_i", p.encoder.b_i);
    add("enc.b_o", p.encoder.b_o);
    add("enc.b_g", p.encoder.b_g);
    add("dec.w_f", p.decoder.w_f);
    add("dec.w_i", p.decoder.w_i);
    add("dec.w_o", p.decoder.w_o);
    add("dec.w_g", p.decoder.w_g);
    add("dec.b_f", p.decoder.b_f);
    add("dec.b_i", p.decoder.b_i);
    add("dec.b_o", p.decoder.b_o);
    add("dec.b_g", p.decoder.b_g);
    return refs;
}

std::vector<TensorRef> tensor_refs(TaLstmModel& m) {
    std::vector<TensorRef> refs = tensor_refs<TaLstmModel>(m);
    auto add = [&refs](const char* name, auto& t) {
        refs.push_back({name, t.data(), t.size()});
    };
    AttentionParams& a = m.attention;
    add("attn.w_e", a.w_e);
    add("attn.u_e", a.u_e);
    add("attn.b_e", a.b_e);
    add("attn.v_e", a.v_e);
    add("attn.w_d", a.w_d);
    add("attn.u_d", a.u_d);
    add("attn.b_d", a.b_d);
    add("attn.v_d", a.v_d);
    add("fuse.w_n", a.w_n);
    add("fuse.b_n", a.b_n);
    add("head.w_y", a.w_y);
    add("head.b_w", a.b_w);
    add("head.v_y", a.v_y);
    add("head.b_y", a.b_y);
    return refs;
}

std::vector<TensorRef> tensor_refs(Gradients& g) {
    std::vector<TensorRef> refs = tensor_refs<Gradients>(g);
    auto add = [&refs](const char* name, auto& t) {
        refs.push_back({name, t.data(), t.size()});
    };
    add("attn.w_e", g.w_e);
    add("attn.u_e", g.u_e);
    add("attn.b_e", g.b_e);
    add("attn.v_e", g.v_e);
    add("attn.w_d", g.w_d);
    add("attn.u_d", g.u_d);
    add("attn.b_d", g.b_d);
    add("attn.v_d", g.v_d);
    add("fuse.w_n", g.w_n);
    add("fuse.b_n", g.b_n);
    add("head.w_y", g.w_y);
    add("head.b_w", g.b_w);
    add("head.v_y", g.v_y);
    add("head.b_y", g.b_y);
    return refs;
}

MatrixXd normalize_inputs(const TaLstmModel& m, const MatrixXd& raw) {
    MatrixXd out(raw.rows(), raw.cols());
    for (int j = 0; j < raw.cols(); ++j) {
        out.col(j) = (raw.col(j).array() - m.norm.input_mean[j]) / m.norm.input_std[j];
    }
    return out;
}

VectorXd normalize_teacher(const TaLstmModel& m, const VectorXd& teacher_deg) {
    VectorXd out(teacher_deg.size());
    for (int k = 0; k < teacher_deg.size(); ++k) {
        out[k] = wrap_deg(teacher_deg[k]) / m.norm.target_scale;
    }
    return out;
}

// One full window pass over normalized inputs. Advances `state` and appends
// the new encoder state to its history.
VectorXd window_pass(const TaLstmModel& m, const MatrixXd& x_norm, const VectorXd& teacher,
                     ForwardState& state, WindowCache* cache, VectorXd* local_attention,
                     VectorXd* global_attention, MatrixXd* weighted_out,
                     VectorXd* context_out) {
    const int T = m.window_len;
    const int F = m.input_dim;
    const AttentionParams& a = m.attention;

    VectorXd hc_e(2 * m.hidden);
    hc_e << state.h_e, state.c_e;

    // Local attention over the T steps.
    const VectorXd cond = a.w_e * hc_e + a.b_e;
    MatrixXd attn_tanh(m.attn, T);
    VectorXd logits(T);
    VectorXd ux(F + T);
    for (int k = 0; k < T; ++k) {
        ux.head(F) = x_norm.row(k).transpose();
        ux.tail(T) = teacher;
        attn_tanh.col(k) = ((cond + a.u_e * ux).array().tanh()).matrix();
        logits[k] = a.v_e.dot(attn_tanh.col(k));
    }
    const VectorXd attn = softmax(logits);

    MatrixXd xbar(T, F);
    for (int k = 0; k < T; ++k) {
        xbar.row(k) = x_norm.row(k) * attn[k];
    }

    // Encoder LSTM across the weighted window.
    VectorXd h_e = state.h_e, c_e = state.c_e;
    std::vector<CellCache> enc_cache;
    if (cache) enc_cache.resize(T);
    for (int k = 0; k < T; ++k) {
        LstmState s = cell_forward(m.encoder, xbar.row(k).transpose(), h_e, c_e,
                                   cache ? &enc_cache[k] : nullptr);
        h_e = std::move(s.h);
        c_e = std::move(s.c);
    }

    // Global attention over every stored encoder state, this window included.
    std::vector<VectorXd> history = state.encoder_history;
    history.push_back(h_e);
    const int n = static_cast<int>(history.size());
    VectorXd hc_d(2 * m.hidden);
    hc_d << state.h_d, state.c_d;
    const VectorXd gcond = a.w_d * hc_d + a.b_d;
    MatrixXd gattn_tanh(m.attn, n);
    VectorXd glogits(n);
    for (int t = 0; t < n; ++t) {
        gattn_tanh.col(t) = ((gcond + a.u_d * history[t]).array().tanh()).matrix();
        glogits[t] = a.v_d.dot(gattn_tanh.col(t));
    }
    const VectorXd beta = softmax(glogits);
    VectorXd context = VectorXd::Zero(m.hidden);
    for (int t = 0; t < n; ++t) {
        context += beta[t] * history[t];
    }

    // Fusion and decoder update.
    VectorXd fusion_in(F * T + m.hidden + T);
    for (int k = 0; k < T; ++k) {
        fusion_in.segment(k * F, F) = xbar.row(k).transpose();
    }
    fusion_in.segment(F * T, m.hidden) = context;
    fusion_in.tail(T) = teacher;
    const VectorXd yprime = a.w_n * fusion_in + a.b_n;

    CellCache dec_cache;
    LstmState dec = cell_forward(m.decoder, yprime, state.h_d, state.c_d,
                                 cache ? &dec_cache : nullptr);

    // Output head.
    VectorXd hc_post(2 * m.hidden);
    hc_post << dec.h, dec.c;
    const VectorXd q = a.w_y * hc_post + a.b_w;
    VectorXd pred = a.v_y.transpose() * q + a.b_y;

    if (cache) {
        cache->x_norm = x_norm;
        cache->teacher = teacher;
        cache->h_e_prev = state.h_e;
        cache->c_e_prev = state.c_e;
        cache->h_d_prev = state.h_d;
        cache->c_d_prev = state.c_d;
        cache->attn_tanh = std::move(attn_tanh);
        cache->a = attn;
        cache->xbar = xbar;
        cache->enc = std::move(enc_cache);
        cache->gattn_tanh = std::move(gattn_tanh);
        cache->beta = beta;
        cache->context = context;
        cache->fusion_in = std::move(fusion_in);
        cache->dec = std::move(dec_cache);
        cache->q = q;
        cache->pred = pred;
    }
    if (local_attention) *local_attention = attn;
    if (global_attention) *global_attention = beta;
    if (weighted_out) *weighted_out = xbar;
    if (context_out) *context_out = context;

    state.h_e = std::move(h_e);
    state.c_e = std::move(c_e);
    state.h_d = std::move(dec.h);
    state.c_d = std::move(dec.c);
    state.encoder_history.push_back(state.h_e);
    return pred;
}

// Forecast-vs-target pairs of one sequence: the pass over window w yields the
// forecast for window w+1. A one-window sequence degenerates to a
// self-forecast so it can still exercise training capacity.
struct SequencePass {
    std::vector<WindowCache> caches;
    std::vector<VectorXd> preds; // normalized forecast emitted at each window
    double loss_sum = 0.0;
    int loss_count = 0;
};

SequencePass sequence_forward(const TaLstmModel& m, const SequenceSeries& seq,
                              bool want_cache) {
    SequencePass pass;
    const int N = static_cast<int>(seq.size());
    pass.caches.resize(want_cache ? N : 0);
    pass.preds.resize(N);
    ForwardState state = make_state(m);
    for (int w = 0; w < N; ++w) {
        const MatrixXd x_norm = normalize_inputs(m, seq[w].inputs);
        const VectorXd teacher = normalize_teacher(m, seq[w].targets_deg);
        pass.preds[w] = window_pass(m, x_norm, teacher, state,
                                    want_cache ? &pass.caches[w] : nullptr, nullptr,
                                    nullptr, nullptr, nullptr);
    }
    for (int w = 0; w < N; ++w) {
        const int target_idx = (N == 1) ? 0 : w + 1;
        if (target_idx >= N) continue;
        const VectorXd target = normalize_teacher(m, seq[target_idx].targets_deg);
        double acc = 0.0;
        for (int k = 0; k < m.window_len; ++k) {
            const double d = wrap_unit(pass.preds[w][k] - target[k]);
            acc += d * d;
        }
        pass.loss_sum += acc / m.window_len;
        pass.loss_count += 1;
    }
    return pass;
}

void sequence_backward(const TaLstmModel& m, const SequenceSeries& seq,
                       const SequencePass& pass, Gradients& g) {
    const int N = static_cast<int>(seq.size());
    const int T = m.window_len;
    const int F = m.input_dim;
    const int H = m.hidden;
    const AttentionParams& a = m.attention;

    VectorXd dh_e = VectorXd::Zero(H), dc_e = VectorXd::Zero(H);
    VectorXd dh_d = VectorXd::Zero(H), dc_d = VectorXd::Zero(H);
    std::vector<VectorXd> denc(N, VectorXd::Zero(H));

    for (int w = N - 1; w >= 0; --w) {
        const WindowCache& cache = pass.caches[w];

        // Loss gradient of the forecast emitted at this window.
        VectorXd dpred = VectorXd::Zero(T);
        const int target_idx = (N == 1) ? 0 : w + 1;
        if (target_idx < N) {
            const VectorXd target = normalize_teacher(m, seq[target_idx].targets_deg);
            for (int k = 0; k < T; ++k) {
                dpred[k] = 2.0 * wrap_unit(pass.preds[w][k] - target[k]) / T;
            }
        }

        // Output head.
        const VectorXd dq = a.v_y * dpred;
        g.v_y.noalias() += cache.q * dpred.transpose();
        g.b_y += dpred;
        VectorXd hc_post(2 * H);
        hc_post << cache.dec.o.cwiseProduct(cache.dec.tanh_c), cache.dec.c;
        g.w_y.noalias() += dq * hc_post.transpose();
        g.b_w += dq;
        const VectorXd dhc_post = a.w_y.transpose() * dq;
        dh_d += dhc_post.head(H);
        dc_d += dhc_post.tail(H);

        // Decoder cell.
        VectorXd dyprime, dh_d_prev, dc_d_prev;
        cell_backward(m.decoder, cache.dec, dh_d, dc_d, g.decoder, dyprime, dh_d_prev,
                      dc_d_prev);

        // Fusion.
        g.w_n.noalias() += dyprime * cache.fusion_in.transpose();
        g.b_n += dyprime;
        const VectorXd dfusion = a.w_n.transpose() * dyprime;
        const VectorXd dcontext_fusion = dfusion.segment(F * T, H);

        // Global attention.
        const int n = static_cast<int>(cache.beta.size());
        const VectorXd& dcontext = dcontext_fusion;
        auto enc_state = [&pass](int t) {
            const CellCache& last = pass.caches[t].enc.back();
            return VectorXd(last.o.cwiseProduct(last.tanh_c));
        };
        VectorXd dbeta(n);
        for (int t = 0; t < n; ++t) {
            dbeta[t] = enc_state(t).dot(dcontext);
            denc[t] += cache.beta[t] * dcontext;
        }
        const VectorXd dglogits = softmax_backward(cache.beta, dbeta);
        VectorXd hc_d(2 * H);
        hc_d << cache.h_d_prev, cache.c_d_prev;
        for (int t = 0; t < n; ++t) {
            g.v_d += dglogits[t] * cache.gattn_tanh.col(t);
            const VectorXd dgt = dglogits[t] * a.v_d;
            const VectorXd dgpre =
                (dgt.array() * (1.0 - cache.gattn_tanh.col(t).array().square())).matrix();
            g.w_d.noalias() += dgpre * hc_d.transpose();
            g.u_d.noalias() += dgpre * enc_state(t).transpose();
            g.b_d += dgpre;
            const VectorXd dhc = a.w_d.transpose() * dgpre;
            dh_d_prev += dhc.head(H);
            dc_d_prev += dhc.tail(H);
            denc[t] += a.u_d.transpose() * dgpre;
        }

        // Encoder cells, newest first.
        VectorXd dh = dh_e + denc[w];
        VectorXd dc = dc_e;
        MatrixXd dxbar = MatrixXd::Zero(T, F);
        for (int k = 0; k < T; ++k) {
            dxbar.row(k) = dfusion.segment(k * F, F).transpose();
        }
        for (int k = T - 1; k >= 0; --k) {
            VectorXd dx, dh_prev, dc_prev;
            cell_backward(m.encoder, cache.enc[k], dh, dc, g.encoder, dx, dh_prev,
                          dc_prev);
            dxbar.row(k) += dx.transpose();
            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
        }

        // Local attention.
        VectorXd da(T);
        for (int k = 0; k < T; ++k) {
            da[k] = cache.x_norm.row(k).dot(dxbar.row(k));
        }
        const VectorXd dlogits = softmax_backward(cache.a, da);
        VectorXd hc_e(2 * H);
        hc_e << cache.h_e_prev, cache.c_e_prev;
        VectorXd ux(F + T);
        for (int k = 0; k < T; ++k) {
            g.v_e += dlogits[k] * cache.attn_tanh.col(k);
            const VectorXd dt = dlogits[k] * a.v_e;
            const VectorXd dpre =
                (dt.array() * (1.0 - cache.attn_tanh.col(k).array().square())).matrix();
            g.w_e.noalias() += dpre * hc_e.transpose();
            ux.head(F) = cache.x_norm.row(k).transpose();
            ux.tail(T) = cache.teacher;
            g.u_e.noalias() += dpre * ux.transpose();
            g.b_e += dpre;
            const VectorXd dhc = a.w_e.transpose() * dpre;
            dh += dhc.head(H);
            dc += dhc.tail(H);
        }

        dh_e = std::move(dh);
        dc_e = std::move(dc);
        dh_d = std::move(dh_d_prev);
        dc_d = std::move(dc_d_prev);
    }
}

void apply_update(TaLstmModel& m, Gradients& g, double scale, double lr,
                  double clip_norm) {
    auto grefs = tensor_refs(g);
    double norm_sq = 0.0;
    for (const TensorRef& r : grefs) {
        for (Eigen::Index i = 0; i < r.size; ++i) {
            const double v = r.data[i] * scale;
            norm_sq += v * v;
        }
    }
    double factor = scale;
    const double norm = std::sqrt(norm_sq);
    if (clip_norm > 0.0 && norm > clip_norm) {
        factor *= clip_norm / norm;
    }
    auto mrefs = tensor_refs(m);
    for (std::size_t t = 0; t < mrefs.size(); ++t) {
        for (Eigen::Index i = 0; i < mrefs[t].size; ++i) {
            mrefs[t].data[i] -= lr * factor * grefs[t].data[i];
        }
    }
}

} // namespace

LstmState lstm_step(const LstmParams& params, const VectorXd& x, const VectorXd& h_prev,
                    const VectorXd& c_prev) {
    return cell_forward(params, x, h_prev, c_prev, nullptr);
}

VectorXd softmax(const VectorXd& logits) {
    const double m = logits.maxCoeff();
    const VectorXd e = ((logits.array() - m).exp()).matrix();
    return e / e.sum();
}

TaLstmModel make_model(int window_len, int hidden, std::uint64_t seed, int input_dim,
                       double init_scale) {
    if (window_len < 1 || hidden < 1 || input_dim < 1) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (!(init_scale > 0.0)) {
        throw std::invalid_argument("init scale must be positive");
    }
    TaLstmModel m;
    m.window_len = window_len;
    m.input_dim = input_dim;
    m.hidden = hidden;
    m.attn = hidden;
    m.dec_in = hidden;
    m.out_proj = hidden;

    const int H = hidden, T = window_len, F = input_dim, A = m.attn;
    auto alloc_lstm = [&](LstmParams& p, int in_dim) {
        p.w_f = MatrixXd(H, H + in_dim);
        p.w_i = MatrixXd(H, H + in_dim);
        p.w_o = MatrixXd(H, H + in_dim);
        p.w_g = MatrixXd(H, H + in_dim);
        p.b_f = VectorXd::Ones(H); // forget bias +1 keeps memory stable over T
        p.b_i = VectorXd::Zero(H);
        p.b_o = VectorXd::Zero(H);
        p.b_g = VectorXd::Zero(H);
    };
    alloc_lstm(m.encoder, F);
    alloc_lstm(m.decoder, m.dec_in);

    AttentionParams& a = m.attention;
    a.w_e = MatrixXd(A, 2 * H);
    a.u_e = MatrixXd(A, F + T);
    a.b_e = VectorXd::Zero(A);
    a.v_e = VectorXd(A);
    a.w_d = MatrixXd(A, 2 * H);
    a.u_d = MatrixXd(A, H);
    a.b_d = VectorXd::Zero(A);
    a.v_d = VectorXd(A);
    a.w_n = MatrixXd(m.dec_in, F * T + H + T);
    a.b_n = VectorXd::Zero(m.dec_in);
    a.w_y = MatrixXd(m.out_proj, 2 * H);
    a.b_w = VectorXd::Zero(m.out_proj);
    a.v_y = MatrixXd(m.out_proj, T);
    a.b_y = VectorXd::Zero(T);

    std::mt19937_64 rng(seed);
    auto init = [&rng, init_scale](MatrixXd& w, int fan_in) {
        const double bound = init_scale / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    };
    auto init_vec = [&rng, init_scale](VectorXd& v, int fan_in) {
        const double bound = init_scale / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    };
    init(m.encoder.w_f, H + F);
    init(m.encoder.w_i, H + F);
    init(m.encoder.w_o, H + F);
    init(m.encoder.w_g, H + F);
    init(m.decoder.w_f, H + m.dec_in);
    init(m.decoder.w_i, H + m.dec_in);
    init(m.decoder.w_o, H + m.dec_in);
    init(m.decoder.w_g, H + m.dec_in);
    init(a.w_e, 2 * H);
    init(a.u_e, F + T);
    init_vec(a.v_e, A);
    init(a.w_d, 2 * H);
    init(a.u_d, H);
    init_vec(a.v_d, A);
    init(a.w_n, F * T + H + T);
    init(a.w_y, 2 * H);
    init(a.v_y, m.out_proj);
    return m;
}

int Dataset::window_count() const {
    int n = 0;
    for (const SequenceSeries& s : sequences) n += static_cast<int>(s.size());
    return n;
}

SequenceSeries slice_windows(std::span<const nav::SamplePoint> track,
                             std::span<const double> headings_deg, int window_len) {
    if (track.size() != headings_deg.size()) {
        throw std::invalid_argument("track and heading series differ in length");
    }
    if (window_len < 1) {
        throw std::invalid_argument("window length must be positive");
    }
    SequenceSeries seq;
    const int n_windows = static_cast<int>(track.size()) / window_len;
    seq.reserve(n_windows);
    for (int w = 0; w < n_windows; ++w) {
        WindowSeries win;
        win.window_index = w + 1;
        win.inputs = MatrixXd(window_len, 4);
        win.targets_deg = VectorXd(window_len);
        for (int k = 0; k < window_len; ++k) {
            const nav::SamplePoint& p = track[w * window_len + k];
            win.inputs(k, 0) = p.x_m;
            win.inputs(k, 1) = p.y_m;
            win.inputs(k, 2) = p.decl_deg;
            win.inputs(k, 3) = p.incl_deg;
            win.targets_deg[k] = headings_deg[w * window_len + k];
        }
        seq.push_back(std::move(win));
    }
    return seq;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot open dataset file for writing: " + path.string());
    }
    os << "n,k,l_x,l_y,D,I,theta\n";
    char buf[32];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const SequenceSeries& seq : data.sequences) {
        for (std::size_t w = 0; w < seq.size(); ++w) {
            for (int k = 0; k < seq[w].inputs.rows(); ++k) {
                os << (w + 1) << ',' << (k + 1) << ',' << fmt(seq[w].inputs(k, 0)) << ','
                   << fmt(seq[w].inputs(k, 1)) << ',' << fmt(seq[w].inputs(k, 2)) << ','
                   << fmt(seq[w].inputs(k, 3)) << ',' << fmt(seq[w].targets_deg[k]) << '\n';
            }
        }
    }
}

Dataset read_dataset_csv(const std::filesystem::path& path, int window_len) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot open dataset file: " + path.string());
    }
    std::string line;
    if (!std::getline(is, line)) {
        throw std::runtime_error("dataset file is empty: " + path.string());
    }
    Dataset data;
    std::vector<nav::SamplePoint> track;
    std::vector<double> headings;
    int prev_n = 0;
    int line_no = 1;
    auto flush = [&]() {
        if (track.empty()) return;
        SequenceSeries seq = slice_windows(track, headings, window_len);
        if (!seq.empty()) data.sequences.push_back(std::move(seq));
        track.clear();
        headings.clear();
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int n, k;
        double lx, ly, d, i, theta;
        char c;
        ls >> n >> c >> k >> c >> lx >> c >> ly >> c >> d >> c >> i >> c >> theta;
        if (!ls) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     " is malformed");
        }
        if (n <= prev_n && n == 1 && k == 1 && !track.empty()) {
            flush(); // window numbering restarted: new sequence
        }
        prev_n = n;
        track.push_back(nav::SamplePoint{lx, ly, d, i});
        headings.push_back(theta);
    }
    flush();
    return data;
}

ForwardState make_state(const TaLstmModel& model) {
    ForwardState s;
    s.h_e = VectorXd::Zero(model.hidden);
    s.c_e = VectorXd::Zero(model.hidden);
    s.h_d = VectorXd::Zero(model.hidden);
    s.c_d = VectorXd::Zero(model.hidden);
    return s;
}

WindowForward forward_window(const TaLstmModel& model, const MatrixXd& inputs_raw,
                             const VectorXd& teacher_deg, ForwardState& state) {
    if (inputs_raw.rows() != model.window_len || inputs_raw.cols() != model.input_dim) {
        throw std::invalid_argument("window inputs have the wrong shape");
    }
    if (teacher_deg.size() != model.window_len) {
        throw std::invalid_argument("teacher series has the wrong length");
    }
    WindowForward out;
    const MatrixXd x_norm = normalize_inputs(model, inputs_raw);
    const VectorXd teacher = normalize_teacher(model, teacher_deg);
    const VectorXd pred =
        window_pass(model, x_norm, teacher, state, nullptr, &out.local_attention,
                    &out.global_attention, &out.weighted_inputs, &out.context);
    out.h_e = state.h_e;
    out.c_e = state.c_e;
    out.h_d = state.h_d;
    out.c_d = state.c_d;
    out.prediction_deg = VectorXd(pred.size());
    for (int k = 0; k < pred.size(); ++k) {
        out.prediction_deg[k] = wrap_deg(pred[k] * model.norm.target_scale);
    }
    return out;
}

double evaluate_loss(const TaLstmModel& model, const Dataset& data) {
    double loss_sum = 0.0;
    int count = 0;
    for (const SequenceSeries& seq : data.sequences) {
        if (seq.empty()) continue;
        SequencePass pass = sequence_forward(model, seq, false);
        loss_sum += pass.loss_sum;
        count += pass.loss_count;
    }
    if (count == 0) {
        throw std::invalid_argument("dataset has no usable forecast pairs");
    }
    return loss_sum / count;
}

namespace {

void fit_normalization(TaLstmModel& m, const Dataset& data,
                       std::span<const std::size_t> train_idx) {
    Eigen::Vector4d sum = Eigen::Vector4d::Zero();
    Eigen::Vector4d sum_sq = Eigen::Vector4d::Zero();
    long count = 0;
    for (std::size_t si : train_idx) {
        for (const WindowSeries& w : data.sequences[si]) {
            for (int k = 0; k < w.inputs.rows(); ++k) {
                for (int j = 0; j < 4; ++j) {
                    const double v = w.inputs(k, j);
                    sum[j] += v;
                    sum_sq[j] += v * v;
                }
                ++count;
            }
        }
    }
    if (count == 0) return;
    for (int j = 0; j < 4; ++j) {
        m.norm.input_mean[j] = sum[j] / count;
        const double var = sum_sq[j] / count - m.norm.input_mean[j] * m.norm.input_mean[j];
        m.norm.input_std[j] = std::sqrt(std::max(var, 0.0));
        if (m.norm.input_std[j] < 1e-9) m.norm.input_std[j] = 1.0;
    }
}

// Deployment-style residuals on anomaly-free sequences: the teacher is the
// model's previous forecast, exactly as during a mission.
std::vector<double> collect_reference(const TaLstmModel& m, const Dataset& data,
                                      std::span<const std::size_t> idx,
                                      std::size_t cap = 512) {
    std::vector<double> out;
    for (std::size_t si : idx) {
        const SequenceSeries& seq = data.sequences[si];
        if (seq.size() < 2) continue;
        ForwardState state = make_state(m);
        std::optional<VectorXd> last_pred_deg;
        for (std::size_t w = 0; w < seq.size(); ++w) {
            const VectorXd teacher_deg =
                last_pred_deg ? *last_pred_deg : seq[w].targets_deg;
            if (last_pred_deg && w > 0) {
                for (int k = 0; k < m.window_len; ++k) {
                    out.push_back(std::abs(
                        wrap_diff_deg(seq[w].targets_deg[k], (*last_pred_deg)[k])));
                }
            }
            WindowForward fwd = forward_window(m, seq[w].inputs, teacher_deg, state);
            last_pred_deg = fwd.prediction_deg;
        }
    }
    if (out.size() > cap) {
        out.erase(out.begin(), out.end() - cap);
    }
    return out;
}

} // namespace

void train(TaLstmModel& model, const Dataset& data, const TrainingOptions& options) {
    if (options.epochs < 1) {
        throw std::invalid_argument("no training performed: epoch count must be positive");
    }
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
        if (!data.sequences[i].empty()) usable.push_back(i);
    }
    if (usable.empty()) {
        throw std::invalid_argument("training dataset is empty");
    }
    for (std::size_t si : usable) {
        for (const WindowSeries& w : data.sequences[si]) {
            if (w.inputs.rows() != model.window_len ||
                w.targets_deg.size() != model.window_len) {
                throw std::invalid_argument("dataset window length does not match the model");
            }
        }
    }

    std::mt19937_64 rng(options.seed);
    std::shuffle(usable.begin(), usable.end(), rng);
    std::size_t n_train_pool = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(options.train_ratio * usable.size())), 1,
        usable.size());
    std::size_t n_val = static_cast<std::size_t>(options.validation_share * n_train_pool);
    if (n_train_pool - n_val < 1) n_val = n_train_pool - 1;

    std::vector<std::size_t> train_idx(usable.begin(), usable.begin() + (n_train_pool - n_val));
    std::vector<std::size_t> val_idx(usable.begin() + (n_train_pool - n_val),
                                     usable.begin() + n_train_pool);

    fit_normalization(model, data, train_idx);

    Dataset val_set;
    for (std::size_t si : val_idx) val_set.sequences.push_back(data.sequences[si]);

    model.meta.train_loss.clear();
    model.meta.val_loss.clear();

    const int batch = std::max(1, options.batch_windows);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const double lr = options.learning_rate *
                          std::pow(options.drop_factor, epoch / std::max(1, options.drop_period));
        std::shuffle(train_idx.begin(), train_idx.end(), rng);

        double epoch_loss = 0.0;
        int epoch_count = 0;
        for (std::size_t si : train_idx) {
            const SequenceSeries& seq = data.sequences[si];
            // Truncated backpropagation: chunks of at most `batch` windows,
            // one parameter update per chunk.
            for (std::size_t begin = 0; begin < seq.size();
                 begin += static_cast<std::size_t>(batch)) {
                const std::size_t end = std::min(seq.size(), begin + batch);
                SequenceSeries chunk(seq.begin() + begin, seq.begin() + end);
                SequencePass pass = sequence_forward(model, chunk, true);
                if (pass.loss_count == 0) continue;
                if (!std::isfinite(pass.loss_sum)) {
                    throw TrainingError(
                        "training diverged to a non-finite loss; lower the learning rate");
                }
                epoch_loss += pass.loss_sum;
                epoch_count += pass.loss_count;
                Gradients grads = zero_gradients(model);
                sequence_backward(model, chunk, pass, grads);
                apply_update(model, grads, 1.0 / pass.loss_count, lr, options.clip_norm);
            }
        }
        model.meta.train_loss.push_back(epoch_count > 0 ? epoch_loss / epoch_count
                                                        : std::numeric_limits<double>::quiet_NaN());
        double vloss = std::numeric_limits<double>::quiet_NaN();
        if (!val_set.sequences.empty()) {
            try {
                vloss = evaluate_loss(model, val_set);
            } catch (const std::invalid_argument&) {
            }
        }
        model.meta.val_loss.push_back(vloss);
        model.meta.final_learning_rate = lr;
    }
    model.meta.epochs = options.epochs;

    const std::span<const std::size_t> ref_idx =
        val_idx.empty() ? std::span<const std::size_t>(train_idx)
                        : std::span<const std::size_t>(val_idx);
    model.reference_discrepancies = collect_reference(model, data, ref_idx);
    if (model.reference_discrepancies.empty()) {
        model.reference_discrepancies = collect_reference(model, data, train_idx);
    }
    model.trained = true;
}

double gradient_check(const TaLstmModel& model, const Dataset& data, double epsilon,
                      const GradientCheckOptions& options) {
    if (epsilon < 1e-7 || epsilon > 1e-3) {
        throw std::invalid_argument("epsilon must lie in [1e-7, 1e-3]");
    }
    TaLstmModel work = model;

    // Analytic gradient of the dataset loss.
    Gradients grads = zero_gradients(work);
    double count = 0;
    for (const SequenceSeries& seq : data.sequences) {
        if (seq.empty()) continue;
        SequencePass pass = sequence_forward(work, seq, true);
        sequence_backward(work, seq, pass, grads);
        count += pass.loss_count;
    }
    if (count == 0) {
        throw std::invalid_argument("dataset has no usable forecast pairs");
    }
    auto grefs = tensor_refs(grads);
    for (const TensorRef& r : grefs) {
        for (Eigen::Index i = 0; i < r.size; ++i) r.data[i] /= count;
    }
    if (options.corrupt_output_grad) {
        grads.w_y *= 2.0; // negative-control hook
    }

    auto mrefs = tensor_refs(work);
    std::mt19937_64 rng(options.seed);
    const int per_tensor = std::max(
        1, (options.min_coords + static_cast<int>(mrefs.size()) - 1) /
               static_cast<int>(mrefs.size()));

    // Central differences cannot resolve gradients below the rounding error
    // of the loss itself; coordinates whose analytic and numeric magnitudes
    // both sit under that floor are unverifiable noise, not disagreements.
    const double base_loss = evaluate_loss(work, data);
    const double noise_floor = std::max(
        1e-12, 8.0 * std::numeric_limits<double>::epsilon() * std::abs(base_loss) / epsilon);

    double max_rel = 0.0;
    for (std::size_t t = 0; t < mrefs.size(); ++t) {
        const TensorRef& ref = mrefs[t];
        if (!options.name_filter.empty() &&
            std::string(ref.name).find(options.name_filter) == std::string::npos) {
            continue;
        }
        std::set<Eigen::Index> picked;
        const int want = static_cast<int>(std::min<Eigen::Index>(per_tensor, ref.size));
        std::uniform_int_distribution<Eigen::Index> dist(0, ref.size - 1);
        while (static_cast<int>(picked.size()) < want) picked.insert(dist(rng));
        for (Eigen::Index idx : picked) {
            const double saved = ref.data[idx];
            ref.data[idx] = saved + epsilon;
            const double up = evaluate_loss(work, data);
            ref.data[idx] = saved - epsilon;
            const double down = evaluate_loss(work, data);
            ref.data[idx] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = grefs[t].data[idx];
            if (std::abs(analytic) < noise_floor && std::abs(numeric) < noise_floor) {
                continue;
            }
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

namespace {

constexpr char kMagic[8] = {'T', 'A', 'L', 'S', 'T', 'M', '1', '\n'};

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::istream& is, const char* what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw std::runtime_error(std::string("model file truncated reading ") + what);
    }
    return v;
}
double read_f64(std::istream& is, const char* what) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw std::runtime_error(std::string("model file truncated reading ") + what);
    }
    return v;
}

void write_vec(std::ostream& os, const std::vector<double>& v) {
    write_u32(os, static_cast<std::uint32_t>(v.size()));
    for (double x : v) write_f64(os, x);
}
std::vector<double> read_vec(std::istream& is, const char* what) {
    const std::uint32_t n = read_u32(is, what);
    std::vector<double> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = read_f64(is, what);
    return v;
}

} // namespace

void save_model(const TaLstmModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open model file for writing: " + path.string());
    }
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, static_cast<std::uint32_t>(model.window_len));
    write_u32(os, static_cast<std::uint32_t>(model.input_dim));
    write_u32(os, static_cast<std::uint32_t>(model.hidden));
    write_u32(os, static_cast<std::uint32_t>(model.attn));
    write_u32(os, static_cast<std::uint32_t>(model.dec_in));
    write_u32(os, static_cast<std::uint32_t>(model.out_proj));
    write_u32(os, model.trained ? 1 : 0);
    for (int j = 0; j < 4; ++j) write_f64(os, model.norm.input_mean[j]);
    for (int j = 0; j < 4; ++j) write_f64(os, model.norm.input_std[j]);
    write_f64(os, model.norm.target_scale);
    write_u32(os, static_cast<std::uint32_t>(model.meta.epochs));
    write_f64(os, model.meta.final_learning_rate);
    write_vec(os, model.meta.train_loss);
    write_vec(os, model.meta.val_loss);
    write_vec(os, model.reference_discrepancies);

    // Tensors in registry order, column-major, each prefixed by its element
    // count for integrity checking on load.
    auto refs = tensor_refs(const_cast<TaLstmModel&>(model));
    for (const TensorRef& r : refs) {
        write_u32(os, static_cast<std::uint32_t>(r.size));
        os.write(reinterpret_cast<const char*>(r.data),
                 static_cast<std::streamsize>(r.size * sizeof(double)));
    }
    if (!os) {
        throw std::runtime_error("failed writing model file: " + path.string());
    }
}

TaLstmModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open model file: " + path.string());
    }
    char magic[sizeof(kMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a TALSTM1 model file: " + path.string());
    }
    const int window_len = static_cast<int>(read_u32(is, "window length"));
    const int input_dim = static_cast<int>(read_u32(is, "input dim"));
    const int hidden = static_cast<int>(read_u32(is, "hidden size"));
    const int attn = static_cast<int>(read_u32(is, "attention size"));
    const int dec_in = static_cast<int>(read_u32(is, "decoder input size"));
    const int out_proj = static_cast<int>(read_u32(is, "output projection size"));
    if (window_len < 1 || input_dim < 1 || hidden < 1) {
        throw std::runtime_error("model file declares invalid dimensions");
    }
    if (attn != hidden || dec_in != hidden || out_proj != hidden) {
        throw std::runtime_error("model file declares unsupported dimension layout");
    }
    TaLstmModel m = make_model(window_len, hidden, 0, input_dim);
    m.trained = read_u32(is, "trained flag") != 0;
    for (int j = 0; j < 4; ++j) m.norm.input_mean[j] = read_f64(is, "input mean");
    for (int j = 0; j < 4; ++j) m.norm.input_std[j] = read_f64(is, "input std");
    m.norm.target_scale = read_f64(is, "target scale");
    m.meta.epochs = static_cast<int>(read_u32(is, "epoch count"));
    m.meta.final_learning_rate = read_f64(is, "final learning rate");
    m.meta.train_loss = read_vec(is, "training loss trace");
    m.meta.val_loss = read_vec(is, "validation loss trace");
    m.reference_discrepancies = read_vec(is, "reference discrepancies");

    auto refs = tensor_refs(m);
    for (const TensorRef& r : refs) {
        const std::uint32_t n = read_u32(is, r.name);
        if (n != static_cast<std::uint32_t>(r.size)) {
            std::ostringstream os;
            os << "tensor " << r.name << " has " << n << " elements, expected " << r.size
               << " for window length " << window_len << " and hidden size " << hidden;
            throw std::runtime_error(os.str());
        }
        if (!is.read(reinterpret_cast<char*>(r.data),
                     static_cast<std::streamsize>(r.size * sizeof(double)))) {
            throw std::runtime_error(std::string("model file truncated reading ") + r.name);
        }
    }
    return m;
}

TaLstmPredictor::TaLstmPredictor(const TaLstmModel& model)
    : model_(model), state_(make_state(model)) {}

std::vector<double> TaLstmPredictor::predict_next(
    const std::vector<nav::SamplePoint>& window_inputs,
    const std::vector<double>& flown_headings_deg) {
    if (!model_.trained) {
        throw TrainingError("model is not trained");
    }
    const int T = model_.window_len;
    if (static_cast<int>(window_inputs.size()) != T ||
        static_cast<int>(flown_headings_deg.size()) != T) {
        throw std::invalid_argument("window inputs have the wrong length");
    }
    MatrixXd inputs(T, 4);
    for (int k = 0; k < T; ++k) {
        inputs(k, 0) = window_inputs[k].x_m;
        inputs(k, 1) = window_inputs[k].y_m;
        inputs(k, 2) = window_inputs[k].decl_deg;
        inputs(k, 3) = window_inputs[k].incl_deg;
    }
    VectorXd teacher(T);
    if (last_prediction_deg_) {
        teacher = *last_prediction_deg_;
    } else {
        for (int k = 0; k < T; ++k) teacher[k] = flown_headings_deg[k];
    }
    WindowForward fwd = forward_window(model_, inputs, teacher, state_);
    last_prediction_deg_ = fwd.prediction_deg;
    return std::vector<double>(fwd.prediction_deg.data(),
                               fwd.prediction_deg.data() + T);
}

std::span<const double> TaLstmPredictor::reference_discrepancies() const {
    return model_.reference_discrepancies;
}

} // namespace geonav::talstm
