#include <cmath>
#include <stdexcept>
#include <string>

#include "vsf/toy.hpp"

namespace vsf {

void make_flow_pair(const std::array<double, kImagePixels>& x0,
                    const std::array<double, kImagePixels>& eps, double t,
                    std::array<double, kImagePixels>& x_t, std::array<double, kImagePixels>& u) {
    for (std::size_t i = 0; i < kImagePixels; ++i) {
        x_t[i] = (1.0 - t) * x0[i] + t * eps[i];
        u[i] = eps[i] - x0[i];
    }
}

namespace {

struct ItemCache {
    Matrix time_pre, time_act;
    Matrix text0;
    std::vector<BlockCache> blocks;
    Matrix final_tokens;
    Matrix head_hn;
    std::vector<double> head_rms;
    Matrix pred;
};

Matrix item_forward(const ToyModel& m, const TrainItem& item, ItemCache* cache) {
    Matrix img = detail::embed_image_tokens(m, item.x_t, item.t,
                                            cache ? &cache->time_pre : nullptr,
                                            cache ? &cache->time_act : nullptr);
    Matrix text = embed_prompt(m, item.prompt);
    TokenSeq seq = make_joint_seq(img, text, static_cast<std::size_t>(item.prompt.length),
                                  Matrix());
    if (cache) {
        cache->text0 = text;
        cache->blocks.assign(m.blocks.size(), BlockCache{});
    }
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        seq = block_forward(seq, m.blocks[l], 0.0, 0.0, cache ? &cache->blocks[l] : nullptr);
    }
    const std::size_t n_img = static_cast<std::size_t>(m.cfg.n_img_tokens());
    Matrix pred = detail::apply_head(m, slice_rows(seq.tokens, 0, n_img),
                                     cache ? &cache->head_hn : nullptr,
                                     cache ? &cache->head_rms : nullptr);
    if (cache) {
        cache->final_tokens = seq.tokens;
        cache->pred = pred;
    }
    return pred;
}

// d_gain and d_x accumulate; x is the un-normalized input to the norm.
void rmsnorm_backward(const Matrix& x, const std::vector<double>& rms, const Matrix& gain,
                      const Matrix& d_y, std::size_t row_offset, Matrix& d_x, Matrix& d_gain) {
    const std::size_t cols = x.cols();
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xr = x.row(i);
        const double* dyr = d_y.row(i);
        double* dxr = d_x.row(i + row_offset);
        const double r = rms[i];
        double inner = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            d_gain(0, j) += dyr[j] * xr[j] / r;
            inner += gain(0, j) * dyr[j] * xr[j];
        }
        const double factor = inner * inv_n / (r * r * r);
        for (std::size_t j = 0; j < cols; ++j) {
            dxr[j] += gain(0, j) * dyr[j] / r - xr[j] * factor;
        }
    }
}

void accumulate_colsum(const Matrix& d_y, std::size_t r0, std::size_t r1, Matrix& d_b) {
    for (std::size_t i = r0; i < r1; ++i) {
        const double* row = d_y.row(i);
        for (std::size_t j = 0; j < d_y.cols(); ++j) d_b(0, j) += row[j];
    }
}

// y[r0:r1] = x[r0:r1] @ w; accumulates d_w and d_x for that row range.
void linear_backward_rows(const Matrix& x, const Matrix& d_y, const Matrix& w, std::size_t r0,
                          std::size_t r1, Matrix& d_w, Matrix& d_x) {
    for (std::size_t i = r0; i < r1; ++i) {
        const double* xr = x.row(i);
        const double* dyr = d_y.row(i);
        for (std::size_t p = 0; p < w.rows(); ++p) {
            const double xv = xr[p];
            double* dwr = d_w.row(p);
            for (std::size_t j = 0; j < w.cols(); ++j) dwr[j] += xv * dyr[j];
        }
        double* dxr = d_x.row(i);
        for (std::size_t p = 0; p < w.rows(); ++p) {
            const double* wr = w.row(p);
            double acc = 0.0;
            for (std::size_t j = 0; j < w.cols(); ++j) acc += dyr[j] * wr[j];
            dxr[p] += acc;
        }
    }
}

// Backward through one block. Only the no-negative training layout is
// supported (all rows are queries, dense all-allow plan, no value flip).
Matrix block_backward(const BlockParams& bp, const BlockCache& c, std::size_t n_img,
                      const Matrix& d_out, BlockParams& gb) {
    const std::size_t n = c.x_in.rows();
    const std::size_t dim = bp.model_dim();
    const std::size_t heads = static_cast<std::size_t>(bp.heads);
    const std::size_t d = bp.head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    if (c.q.rows() != n) {
        throw std::logic_error("block_backward: cache does not come from the training layout");
    }

    Matrix d_x_mid = d_out;

    // MLP path: x_out = x_mid + act @ w2 + b2, act = gelu(yn @ w1 + b1).
    Matrix d_act(n, bp.hidden_dim());
    accumulate_colsum(d_out, 0, n_img, gb.img.mlp_b2);
    accumulate_colsum(d_out, n_img, n, gb.txt.mlp_b2);
    linear_backward_rows(c.mlp_act, d_out, bp.img.mlp_w2, 0, n_img, gb.img.mlp_w2, d_act);
    linear_backward_rows(c.mlp_act, d_out, bp.txt.mlp_w2, n_img, n, gb.txt.mlp_w2, d_act);

    Matrix d_pre(n, bp.hidden_dim());
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
        d_pre.data()[i] = d_act.data()[i] * gelu_grad(c.mlp_pre.data()[i]);
    }

    Matrix d_yn(n, dim);
    accumulate_colsum(d_pre, 0, n_img, gb.img.mlp_b1);
    accumulate_colsum(d_pre, n_img, n, gb.txt.mlp_b1);
    linear_backward_rows(c.yn, d_pre, bp.img.mlp_w1, 0, n_img, gb.img.mlp_w1, d_yn);
    linear_backward_rows(c.yn, d_pre, bp.txt.mlp_w1, n_img, n, gb.txt.mlp_w1, d_yn);

    rmsnorm_backward(slice_rows(c.x_mid, 0, n_img),
                     std::vector<double>(c.rms2.begin(), c.rms2.begin() + static_cast<std::ptrdiff_t>(n_img)),
                     bp.img.norm2_gain, slice_rows(d_yn, 0, n_img), 0, d_x_mid, gb.img.norm2_gain);
    rmsnorm_backward(slice_rows(c.x_mid, n_img, n),
                     std::vector<double>(c.rms2.begin() + static_cast<std::ptrdiff_t>(n_img), c.rms2.end()),
                     bp.txt.norm2_gain, slice_rows(d_yn, n_img, n), n_img, d_x_mid,
                     gb.txt.norm2_gain);

    // Attention path: x_mid = x_in + z @ wo.
    Matrix d_x_in = d_x_mid;
    Matrix d_z(n, dim);
    linear_backward_rows(c.z, d_x_mid, bp.img.wo, 0, n_img, gb.img.wo, d_z);
    linear_backward_rows(c.z, d_x_mid, bp.txt.wo, n_img, n, gb.txt.wo, d_z);

    Matrix d_q(n, dim), d_k(n, dim), d_v(n, dim);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * d;
        const Matrix q_h = slice_cols(c.q, c0, c0 + d);
        const Matrix k_h = slice_cols(c.k, c0, c0 + d);
        const Matrix v_h = slice_cols(c.v, c0, c0 + d);
        const Matrix d_z_h = slice_cols(d_z, c0, c0 + d);
        const Matrix& p = c.probs[h];

        const Matrix d_p = matmul_nt(d_z_h, v_h);
        const Matrix d_v_h = matmul_tn(p, d_z_h);

        Matrix d_s(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* pr = p.row(i);
            const double* dpr = d_p.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += pr[j] * dpr[j];
            double* dsr = d_s.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                dsr[j] = pr[j] * (dpr[j] - dot) * inv_sqrt_d;
            }
        }
        const Matrix d_q_h = matmul(d_s, k_h);
        const Matrix d_k_h = matmul_tn(d_s, q_h);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                d_q(i, c0 + j) = d_q_h(i, j);
                d_k(i, c0 + j) = d_k_h(i, j);
                d_v(i, c0 + j) = d_v_h(i, j);
            }
        }
    }

    Matrix d_xn(n, dim);
    linear_backward_rows(c.xn, d_q, bp.img.wq, 0, n_img, gb.img.wq, d_xn);
    linear_backward_rows(c.xn, d_q, bp.txt.wq, n_img, n, gb.txt.wq, d_xn);
    linear_backward_rows(c.xn, d_k, bp.img.wk, 0, n_img, gb.img.wk, d_xn);
    linear_backward_rows(c.xn, d_k, bp.txt.wk, n_img, n, gb.txt.wk, d_xn);
    linear_backward_rows(c.xn, d_v, bp.img.wv, 0, n_img, gb.img.wv, d_xn);
    linear_backward_rows(c.xn, d_v, bp.txt.wv, n_img, n, gb.txt.wv, d_xn);

    rmsnorm_backward(slice_rows(c.x_in, 0, n_img),
                     std::vector<double>(c.rms1.begin(), c.rms1.begin() + static_cast<std::ptrdiff_t>(n_img)),
                     bp.img.norm1_gain, slice_rows(d_xn, 0, n_img), 0, d_x_in, gb.img.norm1_gain);
    rmsnorm_backward(slice_rows(c.x_in, n_img, n),
                     std::vector<double>(c.rms1.begin() + static_cast<std::ptrdiff_t>(n_img), c.rms1.end()),
                     bp.txt.norm1_gain, slice_rows(d_xn, n_img, n), n_img, d_x_in,
                     gb.txt.norm1_gain);
    return d_x_in;
}

} // namespace

double batch_loss(const ToyModel& m, const std::vector<TrainItem>& batch) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    double total = 0.0;
    for (const TrainItem& item : batch) {
        const Matrix pred = item_forward(m, item, nullptr);
        if (!pred.same_shape(item.target)) {
            throw std::invalid_argument("batch_loss: target shape mismatch");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double diff = pred.data()[i] - item.target.data()[i];
            acc += diff * diff;
        }
        total += acc / static_cast<double>(pred.size());
    }
    return total / static_cast<double>(batch.size());
}

double batch_loss_and_grad(const ToyModel& m, const std::vector<TrainItem>& batch,
                           ToyModel& grads) {
    if (batch.empty()) throw std::invalid_argument("batch_loss_and_grad: empty batch");
    const std::size_t n_img = static_cast<std::size_t>(m.cfg.n_img_tokens());
    const std::size_t dim = static_cast<std::size_t>(m.cfg.model_dim);
    double total = 0.0;

    for (const TrainItem& item : batch) {
        ItemCache cache;
        const Matrix pred = item_forward(m, item, &cache);
        if (!pred.same_shape(item.target)) {
            throw std::invalid_argument("batch_loss_and_grad: target shape mismatch");
        }

        const double numel = static_cast<double>(pred.size());
        const double grad_scale = 2.0 / (numel * static_cast<double>(batch.size()));
        Matrix d_pred(pred.rows(), pred.cols());
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double diff = pred.data()[i] - item.target.data()[i];
            acc += diff * diff;
            d_pred.data()[i] = diff * grad_scale;
        }
        total += acc / numel;

        // Head backward: pred = hn @ head_w + head_b.
        accumulate_colsum(d_pred, 0, d_pred.rows(), grads.head_b);
        Matrix d_hn(n_img, dim);
        linear_backward_rows(cache.head_hn, d_pred, m.head_w, 0, n_img, grads.head_w, d_hn);
        const std::size_t n_total = cache.final_tokens.rows();
        Matrix d_seq(n_total, dim);
        rmsnorm_backward(slice_rows(cache.final_tokens, 0, n_img), cache.head_rms,
                         m.head_norm_gain, d_hn, 0, d_seq, grads.head_norm_gain);

        for (std::size_t l = m.blocks.size(); l-- > 0;) {
            d_seq = block_backward(m.blocks[l], cache.blocks[l], n_img, d_seq, grads.blocks[l]);
        }

        // Text embedding rows (padding included: the pad embedding is learned).
        for (int j = 0; j < m.cfg.max_prompt; ++j) {
            const std::uint16_t id = item.prompt.ids[static_cast<std::size_t>(j)];
            for (std::size_t col = 0; col < dim; ++col) {
                grads.token_embed(id, col) += d_seq(n_img + static_cast<std::size_t>(j), col);
            }
        }

        // Image embedding: img0 = x_t @ patch_w + patch_b + pos + temb.
        Matrix d_img0 = slice_rows(d_seq, 0, n_img);
        accumulate_colsum(d_img0, 0, n_img, grads.patch_b);
        Matrix d_patches(n_img, item.x_t.cols());
        linear_backward_rows(item.x_t, d_img0, m.patch_w, 0, n_img, grads.patch_w, d_patches);

        Matrix d_temb(1, dim);
        accumulate_colsum(d_img0, 0, n_img, d_temb);
        // Time MLP: temb = gelu(tf @ w1 + b1) @ w2 + b2.
        accumulate_colsum(d_temb, 0, 1, grads.time_b2);
        Matrix d_tact(1, dim);
        linear_backward_rows(cache.time_act, d_temb, m.time_w2, 0, 1, grads.time_w2, d_tact);
        Matrix d_tpre(1, dim);
        for (std::size_t i = 0; i < dim; ++i) {
            d_tpre(0, i) = d_tact(0, i) * gelu_grad(cache.time_pre(0, i));
        }
        accumulate_colsum(d_tpre, 0, 1, grads.time_b1);
        const Matrix tf = time_features(item.t, dim);
        Matrix d_tf(1, dim);
        linear_backward_rows(tf, d_tpre, m.time_w1, 0, 1, grads.time_w1, d_tf);
    }
    return total / static_cast<double>(batch.size());
}

TrainResult train(ToyModel& m, const std::vector<Example>& data, const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.steps < 0 || cfg.batch < 1) {
        throw std::invalid_argument("train: steps must be >= 0 and batch >= 1");
    }
    Rng rng(cfg.seed);
    ToyModel grads = zeros_like(m);
    ToyModel adam_m = zeros_like(m);
    ToyModel adam_v = zeros_like(m);
    auto params = named_tensors(m);
    auto gs = named_tensors(grads);
    auto ms = named_tensors(adam_m);
    auto vs = named_tensors(adam_v);

    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    TrainResult result;
    result.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<TrainItem> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const Example& ex = data[rng.next_below(data.size())];
            const double t = rng.uniform();
            const bool drop = rng.uniform() < cfg.drop_prob;
            std::array<double, kImagePixels> eps;
            for (double& e : eps) e = rng.normal();
            std::array<double, kImagePixels> x_t, u;
            make_flow_pair(ex.image.pixels, eps, t, x_t, u);
            TrainItem item;
            item.x_t = patchify(m.cfg, x_t);
            item.t = t;
            item.prompt = drop ? Prompt{} : ex.prompt;
            item.target = patchify(m.cfg, u);
            batch.push_back(std::move(item));
        }

        for (auto& [name, g] : gs) {
            for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] = 0.0;
        }
        const double loss = batch_loss_and_grad(m, batch, grads);
        result.loss_curve.push_back(loss);
        if (!std::isfinite(loss) || loss > cfg.divergence_loss) {
            throw std::runtime_error("train: diverged at step " + std::to_string(step) +
                                     " (loss " + std::to_string(loss) + " > " +
                                     std::to_string(cfg.divergence_loss) + ")");
        }

        if (cfg.lr == 0.0) continue;
        const double c1 = 1.0 - std::pow(beta1, step);
        const double c2 = 1.0 - std::pow(beta2, step);
        for (std::size_t ti = 0; ti < params.size(); ++ti) {
            double* theta = params[ti].second->data();
            const double* g = gs[ti].second->data();
            double* mo = ms[ti].second->data();
            double* vo = vs[ti].second->data();
            const std::size_t count = params[ti].second->size();
            for (std::size_t i = 0; i < count; ++i) {
                mo[i] = beta1 * mo[i] + (1.0 - beta1) * g[i];
                vo[i] = beta2 * vo[i] + (1.0 - beta2) * g[i] * g[i];
                theta[i] -= cfg.lr * (mo[i] / c1) / (std::sqrt(vo[i] / c2) + adam_eps);
            }
        }
    }
    return result;
}

TrainResult train(ToyModel& m, const std::vector<Example>& data, int steps, double lr,
                  std::uint64_t seed) {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.seed = seed;
    return train(m, data, cfg);
}

} // namespace vsf
