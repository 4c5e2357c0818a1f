#include <cmath>
#include <stdexcept>

#include "vsf/toy.hpp"

namespace vsf {

void ToyModelConfig::validate() const {
    if (model_dim < 1 || heads < 1 || model_dim % heads != 0) {
        throw std::invalid_argument("ToyModelConfig: model_dim must be divisible by heads");
    }
    if (layers < 1) throw std::invalid_argument("ToyModelConfig: layers must be >= 1");
    if (patch < 1 || img_size % patch != 0) {
        throw std::invalid_argument("ToyModelConfig: img_size must be divisible by patch");
    }
    if (mlp_hidden < 1) throw std::invalid_argument("ToyModelConfig: mlp_hidden must be >= 1");
    if (vocab < 1 || max_prompt < 1) {
        throw std::invalid_argument("ToyModelConfig: vocab and max_prompt must be >= 1");
    }
}

Matrix sinusoidal_positions(std::size_t n, std::size_t dim) {
    Matrix pe(n, dim);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t c = 0; c < dim; ++c) {
            const std::size_t j = c / 2;
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j) /
                                                      static_cast<double>(dim));
            const double angle = static_cast<double>(p) * freq;
            pe(p, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Matrix time_features(double t, std::size_t dim) {
    Matrix f(1, dim);
    const std::size_t half = dim / 2;
    for (std::size_t j = 0; j < half; ++j) {
        const double frac = half > 1 ? static_cast<double>(j) / static_cast<double>(half - 1) : 0.0;
        const double omega = std::pow(1000.0, frac);
        f(0, 2 * j) = std::sin(t * omega);
        f(0, 2 * j + 1) = std::cos(t * omega);
    }
    if (dim % 2 == 1) f(0, dim - 1) = t;
    return f;
}

namespace {

StreamParams make_stream(std::size_t dim, std::size_t hidden) {
    StreamParams s;
    s.wq = Matrix(dim, dim);
    s.wk = Matrix(dim, dim);
    s.wv = Matrix(dim, dim);
    s.wo = Matrix(dim, dim);
    s.norm1_gain = Matrix(1, dim, 1.0);
    s.norm2_gain = Matrix(1, dim, 1.0);
    s.mlp_w1 = Matrix(dim, hidden);
    s.mlp_b1 = Matrix(1, hidden);
    s.mlp_w2 = Matrix(hidden, dim);
    s.mlp_b2 = Matrix(1, dim);
    return s;
}

void register_stream(std::vector<std::pair<std::string, Matrix*>>& reg, const std::string& prefix,
                     StreamParams& s) {
    reg.emplace_back(prefix + ".wq", &s.wq);
    reg.emplace_back(prefix + ".wk", &s.wk);
    reg.emplace_back(prefix + ".wv", &s.wv);
    reg.emplace_back(prefix + ".wo", &s.wo);
    reg.emplace_back(prefix + ".norm1", &s.norm1_gain);
    reg.emplace_back(prefix + ".norm2", &s.norm2_gain);
    reg.emplace_back(prefix + ".mlp_w1", &s.mlp_w1);
    reg.emplace_back(prefix + ".mlp_b1", &s.mlp_b1);
    reg.emplace_back(prefix + ".mlp_w2", &s.mlp_w2);
    reg.emplace_back(prefix + ".mlp_b2", &s.mlp_b2);
}

} // namespace

ToyModel zeros_like(const ToyModel& m) {
    ToyModel z;
    z.cfg = m.cfg;
    const std::size_t dim = static_cast<std::size_t>(m.cfg.model_dim);
    const std::size_t hidden = static_cast<std::size_t>(m.cfg.mlp_hidden);
    const std::size_t pdim = static_cast<std::size_t>(m.cfg.patch_dim());
    z.token_embed = Matrix(static_cast<std::size_t>(m.cfg.vocab), dim);
    z.patch_w = Matrix(pdim, dim);
    z.patch_b = Matrix(1, dim);
    z.time_w1 = Matrix(dim, dim);
    z.time_b1 = Matrix(1, dim);
    z.time_w2 = Matrix(dim, dim);
    z.time_b2 = Matrix(1, dim);
    z.blocks.resize(static_cast<std::size_t>(m.cfg.layers));
    for (auto& b : z.blocks) {
        b.img = make_stream(dim, hidden);
        b.txt = make_stream(dim, hidden);
        b.heads = m.cfg.heads;
        // zero the gains too: this is a plain buffer, not an initialized model
        b.img.norm1_gain = Matrix(1, dim);
        b.img.norm2_gain = Matrix(1, dim);
        b.txt.norm1_gain = Matrix(1, dim);
        b.txt.norm2_gain = Matrix(1, dim);
    }
    z.head_norm_gain = Matrix(1, dim);
    z.head_w = Matrix(dim, pdim);
    z.head_b = Matrix(1, pdim);
    z.img_pos_enc = m.img_pos_enc;
    z.txt_pos_enc = m.txt_pos_enc;
    return z;
}

ToyModel make_toy_model(const ToyModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ToyModel m;
    m.cfg = cfg;
    {
        ToyModel proto;
        proto.cfg = cfg;
        proto.img_pos_enc = sinusoidal_positions(static_cast<std::size_t>(cfg.n_img_tokens()),
                                                 static_cast<std::size_t>(cfg.model_dim));
        proto.txt_pos_enc = sinusoidal_positions(static_cast<std::size_t>(cfg.max_prompt),
                                                 static_cast<std::size_t>(cfg.model_dim));
        m = zeros_like(proto);
    }
    Rng rng(seed);
    for (auto& [name, tensor] : named_tensors(m)) {
        const bool is_gain = name.find("norm") != std::string::npos;
        const bool is_bias = name.find("_b") != std::string::npos ||
                             name.find(".b") != std::string::npos;
        if (is_gain) {
            for (std::size_t i = 0; i < tensor->size(); ++i) tensor->data()[i] = 1.0;
        } else if (is_bias) {
            // stays zero
        } else if (name == "token_embed") {
            for (std::size_t i = 0; i < tensor->size(); ++i) tensor->data()[i] = rng.normal();
        } else {
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(tensor->rows()));
            for (std::size_t i = 0; i < tensor->size(); ++i) {
                tensor->data()[i] = rng.normal() * std_dev;
            }
        }
    }
    return m;
}

std::vector<std::pair<std::string, Matrix*>> named_tensors(ToyModel& m) {
    std::vector<std::pair<std::string, Matrix*>> reg;
    reg.emplace_back("token_embed", &m.token_embed);
    reg.emplace_back("patch.w", &m.patch_w);
    reg.emplace_back("patch.b", &m.patch_b);
    reg.emplace_back("time.w1", &m.time_w1);
    reg.emplace_back("time.b1", &m.time_b1);
    reg.emplace_back("time.w2", &m.time_w2);
    reg.emplace_back("time.b2", &m.time_b2);
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const std::string p = "block" + std::to_string(l);
        register_stream(reg, p + ".img", m.blocks[l].img);
        register_stream(reg, p + ".txt", m.blocks[l].txt);
    }
    reg.emplace_back("head.norm", &m.head_norm_gain);
    reg.emplace_back("head.w", &m.head_w);
    reg.emplace_back("head.b", &m.head_b);
    return reg;
}

std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ToyModel& m) {
    auto mut = named_tensors(const_cast<ToyModel&>(m));
    std::vector<std::pair<std::string, const Matrix*>> reg;
    reg.reserve(mut.size());
    for (auto& [n, t] : mut) reg.emplace_back(n, t);
    return reg;
}

std::size_t parameter_count(const ToyModel& m) {
    std::size_t n = 0;
    for (auto& [name, t] : named_tensors(m)) n += t->size();
    return n;
}

Matrix patchify(const ToyModelConfig& cfg, const std::array<double, kImagePixels>& pixels) {
    const int side = cfg.tokens_per_side();
    const int patch = cfg.patch;
    Matrix out(static_cast<std::size_t>(cfg.n_img_tokens()),
               static_cast<std::size_t>(cfg.patch_dim()));
    for (int py = 0; py < side; ++py) {
        for (int px = 0; px < side; ++px) {
            const std::size_t tok = static_cast<std::size_t>(py * side + px);
            std::size_t col = 0;
            for (int dy = 0; dy < patch; ++dy) {
                for (int dx = 0; dx < patch; ++dx) {
                    for (int c = 0; c < 3; ++c, ++col) {
                        const int y = py * patch + dy;
                        const int x = px * patch + dx;
                        out(tok, col) = pixels[static_cast<std::size_t>((y * cfg.img_size + x) * 3 + c)];
                    }
                }
            }
        }
    }
    return out;
}

void unpatchify(const ToyModelConfig& cfg, const Matrix& patches,
                std::array<double, kImagePixels>& out) {
    const int side = cfg.tokens_per_side();
    const int patch = cfg.patch;
    if (patches.rows() != static_cast<std::size_t>(cfg.n_img_tokens()) ||
        patches.cols() != static_cast<std::size_t>(cfg.patch_dim())) {
        throw std::invalid_argument("unpatchify: patches " + patches.shape_str() +
                                    " do not match config");
    }
    for (int py = 0; py < side; ++py) {
        for (int px = 0; px < side; ++px) {
            const std::size_t tok = static_cast<std::size_t>(py * side + px);
            std::size_t col = 0;
            for (int dy = 0; dy < patch; ++dy) {
                for (int dx = 0; dx < patch; ++dx) {
                    for (int c = 0; c < 3; ++c, ++col) {
                        const int y = py * patch + dy;
                        const int x = px * patch + dx;
                        out[static_cast<std::size_t>((y * cfg.img_size + x) * 3 + c)] = patches(tok, col);
                    }
                }
            }
        }
    }
}

Matrix embed_prompt(const ToyModel& m, const Prompt& p) {
    Matrix out(static_cast<std::size_t>(m.cfg.max_prompt),
               static_cast<std::size_t>(m.cfg.model_dim));
    for (int i = 0; i < m.cfg.max_prompt; ++i) {
        const std::uint16_t id = p.ids[static_cast<std::size_t>(i)];
        if (id >= m.cfg.vocab) throw std::invalid_argument("embed_prompt: token id out of range");
        for (int j = 0; j < m.cfg.model_dim; ++j) {
            out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                m.token_embed(id, static_cast<std::size_t>(j)) +
                m.txt_pos_enc(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
    }
    return out;
}

namespace detail {

// Patch projection + fixed image positions + time embedding, shared by all
// forward paths.
Matrix embed_image_tokens(const ToyModel& m, const Matrix& x_patches, double t, Matrix* time_pre,
                          Matrix* time_act) {
    Matrix img = matmul(x_patches, m.patch_w);
    add_row_inplace(img, m.patch_b);
    add_inplace(img, m.img_pos_enc);

    const Matrix tf = time_features(t, static_cast<std::size_t>(m.cfg.model_dim));
    Matrix pre = matmul(tf, m.time_w1);
    add_row_inplace(pre, m.time_b1);
    Matrix act(1, pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
    Matrix temb = matmul(act, m.time_w2);
    add_row_inplace(temb, m.time_b2);
    add_row_inplace(img, temb);

    if (time_pre) *time_pre = pre;
    if (time_act) *time_act = act;
    return img;
}

Matrix apply_head(const ToyModel& m, const Matrix& img_final, Matrix* hn_out,
                  std::vector<double>* rms_out) {
    Matrix hn = rmsnorm_rows(img_final, m.head_norm_gain, rms_out);
    Matrix pred = matmul(hn, m.head_w);
    add_row_inplace(pred, m.head_b);
    if (hn_out) *hn_out = hn;
    return pred;
}

Matrix mlp_residual(const Matrix& x, const StreamParams& s) {
    Matrix yn = rmsnorm_rows(x, s.norm2_gain);
    Matrix pre = matmul(yn, s.mlp_w1);
    add_row_inplace(pre, s.mlp_b1);
    Matrix act(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
    Matrix out = matmul(act, s.mlp_w2);
    add_row_inplace(out, s.mlp_b2);
    return add(x, out);
}

} // namespace detail

Matrix velocity_plain(const ToyModel& m, const Matrix& x_patches, double t, const Matrix& text,
                      std::size_t text_real, PassCounters* counters) {
    Matrix img = detail::embed_image_tokens(m, x_patches, t, nullptr, nullptr);
    TokenSeq seq = make_joint_seq(img, text, text_real, Matrix());
    for (const BlockParams& bp : m.blocks) {
        seq = block_forward(seq, bp, 0.0, 0.0);
    }
    if (counters) {
        counters->model_forwards += 1;
        counters->attn_computations += static_cast<long>(m.blocks.size());
    }
    const Matrix img_final = slice_rows(seq.tokens, 0, static_cast<std::size_t>(m.cfg.n_img_tokens()));
    return detail::apply_head(m, img_final, nullptr, nullptr);
}

Matrix velocity_vsf(const ToyModel& m, const Matrix& x_patches, double t, const Matrix& pos_text,
                    std::size_t pos_real, const Matrix& neg0, double alpha, double beta,
                    std::vector<Matrix>* attn_maps, PassCounters* counters) {
    Matrix img = detail::embed_image_tokens(m, x_patches, t, nullptr, nullptr);
    TokenSeq seq = make_joint_seq(img, pos_text, pos_real, neg0);
    for (const BlockParams& bp : m.blocks) {
        if (attn_maps && seq.counts.neg0 > 0) {
            attn_maps->push_back(extract_neg_attn(duplicate_negative(seq), bp));
        }
        seq = block_forward(seq, bp, alpha, beta);
    }
    if (counters) {
        counters->model_forwards += 1;
        counters->attn_computations += static_cast<long>(m.blocks.size());
    }
    const Matrix img_final = slice_rows(seq.tokens, 0, static_cast<std::size_t>(m.cfg.n_img_tokens()));
    return detail::apply_head(m, img_final, nullptr, nullptr);
}

Matrix velocity_attnspace(const ToyModel& m, const Matrix& x_patches, double t,
                          const Matrix& pos_text, std::size_t pos_real, const Matrix& neg_text,
                          std::size_t neg_real, const GuidanceSpec& spec,
                          PassCounters* counters) {
    if (spec.variant != Variant::Nasa && spec.variant != Variant::Nag) {
        throw std::invalid_argument("velocity_attnspace: spec must be NASA or NAG");
    }
    const std::size_t n_img = static_cast<std::size_t>(m.cfg.n_img_tokens());
    const std::size_t dim = static_cast<std::size_t>(m.cfg.model_dim);
    Matrix img = detail::embed_image_tokens(m, x_patches, t, nullptr, nullptr);
    Matrix pos = pos_text;
    Matrix neg = neg_text;

    for (const BlockParams& bp : m.blocks) {
        const std::size_t d = bp.head_dim();
        BlockCache ca, cb;
        TokenSeq seq_a = make_joint_seq(img, pos, pos_real, Matrix());
        TokenSeq attn_a = joint_attention(seq_a, bp, 0.0, build_plan(seq_a.counts, 0.0), &ca);
        TokenSeq seq_b = make_joint_seq(img, neg, neg_real, Matrix());
        TokenSeq attn_b = joint_attention(seq_b, bp, 0.0, build_plan(seq_b.counts, 0.0), &cb);

        // Combine the per-head image attention outputs before Wo.
        const Matrix za_img = slice_rows(ca.z, 0, n_img);
        const Matrix zb_img = slice_rows(cb.z, 0, n_img);
        Matrix z_comb(n_img, dim);
        for (int h = 0; h < bp.heads; ++h) {
            const std::size_t c0 = static_cast<std::size_t>(h) * d;
            const Matrix za_h = slice_cols(za_img, c0, c0 + d);
            const Matrix zb_h = slice_cols(zb_img, c0, c0 + d);
            const Matrix z_h = spec.variant == Variant::Nasa
                                   ? nasa_combine(za_h, zb_h, spec.alpha)
                                   : nag_combine(za_h, zb_h, spec.phi, spec.tau, spec.blend);
            for (std::size_t i = 0; i < n_img; ++i) {
                for (std::size_t j = 0; j < d; ++j) z_comb(i, c0 + j) = z_h(i, j);
            }
        }
        const Matrix attn_img = matmul(z_comb, bp.img.wo);
        const Matrix attn_pos = slice_rows(attn_a.tokens, n_img, attn_a.tokens.rows());
        const Matrix attn_neg = slice_rows(attn_b.tokens, n_img, attn_b.tokens.rows());

        img = add(img, attn_img);
        pos = add(pos, attn_pos);
        neg = add(neg, attn_neg);
        img = detail::mlp_residual(img, bp.img);
        pos = detail::mlp_residual(pos, bp.txt);
        neg = detail::mlp_residual(neg, bp.txt);
        if (counters) counters->attn_computations += 2;
    }
    if (counters) counters->model_forwards += 1;
    return detail::apply_head(m, img, nullptr, nullptr);
}

} // namespace vsf
