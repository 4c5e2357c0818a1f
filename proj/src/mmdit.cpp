#include "vsf/mmdit.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vsf {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

std::size_t isqrt_exact(std::size_t n) {
    std::size_t r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (r * r > n) --r;
    while ((r + 1) * (r + 1) <= n) ++r;
    return r;
}

} // namespace

void TokenSeq::validate() const {
    if (tokens.rows() != counts.total() || segments.size() != counts.total()) {
        throw std::invalid_argument("TokenSeq: counts (" + std::to_string(counts.total()) +
                                    ") do not match tokens " + tokens.shape_str());
    }
    std::size_t i = 0;
    for (std::size_t k = 0; k < counts.img; ++k, ++i) {
        if (segments[i] != Segment::Img) throw std::invalid_argument("TokenSeq: IMG block broken");
    }
    for (std::size_t k = 0; k < counts.pos; ++k, ++i) {
        if (segments[i] != Segment::Pos && segments[i] != Segment::Pad) {
            throw std::invalid_argument("TokenSeq: POS block broken");
        }
    }
    for (std::size_t k = 0; k < counts.neg0; ++k, ++i) {
        if (segments[i] != Segment::Neg0) throw std::invalid_argument("TokenSeq: NEG0 block broken");
    }
    for (std::size_t k = 0; k < counts.neg1; ++k, ++i) {
        if (segments[i] != Segment::Neg1) throw std::invalid_argument("TokenSeq: NEG1 block broken");
    }
}

TokenSeq make_joint_seq(const Matrix& img_tokens, const Matrix& pos_block, std::size_t pos_real,
                        const Matrix& neg0) {
    if (pos_real > pos_block.rows()) {
        throw std::invalid_argument("make_joint_seq: pos_real exceeds positive block length");
    }
    TokenSeq seq;
    seq.tokens = concat_rows(concat_rows(img_tokens, pos_block), neg0);
    seq.counts = SeqCounts{img_tokens.rows(), pos_block.rows(), neg0.rows(), 0};
    seq.segments.reserve(seq.counts.total());
    for (std::size_t i = 0; i < img_tokens.rows(); ++i) seq.segments.push_back(Segment::Img);
    for (std::size_t i = 0; i < pos_block.rows(); ++i) {
        seq.segments.push_back(i < pos_real ? Segment::Pos : Segment::Pad);
    }
    for (std::size_t i = 0; i < neg0.rows(); ++i) seq.segments.push_back(Segment::Neg0);
    seq.validate();
    return seq;
}

Matrix strip_padding(const Matrix& fragment, const std::vector<std::uint8_t>& pad_mask) {
    if (pad_mask.size() != fragment.rows()) {
        throw std::invalid_argument("strip_padding: mask length " +
                                    std::to_string(pad_mask.size()) + " vs fragment " +
                                    fragment.shape_str());
    }
    std::size_t kept = 0;
    for (std::uint8_t p : pad_mask) kept += (p == 0);
    Matrix out(kept, fragment.cols());
    std::size_t r = 0;
    for (std::size_t i = 0; i < fragment.rows(); ++i) {
        if (pad_mask[i]) continue;
        for (std::size_t j = 0; j < fragment.cols(); ++j) out(r, j) = fragment(i, j);
        ++r;
    }
    return out;
}

TokenSeq duplicate_negative(const TokenSeq& seq) {
    seq.validate();
    if (seq.counts.neg1 != 0) {
        throw std::logic_error("duplicate_negative: NEG1 block already present");
    }
    if (seq.counts.neg0 == 0) return seq;
    const std::size_t n = seq.counts.total();
    const std::size_t neg_begin = n - seq.counts.neg0;
    TokenSeq out;
    out.tokens = concat_rows(seq.tokens, slice_rows(seq.tokens, neg_begin, n));
    out.segments = seq.segments;
    for (std::size_t i = 0; i < seq.counts.neg0; ++i) out.segments.push_back(Segment::Neg1);
    out.counts = seq.counts;
    out.counts.neg1 = seq.counts.neg0;
    return out;
}

TokenSeq drop_neg1(const TokenSeq& seq) {
    seq.validate();
    if (seq.counts.neg1 == 0) return seq;
    TokenSeq out;
    out.tokens = slice_rows(seq.tokens, 0, seq.counts.queries());
    out.segments.assign(seq.segments.begin(),
                        seq.segments.begin() + static_cast<std::ptrdiff_t>(seq.counts.queries()));
    out.counts = seq.counts;
    out.counts.neg1 = 0;
    return out;
}

AttnPlan build_plan(const SeqCounts& c, double beta) {
    if (c.neg1 != 0 && c.neg1 != c.neg0) {
        throw std::invalid_argument("build_plan: neg1 count must be 0 or equal to neg0 (got " +
                                    std::to_string(c.neg1) + " vs " + std::to_string(c.neg0) +
                                    ")");
    }
    const std::size_t nq = c.queries();
    const std::size_t nk = c.total();
    const std::size_t img_end = c.img;
    const std::size_t pos_end = c.img + c.pos;
    const std::size_t neg0_end = pos_end + c.neg0;

    Mask allow(nq, nk, false);
    Matrix bias(nq, nk, 0.0);
    for (std::size_t q = 0; q < nq; ++q) {
        const bool q_img = q < img_end;
        const bool q_pos = !q_img && q < pos_end;
        for (std::size_t k = 0; k < nk; ++k) {
            const bool k_img = k < img_end;
            const bool k_pos = !k_img && k < pos_end;
            const bool k_neg0 = !k_img && !k_pos && k < neg0_end;
            const bool k_neg1 = k >= neg0_end;
            bool ok = false;
            if (q_img) {
                ok = k_img || k_pos || k_neg1;
                if (k_neg1) bias(q, k) = -beta;
            } else if (q_pos) {
                ok = k_img || k_pos;
            } else { // NEG0 query
                ok = k_img || k_neg0;
            }
            allow.set(q, k, ok);
        }
    }
    return AttnPlan(std::move(allow), std::move(bias));
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

Matrix rmsnorm_rows(const Matrix& x, const Matrix& gain, std::vector<double>* rms_out) {
    if (gain.rows() != 1 || gain.cols() != x.cols()) {
        throw std::invalid_argument("rmsnorm_rows: gain must be 1x" + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    if (rms_out) rms_out->assign(x.rows(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* row = x.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) acc += row[j] * row[j];
        const double rms = std::sqrt(acc * inv_n + kRmsNormEps);
        if (rms_out) (*rms_out)[i] = rms;
        double* orow = out.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            orow[j] = gain.data()[j] * row[j] / rms;
        }
    }
    out.ensure_finite("rmsnorm_rows");
    return out;
}

Matrix project_streams(const Matrix& x, std::size_t img_rows, const Matrix& w_img,
                       const Matrix& w_txt) {
    if (img_rows > x.rows()) {
        throw std::invalid_argument("project_streams: img_rows exceeds row count");
    }
    const Matrix top = matmul(slice_rows(x, 0, img_rows), w_img);
    const Matrix bottom = matmul(slice_rows(x, img_rows, x.rows()), w_txt);
    return concat_rows(top, bottom);
}

void BlockParams::validate() const {
    const std::size_t d = model_dim();
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
        throw std::invalid_argument("BlockParams: model_dim must be divisible by heads");
    }
    auto check_stream = [&](const StreamParams& s, const char* name) {
        const Matrix* proj[] = {&s.wq, &s.wk, &s.wv, &s.wo};
        for (const Matrix* m : proj) {
            if (m->rows() != d || m->cols() != d) {
                throw std::invalid_argument(std::string("BlockParams: ") + name +
                                            " projection must be " + std::to_string(d) + "x" +
                                            std::to_string(d));
            }
        }
        if (s.norm1_gain.cols() != d || s.norm2_gain.cols() != d) {
            throw std::invalid_argument(std::string("BlockParams: ") + name + " norm gain size");
        }
        if (s.mlp_w1.rows() != d || s.mlp_w2.cols() != d ||
            s.mlp_w1.cols() != s.mlp_w2.rows() || s.mlp_b1.cols() != s.mlp_w1.cols() ||
            s.mlp_b2.cols() != d) {
            throw std::invalid_argument(std::string("BlockParams: ") + name + " MLP shapes");
        }
    };
    check_stream(img, "img");
    check_stream(txt, "txt");
}

TokenSeq joint_attention(const TokenSeq& seq, const BlockParams& params, double alpha,
                         const AttnPlan& plan, BlockCache* cache) {
    seq.validate();
    params.validate();
    const SeqCounts& c = seq.counts;
    const std::size_t n = c.total();
    const std::size_t nq = c.queries();
    const std::size_t dim = params.model_dim();
    const std::size_t heads = static_cast<std::size_t>(params.heads);
    const std::size_t d = params.head_dim();
    if (seq.tokens.cols() != dim) {
        throw std::invalid_argument("joint_attention: token width " +
                                    std::to_string(seq.tokens.cols()) + " vs model_dim " +
                                    std::to_string(dim));
    }
    if (plan.n_queries() != nq || plan.n_keys() != n) {
        throw std::invalid_argument("joint_attention: plan " + std::to_string(plan.n_queries()) +
                                    "x" + std::to_string(plan.n_keys()) +
                                    " does not match counts (" + std::to_string(nq) + " queries, " +
                                    std::to_string(n) + " keys)");
    }

    std::vector<double> rms1;
    Matrix xn(n, dim);
    {
        const Matrix xn_img =
            rmsnorm_rows(slice_rows(seq.tokens, 0, c.img), params.img.norm1_gain, &rms1);
        std::vector<double> rms_txt;
        const Matrix xn_txt =
            rmsnorm_rows(slice_rows(seq.tokens, c.img, n), params.txt.norm1_gain, &rms_txt);
        xn = concat_rows(xn_img, xn_txt);
        rms1.insert(rms1.end(), rms_txt.begin(), rms_txt.end());
    }

    // Queries are the leading nq rows (NEG1 sits at the tail).
    Matrix q = project_streams(slice_rows(xn, 0, nq), c.img, params.img.wq, params.txt.wq);
    Matrix k = project_streams(xn, c.img, params.img.wk, params.txt.wk);
    Matrix v = project_streams(xn, c.img, params.img.wv, params.txt.wv);

    // Value flip: NEG1 value rows scaled by -alpha after projection.
    for (std::size_t i = n - c.neg1; i < n; ++i) {
        double* row = v.row(i);
        for (std::size_t j = 0; j < dim; ++j) row[j] *= -alpha;
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix z(nq, dim);
    std::vector<Matrix> probs_cache;
    for (std::size_t h = 0; h < heads; ++h) {
        const Matrix q_h = slice_cols(q, h * d, (h + 1) * d);
        const Matrix k_h = slice_cols(k, h * d, (h + 1) * d);
        const Matrix v_h = slice_cols(v, h * d, (h + 1) * d);
        const Matrix logits = scale(matmul_nt(q_h, k_h), inv_sqrt_d);
        const Matrix p = row_softmax(logits, plan.allow, plan.bias);
        const Matrix z_h = matmul(p, v_h);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < d; ++j) z(i, h * d + j) = z_h(i, j);
        }
        if (cache) probs_cache.push_back(p);
    }

    Matrix out = project_streams(z, c.img, params.img.wo, params.txt.wo);

    if (cache) {
        cache->xn = xn;
        cache->rms1 = rms1;
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->probs = std::move(probs_cache);
        cache->z = z;
        cache->attn_out = out;
    }

    TokenSeq result;
    result.tokens = std::move(out);
    result.segments.assign(seq.segments.begin(),
                           seq.segments.begin() + static_cast<std::ptrdiff_t>(nq));
    result.counts = c;
    result.counts.neg1 = 0;
    return result;
}

TokenSeq block_forward(const TokenSeq& seq, const BlockParams& params, double alpha, double beta,
                       BlockCache* cache) {
    seq.validate();
    if (seq.counts.neg1 != 0) {
        throw std::invalid_argument("block_forward: sequence must not carry a NEG1 block");
    }
    const TokenSeq expanded = duplicate_negative(seq);
    const AttnPlan plan = build_plan(expanded.counts, beta);
    TokenSeq attn = joint_attention(expanded, params, alpha, plan, cache);

    const SeqCounts& c = seq.counts;
    const std::size_t n = c.total();
    const std::size_t dim = params.model_dim();

    Matrix x_mid = add(seq.tokens, attn.tokens);

    std::vector<double> rms2;
    Matrix yn(n, dim);
    {
        const Matrix yn_img =
            rmsnorm_rows(slice_rows(x_mid, 0, c.img), params.img.norm2_gain, &rms2);
        std::vector<double> rms_txt;
        const Matrix yn_txt =
            rmsnorm_rows(slice_rows(x_mid, c.img, n), params.txt.norm2_gain, &rms_txt);
        yn = concat_rows(yn_img, yn_txt);
        rms2.insert(rms2.end(), rms_txt.begin(), rms_txt.end());
    }

    Matrix pre = project_streams(yn, c.img, params.img.mlp_w1, params.txt.mlp_w1);
    for (std::size_t i = 0; i < pre.rows(); ++i) {
        const Matrix& b = i < c.img ? params.img.mlp_b1 : params.txt.mlp_b1;
        double* row = pre.row(i);
        for (std::size_t j = 0; j < pre.cols(); ++j) row[j] += b.data()[j];
    }
    Matrix act(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
    Matrix mlp_out = project_streams(act, c.img, params.img.mlp_w2, params.txt.mlp_w2);
    for (std::size_t i = 0; i < mlp_out.rows(); ++i) {
        const Matrix& b = i < c.img ? params.img.mlp_b2 : params.txt.mlp_b2;
        double* row = mlp_out.row(i);
        for (std::size_t j = 0; j < mlp_out.cols(); ++j) row[j] += b.data()[j];
    }

    TokenSeq out;
    out.tokens = add(x_mid, mlp_out);
    out.segments = seq.segments;
    out.counts = c;

    if (cache) {
        cache->x_in = seq.tokens;
        cache->x_mid = x_mid;
        cache->yn = yn;
        cache->rms2 = rms2;
        cache->mlp_pre = pre;
        cache->mlp_act = act;
    }
    return out;
}

Matrix extract_neg_attn(const TokenSeq& seq, const BlockParams& params) {
    seq.validate();
    params.validate();
    const SeqCounts& c = seq.counts;
    if (c.neg1 == 0) {
        throw std::invalid_argument("extract_neg_attn: sequence has no NEG1 block");
    }
    if (c.img == 0) {
        throw std::invalid_argument("extract_neg_attn: sequence has no image tokens");
    }
    const std::size_t n = c.total();
    const std::size_t heads = static_cast<std::size_t>(params.heads);
    const std::size_t d = params.head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    const Matrix xn_img = rmsnorm_rows(slice_rows(seq.tokens, 0, c.img), params.img.norm1_gain);
    const Matrix xn_neg1 =
        rmsnorm_rows(slice_rows(seq.tokens, n - c.neg1, n), params.txt.norm1_gain);
    const Matrix q = matmul(xn_img, params.img.wq);
    const Matrix k = matmul(xn_neg1, params.txt.wk);

    Matrix acc(c.img, c.neg1, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const Matrix q_h = slice_cols(q, h * d, (h + 1) * d);
        const Matrix k_h = slice_cols(k, h * d, (h + 1) * d);
        const Matrix logits = scale(matmul_nt(q_h, k_h), inv_sqrt_d);
        add_inplace(acc, logits);
    }
    const double inv_heads = 1.0 / static_cast<double>(heads);

    // One scalar per image token: head average, then mean over NEG1 columns.
    std::vector<double> per_token(c.img, 0.0);
    for (std::size_t i = 0; i < c.img; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c.neg1; ++j) s += acc(i, j) * inv_heads;
        per_token[i] = s / static_cast<double>(c.neg1);
    }

    const std::size_t g = isqrt_exact(c.img);
    const bool square = g * g == c.img;
    Matrix grid(square ? g : 1, square ? g : c.img);
    for (std::size_t i = 0; i < c.img; ++i) grid.data()[i] = per_token[i];
    return grid;
}

} // namespace vsf
