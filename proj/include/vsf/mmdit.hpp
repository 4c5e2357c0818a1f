#pragma once

#include <cstdint>
#include <vector>

#include "vsf/guidance.hpp"
#include "vsf/matrix.hpp"

namespace vsf {

/// Per-token segment tag. A joint sequence is laid out as contiguous blocks
/// in the order IMG, POS (with retained padding tagged Pad), NEG0, NEG1.
enum class Segment : std::uint8_t { Img, Pos, Pad, Neg0, Neg1 };

struct SeqCounts {
    std::size_t img = 0;
    std::size_t pos = 0;   // positive block length, retained padding included
    std::size_t neg0 = 0;
    std::size_t neg1 = 0;

    std::size_t total() const { return img + pos + neg0 + neg1; }
    /// Query rows: IMG, POS and NEG0. NEG1 contributes keys/values only.
    std::size_t queries() const { return img + pos + neg0; }

    bool operator==(const SeqCounts&) const = default;
};

/// Token embeddings plus segment tags for the MMDiT joint sequence.
struct TokenSeq {
    Matrix tokens;
    std::vector<Segment> segments;
    SeqCounts counts;

    void validate() const;
};

/// Assembles [IMG, POS, NEG0] with `pos_real` leading positive rows tagged
/// Pos and the rest of the positive block tagged Pad.
TokenSeq make_joint_seq(const Matrix& img_tokens, const Matrix& pos_block, std::size_t pos_real,
                        const Matrix& neg0);

/// Drops padded rows from a negative-prompt embedding fragment, preserving
/// order. An all-pad fragment yields an empty matrix (VSF then degenerates to
/// the unguided forward). Positive fragments must never be passed here; their
/// padding is retained.
Matrix strip_padding(const Matrix& fragment, const std::vector<std::uint8_t>& pad_mask);

/// Appends a NEG1 block that is an exact copy of NEG0. Identity when there is
/// no negative prompt. Error if NEG1 is already present.
TokenSeq duplicate_negative(const TokenSeq& seq);

/// Drops the NEG1 block again (test helper; block_forward does this
/// implicitly by emitting no NEG1 output).
TokenSeq drop_neg1(const TokenSeq& seq);

/// Attention plan for the joint sequence:
///   IMG  queries attend IMG, POS, NEG1 (not NEG0)
///   POS  queries attend IMG, POS
///   NEG0 queries attend IMG, NEG0
///   NEG1 has no query row
/// The bias is -beta on (IMG query, NEG1 key) entries and 0 elsewhere.
AttnPlan build_plan(const SeqCounts& counts, double beta);

/// Parameters of one attention/MLP stream (image or text).
struct StreamParams {
    Matrix wq, wk, wv, wo;       // model_dim x model_dim, no bias
    Matrix norm1_gain;           // 1 x model_dim (pre-attention RMSNorm)
    Matrix norm2_gain;           // 1 x model_dim (pre-MLP RMSNorm)
    Matrix mlp_w1, mlp_b1;       // model_dim x hidden, 1 x hidden
    Matrix mlp_w2, mlp_b2;       // hidden x model_dim, 1 x model_dim
};

/// One MMDiT block: an image stream and a text stream shared by the positive
/// and negative prompts.
struct BlockParams {
    StreamParams img;
    StreamParams txt;
    int heads = 1;

    std::size_t model_dim() const { return img.wq.rows(); }
    std::size_t head_dim() const { return model_dim() / static_cast<std::size_t>(heads); }
    std::size_t hidden_dim() const { return img.mlp_w1.cols(); }
    void validate() const;
};

/// Saved intermediates of one block forward, sufficient for backprop through
/// the no-negative training path.
struct BlockCache {
    Matrix x_in;
    Matrix xn;
    std::vector<double> rms1;
    Matrix q, k, v;
    std::vector<Matrix> probs;   // per head, n_q x n_k
    Matrix z;                    // pre-output-projection attention result
    Matrix attn_out;
    Matrix x_mid;
    Matrix yn;
    std::vector<double> rms2;
    Matrix mlp_pre;
    Matrix mlp_act;
};

/// Multi-head joint attention over the full sequence. Queries come from the
/// IMG/POS/NEG0 rows; keys and values from all rows, with NEG1 value rows
/// scaled by -alpha after projection. Output rows follow the query layout
/// (NEG1 emits nothing) and are projected per stream.
TokenSeq joint_attention(const TokenSeq& seq, const BlockParams& params, double alpha,
                         const AttnPlan& plan, BlockCache* cache = nullptr);

/// Full block: duplicate NEG0 -> build plan -> joint attention -> residual ->
/// per-stream MLP. The returned sequence has no NEG1 block; each layer
/// re-duplicates from the evolving NEG0 state.
TokenSeq block_forward(const TokenSeq& seq, const BlockParams& params, double alpha, double beta,
                       BlockCache* cache = nullptr);

/// Per-head-averaged raw logits Q K^T / sqrt(d) restricted to IMG rows and
/// NEG1 columns, averaged over NEG1 columns: one scalar per image token,
/// reshaped to the (square when possible) image-token grid.
Matrix extract_neg_attn(const TokenSeq& seq, const BlockParams& params);

double gelu(double x);
double gelu_grad(double x);

inline constexpr double kRmsNormEps = 1e-6;

/// y = gain * x / sqrt(mean(x^2) + eps) per row; rms_out receives the
/// denominator per row when non-null.
Matrix rmsnorm_rows(const Matrix& x, const Matrix& gain, std::vector<double>* rms_out = nullptr);

/// Applies w_img to rows [0, img_rows) and w_txt to the rest.
Matrix project_streams(const Matrix& x, std::size_t img_rows, const Matrix& w_img,
                       const Matrix& w_txt);

} // namespace vsf
