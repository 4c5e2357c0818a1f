#pragma once

#include <string>

#include "vsf/matrix.hpp"

namespace vsf {

enum class Variant { None, Cfg, Nasa, Nag, Vsf, Wef };

const char* variant_name(Variant v);
Variant variant_from_string(const std::string& s);

/// Variant selector plus every guidance scalar. Fields that do not apply to
/// the active variant are ignored but must be finite.
struct GuidanceSpec {
    Variant variant = Variant::None;
    double alpha = 1.0;   // VSF / NASA / WEF scale
    double beta = 0.5;    // VSF attention bias magnitude
    double phi = 5.0;     // NAG extrapolation scale
    double tau = 2.5;     // NAG norm cap, >= 1
    double blend = 0.5;   // NAG blending weight, in [0, 1]
    double lambda = 3.0;  // CFG guidance scale

    void validate() const;
};

/// Attention allow-mask plus additive logit bias over (query row, key column).
struct AttnPlan {
    Mask allow;
    Matrix bias;

    AttnPlan() = default;
    AttnPlan(Mask a, Matrix b);

    std::size_t n_queries() const { return allow.rows(); }
    std::size_t n_keys() const { return allow.cols(); }
};

/// Projected per-head attention inputs with separate positive and negative
/// prompt keys/values. n_neg() may be 0 (no negative prompt).
struct AttnInputs {
    Matrix q;       // n_q x d
    Matrix k_pos;   // n_p x d
    Matrix v_pos;   // n_p x d
    Matrix k_neg;   // n_n x d
    Matrix v_neg;   // n_n x d
    std::size_t head_dim = 0;

    std::size_t n_neg() const { return k_neg.rows(); }
    void validate() const;
};

/// Scaled dot-product attention: row_softmax(q k^T / sqrt(d), plan) * v,
/// with d = q.cols(). plan may be null for unmasked attention.
Matrix sdpa(const Matrix& q, const Matrix& k, const Matrix& v, const AttnPlan* plan = nullptr);

/// Value Sign Flip cross-attention. Keys of both prompts are concatenated
/// unflipped; negative values are scaled by -alpha before the weighted sum:
///
///   sigma(Q (K+ ++ K-)^T / sqrt(d)) (V+ ++ -alpha V-)
///
/// beta, when nonzero, subtracts an additive logit bias from every negative
/// key column (optional in the cross-attention form; defaults off).
Matrix vsf_cross_attention(const AttnInputs& in, double alpha, double beta = 0.0);

/// Z+ - alpha * Z-. alpha == 0 returns z_pos bitwise.
Matrix nasa_combine(const Matrix& z_pos, const Matrix& z_neg, double alpha);

/// Extrapolate Zt = Z+ + phi (Z+ - Z-), cap each row norm at tau * ||Z+ row||
/// (rows with a zero-norm Z+ pass through unrescaled), then blend the capped
/// result with Z+. blend == 0 returns z_pos bitwise.
Matrix nag_combine(const Matrix& z_pos, const Matrix& z_neg, double phi, double tau, double blend);

/// u_neg + lambda (u_pos - u_neg). lambda == 1 returns u_pos bitwise,
/// lambda == 0 returns u_neg bitwise.
Matrix cfg_combine(const Matrix& u_neg, const Matrix& u_pos, double lambda);

/// Whole Embedding Flip: stack the positive embedding over the negative one
/// scaled by -alpha. Padding rows of the negative embedding are kept.
Matrix wef_transform(const Matrix& pos_embed, const Matrix& neg_embed, double alpha);

} // namespace vsf
