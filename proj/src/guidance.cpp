#include "vsf/guidance.hpp"

#include <cmath>
#include <stdexcept>

namespace vsf {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::None: return "none";
        case Variant::Cfg: return "cfg";
        case Variant::Nasa: return "nasa";
        case Variant::Nag: return "nag";
        case Variant::Vsf: return "vsf";
        case Variant::Wef: return "wef";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "none") return Variant::None;
    if (s == "cfg") return Variant::Cfg;
    if (s == "nasa") return Variant::Nasa;
    if (s == "nag") return Variant::Nag;
    if (s == "vsf") return Variant::Vsf;
    if (s == "wef") return Variant::Wef;
    throw std::invalid_argument("unknown guidance variant '" + s + "'");
}

void GuidanceSpec::validate() const {
    const double fields[] = {alpha, beta, phi, tau, blend, lambda};
    const char* names[] = {"alpha", "beta", "phi", "tau", "blend", "lambda"};
    for (int i = 0; i < 6; ++i) {
        if (!std::isfinite(fields[i])) {
            throw std::invalid_argument(std::string("GuidanceSpec: ") + names[i] +
                                        " must be finite");
        }
    }
    if (alpha < 0.0) throw std::invalid_argument("GuidanceSpec: alpha must be >= 0");
    if (beta < 0.0) throw std::invalid_argument("GuidanceSpec: beta must be >= 0");
    if (phi < 0.0) throw std::invalid_argument("GuidanceSpec: phi must be >= 0");
    if (tau < 1.0) throw std::invalid_argument("GuidanceSpec: tau must be >= 1");
    if (blend < 0.0 || blend > 1.0) {
        throw std::invalid_argument("GuidanceSpec: blend must be in [0, 1]");
    }
}

AttnPlan::AttnPlan(Mask a, Matrix b) : allow(std::move(a)), bias(std::move(b)) {
    if (!allow.same_shape(bias)) {
        throw std::invalid_argument("AttnPlan: allow and bias must share shape");
    }
}

void AttnInputs::validate() const {
    if (head_dim == 0 || q.cols() != head_dim) {
        throw std::invalid_argument("AttnInputs: q must be n_q x head_dim");
    }
    if (k_pos.cols() != head_dim || v_pos.cols() != head_dim) {
        throw std::invalid_argument("AttnInputs: positive keys/values must have width head_dim");
    }
    if (k_pos.rows() != v_pos.rows()) {
        throw std::invalid_argument("AttnInputs: k_pos and v_pos row counts differ");
    }
    if (k_neg.rows() != v_neg.rows()) {
        throw std::invalid_argument("AttnInputs: k_neg and v_neg row counts differ");
    }
    if (k_neg.rows() > 0 && (k_neg.cols() != head_dim || v_neg.cols() != head_dim)) {
        throw std::invalid_argument("AttnInputs: negative keys/values must have width head_dim");
    }
}

Matrix sdpa(const Matrix& q, const Matrix& k, const Matrix& v, const AttnPlan* plan) {
    if (q.cols() != k.cols()) {
        throw std::invalid_argument("sdpa: q " + q.shape_str() + " and k " + k.shape_str() +
                                    " width mismatch");
    }
    if (k.rows() != v.rows()) {
        throw std::invalid_argument("sdpa: k " + k.shape_str() + " and v " + v.shape_str() +
                                    " row mismatch");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Matrix logits = scale(matmul_nt(q, k), inv_sqrt_d);
    Matrix weights;
    if (plan != nullptr) {
        if (plan->n_queries() != q.rows() || plan->n_keys() != k.rows()) {
            throw std::invalid_argument("sdpa: plan shape mismatch (" +
                                        std::to_string(plan->n_queries()) + "x" +
                                        std::to_string(plan->n_keys()) + " vs logits " +
                                        logits.shape_str() + ")");
        }
        weights = row_softmax(logits, plan->allow, plan->bias);
    } else {
        weights = row_softmax(logits);
    }
    return matmul(weights, v);
}

Matrix vsf_cross_attention(const AttnInputs& in, double alpha, double beta) {
    in.validate();
    if (in.n_neg() == 0) {
        throw std::invalid_argument(
            "vsf_cross_attention: no negative prompt tokens; use sdpa for the unguided case");
    }
    const Matrix k = concat_rows(in.k_pos, in.k_neg);
    const Matrix v = concat_rows(in.v_pos, scale(in.v_neg, -alpha));
    if (beta == 0.0) {
        return sdpa(in.q, k, v, nullptr);
    }
    AttnPlan plan(Mask(in.q.rows(), k.rows(), true), Matrix(in.q.rows(), k.rows(), 0.0));
    for (std::size_t i = 0; i < in.q.rows(); ++i) {
        for (std::size_t j = in.k_pos.rows(); j < k.rows(); ++j) {
            plan.bias(i, j) = -beta;
        }
    }
    return sdpa(in.q, k, v, &plan);
}

Matrix nasa_combine(const Matrix& z_pos, const Matrix& z_neg, double alpha) {
    if (!z_pos.same_shape(z_neg)) {
        throw std::invalid_argument("nasa_combine: shape mismatch " + z_pos.shape_str() + " vs " +
                                    z_neg.shape_str());
    }
    if (alpha == 0.0) return z_pos;
    return sub(z_pos, scale(z_neg, alpha));
}

Matrix nag_combine(const Matrix& z_pos, const Matrix& z_neg, double phi, double tau,
                   double blend) {
    if (!z_pos.same_shape(z_neg)) {
        throw std::invalid_argument("nag_combine: shape mismatch " + z_pos.shape_str() + " vs " +
                                    z_neg.shape_str());
    }
    if (tau < 1.0) throw std::invalid_argument("nag_combine: tau must be >= 1");
    if (blend < 0.0 || blend > 1.0) {
        throw std::invalid_argument("nag_combine: blend must be in [0, 1]");
    }
    if (blend == 0.0) return z_pos;

    Matrix extrapolated = add(z_pos, scale(sub(z_pos, z_neg), phi));
    const std::vector<double> pos_norms = l2_norm_rows(z_pos);
    const std::vector<double> ext_norms = l2_norm_rows(extrapolated);
    for (std::size_t i = 0; i < extrapolated.rows(); ++i) {
        // Rows with a zero-norm positive reference pass through unrescaled.
        if (pos_norms[i] == 0.0) continue;
        const double ratio = ext_norms[i] / pos_norms[i];
        if (ratio > tau) {
            const double s = tau * pos_norms[i] / ext_norms[i];
            double* row = extrapolated.row(i);
            for (std::size_t j = 0; j < extrapolated.cols(); ++j) row[j] *= s;
        }
    }
    Matrix out(z_pos.rows(), z_pos.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = blend * extrapolated.data()[i] + (1.0 - blend) * z_pos.data()[i];
    }
    out.ensure_finite("nag_combine");
    return out;
}

Matrix cfg_combine(const Matrix& u_neg, const Matrix& u_pos, double lambda) {
    if (!u_neg.same_shape(u_pos)) {
        throw std::invalid_argument("cfg_combine: shape mismatch " + u_neg.shape_str() + " vs " +
                                    u_pos.shape_str());
    }
    if (lambda == 1.0) return u_pos;
    if (lambda == 0.0) return u_neg;
    return add(u_neg, scale(sub(u_pos, u_neg), lambda));
}

Matrix wef_transform(const Matrix& pos_embed, const Matrix& neg_embed, double alpha) {
    if (pos_embed.cols() != neg_embed.cols()) {
        throw std::invalid_argument("wef_transform: embedding width mismatch " +
                                    pos_embed.shape_str() + " vs " + neg_embed.shape_str());
    }
    return concat_rows(pos_embed, scale(neg_embed, -alpha));
}

} // namespace vsf
