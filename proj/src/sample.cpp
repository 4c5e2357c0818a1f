#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vsf/toy.hpp"
#include "vsf/util.hpp"

namespace vsf {

namespace {

bool variant_requires_neg(Variant v) {
    return v == Variant::Nasa || v == Variant::Nag || v == Variant::Vsf || v == Variant::Wef;
}

} // namespace

RunRecord euler_sample(const ToyModel& m, const Prompt& pos, const std::optional<Prompt>& neg,
                       const GuidanceSpec& spec, int steps, std::uint64_t seed,
                       PassCounters* counters) {
    if (steps < 1 || steps > 64) {
        throw std::invalid_argument("euler_sample: steps must be in [1, 64]");
    }
    spec.validate();
    if (variant_requires_neg(spec.variant) && !neg.has_value()) {
        throw std::invalid_argument(std::string("euler_sample: variant '") +
                                    variant_name(spec.variant) + "' requires a negative prompt");
    }

    Rng rng(seed);
    std::array<double, kImagePixels> noise;
    for (double& v : noise) v = rng.normal();

    const Matrix pos_emb = embed_prompt(m, pos);
    const std::size_t pos_real = static_cast<std::size_t>(pos.length);
    // CFG without a negative prompt is the classic unconditional form: the
    // second pass runs on the empty (all-pad) prompt.
    const Prompt neg_prompt = neg.value_or(Prompt{});
    const Matrix neg_emb = embed_prompt(m, neg_prompt);
    const std::size_t neg_real = static_cast<std::size_t>(neg_prompt.length);
    const Matrix neg_stripped = strip_padding(neg_emb, prompt_pad_mask(neg_prompt));

    RunRecord rec;
    rec.spec = spec;
    rec.pos_text = prompt_text(pos);
    rec.neg_text = neg ? prompt_text(*neg) : "";
    rec.has_neg = neg.has_value();
    rec.seed = seed;
    rec.steps = steps;
    rec.layers = m.cfg.layers;
    {
        const std::string key = std::string(variant_name(spec.variant)) + "|" +
                                format_exact(spec.alpha) + "|" + format_exact(spec.beta) + "|" +
                                format_exact(spec.phi) + "|" + format_exact(spec.tau) + "|" +
                                format_exact(spec.blend) + "|" + format_exact(spec.lambda) + "|" +
                                rec.pos_text + "|" + rec.neg_text + "|" + std::to_string(seed) +
                                "|" + std::to_string(steps);
        rec.run_id = hex8(fnv1a64(key));
    }

    FlowState state;
    state.x_patches = patchify(m.cfg, noise);
    state.step_count = steps;
    const double dt = 1.0 / static_cast<double>(steps);

    for (int k = 0; k < steps; ++k) {
        state.step_index = k;
        state.t = 1.0 - static_cast<double>(k) * dt;
        Matrix u;
        switch (spec.variant) {
            case Variant::None:
                u = velocity_plain(m, state.x_patches, state.t, pos_emb, pos_real, counters);
                break;
            case Variant::Cfg: {
                const Matrix u_neg =
                    velocity_plain(m, state.x_patches, state.t, neg_emb, neg_real, counters);
                const Matrix u_pos =
                    velocity_plain(m, state.x_patches, state.t, pos_emb, pos_real, counters);
                u = cfg_combine(u_neg, u_pos, spec.lambda);
                break;
            }
            case Variant::Nasa:
            case Variant::Nag:
                u = velocity_attnspace(m, state.x_patches, state.t, pos_emb, pos_real, neg_emb,
                                       neg_real, spec, counters);
                break;
            case Variant::Vsf: {
                std::vector<Matrix> maps;
                u = velocity_vsf(m, state.x_patches, state.t, pos_emb, pos_real, neg_stripped,
                                 spec.alpha, spec.beta, &maps, counters);
                for (Matrix& map : maps) rec.neg_attn.push_back(std::move(map));
                break;
            }
            case Variant::Wef: {
                const Matrix text = wef_transform(pos_emb, neg_emb, spec.alpha);
                u = velocity_plain(m, state.x_patches, state.t, text, text.rows(), counters);
                break;
            }
        }
        state.x_patches = sub(state.x_patches, scale(u, dt));
    }

    std::array<double, kImagePixels> out;
    unpatchify(m.cfg, state.x_patches, out);
    for (std::size_t i = 0; i < out.size(); ++i) {
        rec.image.pixels[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return rec;
}

} // namespace vsf
