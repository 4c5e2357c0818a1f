#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "vsf/toy.hpp"

namespace vsf {

const char* const kVocab[kVocabSize] = {"<pad>", "square", "circle", "cross", "red",  "green",
                                        "blue",  "a",      "the",    "draw",  "shape", "color",
                                        "with",  "of",     "any",    "thing"};

std::uint16_t shape_word_id(ShapeKind s) { return static_cast<std::uint16_t>(1 + static_cast<int>(s)); }
std::uint16_t color_word_id(ColorKind c) { return static_cast<std::uint16_t>(4 + static_cast<int>(c)); }

Prompt parse_prompt(const std::string& text) {
    Prompt p;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        if (p.length >= kMaxPrompt) {
            throw std::invalid_argument("parse_prompt: more than " + std::to_string(kMaxPrompt) +
                                        " words");
        }
        int id = -1;
        for (int i = 1; i < kVocabSize; ++i) {
            if (word == kVocab[i]) {
                id = i;
                break;
            }
        }
        if (id < 0) {
            throw std::invalid_argument("parse_prompt: unknown word '" + word + "'");
        }
        p.ids[static_cast<std::size_t>(p.length++)] = static_cast<std::uint16_t>(id);
    }
    return p;
}

std::string prompt_text(const Prompt& p) {
    std::string out;
    for (int i = 0; i < p.length; ++i) {
        if (i) out += ' ';
        out += kVocab[p.ids[static_cast<std::size_t>(i)]];
    }
    return out;
}

std::vector<std::uint8_t> prompt_pad_mask(const Prompt& p) {
    std::vector<std::uint8_t> mask(kMaxPrompt, 0);
    for (int i = p.length; i < kMaxPrompt; ++i) mask[static_cast<std::size_t>(i)] = 1;
    return mask;
}

std::optional<ShapeKind> prompt_shape(const Prompt& p) {
    for (int i = 0; i < p.length; ++i) {
        const int id = p.ids[static_cast<std::size_t>(i)];
        if (id >= 1 && id <= 3) return static_cast<ShapeKind>(id - 1);
    }
    return std::nullopt;
}

std::optional<ColorKind> prompt_color(const Prompt& p) {
    for (int i = 0; i < p.length; ++i) {
        const int id = p.ids[static_cast<std::size_t>(i)];
        if (id >= 4 && id <= 6) return static_cast<ColorKind>(id - 4);
    }
    return std::nullopt;
}

namespace {

constexpr double kFgIntensity = 0.35;
constexpr double kColorPresent = 0.40;
constexpr double kColorDominance = 0.60;

bool in_shape(ShapeKind s, double dx, double dy, double r) {
    switch (s) {
        case ShapeKind::Square: return std::max(std::abs(dx), std::abs(dy)) <= r;
        case ShapeKind::Circle: return dx * dx + dy * dy <= r * r;
        case ShapeKind::Cross:
            // Diagonal cross: distinct from the discrete circle at every size.
            return std::abs(std::abs(dx) - std::abs(dy)) <= 1.0 &&
                   std::max(std::abs(dx), std::abs(dy)) <= r;
    }
    return false;
}

std::vector<std::uint16_t> shape_mask(ShapeKind s, int cx, int cy, double r) {
    std::vector<std::uint16_t> px;
    for (int y = 0; y < kImageSize; ++y) {
        for (int x = 0; x < kImageSize; ++x) {
            if (in_shape(s, x - cx, y - cy, r)) {
                px.push_back(static_cast<std::uint16_t>(y * kImageSize + x));
            }
        }
    }
    return px;
}

struct Template {
    int shape;
    std::vector<std::uint16_t> px;
};

const std::vector<Template>& shape_templates() {
    static const std::vector<Template> templates = [] {
        std::vector<Template> out;
        for (int s = 0; s < 3; ++s) {
            for (double r : {2.5, 3.5}) {
                for (int cy = 2; cy <= 13; ++cy) {
                    for (int cx = 2; cx <= 13; ++cx) {
                        out.push_back({s, shape_mask(static_cast<ShapeKind>(s), cx, cy, r)});
                    }
                }
            }
        }
        return out;
    }();
    return templates;
}

Prompt make_caption(ShapeKind shape, ColorKind color, Rng& rng) {
    const std::uint16_t s = shape_word_id(shape);
    const std::uint16_t c = color_word_id(color);
    const std::uint16_t a = 7, the = 8, draw = 9, colw = 11, of = 13, any = 14, thing = 15;
    const double u = rng.uniform();
    const std::uint64_t v = rng.next_below(4);
    std::vector<std::uint16_t> ids;
    if (u < 0.5) {
        switch (v) {
            case 0: ids = {a, c, s}; break;
            case 1: ids = {the, c, s}; break;
            case 2: ids = {draw, a, c, s}; break;
            default: ids = {c, s}; break;
        }
    } else if (u < 0.75) {
        switch (v) {
            case 0: ids = {a, s}; break;
            case 1: ids = {s}; break;
            case 2: ids = {draw, a, s}; break;
            default: ids = {s, of, any, colw}; break;
        }
    } else {
        switch (v) {
            case 0: ids = {a, c, thing}; break;
            case 1: ids = {c}; break;
            case 2: ids = {the, c, thing}; break;
            default: ids = {c, colw}; break;
        }
    }
    Prompt p;
    p.length = static_cast<int>(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) p.ids[i] = ids[i];
    return p;
}

} // namespace

ToyImage render_image(const Attributes& attrs, int jitter_x, int jitter_y, double radius) {
    if (attrs.cell < 0 || attrs.cell >= 9) {
        throw std::invalid_argument("render_image: cell must be in [0, 9)");
    }
    const int cx = 4 + 4 * (attrs.cell % 3) + jitter_x;
    const int cy = 4 + 4 * (attrs.cell / 3) + jitter_y;
    ToyImage img;
    const int channel = static_cast<int>(attrs.color);
    for (std::uint16_t p : shape_mask(attrs.shape, cx, cy, radius)) {
        img.pixels[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(channel)] = 1.0;
    }
    return img;
}

std::vector<Example> make_dataset(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("make_dataset: n must be >= 1");
    Rng rng(seed);
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Attributes attrs;
        attrs.shape = static_cast<ShapeKind>((i % 9) / 3);
        attrs.color = static_cast<ColorKind>(i % 3);
        attrs.cell = static_cast<int>(rng.next_below(9));
        const int jx = static_cast<int>(rng.next_below(3)) - 1;
        const int jy = static_cast<int>(rng.next_below(3)) - 1;
        const double r = rng.next_below(2) == 0 ? 2.5 : 3.5;
        Example ex;
        ex.attrs = attrs;
        ex.image = render_image(attrs, jx, jy, r);
        ex.prompt = make_caption(attrs.shape, attrs.color, rng);
        out.push_back(std::move(ex));
    }
    return out;
}

Classification oracle_classify(const ToyImage& img) {
    std::array<double, kImagePixels> px;
    for (std::size_t i = 0; i < px.size(); ++i) {
        px[i] = std::clamp(img.pixels[i], 0.0, 1.0);
    }

    constexpr int n = kImageSize * kImageSize;
    std::array<double, n> intensity;
    double sum_i = 0.0, sum_i2 = 0.0;
    for (int p = 0; p < n; ++p) {
        const double v = std::max({px[static_cast<std::size_t>(p) * 3],
                                   px[static_cast<std::size_t>(p) * 3 + 1],
                                   px[static_cast<std::size_t>(p) * 3 + 2]});
        intensity[static_cast<std::size_t>(p)] = v;
        sum_i += v;
        sum_i2 += v * v;
    }
    const double mean_i = sum_i / n;
    const double var_i = std::max(0.0, sum_i2 - n * mean_i * mean_i);
    const double denom_i = std::sqrt(var_i);

    Classification cls;

    // Color presence: channel dominance over foreground pixels.
    double fg_count = 0.0;
    std::array<double, 3> chan{};
    for (int p = 0; p < n; ++p) {
        if (intensity[static_cast<std::size_t>(p)] < kFgIntensity) continue;
        fg_count += 1.0;
        for (int c = 0; c < 3; ++c) {
            chan[static_cast<std::size_t>(c)] += px[static_cast<std::size_t>(p) * 3 +
                                                    static_cast<std::size_t>(c)];
        }
    }
    if (fg_count > 0.0) {
        double max_mean = 0.0;
        for (int c = 0; c < 3; ++c) {
            chan[static_cast<std::size_t>(c)] /= fg_count;
            max_mean = std::max(max_mean, chan[static_cast<std::size_t>(c)]);
        }
        for (int c = 0; c < 3; ++c) {
            const double m = chan[static_cast<std::size_t>(c)];
            cls.colors[static_cast<std::size_t>(c)] =
                m >= kColorPresent && m >= kColorDominance * max_mean;
        }
    }

    // Shape: best normalized correlation against the rendered template bank.
    if (denom_i > 1e-12) {
        double best = -1.0;
        int best_shape = -1;
        for (const Template& t : shape_templates()) {
            const double cnt = static_cast<double>(t.px.size());
            double sum_it = 0.0;
            for (std::uint16_t p : t.px) sum_it += intensity[p];
            const double cov = sum_it - mean_i * cnt;
            const double denom_t = std::sqrt(cnt * (1.0 - cnt / n));
            const double corr = cov / (denom_i * denom_t);
            if (corr > best) {
                best = corr;
                best_shape = t.shape;
            }
        }
        cls.quality = std::clamp(best, 0.0, 1.0);
        if (best >= kShapeCorrFloor) cls.shape = best_shape;
    }
    return cls;
}

} // namespace vsf
