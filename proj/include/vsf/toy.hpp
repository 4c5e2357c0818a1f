#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vsf/guidance.hpp"
#include "vsf/matrix.hpp"
#include "vsf/mmdit.hpp"

namespace vsf {

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

inline constexpr int kVocabSize = 16;
inline constexpr int kMaxPrompt = 8;
inline constexpr std::uint16_t kPadId = 0;

extern const char* const kVocab[kVocabSize];

enum class ShapeKind : int { Square = 0, Circle = 1, Cross = 2 };
enum class ColorKind : int { Red = 0, Green = 1, Blue = 2 };

std::uint16_t shape_word_id(ShapeKind s);
std::uint16_t color_word_id(ColorKind c);

/// Token-id sequence over the fixed vocabulary, padded with id 0 at the tail.
struct Prompt {
    std::array<std::uint16_t, kMaxPrompt> ids{};
    int length = 0;

    bool empty() const { return length == 0; }
};

/// Splits on spaces and maps words to vocabulary ids. "" is the empty prompt.
Prompt parse_prompt(const std::string& text);
std::string prompt_text(const Prompt& p);
std::vector<std::uint8_t> prompt_pad_mask(const Prompt& p);
/// First shape word in the prompt, if any.
std::optional<ShapeKind> prompt_shape(const Prompt& p);
/// First color word in the prompt, if any.
std::optional<ColorKind> prompt_color(const Prompt& p);

// ---------------------------------------------------------------------------
// Images and the scoring oracle
// ---------------------------------------------------------------------------

inline constexpr int kImageSize = 16;
inline constexpr int kImagePixels = kImageSize * kImageSize * 3;

/// 16x16 RGB image, row-major (y, x, channel), values in [0, 1].
struct ToyImage {
    std::array<double, kImagePixels> pixels{};
};

struct Attributes {
    ShapeKind shape = ShapeKind::Square;
    ColorKind color = ColorKind::Red;
    int cell = 4;  // 3x3 position grid cell, row-major
};

struct Example {
    ToyImage image;
    Attributes attrs;
    Prompt prompt;
};

/// Deterministic renderer; jitter_x/jitter_y in {-1, 0, 1} pixels and radius
/// in {2.5, 3.5} are the allowed jitter bounds.
ToyImage render_image(const Attributes& attrs, int jitter_x, int jitter_y, double radius);

/// Stratified dataset: attribute cell i % 9 fixes (shape, color); position,
/// size and caption wording are drawn from the seeded generator.
std::vector<Example> make_dataset(std::size_t n, std::uint64_t seed);

struct Classification {
    int shape = -1;                 // index into ShapeKind, -1 = none
    std::array<bool, 3> colors{};   // presence per ColorKind
    double quality = 0.0;           // best template correlation, in [0, 1]
};

/// Deterministic stand-in for a learned judge: color presence from channel
/// dominance over foreground pixels, shape from the best normalized template
/// correlation over positions/sizes (below the floor: no shape).
Classification oracle_classify(const ToyImage& img);

/// Correlation floor below which no shape is reported.
inline constexpr double kShapeCorrFloor = 0.55;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ToyModelConfig {
    int model_dim = 32;
    int heads = 4;
    int layers = 4;
    int patch = 4;
    int img_size = kImageSize;
    int mlp_hidden = 64;
    int vocab = kVocabSize;
    int max_prompt = kMaxPrompt;

    int tokens_per_side() const { return img_size / patch; }
    int n_img_tokens() const { return tokens_per_side() * tokens_per_side(); }
    int patch_dim() const { return patch * patch * 3; }
    void validate() const;
};

/// Tiny MMDiT-style flow-matching network. Positional encodings are fixed
/// sinusoidal tables, derived from the config rather than checkpointed.
struct ToyModel {
    ToyModelConfig cfg;
    Matrix token_embed;                  // vocab x D
    Matrix patch_w, patch_b;             // patch_dim x D, 1 x D
    Matrix time_w1, time_b1;             // D x D, 1 x D
    Matrix time_w2, time_b2;             // D x D, 1 x D
    std::vector<BlockParams> blocks;
    Matrix head_norm_gain;               // 1 x D
    Matrix head_w, head_b;               // D x patch_dim, 1 x patch_dim

    Matrix img_pos_enc;                  // n_img_tokens x D (fixed)
    Matrix txt_pos_enc;                  // max_prompt x D (fixed)
};

ToyModel make_toy_model(const ToyModelConfig& cfg, std::uint64_t seed);
/// Same shapes, all parameters zero (gradient / moment buffers).
ToyModel zeros_like(const ToyModel& m);
/// Stable (name, tensor) registry: checkpoint order, optimizer order and the
/// gradient check all iterate this.
std::vector<std::pair<std::string, Matrix*>> named_tensors(ToyModel& m);
std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ToyModel& m);
std::size_t parameter_count(const ToyModel& m);

Matrix patchify(const ToyModelConfig& cfg, const std::array<double, kImagePixels>& pixels);
void unpatchify(const ToyModelConfig& cfg, const Matrix& patches,
                std::array<double, kImagePixels>& out);
Matrix sinusoidal_positions(std::size_t n, std::size_t dim);
Matrix time_features(double t, std::size_t dim);

/// Prompt embedding: token table lookup plus the fixed positional table; all
/// max_prompt rows, padding included.
Matrix embed_prompt(const ToyModel& m, const Prompt& p);

struct PassCounters {
    long model_forwards = 0;
    long attn_computations = 0;
};

namespace detail {
/// Patch projection + fixed positions + time embedding (all forward paths).
Matrix embed_image_tokens(const ToyModel& m, const Matrix& x_patches, double t,
                          Matrix* time_pre = nullptr, Matrix* time_act = nullptr);
/// Final RMSNorm + linear velocity head over the image rows.
Matrix apply_head(const ToyModel& m, const Matrix& img_final, Matrix* hn_out = nullptr,
                  std::vector<double>* rms_out = nullptr);
Matrix mlp_residual(const Matrix& x, const StreamParams& s);
} // namespace detail

/// Velocity prediction with the joint [IMG, TEXT] sequence and no negative
/// branch. `text_real` rows of `text` are tagged Pos, the rest Pad.
Matrix velocity_plain(const ToyModel& m, const Matrix& x_patches, double t, const Matrix& text,
                      std::size_t text_real, PassCounters* counters = nullptr);

/// VSF forward: [IMG, POS, NEG0] joint sequence with per-layer duplication,
/// masking, bias and value flip. When attn_maps is non-null, the per-layer
/// image-to-NEG1 logit map is appended for every layer (empty negative: no
/// maps). Degenerates to velocity_plain when neg0 has no rows.
Matrix velocity_vsf(const ToyModel& m, const Matrix& x_patches, double t, const Matrix& pos_text,
                    std::size_t pos_real, const Matrix& neg0, double alpha, double beta,
                    std::vector<Matrix>* attn_maps = nullptr, PassCounters* counters = nullptr);

/// NASA/NAG forward: one pass with two attention computations per block; the
/// per-head image attention outputs of the [IMG, POS] and [IMG, NEG] passes
/// are combined by the spec's variant before the output projection.
Matrix velocity_attnspace(const ToyModel& m, const Matrix& x_patches, double t,
                          const Matrix& pos_text, std::size_t pos_real, const Matrix& neg_text,
                          std::size_t neg_real, const GuidanceSpec& spec,
                          PassCounters* counters = nullptr);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Rectified-flow training pair: x_t = (1 - t) x0 + t eps, target u = eps - x0.
void make_flow_pair(const std::array<double, kImagePixels>& x0,
                    const std::array<double, kImagePixels>& eps, double t,
                    std::array<double, kImagePixels>& x_t, std::array<double, kImagePixels>& u);

struct TrainItem {
    Matrix x_t;      // n_img_tokens x patch_dim
    double t = 0.0;
    Prompt prompt;   // possibly empty (unconditional)
    Matrix target;   // n_img_tokens x patch_dim
};

/// Mean squared error of the batch; pure, used by the finite-difference check.
double batch_loss(const ToyModel& m, const std::vector<TrainItem>& batch);
/// Same loss; accumulates hand-derived gradients into `grads`.
double batch_loss_and_grad(const ToyModel& m, const std::vector<TrainItem>& batch,
                           ToyModel& grads);

struct TrainConfig {
    int steps = 5000;
    double lr = 3e-3;
    int batch = 16;
    std::uint64_t seed = 0;
    double drop_prob = 0.1;          // prompt dropped to empty (CFG training)
    double divergence_loss = 1e3;
};

struct TrainResult {
    std::vector<double> loss_curve;  // one entry per step
};

/// Adam on the hand-derived gradients. lr == 0 leaves parameters untouched.
/// Aborts with diagnostics if the loss exceeds divergence_loss.
TrainResult train(ToyModel& m, const std::vector<Example>& data, const TrainConfig& cfg);
TrainResult train(ToyModel& m, const std::vector<Example>& data, int steps, double lr,
                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct FlowState {
    Matrix x_patches;
    double t = 1.0;
    int step_index = 0;
    int step_count = 0;
};

struct RunRecord {
    std::string run_id;
    GuidanceSpec spec;
    std::string pos_text, neg_text;
    bool has_neg = false;
    std::uint64_t seed = 0;
    int steps = 0;
    int layers = 0;
    ToyImage image;
    std::vector<Matrix> neg_attn;  // step-major: step * layers + layer (VSF only)
    int positive = 0;
    int negative = 0;
    double quality = 0.0;
};

inline constexpr int kDefaultSampleSteps = 8;

/// Few-step Euler sampler, integrating t from 1 to 0 on a uniform grid.
/// steps must be in [1, 64]. NASA/NAG/VSF/WEF require a negative prompt; CFG
/// without one falls back to the unconditional (empty-prompt) pass.
RunRecord euler_sample(const ToyModel& m, const Prompt& pos, const std::optional<Prompt>& neg,
                       const GuidanceSpec& spec, int steps, std::uint64_t seed,
                       PassCounters* counters = nullptr);

} // namespace vsf
