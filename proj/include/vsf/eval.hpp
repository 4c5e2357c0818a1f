#pragma once

#include <string>
#include <vector>

#include "vsf/toy.hpp"

namespace vsf {

struct PromptPair {
    Prompt pos;
    Prompt neg;
    std::string pos_text;
    std::string neg_text;
};

struct SuiteScores {
    double positive = 0.0;
    double negative = 0.0;
    double quality = 0.0;
    std::size_t runs = 0;
};

struct SweepRow {
    GuidanceSpec spec;
    double pos = 0.0;
    double neg = 0.0;
    double quality = 0.0;
};
using SweepResult = std::vector<SweepRow>;

/// Oracle scoring per run: positive = the oracle shape matches the positive
/// prompt's shape word (any shape counts when the prompt names none);
/// negative = the negated attribute (first color or shape word of the
/// negative prompt) is absent; quality = template correlation.
void score_record(RunRecord& rec);

/// Samples every (prompt pair, seed) combination, scores with the oracle and
/// returns the means. Deterministic regardless of the worker count.
SuiteScores score_suite(const ToyModel& m, const std::vector<PromptPair>& pairs,
                        const GuidanceSpec& spec, const std::vector<std::uint64_t>& seeds,
                        int sample_steps = kDefaultSampleSteps, int jobs = 1);

enum class FrontierY { Positive, Quality };

/// Critical points: rows sorted by negative score descending (ties broken by
/// higher y), keeping those that strictly improve the running maximum of y.
SweepResult pareto_frontier(const SweepResult& rows, FrontierY y_key);

/// Hyperparameter sweep: random draws for VSF (alpha in [0,4], beta in [0,2]),
/// NAG (phi in [0,16], tau in [1,10], blend in [0,1]), WEF (alpha in [0,4])
/// and CFG (lambda in [0,8]); a uniform grid over alpha in [0,1] for NASA.
SweepResult sweep(const ToyModel& m, const std::vector<PromptPair>& pairs, Variant variant,
                  std::size_t n_runs, std::uint64_t sampler_seed,
                  const std::vector<std::uint64_t>& seeds, int sample_steps = kDefaultSampleSteps,
                  int jobs = 1);

struct AttnCost {
    unsigned long long attn_macs = 0;
    int forwards_per_step = 1;
};

/// Closed-form attention MAC count (QK^T plus AV, all heads, all layers) and
/// model forwards per sampler step, mirroring the implemented sampler.
AttnCost attn_cost(Variant variant, std::size_t n_img, std::size_t n_pos, std::size_t n_neg,
                   std::size_t d_model, std::size_t heads, std::size_t layers);

/// One grayscale PPM (P5) per (step, layer) of the recorded image-token map,
/// min-max normalized (constant maps render mid-gray), plus attn.csv with the
/// raw values at full precision. The record must come from a VSF run.
void dump_attn_maps(const RunRecord& rec, const std::string& out_dir);

void write_neg_attn_csv(const std::string& path, const RunRecord& rec);
/// Loads step/layer maps back into rec.neg_attn (shapes restored as 1 x n).
void read_neg_attn_csv(const std::string& path, RunRecord& rec);

void write_run_record_csv(const std::string& path, const RunRecord& rec);
/// Parses the metadata written by write_run_record_csv (maps not included).
RunRecord read_run_record_csv(const std::string& path);

void write_sweep_csv(const std::string& path, const SweepResult& rows);
SweepResult read_sweep_csv(const std::string& path);

/// Positive prompts cycle the three shapes; negative prompts cycle the three
/// colors; wording varies with the seed.
std::vector<PromptPair> make_eval_suite(std::size_t n, std::uint64_t seed);

struct AlphaCalibration {
    double alpha = 0.0;
    SuiteScores none;
    std::vector<std::pair<double, SuiteScores>> grid;
};

/// 10-point grid over alpha in [0, alpha_max]: picks the highest negative
/// score whose positive score stays within pos_slack of the unguided run
/// (falling back to the best negative score when none qualifies).
AlphaCalibration calibrate_vsf_alpha(const ToyModel& m, const std::vector<PromptPair>& pairs,
                                     const std::vector<std::uint64_t>& seeds, double beta,
                                     int sample_steps = kDefaultSampleSteps, int jobs = 1,
                                     int grid_points = 10, double alpha_max = 3.0,
                                     double pos_slack = 0.15);

} // namespace vsf
