#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsf/guidance.hpp"

namespace vsf {

/// Plain key=value configuration with optional [section] headers; dotted keys
/// work anywhere. Unknown keys are rejected by name, duplicates warn and the
/// last value wins, every field has a default so an empty (or absent) file is
/// valid.
struct Config {
    int model_layers = 4;
    int model_heads = 4;
    int model_dim = 32;
    int model_patch = 4;
    int model_mlp_hidden = 64;

    int train_steps = 5000;
    double train_lr = 3e-3;
    int train_batch = 16;
    std::uint64_t train_seed = 0;

    std::size_t data_size = 9000;
    std::uint64_t data_seed = 1234;

    int sampling_steps = 8;
    std::vector<std::uint64_t> sampling_seeds = {0};

    std::size_t suite_size = 60;
    std::uint64_t suite_seed = 7;

    double vsf_alpha = 1.0;
    double vsf_beta = 0.5;
    double nasa_alpha = 0.5;
    double nag_phi = 5.0;
    double nag_tau = 2.5;
    double nag_blend = 0.5;
    double cfg_lambda = 3.0;
    double wef_alpha = 1.0;

    std::string checkpoint = "model.vsft";
    std::string out_dir = "out";
    int jobs = 1;

    /// Default GuidanceSpec for a variant, using the configured scalars.
    GuidanceSpec guidance_defaults(Variant v) const;
    /// Canonical "key=value" listing of every field (hashing, diagnostics).
    std::string canonical() const;
};

struct ConfigKeyDoc {
    const char* key;
    const char* def;
    const char* doc;
};
const std::vector<ConfigKeyDoc>& config_key_docs();

/// Applies one key=value pair; throws on unknown keys or bad values.
void config_apply(Config& cfg, const std::string& key, const std::string& value);

/// Parses a config file. An empty path yields the defaults. Collects
/// duplicate-key warnings when `warnings` is non-null (also printed to
/// stderr).
Config load_config(const std::string& path, std::vector<std::string>* warnings = nullptr);

} // namespace vsf
