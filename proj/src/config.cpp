#include "vsf/config.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vsf/util.hpp"

namespace vsf {

namespace {

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not an integer");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not a number");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "': '" + v +
                                    "' is not an unsigned integer");
    }
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item));
    if (out.empty()) throw std::invalid_argument("config: key '" + key + "': empty list");
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

} // namespace

GuidanceSpec Config::guidance_defaults(Variant v) const {
    GuidanceSpec g;
    g.variant = v;
    g.beta = vsf_beta;
    g.phi = nag_phi;
    g.tau = nag_tau;
    g.blend = nag_blend;
    g.lambda = cfg_lambda;
    switch (v) {
        case Variant::Vsf: g.alpha = vsf_alpha; break;
        case Variant::Nasa: g.alpha = nasa_alpha; break;
        case Variant::Wef: g.alpha = wef_alpha; break;
        default: g.alpha = vsf_alpha; break;
    }
    return g;
}

const std::vector<ConfigKeyDoc>& config_key_docs() {
    static const std::vector<ConfigKeyDoc> docs = {
        {"model.layers", "4", "transformer block count"},
        {"model.heads", "4", "attention heads per block"},
        {"model.dim", "32", "model width (divisible by heads)"},
        {"model.patch", "4", "image patch side in pixels"},
        {"model.mlp_hidden", "64", "MLP hidden width"},
        {"train.steps", "5000", "optimizer steps"},
        {"train.lr", "0.003", "Adam learning rate (0 disables updates)"},
        {"train.batch", "16", "batch size"},
        {"train.seed", "0", "training RNG seed"},
        {"data.size", "9000", "synthetic dataset size"},
        {"data.seed", "1234", "dataset RNG seed"},
        {"sampling.steps", "8", "Euler steps per sample (1..64)"},
        {"sampling.seeds", "0", "comma-separated sampling seed list"},
        {"suite.size", "60", "prompt pairs in the evaluation suite"},
        {"suite.seed", "7", "evaluation suite RNG seed"},
        {"guidance.vsf.alpha", "1", "default VSF value-flip scale"},
        {"guidance.vsf.beta", "0.5", "default VSF attention bias"},
        {"guidance.nasa.alpha", "0.5", "default NASA subtraction scale"},
        {"guidance.nag.phi", "5", "default NAG extrapolation scale"},
        {"guidance.nag.tau", "2.5", "default NAG norm cap"},
        {"guidance.nag.blend", "0.5", "default NAG blend weight"},
        {"guidance.cfg.lambda", "3", "default CFG guidance scale"},
        {"guidance.wef.alpha", "1", "default WEF flip scale"},
        {"paths.checkpoint", "model.vsft", "checkpoint file"},
        {"paths.out", "out", "output directory root"},
        {"run.jobs", "1", "parallel workers for suites and sweeps"},
    };
    return docs;
}

void config_apply(Config& cfg, const std::string& key, const std::string& value) {
    if (key == "model.layers") cfg.model_layers = parse_int(key, value);
    else if (key == "model.heads") cfg.model_heads = parse_int(key, value);
    else if (key == "model.dim") cfg.model_dim = parse_int(key, value);
    else if (key == "model.patch") cfg.model_patch = parse_int(key, value);
    else if (key == "model.mlp_hidden") cfg.model_mlp_hidden = parse_int(key, value);
    else if (key == "train.steps") cfg.train_steps = parse_int(key, value);
    else if (key == "train.lr") cfg.train_lr = parse_double(key, value);
    else if (key == "train.batch") cfg.train_batch = parse_int(key, value);
    else if (key == "train.seed") cfg.train_seed = parse_u64(key, value);
    else if (key == "data.size") cfg.data_size = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "data.seed") cfg.data_seed = parse_u64(key, value);
    else if (key == "sampling.steps") cfg.sampling_steps = parse_int(key, value);
    else if (key == "sampling.seeds") cfg.sampling_seeds = parse_u64_list(key, value);
    else if (key == "suite.size") cfg.suite_size = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "suite.seed") cfg.suite_seed = parse_u64(key, value);
    else if (key == "guidance.vsf.alpha") cfg.vsf_alpha = parse_double(key, value);
    else if (key == "guidance.vsf.beta") cfg.vsf_beta = parse_double(key, value);
    else if (key == "guidance.nasa.alpha") cfg.nasa_alpha = parse_double(key, value);
    else if (key == "guidance.nag.phi") cfg.nag_phi = parse_double(key, value);
    else if (key == "guidance.nag.tau") cfg.nag_tau = parse_double(key, value);
    else if (key == "guidance.nag.blend") cfg.nag_blend = parse_double(key, value);
    else if (key == "guidance.cfg.lambda") cfg.cfg_lambda = parse_double(key, value);
    else if (key == "guidance.wef.alpha") cfg.wef_alpha = parse_double(key, value);
    else if (key == "paths.checkpoint") cfg.checkpoint = value;
    else if (key == "paths.out") cfg.out_dir = value;
    else if (key == "run.jobs") cfg.jobs = parse_int(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string Config::canonical() const {
    std::ostringstream out;
    out << "data.seed=" << data_seed << "\n";
    out << "data.size=" << data_size << "\n";
    out << "guidance.cfg.lambda=" << format_exact(cfg_lambda) << "\n";
    out << "guidance.nag.blend=" << format_exact(nag_blend) << "\n";
    out << "guidance.nag.phi=" << format_exact(nag_phi) << "\n";
    out << "guidance.nag.tau=" << format_exact(nag_tau) << "\n";
    out << "guidance.nasa.alpha=" << format_exact(nasa_alpha) << "\n";
    out << "guidance.vsf.alpha=" << format_exact(vsf_alpha) << "\n";
    out << "guidance.vsf.beta=" << format_exact(vsf_beta) << "\n";
    out << "guidance.wef.alpha=" << format_exact(wef_alpha) << "\n";
    out << "model.dim=" << model_dim << "\n";
    out << "model.heads=" << model_heads << "\n";
    out << "model.layers=" << model_layers << "\n";
    out << "model.mlp_hidden=" << model_mlp_hidden << "\n";
    out << "model.patch=" << model_patch << "\n";
    out << "paths.checkpoint=" << checkpoint << "\n";
    out << "paths.out=" << out_dir << "\n";
    out << "run.jobs=" << jobs << "\n";
    out << "sampling.seeds=";
    for (std::size_t i = 0; i < sampling_seeds.size(); ++i) {
        if (i) out << ",";
        out << sampling_seeds[i];
    }
    out << "\n";
    out << "sampling.steps=" << sampling_steps << "\n";
    out << "suite.seed=" << suite_seed << "\n";
    out << "suite.size=" << suite_size << "\n";
    out << "train.batch=" << train_batch << "\n";
    out << "train.lr=" << format_exact(train_lr) << "\n";
    out << "train.seed=" << train_seed << "\n";
    out << "train.steps=" << train_steps << "\n";
    return out.str();
}

Config load_config(const std::string& path, std::vector<std::string>* warnings) {
    Config cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);

    std::map<std::string, int> seen;
    std::string section;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                        ": expected key=value, got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                        ": empty key");
        }
        if (!section.empty() && key.find('.') == std::string::npos) {
            key = section + "." + key;
        }
        if (auto it = seen.find(key); it != seen.end()) {
            const std::string w = "config: duplicate key '" + key + "' at line " +
                                  std::to_string(line_no) + " (first at line " +
                                  std::to_string(it->second) + "); last value wins";
            std::cerr << "warning: " << w << "\n";
            if (warnings) warnings->push_back(w);
        }
        seen[key] = line_no;
        config_apply(cfg, key, value);
    }
    return cfg;
}

} // namespace vsf
