#include "vsf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vsf/ppm.hpp"
#include "vsf/util.hpp"

namespace vsf {

void score_record(RunRecord& rec) {
    const Classification cls = oracle_classify(rec.image);
    const Prompt pos = parse_prompt(rec.pos_text);
    const auto pos_shape = prompt_shape(pos);
    rec.positive = pos_shape ? (cls.shape == static_cast<int>(*pos_shape)) : (cls.shape >= 0);

    if (rec.has_neg) {
        const Prompt neg = parse_prompt(rec.neg_text);
        const auto neg_color = prompt_color(neg);
        const auto neg_shape = prompt_shape(neg);
        if (neg_color) {
            rec.negative = !cls.colors[static_cast<std::size_t>(*neg_color)];
        } else if (neg_shape) {
            rec.negative = cls.shape != static_cast<int>(*neg_shape);
        } else {
            rec.negative = 1;  // nothing to avoid
        }
    } else {
        rec.negative = 1;
    }
    rec.quality = cls.quality;
}

SuiteScores score_suite(const ToyModel& m, const std::vector<PromptPair>& pairs,
                        const GuidanceSpec& spec, const std::vector<std::uint64_t>& seeds,
                        int sample_steps, int jobs) {
    if (pairs.empty() || seeds.empty()) {
        throw std::invalid_argument("score_suite: need at least one prompt and one seed");
    }
    const std::size_t total = pairs.size() * seeds.size();
    struct RunScore {
        int pos = 0, neg = 0;
        double quality = 0.0;
    };
    std::vector<RunScore> results(total);

    auto run_one = [&](std::size_t idx) {
        const PromptPair& pp = pairs[idx / seeds.size()];
        const std::uint64_t seed = seeds[idx % seeds.size()];
        RunRecord rec = euler_sample(m, pp.pos, pp.neg, spec, sample_steps, seed);
        score_record(rec);
        results[idx] = {rec.positive, rec.negative, rec.quality};
    };

    const int workers = std::max(1, jobs);
    if (workers == 1) {
        for (std::size_t i = 0; i < total; ++i) run_one(i);
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            threads.emplace_back([&, w] {
                for (std::size_t i = static_cast<std::size_t>(w); i < total;
                     i += static_cast<std::size_t>(workers)) {
                    run_one(i);
                }
            });
        }
        for (std::thread& th : threads) th.join();
    }

    // Fixed-order aggregation: identical results for any worker count.
    SuiteScores out;
    out.runs = total;
    for (const RunScore& r : results) {
        out.positive += r.pos;
        out.negative += r.neg;
        out.quality += r.quality;
    }
    out.positive /= static_cast<double>(total);
    out.negative /= static_cast<double>(total);
    out.quality /= static_cast<double>(total);
    return out;
}

SweepResult pareto_frontier(const SweepResult& rows, FrontierY y_key) {
    if (rows.empty()) throw std::invalid_argument("pareto_frontier: no rows");
    auto y_of = [y_key](const SweepRow& r) {
        return y_key == FrontierY::Positive ? r.pos : r.quality;
    };
    SweepResult sorted = rows;
    std::stable_sort(sorted.begin(), sorted.end(), [&](const SweepRow& a, const SweepRow& b) {
        if (a.neg != b.neg) return a.neg > b.neg;
        return y_of(a) > y_of(b);
    });
    SweepResult out;
    double best = -std::numeric_limits<double>::infinity();
    for (const SweepRow& row : sorted) {
        if (y_of(row) > best) {
            best = y_of(row);
            out.push_back(row);
        }
    }
    return out;
}

SweepResult sweep(const ToyModel& m, const std::vector<PromptPair>& pairs, Variant variant,
                  std::size_t n_runs, std::uint64_t sampler_seed,
                  const std::vector<std::uint64_t>& seeds, int sample_steps, int jobs) {
    if (n_runs < 1) throw std::invalid_argument("sweep: n_runs must be >= 1");
    Rng rng(sampler_seed);
    SweepResult rows;
    rows.reserve(n_runs);
    for (std::size_t r = 0; r < n_runs; ++r) {
        GuidanceSpec spec;
        spec.variant = variant;
        switch (variant) {
            case Variant::Vsf:
                spec.alpha = rng.uniform(0.0, 4.0);
                spec.beta = rng.uniform(0.0, 2.0);
                break;
            case Variant::Nag:
                spec.phi = rng.uniform(0.0, 16.0);
                spec.tau = rng.uniform(1.0, 10.0);
                spec.blend = rng.uniform(0.0, 1.0);
                break;
            case Variant::Nasa:
                spec.alpha = n_runs == 1 ? 0.0
                                         : static_cast<double>(r) /
                                               static_cast<double>(n_runs - 1);
                break;
            case Variant::Wef:
                spec.alpha = rng.uniform(0.0, 4.0);
                break;
            case Variant::Cfg:
                spec.lambda = rng.uniform(0.0, 8.0);
                break;
            case Variant::None:
                break;
        }
        const SuiteScores s = score_suite(m, pairs, spec, seeds, sample_steps, jobs);
        rows.push_back({spec, s.positive, s.negative, s.quality});
    }
    return rows;
}

AttnCost attn_cost(Variant variant, std::size_t n_img, std::size_t n_pos, std::size_t n_neg,
                   std::size_t d_model, std::size_t heads, std::size_t layers) {
    if (heads == 0 || d_model % heads != 0) {
        throw std::invalid_argument("attn_cost: d_model must be divisible by heads");
    }
    using u64 = unsigned long long;
    auto attention = [&](std::size_t nq, std::size_t nk) {
        return 2ULL * static_cast<u64>(nq) * static_cast<u64>(nk) * static_cast<u64>(d_model) *
               static_cast<u64>(layers);
    };
    AttnCost out;
    switch (variant) {
        case Variant::None:
            out.attn_macs = attention(n_img + n_pos, n_img + n_pos);
            out.forwards_per_step = 1;
            break;
        case Variant::Cfg:
            out.attn_macs = 2ULL * attention(n_img + n_pos, n_img + n_pos);
            out.forwards_per_step = 2;
            break;
        case Variant::Vsf:
            out.attn_macs = attention(n_img + n_pos + n_neg, n_img + n_pos + 2 * n_neg);
            out.forwards_per_step = 1;
            break;
        case Variant::Nasa:
        case Variant::Nag:
            out.attn_macs =
                attention(n_img + n_pos, n_img + n_pos) + attention(n_img + n_neg, n_img + n_neg);
            out.forwards_per_step = 1;
            break;
        case Variant::Wef:
            out.attn_macs = attention(n_img + n_pos + n_neg, n_img + n_pos + n_neg);
            out.forwards_per_step = 1;
            break;
    }
    return out;
}

void write_neg_attn_csv(const std::string& path, const RunRecord& rec) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_neg_attn_csv: cannot open " + path);
    const std::size_t cells = rec.neg_attn.empty() ? 0 : rec.neg_attn.front().size();
    out << "step,layer";
    for (std::size_t i = 0; i < cells; ++i) out << ",v" << i;
    out << "\n";
    for (std::size_t idx = 0; idx < rec.neg_attn.size(); ++idx) {
        const std::size_t step = idx / static_cast<std::size_t>(rec.layers);
        const std::size_t layer = idx % static_cast<std::size_t>(rec.layers);
        out << step << "," << layer;
        const Matrix& map = rec.neg_attn[idx];
        for (std::size_t i = 0; i < map.size(); ++i) out << "," << format_exact(map.data()[i]);
        out << "\n";
    }
}

void read_neg_attn_csv(const std::string& path, RunRecord& rec) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_neg_attn_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_neg_attn_csv: empty file");
    rec.neg_attn.clear();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // step
        std::getline(ss, field, ',');  // layer
        std::vector<double> values;
        while (std::getline(ss, field, ',')) values.push_back(std::stod(field));
        Matrix map(1, values.size());
        for (std::size_t i = 0; i < values.size(); ++i) map.data()[i] = values[i];
        rec.neg_attn.push_back(std::move(map));
    }
}

void dump_attn_maps(const RunRecord& rec, const std::string& out_dir) {
    if (rec.spec.variant != Variant::Vsf) {
        throw std::invalid_argument("dump_attn_maps: record was not produced with VSF");
    }
    std::filesystem::create_directories(out_dir);
    for (std::size_t idx = 0; idx < rec.neg_attn.size(); ++idx) {
        const std::size_t step = idx / static_cast<std::size_t>(rec.layers);
        const std::size_t layer = idx % static_cast<std::size_t>(rec.layers);
        const Matrix& map = rec.neg_attn[idx];
        double lo = map.data()[0], hi = map.data()[0];
        for (std::size_t i = 0; i < map.size(); ++i) {
            lo = std::min(lo, map.data()[i]);
            hi = std::max(hi, map.data()[i]);
        }
        std::vector<std::uint8_t> gray(map.size());
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double v = hi > lo ? (map.data()[i] - lo) / (hi - lo) : 0.5;
            gray[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        char name[64];
        std::snprintf(name, sizeof(name), "step%02zu_layer%02zu.ppm", step, layer);
        write_ppm_p5(out_dir + "/" + name, map.cols(), map.rows(), gray);
    }
    write_neg_attn_csv(out_dir + "/attn.csv", rec);
}

namespace {

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

void write_run_record_csv(const std::string& path, const RunRecord& rec) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_run_record_csv: cannot open " + path);
    out << "run_id,variant,alpha,beta,phi,tau,blend,lambda,pos_prompt,neg_prompt,seed,steps,"
           "positive,negative,quality\n";
    out << rec.run_id << "," << variant_name(rec.spec.variant) << ","
        << format_fixed6(rec.spec.alpha) << "," << format_fixed6(rec.spec.beta) << ","
        << format_fixed6(rec.spec.phi) << "," << format_fixed6(rec.spec.tau) << ","
        << format_fixed6(rec.spec.blend) << "," << format_fixed6(rec.spec.lambda) << ","
        << csv_quote(rec.pos_text) << "," << csv_quote(rec.neg_text) << "," << rec.seed << ","
        << rec.steps << "," << rec.positive << "," << rec.negative << ","
        << format_fixed6(rec.quality) << "\n";
}

RunRecord read_run_record_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_run_record_csv: cannot open " + path);
    std::string header, line;
    if (!std::getline(in, header) || !std::getline(in, line)) {
        throw std::runtime_error("read_run_record_csv: missing record row in " + path);
    }
    const auto f = csv_split(line);
    if (f.size() != 15) throw std::runtime_error("read_run_record_csv: malformed row");
    RunRecord rec;
    rec.run_id = f[0];
    rec.spec.variant = variant_from_string(f[1]);
    rec.spec.alpha = std::stod(f[2]);
    rec.spec.beta = std::stod(f[3]);
    rec.spec.phi = std::stod(f[4]);
    rec.spec.tau = std::stod(f[5]);
    rec.spec.blend = std::stod(f[6]);
    rec.spec.lambda = std::stod(f[7]);
    rec.pos_text = f[8];
    rec.neg_text = f[9];
    rec.has_neg = !rec.neg_text.empty();
    rec.seed = std::stoull(f[10]);
    rec.steps = std::stoi(f[11]);
    rec.positive = std::stoi(f[12]);
    rec.negative = std::stoi(f[13]);
    rec.quality = std::stod(f[14]);
    return rec;
}

void write_sweep_csv(const std::string& path, const SweepResult& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
    out << "variant,alpha,beta,phi,tau,blend,lambda,pos,neg,quality\n";
    for (const SweepRow& r : rows) {
        out << variant_name(r.spec.variant) << "," << format_fixed6(r.spec.alpha) << ","
            << format_fixed6(r.spec.beta) << "," << format_fixed6(r.spec.phi) << ","
            << format_fixed6(r.spec.tau) << "," << format_fixed6(r.spec.blend) << ","
            << format_fixed6(r.spec.lambda) << "," << format_fixed6(r.pos) << ","
            << format_fixed6(r.neg) << "," << format_fixed6(r.quality) << "\n";
    }
}

SweepResult read_sweep_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_sweep_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_sweep_csv: empty file " + path);
    SweepResult rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 10) {
            throw std::runtime_error("read_sweep_csv: malformed row '" + line + "'");
        }
        SweepRow r;
        r.spec.variant = variant_from_string(f[0]);
        r.spec.alpha = std::stod(f[1]);
        r.spec.beta = std::stod(f[2]);
        r.spec.phi = std::stod(f[3]);
        r.spec.tau = std::stod(f[4]);
        r.spec.blend = std::stod(f[5]);
        r.spec.lambda = std::stod(f[6]);
        r.pos = std::stod(f[7]);
        r.neg = std::stod(f[8]);
        r.quality = std::stod(f[9]);
        rows.push_back(r);
    }
    return rows;
}

std::vector<PromptPair> make_eval_suite(std::size_t n, std::uint64_t seed) {
    static const char* shape_words[3] = {"square", "circle", "cross"};
    static const char* color_words[3] = {"red", "green", "blue"};
    Rng rng(seed);
    std::vector<PromptPair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const char* s = shape_words[i % 3];
        const char* c = color_words[(i / 3) % 3];
        const std::uint64_t wording = rng.next_below(2);
        PromptPair pp;
        pp.pos_text = wording == 0 ? std::string("a ") + s : std::string(s) + " of any color";
        pp.neg_text = c;
        pp.pos = parse_prompt(pp.pos_text);
        pp.neg = parse_prompt(pp.neg_text);
        pairs.push_back(std::move(pp));
    }
    return pairs;
}

AlphaCalibration calibrate_vsf_alpha(const ToyModel& m, const std::vector<PromptPair>& pairs,
                                     const std::vector<std::uint64_t>& seeds, double beta,
                                     int sample_steps, int jobs, int grid_points,
                                     double alpha_max, double pos_slack) {
    if (grid_points < 2) throw std::invalid_argument("calibrate_vsf_alpha: need >= 2 grid points");
    AlphaCalibration cal;
    GuidanceSpec none;
    none.variant = Variant::None;
    cal.none = score_suite(m, pairs, none, seeds, sample_steps, jobs);

    for (int i = 0; i < grid_points; ++i) {
        const double alpha =
            alpha_max * static_cast<double>(i) / static_cast<double>(grid_points - 1);
        GuidanceSpec spec;
        spec.variant = Variant::Vsf;
        spec.alpha = alpha;
        spec.beta = beta;
        cal.grid.emplace_back(alpha, score_suite(m, pairs, spec, seeds, sample_steps, jobs));
    }

    double best_neg = -1.0;
    bool found = false;
    for (const auto& [alpha, s] : cal.grid) {
        if (s.positive >= cal.none.positive - pos_slack && s.negative > best_neg) {
            best_neg = s.negative;
            cal.alpha = alpha;
            found = true;
        }
    }
    if (!found) {
        for (const auto& [alpha, s] : cal.grid) {
            if (s.negative > best_neg) {
                best_neg = s.negative;
                cal.alpha = alpha;
            }
        }
    }
    return cal;
}

} // namespace vsf
