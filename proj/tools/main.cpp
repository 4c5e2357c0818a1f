#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vsf/checkpoint.hpp"
#include "vsf/config.hpp"
#include "vsf/eval.hpp"
#include "vsf/ppm.hpp"
#include "vsf/toy.hpp"
#include "vsf/util.hpp"

namespace fs = std::filesystem;
using namespace vsf;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ToyModelConfig model_config(const Config& cfg) {
    ToyModelConfig mc;
    mc.model_dim = cfg.model_dim;
    mc.heads = cfg.model_heads;
    mc.layers = cfg.model_layers;
    mc.patch = cfg.model_patch;
    mc.mlp_hidden = cfg.model_mlp_hidden;
    return mc;
}

std::string run_dir(const Config& cfg, const std::string& command, const std::string& extra) {
    const std::string key = cfg.canonical() + "|" + command + "|" + extra;
    const std::string dir = cfg.out_dir + "/" + command + "-" + hex8(fnv1a64(key));
    fs::create_directories(dir);
    return dir;
}

int cmd_train(const Config& cfg, const std::string& ckpt_flag, int dump_dataset) {
    const std::string dir = run_dir(cfg, "train", "");
    const std::string ckpt = ckpt_flag.empty() ? dir + "/checkpoint.vsft" : ckpt_flag;

    std::cout << "dataset: " << cfg.data_size << " examples (seed " << cfg.data_seed << ")\n";
    const std::vector<Example> data = make_dataset(cfg.data_size, cfg.data_seed);
    if (dump_dataset > 0) {
        const std::string ddir = dir + "/dataset";
        fs::create_directories(ddir);
        const int n = std::min<int>(dump_dataset, static_cast<int>(data.size()));
        for (int i = 0; i < n; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "img%05d.ppm", i);
            write_image_ppm(ddir + "/" + name, data[static_cast<std::size_t>(i)].image);
        }
        std::cout << "dumped " << n << " dataset images to " << ddir << "\n";
    }

    ToyModel model = make_toy_model(model_config(cfg), cfg.train_seed);
    std::cout << "model: " << parameter_count(model) << " parameters, training "
              << cfg.train_steps << " steps (batch " << cfg.train_batch << ", lr "
              << cfg.train_lr << ")\n";
    TrainConfig tc;
    tc.steps = cfg.train_steps;
    tc.lr = cfg.train_lr;
    tc.batch = cfg.train_batch;
    tc.seed = cfg.train_seed + 1;
    const TrainResult result = train(model, data, tc);

    save_checkpoint(ckpt, model);
    std::ofstream loss(dir + "/loss.csv");
    loss << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
        loss << (i + 1) << "," << format_exact(result.loss_curve[i]) << "\n";
    }
    if (!result.loss_curve.empty()) {
        std::cout << "first loss " << result.loss_curve.front() << ", last loss "
                  << result.loss_curve.back() << "\n";
    }
    std::cout << "checkpoint: " << ckpt << "\nloss curve: " << dir << "/loss.csv\n";
    return 0;
}

int cmd_sample(const Config& cfg, const std::string& ckpt_flag, const std::string& variant_str,
               const std::string& pos_text, const std::optional<std::string>& neg_text,
               const GuidanceSpec& spec, int steps, std::uint64_t seed) {
    const Variant variant = spec.variant;
    const bool needs_neg = variant == Variant::Nasa || variant == Variant::Nag ||
                           variant == Variant::Vsf || variant == Variant::Wef;
    if (needs_neg && !neg_text.has_value()) {
        throw UsageError("sample: --neg is required for variant '" + variant_str + "'");
    }
    const Prompt pos = parse_prompt(pos_text);
    std::optional<Prompt> neg;
    if (neg_text) neg = parse_prompt(*neg_text);

    const std::string ckpt = ckpt_flag.empty() ? cfg.checkpoint : ckpt_flag;
    const ToyModel model = load_checkpoint(ckpt);

    RunRecord rec = euler_sample(model, pos, neg, spec, steps, seed);
    score_record(rec);

    const std::string extra = variant_str + "|" + pos_text + "|" + neg_text.value_or("<none>") +
                              "|" + format_exact(spec.alpha) + "|" + format_exact(spec.beta) +
                              "|" + format_exact(spec.phi) + "|" + format_exact(spec.tau) + "|" +
                              format_exact(spec.blend) + "|" + format_exact(spec.lambda) + "|" +
                              std::to_string(steps) + "|" + std::to_string(seed);
    const std::string dir = run_dir(cfg, "sample", extra);
    write_image_ppm(dir + "/image.ppm", rec.image);
    write_run_record_csv(dir + "/record.csv", rec);
    if (variant == Variant::Vsf) {
        write_neg_attn_csv(dir + "/neg_attn.csv", rec);
    }
    std::cout << "run " << rec.run_id << ": positive=" << rec.positive
              << " negative=" << rec.negative << " quality=" << format_fixed6(rec.quality)
              << "\noutputs: " << dir << "\n";
    return 0;
}

int cmd_sweep(const Config& cfg, const std::string& ckpt_flag, const std::string& variant_str,
              std::size_t runs, std::uint64_t sampler_seed) {
    const Variant variant = variant_from_string(variant_str);
    const std::string ckpt = ckpt_flag.empty() ? cfg.checkpoint : ckpt_flag;
    const ToyModel model = load_checkpoint(ckpt);
    const std::vector<PromptPair> suite = make_eval_suite(cfg.suite_size, cfg.suite_seed);

    const SweepResult rows = sweep(model, suite, variant, runs, sampler_seed, cfg.sampling_seeds,
                                   cfg.sampling_steps, cfg.jobs);
    const std::string dir = run_dir(cfg, "sweep",
                                    variant_str + "|" + std::to_string(runs) + "|" +
                                        std::to_string(sampler_seed));
    write_sweep_csv(dir + "/sweep.csv", rows);
    std::cout << rows.size() << " runs over " << suite.size() << " prompt pairs x "
              << cfg.sampling_seeds.size() << " seeds\nsweep table: " << dir << "/sweep.csv\n";
    return 0;
}

int cmd_frontier(const Config& cfg, const std::string& in_path, const std::string& y_key) {
    if (y_key != "pos" && y_key != "quality") {
        throw UsageError("frontier: --y must be 'pos' or 'quality'");
    }
    const SweepResult rows = read_sweep_csv(in_path);
    const SweepResult frontier =
        pareto_frontier(rows, y_key == "pos" ? FrontierY::Positive : FrontierY::Quality);
    const std::string dir = run_dir(cfg, "frontier", in_path + "|" + y_key);
    write_sweep_csv(dir + "/frontier.csv", frontier);
    std::cout << "critical points (neg desc, " << y_key << " strictly improving):\n";
    for (const SweepRow& r : frontier) {
        std::cout << "  neg=" << format_fixed6(r.neg) << " pos=" << format_fixed6(r.pos)
                  << " quality=" << format_fixed6(r.quality) << " ["
                  << variant_name(r.spec.variant) << "]\n";
    }
    std::cout << "frontier: " << dir << "/frontier.csv\n";
    return 0;
}

int cmd_attnmap(const Config& cfg, const std::string& record_dir) {
    RunRecord rec = read_run_record_csv(record_dir + "/record.csv");
    if (rec.spec.variant != Variant::Vsf) {
        throw std::runtime_error("attnmap: record " + record_dir + " was not produced with VSF");
    }
    read_neg_attn_csv(record_dir + "/neg_attn.csv", rec);
    rec.layers = rec.neg_attn.empty() ? 1
                                      : static_cast<int>(rec.neg_attn.size()) / rec.steps;
    const std::string dir = run_dir(cfg, "attnmap", record_dir);
    dump_attn_maps(rec, dir);
    std::cout << rec.neg_attn.size() << " maps -> " << dir << "\n";
    return 0;
}

int cmd_cost(const std::string& variant_str, std::size_t ni, std::size_t np, std::size_t nn,
             std::size_t dim, std::size_t heads, std::size_t layers) {
    const Variant variant = variant_from_string(variant_str);
    const AttnCost base = attn_cost(Variant::None, ni, np, nn, dim, heads, layers);
    const AttnCost c = attn_cost(variant, ni, np, nn, dim, heads, layers);
    const double ratio = base.attn_macs == 0
                             ? 1.0
                             : static_cast<double>(c.attn_macs) /
                                   static_cast<double>(base.attn_macs);
    std::printf("variant      attn_macs  forwards/step  mac_ratio_vs_none\n");
    std::printf("%-10s %12llu %10d %16.4f\n", "none", base.attn_macs, base.forwards_per_step,
                1.0);
    std::printf("%-10s %12llu %10d %16.4f\n", variant_str.c_str(), c.attn_macs,
                c.forwards_per_step, ratio);
    std::printf("forward count %d, ratio %.1f vs baseline\n", c.forwards_per_step, ratio);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vsf: negative-prompt guidance lab for few-step flow matching"};
    app.require_subcommand(1);
    argv = app.ensure_utf8(argv);

    std::string config_path;
    app.add_option("--config", config_path, "configuration file (key=value lines)");

    // train
    auto* t = app.add_subcommand("train", "train the toy model; writes checkpoint + loss.csv");
    int t_steps = 0, t_batch = 0, t_dump = 0;
    double t_lr = 0.0;
    std::uint64_t t_seed = 0, t_data_seed = 0;
    std::size_t t_data_size = 0;
    std::string t_ckpt, t_out;
    t->add_option("--steps", t_steps, "optimizer steps")->capture_default_str();
    t->add_option("--lr", t_lr, "learning rate")->capture_default_str();
    t->add_option("--batch", t_batch, "batch size")->capture_default_str();
    t->add_option("--seed", t_seed, "training seed")->capture_default_str();
    t->add_option("--data-size", t_data_size, "dataset size")->capture_default_str();
    t->add_option("--data-seed", t_data_seed, "dataset seed")->capture_default_str();
    t->add_option("--ckpt", t_ckpt, "checkpoint output path (default <run>/checkpoint.vsft)");
    t->add_option("--out", t_out, "output directory root")->capture_default_str();
    t->add_option("--dump-dataset", t_dump, "write the first N dataset images as PPM")
        ->capture_default_str();

    // sample
    auto* s = app.add_subcommand("sample", "generate one image; writes PPM + run record");
    std::string s_variant, s_pos, s_neg, s_ckpt, s_out;
    bool s_neg_given = false;
    double s_alpha = 0, s_beta = 0, s_phi = 0, s_tau = 0, s_blend = 0, s_lambda = 0;
    int s_steps = 0;
    std::uint64_t s_seed = 0;
    s->add_option("--variant", s_variant, "none|cfg|nasa|nag|vsf|wef")->required();
    s->add_option("--pos", s_pos, "positive prompt")->required();
    auto* s_neg_opt = s->add_option("--neg", s_neg, "negative prompt (may be empty)");
    s->add_option("--alpha", s_alpha, "VSF/NASA/WEF scale")->capture_default_str();
    s->add_option("--beta", s_beta, "VSF attention bias")->capture_default_str();
    s->add_option("--phi", s_phi, "NAG extrapolation scale")->capture_default_str();
    s->add_option("--tau", s_tau, "NAG norm cap")->capture_default_str();
    s->add_option("--blend", s_blend, "NAG blend weight")->capture_default_str();
    s->add_option("--lambda", s_lambda, "CFG guidance scale")->capture_default_str();
    s->add_option("--steps", s_steps, "Euler steps (1..64)")->capture_default_str();
    s->add_option("--seed", s_seed, "sampling seed")->capture_default_str();
    s->add_option("--ckpt", s_ckpt, "checkpoint path")->capture_default_str();
    s->add_option("--out", s_out, "output directory root")->capture_default_str();

    // sweep
    auto* w = app.add_subcommand("sweep", "hyperparameter sweep; writes sweep.csv");
    std::string w_variant, w_ckpt, w_out;
    std::size_t w_runs = 0, w_suite_size = 0;
    std::uint64_t w_sampler_seed = 42, w_suite_seed = 0;
    int w_jobs = 0, w_steps = 0;
    w->add_option("--variant", w_variant, "none|cfg|nasa|nag|vsf|wef")->required();
    w->add_option("--runs", w_runs, "number of sweep rows")->required();
    w->add_option("--sampler-seed", w_sampler_seed, "hyperparameter sampler seed")
        ->capture_default_str();
    w->add_option("--suite-size", w_suite_size, "prompt pairs in the suite")
        ->capture_default_str();
    w->add_option("--suite-seed", w_suite_seed, "suite wording seed")->capture_default_str();
    w->add_option("--steps", w_steps, "Euler steps per run")->capture_default_str();
    w->add_option("--jobs", w_jobs, "parallel workers")->capture_default_str();
    w->add_option("--ckpt", w_ckpt, "checkpoint path")->capture_default_str();
    w->add_option("--out", w_out, "output directory root")->capture_default_str();

    // frontier
    auto* f = app.add_subcommand("frontier", "extract critical points from a sweep CSV");
    std::string f_in, f_y = "pos", f_out;
    f->add_option("--in", f_in, "sweep CSV path")->required();
    f->add_option("--y", f_y, "pos|quality")->capture_default_str();
    f->add_option("--out", f_out, "output directory root")->capture_default_str();

    // attnmap
    auto* a = app.add_subcommand("attnmap", "export attention maps from a VSF run record");
    std::string a_record, a_out;
    a->add_option("--record", a_record, "sample run directory")->required();
    a->add_option("--out", a_out, "output directory root")->capture_default_str();

    // cost
    auto* c = app.add_subcommand("cost", "closed-form attention cost table");
    std::string c_variant;
    std::size_t c_ni = 0, c_np = 0, c_nn = 0, c_dim = 32, c_heads = 4, c_layers = 4;
    c->add_option("--variant", c_variant, "none|cfg|nasa|nag|vsf|wef")->required();
    c->add_option("--ni", c_ni, "image token count")->required();
    c->add_option("--np", c_np, "positive prompt token count")->required();
    c->add_option("--nn", c_nn, "negative prompt token count")->required();
    c->add_option("--dim", c_dim, "model width")->capture_default_str();
    c->add_option("--heads", c_heads, "attention heads")->capture_default_str();
    c->add_option("--layers", c_layers, "block count")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = load_config(config_path);

        if (app.got_subcommand(t)) {
            if (t->count("--steps")) cfg.train_steps = t_steps;
            if (t->count("--lr")) cfg.train_lr = t_lr;
            if (t->count("--batch")) cfg.train_batch = t_batch;
            if (t->count("--seed")) cfg.train_seed = t_seed;
            if (t->count("--data-size")) cfg.data_size = t_data_size;
            if (t->count("--data-seed")) cfg.data_seed = t_data_seed;
            if (t->count("--out")) cfg.out_dir = t_out;
            return cmd_train(cfg, t_ckpt, t_dump);
        }
        if (app.got_subcommand(s)) {
            const Variant variant = variant_from_string(s_variant);
            GuidanceSpec spec = cfg.guidance_defaults(variant);
            if (s->count("--alpha")) spec.alpha = s_alpha;
            if (s->count("--beta")) spec.beta = s_beta;
            if (s->count("--phi")) spec.phi = s_phi;
            if (s->count("--tau")) spec.tau = s_tau;
            if (s->count("--blend")) spec.blend = s_blend;
            if (s->count("--lambda")) spec.lambda = s_lambda;
            if (s->count("--out")) cfg.out_dir = s_out;
            const int steps = s->count("--steps") ? s_steps : cfg.sampling_steps;
            const std::uint64_t seed = s->count("--seed")
                                           ? s_seed
                                           : (cfg.sampling_seeds.empty() ? 0
                                                                         : cfg.sampling_seeds[0]);
            s_neg_given = s_neg_opt->count() > 0;
            return cmd_sample(cfg, s_ckpt, s_variant, s_pos,
                              s_neg_given ? std::optional<std::string>(s_neg) : std::nullopt,
                              spec, steps, seed);
        }
        if (app.got_subcommand(w)) {
            if (w->count("--suite-size")) cfg.suite_size = w_suite_size;
            if (w->count("--suite-seed")) cfg.suite_seed = w_suite_seed;
            if (w->count("--steps")) cfg.sampling_steps = w_steps;
            if (w->count("--jobs")) cfg.jobs = w_jobs;
            if (w->count("--out")) cfg.out_dir = w_out;
            return cmd_sweep(cfg, w_ckpt, w_variant, w_runs, w_sampler_seed);
        }
        if (app.got_subcommand(f)) {
            if (f->count("--out")) cfg.out_dir = f_out;
            return cmd_frontier(cfg, f_in, f_y);
        }
        if (app.got_subcommand(a)) {
            if (a->count("--out")) cfg.out_dir = a_out;
            return cmd_attnmap(cfg, a_record);
        }
        if (app.got_subcommand(c)) {
            return cmd_cost(c_variant, c_ni, c_np, c_nn, c_dim, c_heads, c_layers);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
