// tritransnet command line: train / eval / infer / ablate / metrics / synth.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tritransnet/trainer.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

ttn::TrainConfig build_config(const std::string& preset, const std::string& config_path,
                              const std::vector<std::string>& sets) {
    ttn::TrainConfig cfg = ttn::preset_train(preset.empty() ? "desk" : preset);
    if (!config_path.empty())
        cfg = ttn::parse_train_config(ttn::parse_config_file(config_path), cfg);
    for (const std::string& s : sets) {  // flags override config-file keys
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ttn::UsageError("--set expects key=value, got '" + s + "'");
        ttn::apply_config_key(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.model.validate();
    return cfg;
}

void print_config_summary(const ttn::TrainConfig& cfg, std::ostream& os) {
    os << "config: input=" << cfg.model.input_size << " ct=" << cfg.model.ct
       << " k=" << cfg.model.k << " L=" << cfg.model.num_layers << " D=" << cfg.model.embed_dim
       << " N=" << cfg.model.tokens() << " heads=" << cfg.model.num_heads << " lr=" << cfg.lr
       << " batch=" << cfg.batch << " epochs=" << cfg.epochs << " seed=" << cfg.seed << "\n";
}

std::vector<ttn::Sample<Scalar>> load_dataset(const std::string& manifest_path, long size,
                                              bool need_gt) {
    std::vector<ttn::Sample<Scalar>> out;
    for (const auto& e : ttn::load_manifest(manifest_path)) {
        if (need_gt && e.gt.empty())
            throw ttn::DataError(manifest_path + ": entry for " + e.rgb + " has no ground truth");
        out.push_back(ttn::load_sample<Scalar>(e.rgb, e.depth, e.gt, size));
    }
    if (out.empty()) throw ttn::DataError(manifest_path + ": no entries");
    return out;
}

ttn::metrics::GrayMap read_graymap(const std::string& path, bool binarize) {
    ttn::Image img = ttn::read_pnm(path);
    if (img.channels != 1) throw ttn::DataError(path + ": expected grayscale (P5) image");
    ttn::metrics::GrayMap g;
    g.h = img.h;
    g.w = img.w;
    g.v.resize(img.pix.size());
    for (size_t i = 0; i < img.pix.size(); ++i) {
        g.v[i] = (double)img.pix[i] / (double)img.maxval;
        if (binarize) g.v[i] = g.v[i] >= 0.5 ? 1.0 : 0.0;
    }
    return g;
}

void write_graymap(const std::string& path, const ttn::Tensor<Scalar>& chw) {
    long h = chw.dim(1), w = chw.dim(2);
    std::vector<std::uint8_t> gray((size_t)(h * w));
    for (long i = 0; i < h * w; ++i) {
        double v = (double)chw.vec()[i];
        long q = (long)std::llround(v * 255.0);
        gray[i] = (std::uint8_t)std::min(std::max(q, 0L), 255L);
    }
    ttn::write_pgm8(path, w, h, gray);
}

int run(int argc, char** argv) {
    CLI::App app{"tritransnet: RGB-D salient object detection"};
    app.require_subcommand(1);

    std::string preset, config_path, data_path, test_path, checkpoint = "checkpoint.ttnc";
    std::string resume, out_dir = ".", pred_dir, gt_dir, log_path, pr_csv;
    std::vector<std::string> sets, variants;
    bool dry_run = false, machine = false;
    unsigned long long synth_seed = 0;
    long synth_n = 8, synth_size = 64;

    auto add_config_opts = [&](CLI::App* c) {
        c->add_option("--preset", preset, "desk|paper");
        c->add_option("--config", config_path, "key = value config file");
        c->add_option("--set", sets, "override a config key (key=value, repeatable)");
    };

    CLI::App* tr = app.add_subcommand("train", "train a model");
    add_config_opts(tr);
    tr->add_option("--data", data_path, "training manifest");
    tr->add_option("--checkpoint", checkpoint, "checkpoint output path");
    tr->add_option("--resume", resume, "checkpoint to resume from");
    tr->add_option("--log", log_path, "loss log file (default stdout)");
    tr->add_flag("--dry-run", dry_run, "print the resolved config and exit");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    ev->add_option("--data", data_path, "evaluation manifest")->required();
    ev->add_flag("--machine", machine, "machine-readable `dataset metric value` lines");
    ev->add_option("--pr", pr_csv, "write the PR curve to this CSV file");

    CLI::App* in = app.add_subcommand("infer", "write saliency maps for a manifest");
    in->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    in->add_option("--data", data_path, "manifest (ground truth column optional)")->required();
    in->add_option("--out", out_dir, "output directory");

    CLI::App* ab = app.add_subcommand("ablate", "train and compare variants");
    add_config_opts(ab);
    ab->add_option("--data", data_path, "training manifest")->required();
    ab->add_option("--test", test_path, "held-out manifest")->required();
    ab->add_option("--variant", variants,
                   "name:key=value,... with keys ttem|k|decoder|fusion (repeatable)");
    ab->add_option("--log", log_path, "loss log file (default stdout)");

    CLI::App* me = app.add_subcommand("metrics", "score prediction maps against ground truth");
    me->add_option("--pred", pred_dir, "directory of predicted maps")->required();
    me->add_option("--gt", gt_dir, "directory of ground-truth maps")->required();
    me->add_flag("--machine", machine, "machine-readable output");
    me->add_option("--pr", pr_csv, "write the PR curve to this CSV file");

    CLI::App* sy = app.add_subcommand("synth", "generate a synthetic dataset");
    sy->add_option("--seed", synth_seed, "generator seed");
    sy->add_option("--n", synth_n, "sample count");
    sy->add_option("--size", synth_size, "square image size (multiple of 32)");
    sy->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw ttn::DataError("cannot write log: " + log_path);
        log = &log_file;
    }

    if (tr->parsed()) {
        ttn::TrainConfig cfg = build_config(preset, config_path, sets);
        print_config_summary(cfg, std::cout);
        if (dry_run) return 0;
        if (data_path.empty()) throw ttn::UsageError("train: --data manifest required");
        auto samples = load_dataset(data_path, cfg.model.input_size, true);
        ttn::train(cfg, samples, checkpoint, *log, resume);
        std::cout << "checkpoint written: " << checkpoint << "\n";
    } else if (ev->parsed()) {
        ttn::TrainConfig cfg;
        auto model = ttn::load_model<Scalar>(checkpoint, cfg);
        auto samples = load_dataset(data_path, cfg.model.input_size, true);
        ttn::metrics::Report r = ttn::evaluate(model, samples);
        if (machine) ttn::metrics::write_machine(std::cout, r, "eval");
        else std::cout << ttn::metrics::format_table(r, "eval");
        if (!pr_csv.empty()) {
            std::ofstream f(pr_csv);
            if (!f) throw ttn::DataError("cannot write PR curve: " + pr_csv);
            ttn::metrics::write_pr_csv(f, r);
        }
    } else if (in->parsed()) {
        ttn::TrainConfig cfg;
        auto model = ttn::load_model<Scalar>(checkpoint, cfg);
        fs::create_directories(out_dir);
        for (const auto& e : ttn::load_manifest(data_path)) {
            ttn::Sample<Scalar> s =
                ttn::load_sample<Scalar>(e.rgb, e.depth, "", cfg.model.input_size);
            std::string stem = fs::path(e.rgb).stem().string();
            std::string out = (fs::path(out_dir) / (stem + "_pred.pgm")).string();
            write_graymap(out, ttn::predict(model, s));
            std::cout << out << "\n";
        }
    } else if (ab->parsed()) {
        ttn::TrainConfig cfg = build_config(preset, config_path, sets);
        std::vector<ttn::AblationVariant> grid;
        for (const auto& v : variants) grid.push_back(ttn::parse_variant(v));
        if (grid.empty()) {
            std::cout << ttn::format_ablation({});
            return 0;
        }
        auto train_set = load_dataset(data_path, cfg.model.input_size, true);
        auto test_set = load_dataset(test_path, cfg.model.input_size, true);
        auto rows = ttn::ablate(cfg, grid, train_set, test_set, *log);
        std::cout << ttn::format_ablation(rows);
    } else if (me->parsed()) {
        ttn::metrics::Evaluator acc;
        std::vector<fs::path> gts;
        for (const auto& ent : fs::directory_iterator(gt_dir))
            if (ent.is_regular_file()) gts.push_back(ent.path());
        std::sort(gts.begin(), gts.end());
        if (gts.empty()) throw ttn::DataError(gt_dir + ": no ground-truth images");
        for (const auto& g : gts) {
            fs::path p = fs::path(pred_dir) / g.filename();
            if (!fs::exists(p))
                throw ttn::DataError("missing prediction for " + g.filename().string() + " in " +
                                     pred_dir);
            acc.add(read_graymap(p.string(), false), read_graymap(g.string(), true));
        }
        ttn::metrics::Report r = acc.report();
        if (machine) ttn::metrics::write_machine(std::cout, r, "metrics");
        else std::cout << ttn::metrics::format_table(r, "metrics");
        if (!pr_csv.empty()) {
            std::ofstream f(pr_csv);
            if (!f) throw ttn::DataError("cannot write PR curve: " + pr_csv);
            ttn::metrics::write_pr_csv(f, r);
        }
    } else if (sy->parsed()) {
        std::string manifest = ttn::synth_generate<Scalar>(synth_seed, synth_n, synth_size, out_dir);
        std::cout << manifest << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ttn::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ttn::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ttn::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ttn::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
