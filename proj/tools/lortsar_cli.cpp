// lortsar: command-line driver for the low-rank compression workflow.
//
//   gen       synthetic skeleton dataset -> <out>/train.lrsk, <out>/test.lrsk
//   train     train a model from scratch  -> <out>/model.lrts, <out>/history.csv
//   compress  SVD-truncate layer groups   -> <out>/model.lrts, <out>/report.csv
//   sweep     evaluate a grid of plans    -> <out>/sweep.csv
//   finetune  recover accuracy            -> <out>/model.lrts, <out>/history.csv
//   eval      top-1 accuracy of a weights file on a dataset
//   info      per-layer summary of a weights file
//
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <lortsar/compress.hpp>
#include <lortsar/data.hpp>
#include <lortsar/finetune.hpp>
#include <lortsar/model.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lortsar;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Options of one subcommand, settable from flags or from a JSON --config file.
// Flags win over file values; unknown file keys are rejected.
class OptionSet {
public:
    explicit OptionSet(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "JSON file with option values (flags override)");
    }

    template <class T>
    CLI::Option* add(const std::string& name, T& target, const std::string& help) {
        CLI::Option* opt = app_->add_option("--" + name, target, help)->capture_default_str();
        entries_.push_back({name, opt, [&target](const json& j) { target = j.get<T>(); },
                            [&target] { return json(target); }});
        return opt;
    }

    void resolve() {
        if (config_path_.empty()) return;
        std::ifstream in(config_path_);
        if (!in) throw UsageError("cannot read config file " + config_path_);
        json cfg;
        try {
            cfg = json::parse(in);
        } catch (const json::exception& e) {
            throw UsageError("config file " + config_path_ + ": " + e.what());
        }
        if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
        for (const auto& [key, value] : cfg.items()) {
            auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == key; });
            if (it == entries_.end()) throw UsageError("unknown config key \"" + key + "\"");
            if (it->option->count() > 0) continue;
            try {
                it->load(value);
            } catch (const json::exception& e) {
                throw UsageError("config key \"" + key + "\": " + e.what());
            }
        }
    }

    json resolved() const {
        json out = json::object();
        for (const auto& e : entries_) out[e.name] = e.dump();
        return out;
    }

private:
    struct Entry {
        std::string name;
        CLI::Option* option;
        std::function<void(const json&)> load;
        std::function<json()> dump;
    };

    CLI::App* app_;
    std::string config_path_;
    std::vector<Entry> entries_;
};

void echo_config(const std::string& command, const OptionSet& opts, const std::string& out_dir) {
    const json cfg = opts.resolved();
    std::cout << "config " << command << ' ' << cfg.dump() << '\n';
    if (!out_dir.empty()) {
        std::ofstream f(fs::path(out_dir) / (command + "_config.json"));
        f << cfg.dump(2) << '\n';
    }
}

template <class F>
void as_usage(F&& f) {
    try {
        f();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const std::out_of_range& e) {
        throw UsageError(e.what());
    }
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) throw UsageError("--out is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ContainerError(ContainerErrorKind::Io, "cannot create " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError(ContainerErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw ContainerError(ContainerErrorKind::Io, "write failed: " + path.string());
}

Dataset load_split_dir(const std::string& dir) {
    if (dir.empty()) throw UsageError("--data is required");
    return {load_dataset(fs::path(dir) / "train.lrsk"), load_dataset(fs::path(dir) / "test.lrsk")};
}

std::size_t max_label(const std::vector<SkeletonSample>& samples) {
    std::size_t m = 0;
    for (const auto& s : samples) m = std::max(m, s.label);
    return m;
}

void print_history(const TrainHistory& h) {
    for (const auto& r : h.records) {
        std::cout << "epoch " << r.epoch << " lr " << to_text(r.lr) << " loss " << r.train_loss << " top1 "
                  << r.test_top1 << '\n';
    }
    std::cout << "best epoch " << h.best_epoch << " top1 " << h.best_top1 << '\n';
}

struct ScheduleFlags {
    double lr;
    double decay = 0.1;
    std::vector<std::size_t> milestones;
    std::size_t warmup = 0;
    std::size_t epochs;
    std::size_t batch = 16;
    double momentum = 0.0;
    std::uint64_t seed = 1;

    void add_to(OptionSet& o) {
        o.add("lr", lr, "base learning rate");
        o.add("decay", decay, "learning-rate decay factor applied at each milestone");
        o.add("milestones", milestones, "comma-separated epochs where the rate decays")->delimiter(',');
        o.add("warmup", warmup, "linear warm-up epochs");
        o.add("epochs", epochs, "number of epochs");
        o.add("batch", batch, "mini-batch size");
        o.add("momentum", momentum, "SGD momentum (0 = plain SGD)");
        o.add("seed", seed, "shuffling seed (epoch e uses seed + e)");
    }

    TrainConfig to_config() const {
        TrainConfig c;
        c.base_lr = lr;
        c.decay_factor = decay;
        c.milestones = milestones;
        c.warmup_epochs = warmup;
        c.epochs = epochs;
        c.batch_size = batch;
        c.momentum = momentum;
        c.seed = seed;
        return c;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-rank (SVD) compression of a skeleton-sequence attention classifier"};
    app.require_subcommand(1);

    // gen
    DatasetSpec gen_spec;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen", "generate a synthetic skeleton-action dataset");
    OptionSet gen_opts(gen);
    gen_opts.add("classes", gen_spec.classes, "number of action classes");
    gen_opts.add("train-per-class", gen_spec.train_per_class, "training samples per class");
    gen_opts.add("test-per-class", gen_spec.test_per_class, "test samples per class");
    gen_opts.add("frames", gen_spec.frames, "frames per sample (T)");
    gen_opts.add("joints", gen_spec.joints, "joints per frame (J)");
    gen_opts.add("noise", gen_spec.noise_sigma, "Gaussian noise standard deviation");
    gen_opts.add("seed", gen_spec.seed, "generator seed");
    gen_opts.add("out", gen_out, "output directory");

    // train
    ModelConfig model_cfg;
    ScheduleFlags train_sched{.lr = 0.05, .milestones = {20}, .epochs = 30};
    std::string train_data, train_out;
    auto* train_cmd = app.add_subcommand("train", "train a model from scratch");
    OptionSet train_opts(train_cmd);
    train_opts.add("data", train_data, "dataset directory (train.lrsk, test.lrsk)");
    train_opts.add("out", train_out, "output directory");
    train_opts.add("d-model", model_cfg.d_model, "model width");
    train_opts.add("heads", model_cfg.heads, "attention heads per block");
    train_opts.add("blocks", model_cfg.blocks, "number of attention blocks");
    train_opts.add("init-seed", model_cfg.seed, "weight initialization seed");
    train_sched.add_to(train_opts);

    // compress
    std::string comp_weights, comp_plan, comp_out;
    std::size_t comp_frames = 0;
    auto* comp = app.add_subcommand("compress", "replace layer groups with rank-k SVD factor pairs");
    OptionSet comp_opts(comp);
    comp_opts.add("weights", comp_weights, "input weights file (.lrts)");
    comp_opts.add("plan", comp_plan, "plan, e.g. \"q=1,k=3\" (groups q,k,v,o,embed,head)");
    comp_opts.add("frames", comp_frames, "sequence length for FLOP accounting (0 = model frames)");
    comp_opts.add("out", comp_out, "output directory");

    // sweep
    std::string sweep_weights, sweep_data, sweep_grid, sweep_out;
    auto* sweep = app.add_subcommand("sweep", "evaluate a grid of plans without fine-tuning");
    OptionSet sweep_opts(sweep);
    sweep_opts.add("weights", sweep_weights, "input weights file (.lrts)");
    sweep_opts.add("data", sweep_data, "dataset directory");
    sweep_opts.add("grid", sweep_grid, "grid file: one plan per line, '#' comments, \"full\" for the identity plan");
    sweep_opts.add("out", sweep_out, "output directory");

    // finetune
    ScheduleFlags ft_sched{.lr = 0.005, .milestones = {5, 15, 25, 40}, .epochs = 50};
    std::string ft_weights, ft_data, ft_out;
    auto* ft = app.add_subcommand("finetune", "fine-tune a (compressed) model");
    OptionSet ft_opts(ft);
    ft_opts.add("weights", ft_weights, "input weights file (.lrts)");
    ft_opts.add("data", ft_data, "dataset directory");
    ft_opts.add("out", ft_out, "output directory");
    ft_sched.add_to(ft_opts);

    // eval
    std::string eval_weights, eval_data, eval_split = "test";
    auto* eval = app.add_subcommand("eval", "top-1 accuracy on a dataset split");
    OptionSet eval_opts(eval);
    eval_opts.add("weights", eval_weights, "weights file (.lrts)");
    eval_opts.add("data", eval_data, "dataset directory");
    eval_opts.add("split", eval_split, "train or test")->check(CLI::IsMember({"train", "test"}));

    // info
    std::string info_weights;
    auto* info = app.add_subcommand("info", "summarize a weights file");
    OptionSet info_opts(info);
    info_opts.add("weights", info_weights, "weights file (.lrts)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (*gen) {
            gen_opts.resolve();
            as_usage([&] { validate(gen_spec); });
            ensure_dir(gen_out);
            echo_config("gen", gen_opts, gen_out);
            const Dataset d = generate_dataset(gen_spec);
            save_dataset(fs::path(gen_out) / "train.lrsk", d.train);
            save_dataset(fs::path(gen_out) / "test.lrsk", d.test);
            std::cout << "train samples " << d.train.size() << '\n' << "test samples " << d.test.size() << '\n';
        } else if (*train_cmd) {
            train_opts.resolve();
            const TrainConfig tc = train_sched.to_config();
            as_usage([&] { validate(tc); });
            const Dataset d = load_split_dir(train_data);
            if (d.train.empty() || d.test.empty()) throw std::runtime_error("dataset splits must be non-empty");
            model_cfg.frames = d.train.front().frames;
            model_cfg.joints = d.train.front().joints;
            model_cfg.classes = std::max(max_label(d.train), max_label(d.test)) + 1;
            as_usage([&] { validate(model_cfg); });
            ensure_dir(train_out);
            echo_config("train", train_opts, train_out);
            SkeletonModel m = build_model(model_cfg);
            std::cout << "untrained top1 " << evaluate(m, d.test) << '\n';
            auto r = train(std::move(m), d.train, d.test, tc);
            print_history(r.history);
            save_model(fs::path(train_out) / "model.lrts", r.model);
            write_text(fs::path(train_out) / "history.csv", history_csv(r.history));
            std::cout << "final top1 " << r.history.records.back().test_top1 << '\n';
        } else if (*comp) {
            comp_opts.resolve();
            CompressionPlan plan;
            as_usage([&] { plan = parse_plan(comp_plan); });
            if (comp_weights.empty()) throw UsageError("--weights is required");
            ensure_dir(comp_out);
            echo_config("compress", comp_opts, comp_out);
            const SkeletonModel m = load_model(comp_weights);
            CompressionResult r;
            try {
                r = compress_model(m, plan, comp_frames);
            } catch (const std::invalid_argument& e) {
                throw std::runtime_error(e.what());
            }
            save_model(fs::path(comp_out) / "model.lrts", r.model);
            write_text(fs::path(comp_out) / "report.csv", report_csv(r.report));
            std::cout << "plan " << (plan.is_identity() ? std::string("full") : render(plan)) << '\n'
                      << "params " << r.report.params_before << " -> " << r.report.params_after << '\n'
                      << "flops@T=" << r.report.reference_frames << ' ' << r.report.flops_before << " -> "
                      << r.report.flops_after << '\n'
                      << "timestamp " << r.report.timestamp << '\n';
        } else if (*sweep) {
            sweep_opts.resolve();
            if (sweep_weights.empty() || sweep_grid.empty()) throw UsageError("--weights and --grid are required");
            std::ifstream gf(sweep_grid);
            if (!gf) throw ContainerError(ContainerErrorKind::Io, "cannot open grid file " + sweep_grid);
            std::vector<CompressionPlan> grid;
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(gf, line)) {
                ++lineno;
                if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
                std::size_t off = 0;
                std::string_view body = detail::trim(line, off);
                if (body.empty()) continue;
                try {
                    grid.push_back(detail::lower(body) == "full" ? CompressionPlan{} : parse_plan(body));
                } catch (const ParseError& e) {
                    throw UsageError(sweep_grid + ":" + std::to_string(lineno) + ": " + e.what());
                }
            }
            if (grid.empty()) throw UsageError("grid file holds no plans");
            ensure_dir(sweep_out);
            echo_config("sweep", sweep_opts, sweep_out);
            const SkeletonModel m = load_model(sweep_weights);
            const Dataset d = load_split_dir(sweep_data);
            std::cout << "baseline top1 " << evaluate(m, d.test) << '\n';
            std::vector<SweepRow> rows;
            try {
                rows = rank_sweep(m, d.test, grid);
            } catch (const std::invalid_argument& e) {
                throw std::runtime_error(e.what());
            }
            for (const auto& r : rows) std::cout << r.plan << " params " << r.params << " top1 " << r.top1 << '\n';
            write_text(fs::path(sweep_out) / "sweep.csv", sweep_csv(rows));
        } else if (*ft) {
            ft_opts.resolve();
            const TrainConfig tc = ft_sched.to_config();
            as_usage([&] { validate(tc); });
            if (ft_weights.empty()) throw UsageError("--weights is required");
            ensure_dir(ft_out);
            echo_config("finetune", ft_opts, ft_out);
            SkeletonModel m = load_model(ft_weights);
            const Dataset d = load_split_dir(ft_data);
            std::cout << "before fine-tuning top1 " << evaluate(m, d.test) << '\n';
            auto r = train(std::move(m), d.train, d.test, tc);
            print_history(r.history);
            save_model(fs::path(ft_out) / "model.lrts", r.model);
            write_text(fs::path(ft_out) / "history.csv", history_csv(r.history));
            std::cout << "final top1 " << r.history.records.back().test_top1 << '\n';
        } else if (*eval) {
            eval_opts.resolve();
            if (eval_weights.empty()) throw UsageError("--weights is required");
            echo_config("eval", eval_opts, "");
            const SkeletonModel m = load_model(eval_weights);
            const Dataset d = load_split_dir(eval_data);
            const auto& split = eval_split == "train" ? d.train : d.test;
            std::cout << "samples " << split.size() << '\n' << "top1 " << evaluate(m, split) << '\n';
        } else if (*info) {
            info_opts.resolve();
            if (info_weights.empty()) throw UsageError("--weights is required");
            echo_config("info", info_opts, "");
            const SkeletonModel m = load_model(info_weights);
            const auto& c = m.config;
            std::cout << "joints " << c.joints << " frames " << c.frames << " d_model " << c.d_model << " heads "
                      << c.heads << " blocks " << c.blocks << " classes " << c.classes << '\n';
            std::size_t low_rank_layers = 0;
            for_each_layer(m, [&](const std::string& name, LayerGroup g, const Linear& l) {
                const bool lr = is_low_rank(l);
                low_rank_layers += lr ? 1 : 0;
                std::cout << name << ' ' << group_name(g) << ' ' << (lr ? "lowrank" : "dense") << ' '
                          << in_features(l) << 'x' << out_features(l) << " rank "
                          << (lr ? std::to_string(std::get<LowRankLinear>(l).rank()) : std::string("full"))
                          << " params " << parameter_count(l) << '\n';
            });
            std::cout << "low-rank layers " << low_rank_layers << '\n'
                      << "total params " << count_params(m) << '\n'
                      << "flops@T=" << c.frames << ' ' << count_flops(m, c.frames) << '\n';
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ContainerError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
    return exit_ok;
}
