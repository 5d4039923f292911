// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <lortsar/compress.hpp>
#include <lortsar/data.hpp>
#include <lortsar/finetune.hpp>
#include <lortsar/model.hpp>
#include <lortsar/svd.hpp>

#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

using namespace lortsar;
using lortsar::test::max_fd_error;
using lortsar::test::random_matrix;
using lortsar::test::weighted_sum;

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(const char* id, const char* title, const Verdict& v) {
    std::cout << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << title << "  [" << v.detail << "]" << std::endl;
    if (!v.pass) ++failures;
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(3);
    os << x;
    return os.str();
}

const std::vector<std::pair<std::size_t, std::size_t>> svd_shapes{{4, 4}, {8, 12}, {12, 8}, {1, 7}};

std::uint32_t matrix_seed(std::size_t shape, std::size_t i) { return static_cast<std::uint32_t>(1000 * shape + i); }

double orthogonality_error(const Matrix& q) {
    // max |QᵀQ − I|
    const Matrix g = test::naive_matmul(transpose(q), q);
    return max_abs_diff(g, Matrix::identity(q.cols()));
}

Matrix diag_product(const SvdResult& s, std::size_t rows, std::size_t cols) {
    Matrix sig(rows, cols);
    for (std::size_t i = 0; i < s.sigma.size(); ++i) sig(i, i) = s.sigma[i];
    return test::naive_matmul(test::naive_matmul(s.u, sig), s.vt);
}

// --- AC1 / AC2 ----------------------------------------------------------------

Verdict ac1_svd_suite() {
    const auto t0 = Clock::now();
    double worst_orth = 0.0, worst_recon = 0.0;
    bool ordered = true;
    for (std::size_t si = 0; si < svd_shapes.size(); ++si) {
        const auto [m, n] = svd_shapes[si];
        for (std::size_t i = 0; i < 100; ++i) {
            const Matrix a = random_matrix(m, n, matrix_seed(si, i));
            const SvdResult s = svd(a);
            worst_orth = std::max({worst_orth, orthogonality_error(s.u), orthogonality_error(transpose(s.vt))});
            worst_recon = std::max(worst_recon, max_abs_diff(diag_product(s, m, n), a));
            for (std::size_t k = 0; k < s.sigma.size(); ++k) {
                if (s.sigma[k] < 0.0 || (k > 0 && s.sigma[k] > s.sigma[k - 1])) ordered = false;
            }
        }
    }
    const double t = seconds_since(t0);
    return {worst_orth <= 1e-9 && worst_recon <= 1e-9 && ordered && t < 5.0,
            "orth " + fmt(worst_orth) + ", recon " + fmt(worst_recon) + ", sorted " + (ordered ? "yes" : "no") +
                ", " + fmt(t) + " s"};
}

Verdict ac2_eckart_young() {
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t si = 0; si < svd_shapes.size(); ++si) {
        const auto [m, n] = svd_shapes[si];
        for (std::size_t i = 0; i < 100; ++i) {
            const Matrix a = random_matrix(m, n, matrix_seed(si, i));
            const SvdResult s = svd(a);
            for (std::size_t k = 1; k <= std::min(m, n); ++k) {
                const TruncatedFactors f = truncate_to_factors(s, k);
                const double actual = frobenius_norm(a - test::naive_matmul(f.w1, f.w2));
                double tail = 0.0;
                for (std::size_t j = k; j < s.sigma.size(); ++j) tail += s.sigma[j] * s.sigma[j];
                worst = std::max(worst, std::abs(actual - std::sqrt(tail)));
                ++cases;
            }
        }
    }
    return {worst <= 1e-9, std::to_string(cases) + " (matrix, k) cases, max |err − tail| " + fmt(worst)};
}

// --- AC3 ----------------------------------------------------------------------

Verdict ac3_parameter_formula() {
    const Matrix w = random_matrix(216, 216, 3);
    const DenseLinear dense{w, std::nullopt};
    const TruncatedFactors f = truncate_to_factors(svd(w), 3);
    const LowRankLinear lr{f.w1, f.w2, std::nullopt};
    const std::size_t p_dense = dense.parameter_count();
    const std::size_t p_lr = lr.parameter_count();
    const bool shapes = f.w1.rows() == 216 && f.w1.cols() == 3 && f.w2.rows() == 3 && f.w2.cols() == 216;
    return {p_dense == 46656 && p_lr == 1296 && p_lr == 3 * (216 + 216) && shapes,
            "dense " + std::to_string(p_dense) + ", rank-3 " + std::to_string(p_lr)};
}

// --- shared pipeline (AC4, AC6, AC8, AC9) --------------------------------------

TrainConfig baseline_schedule() { return TrainConfig{}; }

TrainConfig finetune_schedule() {
    TrainConfig c;
    c.base_lr = 0.005;
    c.decay_factor = 0.1;
    c.milestones = {5, 15, 25, 40};
    c.epochs = 50;
    return c;
}

struct PipelineRun {
    Dataset data;
    SkeletonModel baseline;
    double baseline_top1 = 0.0;
    SkeletonModel compressed;
    double compressed_top1 = 0.0;
    SkeletonModel finetuned;
    double finetuned_top1 = 0.0;
    double seconds = 0.0;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

// gen → train → compress "v=1" → finetune; every artifact is written to `dir`.
PipelineRun run_pipeline(const fs::path& dir) {
    const auto t0 = Clock::now();
    fs::remove_all(dir);
    fs::create_directories(dir);
    PipelineRun r;
    r.data = generate_dataset(DatasetSpec{});
    save_dataset(dir / "train.lrsk", r.data.train);
    save_dataset(dir / "test.lrsk", r.data.test);

    ModelConfig mc;
    const auto trained = train(build_model(mc), r.data.train, r.data.test, baseline_schedule());
    r.baseline = trained.model;
    r.baseline_top1 = trained.history.records.back().test_top1;
    save_model(dir / "baseline.lrts", r.baseline);
    write_text(dir / "train_history.csv", history_csv(trained.history));
    std::cout << "  baseline trained: top1 " << r.baseline_top1 << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;

    const auto comp = compress_model(r.baseline, parse_plan("v=1"));
    r.compressed = comp.model;
    r.compressed_top1 = evaluate(r.compressed, r.data.test);
    save_model(dir / "compressed.lrts", r.compressed);
    write_text(dir / "report.csv", report_csv(comp.report));
    std::cout << "  compressed v=1: top1 " << r.compressed_top1 << ", params " << comp.report.params_before << " -> "
              << comp.report.params_after << std::endl;

    const auto ft = train(r.compressed, r.data.train, r.data.test, finetune_schedule());
    r.finetuned = ft.model;
    r.finetuned_top1 = ft.history.records.back().test_top1;
    save_model(dir / "finetuned.lrts", r.finetuned);
    write_text(dir / "finetune_history.csv", history_csv(ft.history));
    r.seconds = seconds_since(t0);
    std::cout << "  fine-tuned: top1 " << r.finetuned_top1 << " (best " << ft.history.best_top1 << " at epoch "
              << ft.history.best_epoch << "), pipeline " << fmt(r.seconds) << " s" << std::endl;
    return r;
}

// --- AC4 ----------------------------------------------------------------------

Verdict ac4_full_rank_equivalence(const PipelineRun& run) {
    const SkeletonModel& m = run.baseline;
    CompressionPlan plan;
    for_each_layer(m, [&](const std::string&, LayerGroup g, const Linear& l) {
        const std::size_t k = std::min(in_features(l), out_features(l));
        plan[g] = plan[g] ? std::min(*plan[g], k) : k;
    });
    const auto full = compress_model(m, plan);
    std::size_t low_rank = 0;
    for_each_layer(full.model, [&](const std::string&, LayerGroup, const Linear& l) { low_rank += is_low_rank(l); });
    const Matrix a = forward(m, run.data.test);
    const Matrix b = forward(full.model, run.data.test);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < a.rows(); ++i) changed += argmax(a.row(i)) != argmax(b.row(i));
    const double diff = max_abs_diff(a, b);
    return {diff <= 1e-8 && changed == 0 && run.data.test.size() == 480 && low_rank == 2 + 2 * (4 * 3 + 1),
            render(plan) + ": max |Δlogit| " + fmt(diff) + ", changed predictions " + std::to_string(changed) + " / " +
                std::to_string(run.data.test.size())};
}

// --- AC5 ----------------------------------------------------------------------

double linear_check(Linear layer, Matrix x, std::uint32_t seed) {
    const Matrix r = random_matrix(x.rows(), out_features(layer), seed);
    LinearTape tape;
    linear_forward(x, layer, tape);
    auto g = backward(tape, layer, r);
    auto f = [&] { return weighted_sum(linear_forward(x, layer), r); };
    double worst = max_fd_error(x.values(), g.grad_in.values(), f);
    zip_params(layer, g.grad_params,
               [&](std::span<double> p, std::span<const double> a) { worst = std::max(worst, max_fd_error(p, a, f)); });
    return worst;
}

Verdict ac5_gradients() {
    const auto t0 = Clock::now();
    auto vec = [](std::size_t n, std::uint32_t seed) {
        const Matrix m = random_matrix(1, n, seed);
        return Vector(m.values().begin(), m.values().end());
    };
    std::map<std::string, double> worst;

    worst["dense"] = linear_check(DenseLinear{random_matrix(5, 4, 1), vec(4, 2)}, random_matrix(3, 5, 3), 4);
    worst["low-rank"] = linear_check(LowRankLinear{random_matrix(6, 2, 5), random_matrix(2, 5, 6), vec(5, 7)},
                                     random_matrix(4, 6, 8), 9);
    {
        Matrix a = random_matrix(3, 5, 10, -2.0, 2.0);
        const Matrix r = random_matrix(3, 5, 11);
        SoftmaxTape tape;
        softmax_rows(a, tape);
        const Matrix g = backward(tape, r);
        worst["softmax"] = max_fd_error(a.values(), g.values(), [&] { return weighted_sum(softmax_rows(a), r); });
    }
    {
        Matrix q = random_matrix(4, 3, 12), k = random_matrix(4, 3, 13), v = random_matrix(4, 2, 14);
        const Matrix r = random_matrix(4, 2, 15);
        AttentionTape tape;
        attention_forward(q, k, v, tape);
        const auto g = backward(tape, r);
        auto f = [&] { return weighted_sum(attention_forward(q, k, v), r); };
        worst["attention"] = std::max({max_fd_error(q.values(), g.q.values(), f),
                                       max_fd_error(k.values(), g.k.values(), f),
                                       max_fd_error(v.values(), g.v.values(), f)});
    }
    {
        MhsaBlock b;
        for (std::uint32_t h = 0; h < 2; ++h) {
            b.heads.push_back(AttentionHead{DenseLinear{random_matrix(6, 3, 20 + h), vec(3, 30 + h)},
                                            DenseLinear{random_matrix(6, 3, 40 + h), vec(3, 50 + h)},
                                            DenseLinear{random_matrix(6, 3, 60 + h), vec(3, 70 + h)}});
        }
        b.heads[1].v = LowRankLinear{random_matrix(6, 1, 80), random_matrix(1, 3, 81), vec(3, 82)};
        b.o = DenseLinear{random_matrix(6, 6, 83), vec(6, 84)};
        Matrix x = random_matrix(4, 6, 85);
        const Matrix r = random_matrix(4, 6, 86);
        MhsaTape tape;
        mhsa_forward(x, b, tape);
        auto g = backward(tape, b, r);
        auto f = [&] { return weighted_sum(mhsa_forward(x, b), r); };
        double w = max_fd_error(x.values(), g.grad_in.values(), f);
        zip_params(b, g.grad_params,
                   [&](std::span<double> p, std::span<const double> a) { w = std::max(w, max_fd_error(p, a, f)); });
        worst["mhsa"] = w;
    }
    {
        ModelConfig c;
        c.joints = 2;
        c.frames = 3;
        c.d_model = 4;
        c.heads = 2;
        c.blocks = 2;
        c.classes = 3;
        c.seed = 5;
        SkeletonModel m = build_model(c);
        std::uint32_t s = 90;
        for_each_layer(m, [&](const std::string&, LayerGroup, Linear& l) {
            std::visit(
                [&](auto& layer) {
                    if (layer.bias) *layer.bias = vec(layer.bias->size(), s++);
                },
                l);
        });
        m.blocks[0].o = compress_model(m, parse_plan("o=2")).model.blocks[0].o;
        Matrix x = random_matrix(c.frames, c.input_width(), 120);
        const Matrix r = random_matrix(1, c.classes, 121);
        ModelTape tape;
        forward_frames(m, x, tape);
        auto g = backward(tape, m, r);
        auto f = [&] { return weighted_sum(forward_frames(m, x), r); };
        double w = max_fd_error(x.values(), g.grad_in.values(), f);
        zip_params(m, g.grad_params,
                   [&](std::span<double> p, std::span<const double> a) { w = std::max(w, max_fd_error(p, a, f)); });
        worst["model"] = w;
    }
    const double t = seconds_since(t0);
    bool pass = t < 30.0;
    std::string detail;
    for (const auto& [name, err] : worst) {
        pass = pass && err <= (name == "model" ? 1e-4 : 1e-5);
        detail += name + " " + fmt(err) + ", ";
    }
    return {pass, detail + fmt(t) + " s"};
}

// --- AC6 ----------------------------------------------------------------------

Verdict ac6_recovery(const PipelineRun& run) {
    const bool ok = run.baseline_top1 >= 0.95 && run.compressed_top1 < run.baseline_top1 &&
                    run.finetuned_top1 >= run.baseline_top1 - 0.02 && run.seconds < 15 * 60;
    return {ok, "baseline " + fmt(run.baseline_top1) + ", v=1 " + fmt(run.compressed_top1) + ", fine-tuned " +
                    fmt(run.finetuned_top1) + ", " + fmt(run.seconds) + " s"};
}

// --- AC7 ----------------------------------------------------------------------

Verdict ac7_schedule() {
    TrainConfig c;
    c.base_lr = 0.0025;
    c.decay_factor = 0.1;
    c.milestones = {5, 25, 45, 65, 85};
    c.epochs = 105;
    const double expected[] = {0.0025, 0.00025, 0.000025, 0.0000025, 0.00000025, 0.000000025};
    std::size_t mismatches = 0;
    for (std::size_t e = 0; e < 105; ++e) {
        std::size_t n = 0;
        for (std::size_t m : c.milestones) n += m <= e;
        if (lr_at_epoch(c, e) != expected[n]) ++mismatches;
    }
    return {mismatches == 0, std::to_string(mismatches) + " of 105 epochs differ from the decimal values"};
}

// --- AC8 ----------------------------------------------------------------------

Verdict ac8_determinism(const fs::path& first, const fs::path& second) {
    run_pipeline(second);
    std::size_t files = 0, differ = 0;
    for (const auto& entry : fs::directory_iterator(first)) {
        ++files;
        if (slurp(entry.path()) != slurp(second / entry.path().filename())) {
            ++differ;
            std::cout << "  differs: " << entry.path().filename().string() << std::endl;
        }
    }
    return {files == 8 && differ == 0, std::to_string(files) + " artifacts compared, " + std::to_string(differ) + " differ"};
}

// --- AC9 ----------------------------------------------------------------------

Verdict ac9_sweep(const PipelineRun& run) {
    const SkeletonModel& m = run.baseline;
    std::vector<CompressionPlan> grid;
    for (std::size_t k : {1, 2, 3}) {
        CompressionPlan p;
        for (LayerGroup g : all_groups) p[g] = k;
        grid.push_back(p);
    }
    grid.push_back(CompressionPlan{}); // full

    std::map<std::string, double> prev;
    std::size_t increases = 0, recount_mismatches = 0;
    for (const auto& plan : grid) {
        const auto r = compress_model(m, plan);
        if (count_params(r.model) != r.report.params_after || count_params(m) != r.report.params_before ||
            count_params(decode_model(encode_model(r.model))) != r.report.params_after ||
            count_flops(r.model, m.config.frames) != r.report.flops_after) {
            ++recount_mismatches;
        }
        for (const auto& l : r.report.layers) {
            if (auto it = prev.find(l.name); it != prev.end() && l.recon_fro > it->second) ++increases;
            prev[l.name] = l.recon_fro;
        }
    }
    const auto rows = rank_sweep(m, run.data.test, grid);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].params != count_params(compress_model(m, grid[i]).model)) ++recount_mismatches;
    }
    return {increases == 0 && recount_mismatches == 0,
            std::to_string(prev.size()) + " layers, " + std::to_string(increases) + " error increases, " +
                std::to_string(recount_mismatches) + " recount mismatches"};
}

} // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "lortsar_acceptance";
    try {
        report("AC1", "SVD orthogonality and reconstruction", ac1_svd_suite());
        report("AC2", "Eckart-Young truncation error", ac2_eckart_young());
        report("AC3", "216x216 rank-3 parameter count", ac3_parameter_formula());

        std::cout << "  running pipeline (run 1)" << std::endl;
        const PipelineRun run = run_pipeline(root / "run1");
        report("AC4", "full-rank compression equivalence", ac4_full_rank_equivalence(run));
        report("AC5", "gradients vs central differences", ac5_gradients());
        report("AC6", "desk-scale compression and recovery", ac6_recovery(run));
        report("AC7", "step-decay schedule exactness", ac7_schedule());
        std::cout << "  running pipeline (run 2)" << std::endl;
        report("AC8", "pipeline determinism", ac8_determinism(root / "run1", root / "run2"));
        report("AC9", "rank-sweep monotonicity and recount", ac9_sweep(run));
    } catch (const std::exception& e) {
        std::cout << "acceptance aborted: " << e.what() << std::endl;
        fs::remove_all(root);
        return 1;
    }
    fs::remove_all(root);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
