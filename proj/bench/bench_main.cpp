// Benchmark driver: OpenMP field prediction against the serial dense
// reference, joint-vs-independent fit scaling, and the correspondence-search
// cost trend. Emits CSVs alongside a console table.

#include <omp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "mgprl/benchmarks.hpp"
#include "mgprl/mogp.hpp"
#include "mgprl/reference_gp.hpp"
#include "mgprl/rng.hpp"

using namespace mgprl;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

struct FieldRow {
    int gamma = 0;
    int cells = 0;
    double parallel_s = 0.0;
    double serial_reference_s = 0.0;
    double max_abs_diff = 0.0;
};

// predict_field (OpenMP, factorized) vs the serial dense reference on the
// same model and grid. The diff column doubles as a correctness check.
std::vector<FieldRow> field_prediction_benchmark(const std::vector<int>& gammas, int outputs,
                                                 uint64_t seed) {
    std::vector<FieldRow> rows;
    for (const int gamma : gammas) {
        Rng rng(derive_seed(seed, "field-bench", static_cast<uint64_t>(gamma)));
        std::vector<std::string> ids;
        std::vector<RssiSample> samples;
        for (int o = 0; o < outputs; ++o) ids.push_back("ap" + std::to_string(o + 1));
        for (int i = 0; i < gamma; ++i) {
            const Vec2 x{rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
            for (int o = 0; o < outputs; ++o)
                samples.push_back({x, ids[static_cast<size_t>(o)],
                                   -45.0 + 7.0 * std::sin(0.5 * x.x + o) + rng.gaussian(0.0, 1.0)});
        }
        FitOptions opts;
        opts.restarts = 1;
        opts.max_iters = 40;
        const MogpModel model = fit(samples, ids, opts);
        const auto problem = reference::problem_from_model(model);
        const GridSpec grid({0.0, 0.0}, 0.25, 40, 40);

        FieldRow row;
        row.gamma = gamma;
        row.cells = grid.cell_count();

        ScalarField mean, var;
        predict_field(model, grid, ids[0], mean, var);  // warm up threads and caches
        double t0 = now_seconds();
        predict_field(model, grid, ids[0], mean, var);
        row.parallel_s = now_seconds() - t0;

        t0 = now_seconds();
        ScalarField mean_ref, var_ref;
        reference::dense_predict_field(problem, grid, 0, mean_ref, var_ref);
        row.serial_reference_s = now_seconds() - t0;

        for (size_t k = 0; k < mean.values.size(); ++k) {
            row.max_abs_diff = std::max(row.max_abs_diff,
                                        std::abs(mean.values[k] - mean_ref.values[k]));
            row.max_abs_diff =
                std::max(row.max_abs_diff, std::abs(var.values[k] - var_ref.values[k]));
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    std::string out_dir = "bench_out";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--out" && i + 1 < argc) out_dir = argv[++i];
    }
    fs::create_directories(out_dir);

    std::cout << "threads: " << omp_get_max_threads() << "\n\n";

    {
        std::cout << "field prediction, " << 1600 << " cells (parallel vs serial reference)\n";
        std::cout << "gamma  parallel_s  serial_s  speedup  max_abs_diff\n";
        const auto rows = field_prediction_benchmark({50, 100, 200}, 4, 11);
        std::ofstream csv(fs::path(out_dir) / "field_prediction.csv");
        csv << "gamma,cells,parallel_s,serial_reference_s,max_abs_diff\n";
        for (const auto& r : rows) {
            std::printf("%5d  %10.4f  %8.4f  %7.2f  %12.3e\n", r.gamma, r.parallel_s,
                        r.serial_reference_s, r.serial_reference_s / r.parallel_s, r.max_abs_diff);
            csv << r.gamma << ',' << r.cells << ',' << r.parallel_s << ',' << r.serial_reference_s
                << ',' << r.max_abs_diff << '\n';
        }
        std::cout << "\n";
    }

    {
        std::cout << "fit scaling, m=8 (joint co-regionalized vs 8 independent fits)\n";
        std::cout << "gamma  joint_s  independent_s  ratio\n";
        const auto rows = fit_scaling_benchmark({50, 100, 150, 200}, 8, 30, 11);
        std::ofstream csv(fs::path(out_dir) / "fit_scaling.csv");
        csv << fit_scaling_csv(rows);
        for (const auto& r : rows)
            std::printf("%5d  %7.3f  %13.3f  %5.2f\n", r.gamma, r.joint_seconds,
                        r.independent_seconds, r.ratio);
        std::cout << "\n";
    }

    {
        std::cout << "correspondence search cost vs total AP estimates\n";
        std::cout << "M_total  seconds\n";
        const auto rows = align_scaling_benchmark({4, 8, 16, 32, 64}, 1, 20, 11);
        std::ofstream csv(fs::path(out_dir) / "align_scaling.csv");
        csv << align_scaling_csv(rows);
        for (const auto& r : rows) std::printf("%7d  %.6f\n", r.total_estimates, r.seconds);
    }

    std::cout << "\ncsv written to " << out_dir << "\n";
    return 0;
}
