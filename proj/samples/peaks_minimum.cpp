// Train a small Peaks surrogate, tighten its bounds, and locate its global
// minimum with branch and bound. Compares the result with the true minimum.

#include <iostream>

#include <reluopt/milp.hpp>
#include <reluopt/scaling.hpp>
#include <reluopt/trainer.hpp>

using namespace reluopt;

int main() {
    const Dataset data = generate(Benchmark::Peaks, 20000, 1);
    TrainConfig cfg;
    cfg.hidden_layers = 2;
    cfg.width = 25;
    cfg.epochs = 60;
    cfg.lambda = 1e-4;
    cfg.seed = 1;
    const TrainResult trained = train(data, cfg);
    std::cout << "test MAPE " << format_fixed(trained.report.test_mape, 3) << "\n";

    const ScaleResult scaled = scale_network(trained.network);
    std::cout << "l1 norm " << format_fixed(scaled.solution.objective_before, 2) << " -> "
              << format_fixed(scaled.solution.objective_after, 2) << "\n";

    const BoundsSet ia = ia_bounds(scaled.network);
    const ObbtReport tight = obbt(scaled.network, ia);
    std::cout << "mean bound width " << format_fixed(mean_width(ia), 3) << " (IA) -> "
              << format_fixed(mean_width(tight.bounds), 3) << " (OBBT), stable neurons "
              << format_fixed(classify(tight.bounds).stable_fraction(), 3) << "\n";

    BnbOptions opt;
    opt.time_limit = 20.0;
    const BnbResult r = solve_min(scaled.network, tight.bounds, opt);
    const KnownMinimum& truth = benchmark_info(Benchmark::Peaks).minima.front();
    std::cout << to_string(r.status) << " after " << r.nodes << " nodes\n"
              << "surrogate minimum " << format_fixed(r.objective, 4) << " at (" << format_fixed(r.x[0], 3) << ", "
              << format_fixed(r.x[1], 3) << ")\n"
              << "Peaks there        " << format_fixed(evaluate(Benchmark::Peaks, r.x[0], r.x[1]), 4) << "\n"
              << "true minimum       " << format_fixed(truth.value, 4) << " at (" << format_fixed(truth.point[0], 3)
              << ", " << format_fixed(truth.point[1], 3) << ")\n";
}
