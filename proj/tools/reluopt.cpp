// reluopt: command-line driver for training, bound tightening, scaling,
// region enumeration, global minimization and the experiment grid.
//
// Exit codes: 0 success, 1 usage, 2 stage failure, 3 verification failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <reluopt/experiment.hpp>

namespace fs = std::filesystem;
using namespace reluopt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitStage = 2;
constexpr int kExitVerify = 3;

struct Globals {
    std::uint64_t seed = 0;
    double time_limit = 300.0;
    int threads = 1;
    std::string out = "out";
};

fs::path out_dir(const Globals& g) {
    const char* env = std::getenv("RELUOPT_OUT");
    fs::path p = (env && *env) ? fs::path(env) : fs::path(g.out);
    fs::create_directories(p);
    return p;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    write_file(p.string(), j.dump(1) + "\n");
    std::cout << "wrote " << p.string() << "\n";
}

Vector parse_point(const std::string& s) {
    std::vector<double> v;
    std::stringstream is(s);
    std::string cell;
    while (std::getline(is, cell, ',')) {
        try {
            v.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw InvalidInput("cannot parse coordinate '" + cell + "'");
        }
    }
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

BoundsSet bounds_or_ia(const Network& net, const std::string& file) {
    if (file.empty()) return ia_bounds(net);
    const nlohmann::json j = nlohmann::json::parse(read_file(file));
    BoundsSet b = bounds_from_json(j.contains("bounds") ? j["bounds"] : j);
    check_bounds_shape(net, b);
    return b;
}

void print_bounds_summary(const BoundsSet& b) {
    const StabilityReport r = classify(b);
    std::cout << to_string(b.provenance) << ": mean width " << format_double(mean_width(b)) << ", stable "
              << r.active + r.inactive << "/" << r.total() << " (" << format_fixed(r.stable_fraction(), 3) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reluopt: MILP-based optimization over trained ReLU networks"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--time-limit", g.time_limit, "Time limit per solve in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for experiment rows")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--out", g.out, "Output directory (RELUOPT_OUT overrides)")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a surrogate on a benchmark function");
    std::string function = "peaks", activation = "relu";
    int samples = 0;
    TrainConfig tc;
    train_cmd->add_option("--function", function, "peaks, ackley or himmelblau")->capture_default_str();
    train_cmd->add_option("--samples", samples, "Sample count (0: benchmark default)")->capture_default_str();
    train_cmd->add_option("--depth", tc.hidden_layers, "Hidden layers")->capture_default_str();
    train_cmd->add_option("--width", tc.width, "Neurons per hidden layer")->capture_default_str();
    train_cmd->add_option("--activation", activation, "relu, relu2, relu5")->capture_default_str();
    train_cmd->add_option("--lambda", tc.lambda, "l1 regularization weight")->capture_default_str();
    train_cmd->add_option("--dropout", tc.dropout_rate, "Dropout rate")->capture_default_str();
    train_cmd->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();

    // scale
    auto* scale_cmd = app.add_subcommand("scale", "Minimize the l1 norm by positive neuron rescaling");
    std::string net_file;
    scale_cmd->add_option("--net", net_file, "Network JSON")->required()->check(CLI::ExistingFile);

    // bounds
    auto* bounds_cmd = app.add_subcommand("bounds", "Interval-arithmetic pre-activation bounds");
    bool scaled_flag = false;
    bounds_cmd->add_option("--net", net_file, "Network JSON")->required()->check(CLI::ExistingFile);
    bounds_cmd->add_flag("--scaled", scaled_flag, "Record the network as a rescaled one");

    // obbt
    auto* obbt_cmd = app.add_subcommand("obbt", "Optimization-based bound tightening");
    std::string bounds_file;
    obbt_cmd->add_option("--net", net_file, "Network JSON")->required()->check(CLI::ExistingFile);
    obbt_cmd->add_option("--bounds", bounds_file, "Starting bounds (default: IA)")->check(CLI::ExistingFile);

    // regions
    auto* regions_cmd = app.add_subcommand("regions", "Enumerate linear regions of a 2-input ReLU network");
    int max_regions = 200000;
    regions_cmd->add_option("--net", net_file, "Network JSON")->required()->check(CLI::ExistingFile);
    regions_cmd->add_option("--max-regions", max_regions, "Region cap")->check(CLI::PositiveNumber)->capture_default_str();

    // solve
    auto* solve_cmd = app.add_subcommand("solve", "Globally minimize the network output");
    bool want_trace = false;
    solve_cmd->add_option("--net", net_file, "Network JSON")->required()->check(CLI::ExistingFile);
    solve_cmd->add_option("--bounds", bounds_file, "Bounds JSON (default: IA)")->check(CLI::ExistingFile);
    solve_cmd->add_flag("--trace", want_trace, "Write the branch-and-bound trace as CSV");
    int node_limit = 0;
    solve_cmd->add_option("--node-limit", node_limit, "Node budget (0: none)")->check(CLI::NonNegativeNumber);

    // adversarial
    auto* adv_cmd = app.add_subcommand("adversarial", "Maximize h_k - h_i around a point");
    std::string x0_str;
    double delta = 0.0;
    int label_k = 1, label_i = 0;
    adv_cmd->add_option("--net", net_file, "Network JSON")->required()->check(CLI::ExistingFile);
    adv_cmd->add_option("--x0", x0_str, "Comma-separated point")->required();
    adv_cmd->add_option("--delta", delta, "Infinity-norm radius")->required()->check(CLI::NonNegativeNumber);
    adv_cmd->add_option("--k", label_k, "Adversarial label (0-based)")->capture_default_str();
    adv_cmd->add_option("--i", label_i, "True label (0-based)")->capture_default_str();
    adv_cmd->add_option("--node-limit", node_limit, "Node budget (0: none)")->check(CLI::NonNegativeNumber);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Run the hyperparameter grid");
    std::string spec_file;
    bool unsafe_grid = false, no_scale = false, no_obbt = false, no_regions = false, no_solve = false;
    exp_cmd->add_option("--spec", spec_file, "Experiment spec JSON (default: desk grid)")->check(CLI::ExistingFile);
    exp_cmd->add_flag("--unsafe-grid", unsafe_grid, "Allow values outside the standard hyperparameter vocabulary");
    exp_cmd->add_flag("--no-scale", no_scale, "Skip the scaling stage");
    exp_cmd->add_flag("--no-obbt", no_obbt, "Skip the OBBT stage");
    exp_cmd->add_flag("--no-regions", no_regions, "Skip region enumeration");
    exp_cmd->add_flag("--no-solve", no_solve, "Skip global minimization");
    exp_cmd->add_option("--node-limit", node_limit, "Node budget per solve (0: none)")->check(CLI::NonNegativeNumber);

    // verify
    auto* verify_cmd = app.add_subcommand("verify", "Replay invariants on stored experiment artifacts");
    int verify_samples = 2000;
    verify_cmd->add_option("--samples", verify_samples, "Sampled inputs per bounds file")->capture_default_str();

    // report
    auto* report_cmd = app.add_subcommand("report", "Print the aggregate table of a finished experiment");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        const fs::path out = out_dir(g);
        if (train_cmd->parsed()) {
            tc.activation = parse_activation_name(activation);
            tc.seed = g.seed;
            const Benchmark f = parse_benchmark(function);
            const Dataset data = generate(f, samples ? samples : benchmark_info(f).default_samples, g.seed);
            const TrainResult r = train(data, tc);
            save_network(r.network, (out / "network.json").string());
            std::cout << "wrote " << (out / "network.json").string() << "\n";
            write_json(out / "train.json", to_json(r.report));
            std::cout << "test MAPE " << format_double(r.report.test_mape) << "\n";
        } else if (scale_cmd->parsed()) {
            const ScaleResult r = scale_network(load_network(net_file));
            save_network(r.network, (out / "scaled-network.json").string());
            std::cout << "wrote " << (out / "scaled-network.json").string() << "\n";
            write_json(out / "scaling.json", to_json(r.solution));
            std::cout << "l1 " << format_double(r.solution.objective_before) << " -> "
                      << format_double(r.solution.objective_after) << "\n";
        } else if (bounds_cmd->parsed()) {
            BoundsSet b = ia_bounds(load_network(net_file));
            if (scaled_flag) b.provenance = Provenance::ScaledIA;
            print_bounds_summary(b);
            write_json(out / (scaled_flag ? "bounds-scaled-ia.json" : "bounds-ia.json"), to_json(b));
        } else if (obbt_cmd->parsed()) {
            const Network net = load_network(net_file);
            ObbtOptions oo;
            oo.time_budget = g.time_limit;
            const ObbtReport r = obbt(net, bounds_or_ia(net, bounds_file), oo);
            for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
            print_bounds_summary(r.bounds);
            const bool scaled = r.bounds.provenance == Provenance::ScaledOBBT;
            write_json(out / (scaled ? "bounds-scaled-obbt.json" : "bounds-obbt.json"), to_json(r.bounds));
            write_json(out / "obbt.json", to_json(r));
        } else if (regions_cmd->parsed()) {
            const Network net = load_network(net_file);
            EnumerateOptions eo;
            eo.max_regions = max_regions;
            const RegionAtlas atlas = enumerate(net, eo);
            for (const auto& w : atlas.warnings) std::cerr << "warning: " << w << "\n";
            write_json(out / "atlas.json", to_json(atlas));
            write_file((out / "regions.svg").string(), render_svg(atlas, net));
            std::cout << "wrote " << (out / "regions.svg").string() << "\n"
                      << atlas.region_count() << " regions" << (atlas.complete ? "" : " (incomplete)") << "\n";
        } else if (solve_cmd->parsed()) {
            const Network net = load_network(net_file);
            BnbOptions bo;
            bo.time_limit = g.time_limit;
            bo.record_trace = want_trace;
            bo.node_limit = node_limit;
            const BnbResult r = solve_min(net, bounds_or_ia(net, bounds_file), bo);
            write_json(out / "solve.json", to_json(r));
            if (want_trace) write_file((out / "trace.csv").string(), trace_csv(r));
            std::cout << to_string(r.status) << " objective " << format_double(r.objective) << " nodes " << r.nodes
                      << "\n";
        } else if (adv_cmd->parsed()) {
            const Network net = load_network(net_file);
            BnbOptions bo;
            bo.time_limit = g.time_limit;
            bo.node_limit = node_limit;
            const BnbResult r = solve_adversarial(net, parse_point(x0_str), delta, label_k, label_i, bo);
            write_json(out / "adversarial.json", to_json(r));
            std::cout << to_string(r.status) << " objective " << format_double(r.objective)
                      << (r.status == BnbStatus::Optimal && r.objective < 0 ? " (robust)" : "") << "\n";
        } else if (exp_cmd->parsed()) {
            ExperimentSpec spec = spec_file.empty() ? ExperimentSpec{} : spec_from_json(nlohmann::json::parse(read_file(spec_file)));
            if (app.get_option("--time-limit")->count()) spec.time_limit = g.time_limit;
            if (exp_cmd->get_option("--node-limit")->count()) spec.node_limit = node_limit;
            spec.stages.scale = spec.stages.scale && !no_scale;
            spec.stages.obbt = spec.stages.obbt && !no_obbt;
            spec.stages.regions = spec.stages.regions && !no_regions;
            spec.stages.solve = spec.stages.solve && !no_solve;
            ExperimentOptions eo;
            eo.out = out.string();
            eo.threads = g.threads;
            eo.unsafe_grid = unsafe_grid;
            eo.log = [](const std::string& m) { std::cerr << m << "\n"; };
            const ExperimentReport rep = run_experiment(spec, eo);
            std::cout << format_comparisons(rep.aggregate) << rep.stats.rows << " rows, " << rep.stats.failed
                      << " failed, " << rep.stats.computed << " stages computed, " << rep.stats.cache_hits
                      << " reused\n";
            if (rep.stats.failed) return kExitStage;
        } else if (verify_cmd->parsed()) {
            VerifyOptions vo;
            vo.samples = verify_samples;
            const VerifyReport rep = verify_outputs(out.string(), vo);
            if (rep.rows == 0) throw InvalidInput("no experiment rows under " + out.string());
            for (const auto& f : rep.failures) std::cerr << "FAIL " << f << "\n";
            std::cout << rep.rows << " rows, " << rep.checks << " checks, " << rep.failures.size() << " failures\n";
            if (!rep.ok()) return kExitVerify;
        } else if (report_cmd->parsed()) {
            const auto rows = rows_from_json(nlohmann::json::parse(read_file((out / "report.json").string())));
            std::cout << format_comparisons(comparisons(rows));
        }
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const VerificationFailure& e) {
        std::cerr << "verification failed: " << e.what() << "\n";
        return kExitVerify;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
    return 0;
}
