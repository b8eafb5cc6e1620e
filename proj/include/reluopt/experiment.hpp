#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "benchfn.hpp"
#include "bounds.hpp"
#include "milp.hpp"
#include "regions.hpp"
#include "scaling.hpp"
#include "trainer.hpp"

namespace reluopt {

inline constexpr const char* kToolVersion = "1.0.0";

namespace detail {

inline std::string short_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace detail

/// "relu", "relu2", "relu5"; "reluM" for other clips.
inline std::string activation_name(const Activation& a) {
    if (a.type == ActivationType::ReLU) return "relu";
    if (a.type == ActivationType::ClippedReLU) {
        std::ostringstream os;
        os << "relu" << a.clip;
        return os.str();
    }
    return "identity";
}

inline Activation parse_activation_name(const std::string& s) {
    if (s == "relu") return Activation::relu();
    if (s.rfind("relu", 0) == 0 && s.size() > 4) {
        std::size_t used = 0;
        double m = 0.0;
        try {
            m = std::stod(s.substr(4), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == s.size() - 4 && m > 0.0 && std::isfinite(m)) return Activation::clipped(m);
    }
    throw InvalidInput("unknown activation '" + s + "' (expected relu, relu2, relu5)");
}

enum class Arm { IA, OBBT, ScaledIA, ScaledOBBT };
inline constexpr std::array<Arm, 4> kArms{Arm::IA, Arm::OBBT, Arm::ScaledIA, Arm::ScaledOBBT};

inline std::string arm_name(Arm a) {
    switch (a) {
        case Arm::IA: return "ia";
        case Arm::OBBT: return "obbt";
        case Arm::ScaledIA: return "scaled_ia";
        case Arm::ScaledOBBT: return "scaled_obbt";
    }
    return "?";
}

struct StageToggles {
    bool scale = true;
    bool obbt = true;
    bool regions = true;
    bool solve = true;
};

/// One network of the grid plus the analysis settings that affect its artifacts.
struct RowConfig {
    Benchmark function = Benchmark::Peaks;
    int samples = 0;
    int epochs = 300;
    int depth = 1;
    int width = 25;
    Activation activation = Activation::relu();
    double lambda = 0.0;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    double time_limit = 300.0;
    int node_limit = 0;
    int max_regions = 200000;

    [[nodiscard]] nlohmann::json canonical() const {
        return {{"function", benchmark_info(function).name},
                {"samples", samples},
                {"epochs", epochs},
                {"depth", depth},
                {"width", width},
                {"activation", activation_name(activation)},
                {"lambda", lambda},
                {"dropout", dropout},
                {"seed", seed},
                {"time_limit", time_limit},
                {"node_limit", node_limit},
                {"max_regions", max_regions},
                {"version", kToolVersion}};
    }

    /// Stable hash of the canonical JSON (keys sorted by nlohmann's map).
    [[nodiscard]] std::string hash() const { return to_hex(fnv1a64(canonical().dump())); }

    [[nodiscard]] TrainConfig train_config() const {
        TrainConfig c;
        c.hidden_layers = depth;
        c.width = width;
        c.activation = activation;
        c.lambda = lambda;
        c.dropout_rate = dropout;
        c.epochs = epochs;
        c.seed = seed;
        return c;
    }
};

struct ExperimentSpec {
    Benchmark function = Benchmark::Peaks;
    int samples = 0;  // 0: the benchmark's default sample count
    int epochs = 300;
    std::vector<int> depths{1, 2, 3, 4, 5};
    std::vector<int> widths{25};
    std::vector<std::string> activations{"relu"};
    std::vector<double> lambdas{0.0, 1e-5, 1e-4};
    std::vector<double> dropouts{0.0, 0.2};
    std::vector<std::uint64_t> seeds{0, 1};
    StageToggles stages;
    double time_limit = 300.0;
    int node_limit = 0;  // 0: none; set it for reports that are reproducible byte for byte
    int max_regions = 200000;

    /// Grid values outside the standard vocabulary need `unsafe`.
    void validate(bool unsafe = false) const {
        auto fail = [](const std::string& m) { throw InvalidInput("experiment spec: " + m); };
        if (depths.empty() || widths.empty() || activations.empty() || lambdas.empty() || dropouts.empty() ||
            seeds.empty())
            fail("every grid dimension needs at least one value");
        if (samples != 0 && samples < 10) fail("samples must be 0 (default) or >= 10");
        if (epochs < 1) fail("epochs must be >= 1");
        if (!(time_limit > 0.0)) fail("time_limit must be > 0");
        if (node_limit < 0) fail("node_limit must be >= 0");
        if (max_regions < 1) fail("max_regions must be >= 1");
        static const std::set<double> kLambdas{0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3};
        static const std::set<double> kDropouts{0.0, 0.1, 0.2};
        static const std::set<std::string> kActivations{"relu", "relu2", "relu5"};
        for (int d : depths) {
            if (d < 1) fail("depth must be >= 1");
            if (!unsafe && d > 10) fail("depth " + std::to_string(d) + " outside 1..10 (use --unsafe-grid)");
        }
        for (int w : widths) {
            if (w < 1) fail("width must be >= 1");
            if (!unsafe && w != 25 && w != 50) fail("width " + std::to_string(w) + " not in {25, 50} (use --unsafe-grid)");
        }
        for (const auto& a : activations) {
            parse_activation_name(a);
            if (!unsafe && !kActivations.count(a)) fail("activation " + a + " not in {relu, relu2, relu5} (use --unsafe-grid)");
        }
        for (double l : lambdas) {
            if (!(l >= 0.0) || !std::isfinite(l)) fail("lambda must be finite and >= 0");
            if (!unsafe && !kLambdas.count(l)) fail("lambda " + detail::short_number(l) + " not in {0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3} (use --unsafe-grid)");
        }
        for (double p : dropouts) {
            if (!(p >= 0.0 && p < 1.0)) fail("dropout must be in [0, 1)");
            if (!unsafe && !kDropouts.count(p)) fail("dropout " + detail::short_number(p) + " not in {0, 0.1, 0.2} (use --unsafe-grid)");
        }
    }

    [[nodiscard]] std::vector<RowConfig> rows() const {
        std::vector<RowConfig> out;
        const int n = samples ? samples : benchmark_info(function).default_samples;
        for (int d : depths)
            for (int w : widths)
                for (const auto& a : activations)
                    for (double l : lambdas)
                        for (double p : dropouts)
                            for (std::uint64_t s : seeds) {
                                RowConfig r;
                                r.function = function;
                                r.samples = n;
                                r.epochs = epochs;
                                r.depth = d;
                                r.width = w;
                                r.activation = parse_activation_name(a);
                                r.lambda = l;
                                r.dropout = p;
                                r.seed = s;
                                r.time_limit = time_limit;
                                r.node_limit = node_limit;
                                r.max_regions = max_regions;
                                out.push_back(r);
                            }
        return out;
    }
};

inline nlohmann::json to_json(const ExperimentSpec& s) {
    return {{"function", benchmark_info(s.function).name},
            {"samples", s.samples},
            {"epochs", s.epochs},
            {"depths", s.depths},
            {"widths", s.widths},
            {"activations", s.activations},
            {"lambdas", s.lambdas},
            {"dropouts", s.dropouts},
            {"seeds", s.seeds},
            {"stages",
             {{"scale", s.stages.scale}, {"obbt", s.stages.obbt}, {"regions", s.stages.regions}, {"solve", s.stages.solve}}},
            {"time_limit", s.time_limit},
            {"node_limit", s.node_limit},
            {"max_regions", s.max_regions}};
}

/// Missing keys keep their defaults.
inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
    ExperimentSpec s;
    try {
        if (!j.is_object()) throw ParseError("experiment spec: expected an object");
        static const std::set<std::string> known{"function", "samples", "epochs", "depths", "widths", "activations",
                                                 "lambdas", "dropouts", "seeds", "stages", "time_limit", "node_limit", "max_regions"};
        for (const auto& [k, v] : j.items())
            if (!known.count(k)) throw ParseError("experiment spec: unknown key '" + k + "'");
        if (j.contains("function")) s.function = parse_benchmark(j["function"].get<std::string>());
        if (j.contains("samples")) s.samples = j["samples"].get<int>();
        if (j.contains("epochs")) s.epochs = j["epochs"].get<int>();
        if (j.contains("depths")) s.depths = j["depths"].get<std::vector<int>>();
        if (j.contains("widths")) s.widths = j["widths"].get<std::vector<int>>();
        if (j.contains("activations")) s.activations = j["activations"].get<std::vector<std::string>>();
        if (j.contains("lambdas")) s.lambdas = j["lambdas"].get<std::vector<double>>();
        if (j.contains("dropouts")) s.dropouts = j["dropouts"].get<std::vector<double>>();
        if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("stages")) {
            const auto& st = j["stages"];
            s.stages.scale = st.value("scale", true);
            s.stages.obbt = st.value("obbt", true);
            s.stages.regions = st.value("regions", true);
            s.stages.solve = st.value("solve", true);
        }
        if (j.contains("time_limit")) s.time_limit = j["time_limit"].get<double>();
        if (j.contains("node_limit")) s.node_limit = j["node_limit"].get<int>();
        if (j.contains("max_regions")) s.max_regions = j["max_regions"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("experiment spec: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Rows

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct ArmResult {
    double width = kMissing;
    double stable = kMissing;
    std::string solve_status;  // empty when not solved
    double objective = kMissing;
    int nodes = -1;
    double solve_seconds = kMissing;
};

struct RowResult {
    RowConfig config;
    std::string hash;
    std::string status = "ok";  // or "failed"
    std::string failed_stage;
    std::string error;
    double test_mape = kMissing;
    double l1_before = kMissing;
    double l1_after = kMissing;
    int regions = -1;
    bool regions_complete = false;
    std::array<ArmResult, 4> arms;
    double train_seconds = kMissing;
    double obbt_seconds = kMissing;
    double scaled_obbt_seconds = kMissing;
    int cache_hits = 0;  // stages loaded from disk
    int computed = 0;    // stages run

    [[nodiscard]] const ArmResult& arm(Arm a) const { return arms[static_cast<std::size_t>(a)]; }
    ArmResult& arm(Arm a) { return arms[static_cast<std::size_t>(a)]; }
};

namespace detail {

namespace fs = std::filesystem;

inline nlohmann::json read_json(const fs::path& p) {
    try {
        return nlohmann::json::parse(read_file(p.string()));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_file(p.string(), j.dump(1) + "\n"); }

inline double json_number(const nlohmann::json& j) { return j.is_number() ? j.get<double>() : kMissing; }

inline ScalingFactors factors_from_json(const nlohmann::json& j) {
    std::vector<Vector> layers;
    for (const auto& l : j) {
        const auto v = l.get<std::vector<double>>();
        layers.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    return ScalingFactors(std::move(layers));
}

inline std::string bounds_file(Arm a) {
    switch (a) {
        case Arm::IA: return "bounds-ia.json";
        case Arm::OBBT: return "bounds-obbt.json";
        case Arm::ScaledIA: return "bounds-scaled-ia.json";
        case Arm::ScaledOBBT: return "bounds-scaled-obbt.json";
    }
    return "";
}

inline std::string solve_file(Arm a) { return "solve-" + arm_name(a) + ".json"; }

/// Runs the pipeline of one row inside `dir`, reusing artifacts written by
/// an earlier run with the same configuration.
inline RowResult run_row(const RowConfig& cfg, const StageToggles& stages, const fs::path& dir) {
    RowResult row;
    row.config = cfg;
    row.hash = cfg.hash();
    fs::create_directories(dir);
    const nlohmann::json canon = cfg.canonical();
    const fs::path cfg_path = dir / "config.json";
    const bool reuse = fs::exists(cfg_path) && read_json(cfg_path) == canon;
    if (!reuse) {
        for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
        write_json(cfg_path, canon);
    }
    auto have = [&](const std::string& name) { return reuse && fs::exists(dir / name); };

    std::string stage = "train";
    try {
        Network net;
        if (have("network.json") && have("train.json")) {
            net = load_network((dir / "network.json").string());
            const nlohmann::json tr = read_json(dir / "train.json");
            row.test_mape = tr.at("test_mape").get<double>();
            row.train_seconds = tr.at("seconds").get<double>();
            ++row.cache_hits;
        } else {
            const Dataset data = generate(cfg.function, cfg.samples, cfg.seed);
            TrainResult tr = train(data, cfg.train_config());
            net = std::move(tr.network);
            save_network(net, (dir / "network.json").string());
            write_json(dir / "train.json", to_json(tr.report));
            row.test_mape = tr.report.test_mape;
            row.train_seconds = tr.report.seconds;
            ++row.computed;
        }

        const bool relu = net.hidden_activation().type == ActivationType::ReLU;
        std::optional<Network> scaled;
        if (stages.scale && relu) {
            stage = "scale";
            if (have("scaled-network.json") && have("scaling.json")) {
                scaled = load_network((dir / "scaled-network.json").string());
                const nlohmann::json sj = read_json(dir / "scaling.json");
                row.l1_before = sj.at("objective_before").get<double>();
                row.l1_after = sj.at("objective_after").get<double>();
                ++row.cache_hits;
            } else {
                ScaleResult sr = scale_network(net);
                save_network(sr.network, (dir / "scaled-network.json").string());
                write_json(dir / "scaling.json", to_json(sr.solution));
                row.l1_before = sr.solution.objective_before;
                row.l1_after = sr.solution.objective_after;
                scaled = std::move(sr.network);
                ++row.computed;
            }
        }

        std::map<Arm, BoundsSet> bounds;
        auto bounds_stage = [&](Arm a, const std::function<BoundsSet()>& compute, double* seconds) {
            const std::string file = bounds_file(a);
            if (have(file)) {
                const nlohmann::json bj = read_json(dir / file);
                bounds[a] = bounds_from_json(bj.at("bounds"));
                if (seconds) *seconds = bj.value("seconds", kMissing);
                ++row.cache_hits;
            } else {
                const auto t0 = std::chrono::steady_clock::now();
                bounds[a] = compute();
                const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (seconds) *seconds = s;
                write_json(dir / file, {{"bounds", to_json(bounds[a])}, {"seconds", s}});
                ++row.computed;
            }
        };
        stage = "bounds";
        bounds_stage(Arm::IA, [&] { return ia_bounds(net); }, nullptr);
        if (scaled)
            bounds_stage(Arm::ScaledIA, [&] {
                BoundsSet b = ia_bounds(*scaled);
                b.provenance = Provenance::ScaledIA;
                return b;
            }, nullptr);
        if (stages.obbt) {
            stage = "obbt";
            bounds_stage(Arm::OBBT, [&] { return obbt(net, bounds[Arm::IA]).bounds; }, &row.obbt_seconds);
            if (scaled)
                bounds_stage(Arm::ScaledOBBT, [&] { return obbt(*scaled, bounds[Arm::ScaledIA]).bounds; },
                             &row.scaled_obbt_seconds);
        }
        for (const auto& [a, b] : bounds) {
            row.arm(a).width = mean_width(b);
            row.arm(a).stable = classify(b).stable_fraction();
        }

        if (stages.regions && relu) {
            stage = "regions";
            if (have("atlas.json")) {
                const nlohmann::json aj = read_json(dir / "atlas.json");
                row.regions = aj.at("region_count").get<int>();
                row.regions_complete = aj.at("complete").get<bool>();
                ++row.cache_hits;
            } else {
                EnumerateOptions eo;
                eo.max_regions = cfg.max_regions;
                const RegionAtlas atlas = enumerate(net, eo);
                write_json(dir / "atlas.json", to_json(atlas));
                write_file((dir / "regions.svg").string(), render_svg(atlas, net));
                row.regions = atlas.region_count();
                row.regions_complete = atlas.complete;
                ++row.computed;
            }
        }

        if (stages.solve) {
            stage = "solve";
            for (const auto& [a, b] : bounds) {
                const std::string file = solve_file(a);
                nlohmann::json sj;
                if (have(file)) {
                    sj = read_json(dir / file);
                    ++row.cache_hits;
                } else {
                    BnbOptions bo;
                    bo.time_limit = cfg.time_limit;
                    bo.node_limit = cfg.node_limit;
                    const bool on_scaled = a == Arm::ScaledIA || a == Arm::ScaledOBBT;
                    sj = to_json(solve_min(on_scaled ? *scaled : net, b, bo));
                    write_json(dir / file, sj);
                    ++row.computed;
                }
                ArmResult& r = row.arm(a);
                r.solve_status = sj.at("status").get<std::string>();
                r.objective = json_number(sj.at("objective"));
                r.nodes = sj.at("nodes").get<int>();
                r.solve_seconds = sj.at("seconds").get<double>();
            }
        }
    } catch (const std::exception& e) {
        row.status = "failed";
        row.failed_stage = stage;
        row.error = e.what();
    }
    return row;
}

inline std::string csv_number(double v) { return std::isnan(v) ? "" : format_double(v); }

inline nlohmann::json json_number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace detail

struct ExperimentOptions {
    std::string out = "out";
    int threads = 1;
    bool unsafe_grid = false;
    std::function<void(const std::string&)> log;
};

// ---------------------------------------------------------------------------
// Aggregation

/// One paired comparison: adapted (a) against baseline (b).
struct PairSample {
    double width_a = kMissing, width_b = kMissing;
    double stable_a = kMissing, stable_b = kMissing;
    double regions_a = kMissing, regions_b = kMissing;
    bool solved_a = false, solved_b = false;
    double time_a = kMissing, time_b = kMissing;
};

struct AggregateLine {
    std::string label;
    int solved_adapted = 0;
    int solved_baseline = 0;
    int total = 0;
    std::optional<double> width_ratio;   // geometric mean
    std::optional<double> stable_delta;  // arithmetic mean, fraction in [-1, 1]
    std::optional<double> region_ratio;  // geometric mean
    std::optional<double> time_ratio;    // geometric mean over commonly solved pairs
    int width_n = 0, stable_n = 0, region_n = 0, time_n = 0;
};

/// Geometric mean over the strictly positive finite values; nullopt (the n=0
/// marker) when there are none.
inline std::optional<double> geometric_mean(const std::vector<double>& ratios, int* n = nullptr) {
    double s = 0.0;
    int count = 0;
    for (double r : ratios)
        if (r > 0.0 && std::isfinite(r)) {
            s += std::log(r);
            ++count;
        }
    if (n) *n = count;
    if (count == 0) return std::nullopt;
    return std::exp(s / count);
}

inline AggregateLine aggregate(const std::string& label, const std::vector<PairSample>& pairs) {
    AggregateLine line;
    line.label = label;
    line.total = static_cast<int>(pairs.size());
    std::vector<double> widths, regions, times;
    double stable_sum = 0.0;
    for (const PairSample& p : pairs) {
        line.solved_adapted += p.solved_a;
        line.solved_baseline += p.solved_b;
        widths.push_back(p.width_a / p.width_b);
        regions.push_back(p.regions_a / p.regions_b);
        if (p.solved_a && p.solved_b) times.push_back(p.time_a / p.time_b);
        if (std::isfinite(p.stable_a) && std::isfinite(p.stable_b)) {
            stable_sum += p.stable_a - p.stable_b;
            ++line.stable_n;
        }
    }
    line.width_ratio = geometric_mean(widths, &line.width_n);
    line.region_ratio = geometric_mean(regions, &line.region_n);
    line.time_ratio = geometric_mean(times, &line.time_n);
    if (line.stable_n) line.stable_delta = stable_sum / line.stable_n;
    return line;
}

namespace detail {

/// Pairing key: the canonical config with the treatment field neutralized.
inline std::string pairing_key(const RowConfig& c, const std::string& field) {
    nlohmann::json j = c.canonical();
    j.erase(field);
    return j.dump();
}

inline PairSample arm_pair(const RowResult& a, Arm arm_a, const RowResult& b, Arm arm_b) {
    PairSample p;
    const ArmResult &x = a.arm(arm_a), &y = b.arm(arm_b);
    p.width_a = x.width;
    p.width_b = y.width;
    p.stable_a = x.stable;
    p.stable_b = y.stable;
    p.regions_a = a.regions > 0 ? a.regions : kMissing;
    p.regions_b = b.regions > 0 ? b.regions : kMissing;
    p.solved_a = x.solve_status == "optimal";
    p.solved_b = y.solve_status == "optimal";
    p.time_a = x.solve_seconds;
    p.time_b = y.solve_seconds;
    return p;
}

}  // namespace detail

/// Aggregate comparisons over a set of rows: each training option
/// against its twin without it (IA formulation), then OBBT and scaling arms
/// against the IA arm of the same network.
inline std::vector<AggregateLine> comparisons(const std::vector<RowResult>& rows) {
    std::vector<AggregateLine> lines;
    auto paired = [&](const std::string& field, const std::function<bool(const RowConfig&)>& is_treated,
                      const std::function<bool(const RowConfig&)>& is_base, const std::string& label) {
        std::map<std::string, const RowResult*> base;
        for (const auto& r : rows)
            if (r.status == "ok" && is_base(r.config)) base[detail::pairing_key(r.config, field)] = &r;
        std::vector<PairSample> pairs;
        for (const auto& r : rows) {
            if (r.status != "ok" || !is_treated(r.config)) continue;
            const auto it = base.find(detail::pairing_key(r.config, field));
            if (it != base.end()) pairs.push_back(detail::arm_pair(r, Arm::IA, *it->second, Arm::IA));
        }
        if (!pairs.empty()) lines.push_back(aggregate(label, pairs));
    };
    std::set<double> lambdas, dropouts;
    std::set<std::string> clips;
    for (const auto& r : rows) {
        if (r.config.lambda != 0.0) lambdas.insert(r.config.lambda);
        if (r.config.dropout != 0.0) dropouts.insert(r.config.dropout);
        if (r.config.activation.type == ActivationType::ClippedReLU) clips.insert(activation_name(r.config.activation));
    }
    for (auto it = lambdas.rbegin(); it != lambdas.rend(); ++it) {
        const double l = *it;
        paired("lambda", [l](const RowConfig& c) { return c.lambda == l; },
               [](const RowConfig& c) { return c.lambda == 0.0; }, "lambda " + detail::short_number(l));
    }
    for (const auto& name : clips)
        paired("activation", [name](const RowConfig& c) { return activation_name(c.activation) == name; },
               [](const RowConfig& c) { return c.activation.type == ActivationType::ReLU; }, "clipped " + name);
    for (double p : dropouts)
        paired("dropout", [p](const RowConfig& c) { return c.dropout == p; },
               [](const RowConfig& c) { return c.dropout == 0.0; }, "dropout " + detail::short_number(p));

    auto within = [&](Arm a, const std::string& label) {
        std::vector<PairSample> pairs;
        for (const auto& r : rows)
            if (r.status == "ok" && std::isfinite(r.arm(a).width)) {
                PairSample p = detail::arm_pair(r, a, r, Arm::IA);
                pairs.push_back(p);
            }
        if (!pairs.empty()) lines.push_back(aggregate(label, pairs));
    };
    within(Arm::OBBT, "obbt");
    within(Arm::ScaledIA, "scaling");
    within(Arm::ScaledOBBT, "scaling+obbt");
    return lines;
}

inline nlohmann::json to_json(const AggregateLine& l) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"label", l.label},
            {"solved_adapted", l.solved_adapted},
            {"solved_baseline", l.solved_baseline},
            {"total", l.total},
            {"width_ratio", opt(l.width_ratio)},
            {"width_n", l.width_n},
            {"stable_delta", opt(l.stable_delta)},
            {"stable_n", l.stable_n},
            {"region_ratio", opt(l.region_ratio)},
            {"region_n", l.region_n},
            {"time_ratio", opt(l.time_ratio)},
            {"time_n", l.time_n}};
}

inline std::string format_comparisons(const std::vector<AggregateLine>& lines) {
    std::ostringstream os;
    auto cell = [](const std::optional<double>& v) { return v ? format_fixed(*v, 3) : std::string("n=0"); };
    os << std::left << std::setw(16) << "comparison" << std::setw(14) << "solved" << std::setw(8) << "total"
       << std::setw(12) << "width" << std::setw(12) << "stable" << std::setw(12) << "regions" << "time\n";
    for (const auto& l : lines)
        os << std::left << std::setw(16) << l.label << std::setw(14)
           << (std::to_string(l.solved_adapted) + " vs " + std::to_string(l.solved_baseline)) << std::setw(8)
           << l.total << std::setw(12) << cell(l.width_ratio) << std::setw(12) << cell(l.stable_delta)
           << std::setw(12) << cell(l.region_ratio) << cell(l.time_ratio) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Report

struct RunStats {
    int rows = 0;
    int failed = 0;
    int cache_hits = 0;
    int computed = 0;
};

struct ExperimentReport {
    ExperimentSpec spec;
    std::vector<RowResult> rows;
    std::vector<AggregateLine> aggregate;
    RunStats stats;
};

namespace detail {

inline std::vector<std::string> report_columns() {
    std::vector<std::string> c{"hash",    "version",  "function", "samples",      "epochs",     "depth",
                               "width",   "activation", "lambda", "dropout",      "seed",       "status",
                               "failed_stage", "test_mape", "l1_before", "l1_after", "regions", "regions_complete"};
    for (Arm a : kArms)
        for (const char* f : {"width_", "stable_", "solve_", "objective_", "nodes_"}) c.push_back(f + arm_name(a));
    return c;
}

/// Row values keyed by column, as JSON scalars (null when absent).
inline nlohmann::json row_values(const RowResult& r) {
    using nlohmann::json;
    const json canon = r.config.canonical();
    json v;
    v["hash"] = r.hash;
    v["version"] = kToolVersion;
    v["function"] = canon["function"];
    v["samples"] = r.config.samples;
    v["epochs"] = r.config.epochs;
    v["depth"] = r.config.depth;
    v["width"] = r.config.width;
    v["activation"] = canon["activation"];
    v["lambda"] = r.config.lambda;
    v["dropout"] = r.config.dropout;
    v["seed"] = r.config.seed;
    v["status"] = r.status;
    v["failed_stage"] = r.failed_stage;
    v["test_mape"] = json_number_or_null(r.test_mape);
    v["l1_before"] = json_number_or_null(r.l1_before);
    v["l1_after"] = json_number_or_null(r.l1_after);
    v["regions"] = r.regions >= 0 ? json(r.regions) : json(nullptr);
    v["regions_complete"] = r.regions >= 0 ? json(r.regions_complete) : json(nullptr);
    for (Arm a : kArms) {
        const ArmResult& x = r.arm(a);
        const std::string n = arm_name(a);
        v["width_" + n] = json_number_or_null(x.width);
        v["stable_" + n] = json_number_or_null(x.stable);
        v["solve_" + n] = x.solve_status.empty() ? json(nullptr) : json(x.solve_status);
        v["objective_" + n] = json_number_or_null(x.objective);
        v["nodes_" + n] = x.nodes >= 0 ? json(x.nodes) : json(nullptr);
    }
    return v;
}

inline std::string csv_cell(const nlohmann::json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    return format_double(v.get<double>());
}

}  // namespace detail

/// Deterministic per-row values; wall-clock times live in timings_csv.
inline std::string report_csv(const std::vector<RowResult>& rows) {
    const auto cols = detail::report_columns();
    std::ostringstream os;
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : rows) {
        const nlohmann::json v = detail::row_values(r);
        for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << detail::csv_cell(v[cols[i]]);
        os << '\n';
    }
    return os.str();
}

inline std::string timings_csv(const std::vector<RowResult>& rows) {
    std::ostringstream os;
    os << "hash,train_seconds,obbt_seconds,scaled_obbt_seconds";
    for (Arm a : kArms) os << ",solve_seconds_" << arm_name(a);
    os << '\n';
    for (const auto& r : rows) {
        os << r.hash << ',' << detail::csv_number(r.train_seconds) << ',' << detail::csv_number(r.obbt_seconds) << ','
           << detail::csv_number(r.scaled_obbt_seconds);
        for (Arm a : kArms) os << ',' << detail::csv_number(r.arm(a).solve_seconds);
        os << '\n';
    }
    return os.str();
}

inline nlohmann::json to_json(const ExperimentReport& rep) {
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["spec"] = to_json(rep.spec);
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        nlohmann::json v = detail::row_values(r);
        v["error"] = r.error;
        v["timings"] = {{"train_seconds", detail::json_number_or_null(r.train_seconds)},
                        {"obbt_seconds", detail::json_number_or_null(r.obbt_seconds)},
                        {"scaled_obbt_seconds", detail::json_number_or_null(r.scaled_obbt_seconds)}};
        for (Arm a : kArms)
            v["timings"]["solve_seconds_" + arm_name(a)] = detail::json_number_or_null(r.arm(a).solve_seconds);
        j["rows"].push_back(std::move(v));
    }
    j["aggregate"] = nlohmann::json::array();
    for (const auto& l : rep.aggregate) j["aggregate"].push_back(to_json(l));
    return j;
}

/// Rebuilds rows from report.json (the inverse of to_json for everything
/// comparisons needs).
inline std::vector<RowResult> rows_from_json(const nlohmann::json& j) {
    std::vector<RowResult> rows;
    try {
        for (const auto& v : j.at("rows")) {
            RowResult r;
            r.config.function = parse_benchmark(v.at("function").get<std::string>());
            r.config.samples = v.at("samples").get<int>();
            r.config.epochs = v.at("epochs").get<int>();
            r.config.depth = v.at("depth").get<int>();
            r.config.width = v.at("width").get<int>();
            r.config.activation = parse_activation_name(v.at("activation").get<std::string>());
            r.config.lambda = v.at("lambda").get<double>();
            r.config.dropout = v.at("dropout").get<double>();
            r.config.seed = v.at("seed").get<std::uint64_t>();
            r.hash = v.at("hash").get<std::string>();
            r.status = v.at("status").get<std::string>();
            r.failed_stage = v.at("failed_stage").get<std::string>();
            r.error = v.value("error", "");
            r.test_mape = detail::json_number(v.at("test_mape"));
            r.l1_before = detail::json_number(v.at("l1_before"));
            r.l1_after = detail::json_number(v.at("l1_after"));
            r.regions = v.at("regions").is_null() ? -1 : v.at("regions").get<int>();
            r.regions_complete = v.at("regions_complete").is_boolean() && v.at("regions_complete").get<bool>();
            const auto& t = v.at("timings");
            r.train_seconds = detail::json_number(t.at("train_seconds"));
            r.obbt_seconds = detail::json_number(t.at("obbt_seconds"));
            r.scaled_obbt_seconds = detail::json_number(t.at("scaled_obbt_seconds"));
            for (Arm a : kArms) {
                const std::string n = arm_name(a);
                ArmResult& x = r.arm(a);
                x.width = detail::json_number(v.at("width_" + n));
                x.stable = detail::json_number(v.at("stable_" + n));
                x.solve_status = v.at("solve_" + n).is_string() ? v.at("solve_" + n).get<std::string>() : "";
                x.objective = detail::json_number(v.at("objective_" + n));
                x.nodes = v.at("nodes_" + n).is_null() ? -1 : v.at("nodes_" + n).get<int>();
                x.solve_seconds = detail::json_number(t.at("solve_seconds_" + n));
            }
            rows.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("report: ") + e.what());
    }
    return rows;
}

/// Runs every grid row through train -> [scale] -> bounds -> [obbt] ->
/// [regions] -> [solve] on a bounded worker pool. Artifacts go to
/// <out>/<config-hash>/; the report to <out>/report.{csv,json} and
/// <out>/timings.csv. Row failures are recorded, not thrown.
inline ExperimentReport run_experiment(const ExperimentSpec& spec, const ExperimentOptions& opt = {}) {
    spec.validate(opt.unsafe_grid);
    if (opt.threads < 1) throw InvalidInput("experiment: threads must be >= 1");
    namespace fs = std::filesystem;
    const fs::path out(opt.out);
    fs::create_directories(out);
    const std::vector<RowConfig> configs = spec.rows();

    ExperimentReport rep;
    rep.spec = spec;
    rep.rows.resize(configs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            const std::string hash = configs[i].hash();
            rep.rows[i] = detail::run_row(configs[i], spec.stages, out / hash);
            if (opt.log) {
                std::lock_guard<std::mutex> lock(log_mutex);
                const RowResult& r = rep.rows[i];
                opt.log("row " + std::to_string(i + 1) + "/" + std::to_string(configs.size()) + " " + hash + " " +
                        r.status + (r.error.empty() ? "" : " (" + r.failed_stage + ": " + r.error + ")"));
            }
        }
    };
    const int n_threads = std::min<int>(opt.threads, static_cast<int>(std::max<std::size_t>(1, configs.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& r : rep.rows) {
        ++rep.stats.rows;
        rep.stats.failed += r.status != "ok";
        rep.stats.cache_hits += r.cache_hits;
        rep.stats.computed += r.computed;
    }
    rep.aggregate = comparisons(rep.rows);
    write_file((out / "report.csv").string(), report_csv(rep.rows));
    write_file((out / "timings.csv").string(), timings_csv(rep.rows));
    detail::write_json(out / "report.json", to_json(rep));
    detail::write_json(out / "spec.json", to_json(spec));
    return rep;
}

// ---------------------------------------------------------------------------
// Verification of stored artifacts

struct VerifyOptions {
    int samples = 2000;            // per bounds file
    double bound_tolerance = 1e-7;
};

struct VerifyReport {
    int rows = 0;
    int checks = 0;
    std::vector<std::string> failures;
    [[nodiscard]] bool ok() const { return failures.empty(); }
};

/// Replays module invariants on every row directory under `out`: bounds
/// soundness by sampling, scaling equivalence and the scaled-bounds relation,
/// atlas partition and pattern checks, and incumbent reproduction.
inline VerifyReport verify_outputs(const std::string& out, const VerifyOptions& opt = {}) {
    namespace fs = std::filesystem;
    VerifyReport rep;
    if (!fs::is_directory(out)) throw InvalidInput("verify: " + out + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(out))
        if (e.is_directory() && fs::exists(e.path() / "config.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    for (const fs::path& dir : dirs) {
        ++rep.rows;
        const std::string id = dir.filename().string();
        auto fail = [&](const std::string& what) { rep.failures.push_back(id + ": " + what); };
        auto check = [&](const std::string& what, const std::function<void()>& fn) {
            ++rep.checks;
            try {
                fn();
            } catch (const std::exception& e) {
                fail(what + ": " + e.what());
            }
        };
        if (!fs::exists(dir / "network.json")) {
            ++rep.checks;
            fail("network.json missing");
            continue;
        }
        Network net, scaled;
        check("network", [&] { net = load_network((dir / "network.json").string()); });
        if (net.depth() == 0) continue;
        const bool has_scaled = fs::exists(dir / "scaled-network.json");
        if (has_scaled) check("scaled network", [&] { scaled = load_network((dir / "scaled-network.json").string()); });
        Rng rng(fnv1a64(id));
        const Box& box = net.input_box();
        auto sample = [&] {
            Vector x(box.dim());
            for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = rng.uniform(box.lo[j], box.hi[j]);
            return x;
        };

        for (Arm a : kArms) {
            const fs::path file = dir / detail::bounds_file(a);
            if (!fs::exists(file)) continue;
            const bool on_scaled = a == Arm::ScaledIA || a == Arm::ScaledOBBT;
            if (on_scaled && scaled.depth() == 0) continue;
            check(detail::bounds_file(a), [&] {
                const BoundsSet b = bounds_from_json(detail::read_json(file).at("bounds"));
                const Network& n = on_scaled ? scaled : net;
                check_bounds_shape(n, b);
                for (int s = 0; s < opt.samples; ++s) {
                    const Vector x = sample();
                    const double v = bounds_violation(n, b, x);
                    if (v > opt.bound_tolerance)
                        throw VerificationFailure("sampled pre-activation outside bounds by " + format_double(v));
                }
            });
        }

        if (has_scaled && scaled.depth() > 0 && fs::exists(dir / "scaling.json")) {
            check("scaling equivalence", [&] {
                for (int s = 0; s < 1000; ++s) {
                    const Vector x = sample();
                    const Vector y = forward(net, x), ys = forward(scaled, x);
                    const double d = (y - ys).cwiseAbs().maxCoeff() / std::max(1.0, y.cwiseAbs().maxCoeff());
                    if (d > kProbeTolerance) throw VerificationFailure("scaled output deviates by " + format_double(d));
                }
            });
            check("scaled bounds relation", [&] {
                const ScalingFactors c = detail::factors_from_json(detail::read_json(dir / "scaling.json").at("factors"));
                scaled_bounds_relation(net, c);
            });
        }

        if (fs::exists(dir / "atlas.json")) {
            check("atlas", [&] {
                const nlohmann::json aj = detail::read_json(dir / "atlas.json");
                double area = 0.0;
                for (const auto& r : aj.at("regions")) {
                    area += r.at("area").get<double>();
                    const auto verts = r.at("vertices").get<std::vector<std::array<double, 2>>>();
                    Vector c = Vector::Zero(2);
                    for (const auto& v : verts) c += Vector{{v[0], v[1]}};
                    c /= static_cast<double>(verts.size());
                    if (pattern_hex(pattern_at(net, c)) != r.at("pattern").get<std::string>())
                        throw VerificationFailure("region " + r.at("pattern").get<std::string>() +
                                                  " does not contain its vertex centroid");
                }
                if (aj.at("complete").get<bool>() && std::abs(area - box.volume()) > 1e-6 * box.volume())
                    throw VerificationFailure("region areas sum to " + format_double(area) + ", box area " +
                                              format_double(box.volume()));
            });
        }

        for (Arm a : kArms) {
            const fs::path file = dir / detail::solve_file(a);
            if (!fs::exists(file)) continue;
            const bool on_scaled = a == Arm::ScaledIA || a == Arm::ScaledOBBT;
            check(detail::solve_file(a), [&] {
                const nlohmann::json sj = detail::read_json(file);
                if (sj.at("objective").is_null()) return;
                const auto x = sj.at("x").get<std::vector<double>>();
                const Vector xv = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
                const double y = forward(on_scaled ? scaled : net, xv)[0];
                const double obj = sj.at("objective").get<double>();
                if (std::abs(y - obj) > 1e-6 * std::max(1.0, std::abs(obj)))
                    throw VerificationFailure("incumbent evaluates to " + format_double(y) + ", recorded " +
                                              format_double(obj));
                if (!box.contains(xv, 1e-9)) throw VerificationFailure("incumbent outside the input box");
            });
        }
    }
    return rep;
}

}  // namespace reluopt
