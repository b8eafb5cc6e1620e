#include <gtest/gtest.h>

#include <reluopt/trainer.hpp>

using namespace reluopt;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.hidden_layers = 2;
    c.width = 8;
    c.epochs = 5;
    c.batch_size = 64;
    c.seed = 3;
    return c;
}

const Dataset& small_data() {
    static const Dataset d = generate(Benchmark::Peaks, 2000, 1);
    return d;
}

}  // namespace

TEST(Mape, Examples) {
    EXPECT_EQ(mape(Vector{{1.0, -2.0}}, Vector{{1.0, -2.0}}), 0.0);
    EXPECT_DOUBLE_EQ(mape(Vector{{2.0}}, Vector{{1.0}}), 1.0);
    EXPECT_DOUBLE_EQ(mape(Vector{{1e-8}}, Vector{{0.0}}), 1.0);
    EXPECT_DOUBLE_EQ(mape(Vector{{0.0, 3.0}}, Vector{{-1.0, 2.0}}), 0.75);
    EXPECT_THROW(mape(Vector(0), Vector(0)), InvalidInput);
    EXPECT_THROW(mape(Vector{{1.0}}, Vector{{1.0, 2.0}}), InvalidInput);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.epochs, 300);
    EXPECT_EQ(c.batch_size, 256);
    EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
    c.dropout_rate = 1.0;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = TrainConfig{};
    c.lambda = -1.0;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = TrainConfig{};
    c.activation = Activation::identity();
    EXPECT_THROW(c.validate(), InvalidInput);
    c = TrainConfig{};
    c.hidden_layers = 0;
    EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(LossGradient, MatchesCentralDifferences) {
    Rng rng(31);
    detail::Params p = detail::he_uniform(2, {3, 3}, 1, rng);
    // Keep every parameter away from the l1 kink at zero.
    for (auto& W : p.W)
        for (Eigen::Index i = 0; i < W.size(); ++i)
            if (std::abs(W.data()[i]) < 0.05) W.data()[i] = 0.05;
    for (auto& b : p.b)
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(0.1, 0.3) * (i % 2 ? 1 : -1);
    Matrix X(16, 2);
    Vector y(16);
    for (int r = 0; r < 16; ++r) {
        X(r, 0) = rng.uniform(-1, 1);
        X(r, 1) = rng.uniform(-1, 1);
        y[r] = rng.normal();
    }
    for (const Activation act : {Activation::relu(), Activation::clipped(2.0)}) {
        detail::Params g;
        detail::loss_and_gradient(p, act, X, y, 1e-2, 0.0, nullptr, &g);
        const double h = 1e-6;
        auto check = [&](double& theta, double analytic) {
            const double keep = theta;
            theta = keep + h;
            const double fp = detail::loss_and_gradient(p, act, X, y, 1e-2, 0.0, nullptr, nullptr);
            theta = keep - h;
            const double fm = detail::loss_and_gradient(p, act, X, y, 1e-2, 0.0, nullptr, nullptr);
            theta = keep;
            const double fd = (fp - fm) / (2 * h);
            EXPECT_NEAR(analytic, fd, 1e-5 * std::max(1.0, std::abs(fd)));
        };
        for (std::size_t k = 0; k < p.W.size(); ++k) {
            for (Eigen::Index i = 0; i < p.W[k].size(); ++i) check(p.W[k].data()[i], g.W[k].data()[i]);
            for (Eigen::Index i = 0; i < p.b[k].size(); ++i) check(p.b[k][i], g.b[k][i]);
        }
    }
}

TEST(LossGradient, SubgradientZeroAtZero) {
    EXPECT_EQ(detail::sign0(0.0), 0.0);
    EXPECT_EQ(detail::sign0(-3.0), -1.0);
    EXPECT_EQ(detail::sign0(2.0), 1.0);
}

TEST(FoldNormalization, MatchesNormalizedEvaluation) {
    Rng rng(32);
    const Dataset& d = small_data();
    const detail::Params p = detail::he_uniform(2, {4, 4}, 1, rng);
    const Network net = detail::fold_normalization(p, Activation::relu(), d.input_norm, d.target_norm,
                                                   benchmark_info(Benchmark::Peaks).box());
    const auto [X, y] = d.normalized({0, 1, 2, 3, 4, 5, 6, 7});
    for (Eigen::Index r = 0; r < 8; ++r) {
        // Normalized-space prediction via the loss with a single row.
        const Matrix xr = X.row(r);
        const double sq = detail::loss_and_gradient(p, Activation::relu(), xr, Vector::Zero(1), 0.0, 0.0, nullptr, nullptr);
        const double raw = forward(net, d.inputs.row(r).transpose())[0];
        EXPECT_NEAR(std::abs(d.target_norm.apply(raw)), std::sqrt(sq), 1e-9);
    }
    EXPECT_EQ(net.input_box().lo[0], -2.0);
    EXPECT_EQ(net.input_box().hi[1], 2.0);
}

TEST(Train, DeterministicForSeed) {
    const TrainResult a = train(small_data(), small_config()), b = train(small_data(), small_config());
    EXPECT_EQ(a.network, b.network);
    EXPECT_EQ(a.report.epoch_loss, b.report.epoch_loss);
    TrainConfig other = small_config();
    other.seed = 4;
    EXPECT_FALSE(train(small_data(), other).network == a.network);
}

TEST(Train, ReportShape) {
    const TrainResult r = train(small_data(), small_config());
    EXPECT_EQ(r.report.epoch_loss.size(), 5u);
    EXPECT_GE(r.report.test_mape, 0.0);
    EXPECT_GT(r.report.parameter_l1, 0.0);
    EXPECT_LT(r.report.epoch_loss.back(), r.report.epoch_loss.front());
    const nlohmann::json j = to_json(r.report);
    EXPECT_EQ(j["config"]["seed"].get<int>(), 3);
    EXPECT_EQ(j["epoch_loss"].size(), 5u);
}

TEST(Train, L1ShrinksParameters) {
    TrainConfig c = small_config();
    c.epochs = 20;
    const double plain = train(small_data(), c).report.parameter_l1;
    c.lambda = 1e-3;
    EXPECT_LT(train(small_data(), c).report.parameter_l1, plain);
}

TEST(Train, DropoutInactiveAtInference) {
    TrainConfig c = small_config();
    c.dropout_rate = 0.2;
    const Network net = train(small_data(), c).network;
    const Vector x{{0.3, -0.7}};
    EXPECT_EQ(forward(net, x), forward(net, x));
}

TEST(Train, DivergenceReportsEpoch) {
    TrainConfig c = small_config();
    c.learning_rate = 1e300;
    try {
        train(small_data(), c);
        FAIL() << "expected TrainingDiverged";
    } catch (const TrainingDiverged& e) {
        EXPECT_GE(e.epoch(), 0);
        EXPECT_LT(e.epoch(), c.epochs);
    }
}

TEST(Train, RejectsBadData) {
    Dataset d = small_data();
    d.test.clear();
    EXPECT_THROW(train(d, small_config()), InvalidInput);
}

TEST(Train, ClippedNetworkCarriesClip) {
    TrainConfig c = small_config();
    c.activation = Activation::clipped(2.0);
    const Network net = train(small_data(), c).network;
    EXPECT_EQ(net.hidden_activation().type, ActivationType::ClippedReLU);
    EXPECT_EQ(net.hidden_activation().clip, 2.0);
}

// Thresholds from a pilot run of this exact configuration (MAPE 0.269,
// grid R^2 0.9975); see README.
constexpr double kPilotMape = 0.35;
constexpr double kPilotR2 = 0.99;

TEST(Train, SurrogateApproximatesRawFunction) {
    const Dataset d = generate(Benchmark::Peaks, 10000, 0);
    TrainConfig c;
    c.hidden_layers = 2;
    c.width = 25;
    c.epochs = 150;
    c.seed = 1;
    const TrainResult r = train(d, c);
    EXPECT_LE(r.report.test_mape, kPilotMape);
    std::vector<double> f, h;
    for (int a = 0; a <= 40; ++a)
        for (int b = 0; b <= 40; ++b) {
            const double x = -2.0 + 0.1 * a, y = -2.0 + 0.1 * b;
            f.push_back(evaluate(Benchmark::Peaks, x, y));
            h.push_back(forward(r.network, Vector{{x, y}})[0]);
        }
    const Vector fv = Vector::Map(f.data(), static_cast<Eigen::Index>(f.size()));
    const Vector hv = Vector::Map(h.data(), static_cast<Eigen::Index>(h.size()));
    const double r2 = 1.0 - (fv - hv).squaredNorm() / (fv.array() - fv.mean()).square().sum();
    EXPECT_GE(r2, kPilotR2);
}
