#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "benchfn.hpp"
#include "network.hpp"

namespace reluopt {

class TrainingDiverged : public Error {
public:
    TrainingDiverged(int epoch, const std::string& what) : Error(what), epoch_(epoch) {}
    [[nodiscard]] int epoch() const { return epoch_; }

private:
    int epoch_;
};

struct TrainConfig {
    int hidden_layers = 2;
    int width = 25;
    Activation activation = Activation::relu();
    double lambda = 0.0;
    double dropout_rate = 0.0;
    int epochs = 300;
    int batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (hidden_layers < 1) throw InvalidInput("train: hidden_layers must be >= 1");
        if (width < 1) throw InvalidInput("train: width must be >= 1");
        if (!activation.is_hidden_kind()) throw InvalidInput("train: hidden activation must be relu or clipped_relu");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("train: lambda must be >= 0");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidInput("train: dropout_rate must be in [0, 1)");
        if (epochs < 1) throw InvalidInput("train: epochs must be >= 1");
        if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidInput("train: learning_rate must be > 0");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"hidden_layers", c.hidden_layers},
            {"width", c.width},
            {"activation", to_string(c.activation.type)},
            {"clip", c.activation.clip},
            {"lambda", c.lambda},
            {"dropout_rate", c.dropout_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed}};
}

struct TrainReport {
    double final_train_loss = 0.0;  // MSE (normalized targets) + lambda * l1, no dropout
    double test_mape = 0.0;         // raw space
    double parameter_l1 = 0.0;      // normalized-space weights and biases
    std::vector<double> epoch_loss;
    double seconds = 0.0;
    TrainConfig config;
};

inline nlohmann::json to_json(const TrainReport& r) {
    return {{"final_train_loss", r.final_train_loss},
            {"test_mape", r.test_mape},
            {"parameter_l1", r.parameter_l1},
            {"epoch_loss", r.epoch_loss},
            {"seconds", r.seconds},
            {"config", to_json(r.config)}};
}

/// Mean absolute percentage error with denominators floored at 1e-8.
inline double mape(const Vector& pred, const Vector& truth) {
    if (pred.size() == 0) throw InvalidInput("mape: empty input");
    if (pred.size() != truth.size()) throw InvalidInput("mape: length mismatch");
    double s = 0.0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]) / std::max(1e-8, std::abs(truth[i]));
    return s / static_cast<double>(pred.size());
}

namespace detail {

struct Params {
    std::vector<Matrix> W;  // n_out x n_in
    std::vector<Vector> b;

    [[nodiscard]] double l1() const {
        double s = 0.0;
        for (std::size_t k = 0; k < W.size(); ++k) s += W[k].cwiseAbs().sum() + b[k].cwiseAbs().sum();
        return s;
    }

    [[nodiscard]] Params zeros_like() const {
        Params z;
        for (std::size_t k = 0; k < W.size(); ++k) {
            z.W.push_back(Matrix::Zero(W[k].rows(), W[k].cols()));
            z.b.push_back(Vector::Zero(b[k].size()));
        }
        return z;
    }
};

inline Params he_uniform(int in, const std::vector<int>& widths, int out, Rng& rng) {
    Params p;
    int prev = in;
    for (std::size_t k = 0; k <= widths.size(); ++k) {
        const int n = k < widths.size() ? widths[k] : out;
        const double a = std::sqrt(6.0 / prev);
        Matrix W(n, prev);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < prev; ++j) W(i, j) = rng.uniform(-a, a);
        p.W.push_back(std::move(W));
        p.b.push_back(Vector::Zero(n));
        prev = n;
    }
    return p;
}

inline double activation_slope(const Activation& a, double z) {
    if (a.type == ActivationType::ReLU) return z > 0.0 ? 1.0 : 0.0;
    if (a.type == ActivationType::ClippedReLU) return z > 0.0 && z < a.clip ? 1.0 : 0.0;
    return 1.0;
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Loss (1/B) sum (h(x) - y)^2 + lambda |theta|_1 on a batch, optionally with
/// inverted dropout on hidden activations; fills `grad` when non-null.
inline double loss_and_gradient(const Params& p, const Activation& act, const Matrix& X, const Vector& y, double lambda,
                                double dropout, Rng* rng, Params* grad) {
    const std::size_t L = p.W.size();
    const auto B = static_cast<double>(X.rows());
    std::vector<Matrix> A{X}, Z, M;
    for (std::size_t k = 0; k < L; ++k) {
        Matrix z = A.back() * p.W[k].transpose();
        z.rowwise() += p.b[k].transpose();
        if (k + 1 == L) {
            Z.push_back(z);
            A.push_back(std::move(z));
            break;
        }
        Matrix h = z.unaryExpr([&](double t) { return act(t); });
        Matrix mask = Matrix::Ones(h.rows(), h.cols());
        if (dropout > 0.0 && rng) {
            const double keep = 1.0 / (1.0 - dropout);
            for (Eigen::Index r = 0; r < mask.rows(); ++r)
                for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = rng->uniform() < dropout ? 0.0 : keep;
            h = h.cwiseProduct(mask);
        }
        Z.push_back(std::move(z));
        M.push_back(std::move(mask));
        A.push_back(std::move(h));
    }
    const Vector resid = A.back().col(0) - y;
    const double loss = resid.squaredNorm() / B + lambda * p.l1();
    if (!grad) return loss;

    *grad = p.zeros_like();
    Matrix dZ = (2.0 / B) * resid;
    for (std::size_t kk = L; kk-- > 0;) {
        grad->W[kk] = dZ.transpose() * A[kk];
        grad->b[kk] = dZ.colwise().sum().transpose();
        grad->W[kk] += lambda * p.W[kk].unaryExpr(&sign0);
        grad->b[kk] += lambda * p.b[kk].unaryExpr(&sign0);
        if (kk == 0) break;
        Matrix dA = dZ * p.W[kk];
        const Matrix& zp = Z[kk - 1];
        dZ = dA.cwiseProduct(M[kk - 1]).cwiseProduct(zp.unaryExpr([&](double t) { return activation_slope(act, t); }));
    }
    return loss;
}

/// Network mapping raw inputs to raw targets from normalized-space parameters.
inline Network fold_normalization(const Params& p, const Activation& act, const std::vector<Normalization>& in,
                                  const Normalization& out, const Box& box) {
    std::vector<Layer> layers;
    for (std::size_t k = 0; k < p.W.size(); ++k)
        layers.push_back({p.W[k], p.b[k], k + 1 < p.W.size() ? act : Activation::identity()});
    Vector inv_sigma(static_cast<Eigen::Index>(in.size())), mu_over_sigma(static_cast<Eigen::Index>(in.size()));
    for (std::size_t j = 0; j < in.size(); ++j) {
        inv_sigma[static_cast<Eigen::Index>(j)] = 1.0 / in[j].stddev;
        mu_over_sigma[static_cast<Eigen::Index>(j)] = in[j].mean / in[j].stddev;
    }
    Layer& first = layers.front();
    first.bias -= first.weights * mu_over_sigma;
    first.weights = first.weights * inv_sigma.asDiagonal();
    Layer& last = layers.back();
    last.weights *= out.stddev;
    last.bias = (last.bias * out.stddev).array() + out.mean;
    return Network(std::move(layers), box);
}

}  // namespace detail

struct TrainResult {
    Network network;
    TrainReport report;
};

/// Minibatch Adam on normalized data; the returned network works in raw
/// coordinates and carries the benchmark domain as its input box.
inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.inputs.cols() != 2) throw InvalidInput("train: expected 2-D inputs");
    if (data.train.empty() || data.test.empty()) throw InvalidInput("train: empty train or test split");
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed);
    detail::Params p = detail::he_uniform(2, std::vector<int>(static_cast<std::size_t>(cfg.hidden_layers), cfg.width), 1, rng);
    detail::Params m = p.zeros_like(), v = p.zeros_like();
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double b1t = 1.0, b2t = 1.0;

    const auto [Xtrain, ytrain] = data.normalized(data.train);
    std::vector<int> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainReport rep;
    rep.config = cfg;
    auto adam = [&](Matrix& theta, Matrix& mm, Matrix& vv, const Matrix& g) {
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        theta.array() -= cfg.learning_rate * (mm.array() / (1.0 - b1t)) / ((vv.array() / (1.0 - b2t)).sqrt() + eps);
    };
    auto adam_v = [&](Vector& theta, Vector& mm, Vector& vv, const Vector& g) {
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        theta.array() -= cfg.learning_rate * (mm.array() / (1.0 - b1t)) / ((vv.array() / (1.0 - b2t)).sqrt() + eps);
    };

    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    detail::Params g;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            Matrix X(static_cast<Eigen::Index>(end - start), 2);
            Vector y(static_cast<Eigen::Index>(end - start));
            for (std::size_t r = start; r < end; ++r) {
                X.row(static_cast<Eigen::Index>(r - start)) = Xtrain.row(order[r]);
                y[static_cast<Eigen::Index>(r - start)] = ytrain[order[r]];
            }
            const double loss =
                detail::loss_and_gradient(p, cfg.activation, X, y, cfg.lambda, cfg.dropout_rate, &rng, &g);
            if (!std::isfinite(loss))
                throw TrainingDiverged(epoch, "train: non-finite loss at epoch " + std::to_string(epoch));
            b1t *= beta1;
            b2t *= beta2;
            for (std::size_t k = 0; k < p.W.size(); ++k) {
                adam(p.W[k], m.W[k], v.W[k], g.W[k]);
                adam_v(p.b[k], m.b[k], v.b[k], g.b[k]);
            }
            sum += loss;
            ++batches;
        }
        rep.epoch_loss.push_back(sum / batches);
    }

    rep.final_train_loss = detail::loss_and_gradient(p, cfg.activation, Xtrain, ytrain, cfg.lambda, 0.0, nullptr, nullptr);
    if (!std::isfinite(rep.final_train_loss))
        throw TrainingDiverged(cfg.epochs - 1, "train: non-finite loss after the last epoch");
    rep.parameter_l1 = p.l1();
    const BenchmarkInfo& info = benchmark_info(data.function);
    const Box box(Vector::Map(info.lo.data(), 2), Vector::Map(info.hi.data(), 2));
    Network net = detail::fold_normalization(p, cfg.activation, data.input_norm, data.target_norm, box);

    Vector pred(static_cast<Eigen::Index>(data.test.size())), truth(static_cast<Eigen::Index>(data.test.size()));
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        pred[static_cast<Eigen::Index>(i)] = forward(net, data.inputs.row(data.test[i]).transpose())[0];
        truth[static_cast<Eigen::Index>(i)] = data.targets[data.test[i]];
    }
    rep.test_mape = mape(pred, truth);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(net), std::move(rep)};
}

}  // namespace reluopt
