#include "idsrag/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace idsrag::ensemble {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

MLPConfig MLPConfig::cicids() {
    MLPConfig c;
    c.layer_widths = {128, 64, 32};
    c.dropout = {0.3, 0.3, 0.3};
    return c;
}

MLPConfig MLPConfig::unsw() {
    MLPConfig c;
    c.layer_widths = {256, 128, 64, 32};
    c.dropout = {0.4, 0.3333333333333333, 0.26666666666666666, 0.2};
    c.use_batchnorm = true;
    return c;
}

void MLPConfig::validate() const {
    if (input_dim == 0) throw Error("MLPConfig: input_dim must be positive");
    if (output_dim != 2) throw Error("MLPConfig: output_dim must be 2");
    if (dropout.size() != layer_widths.size()) {
        throw Error("MLPConfig: need one dropout probability per hidden layer");
    }
    for (auto w : layer_widths) {
        if (w == 0) throw Error("MLPConfig: layer widths must be positive");
    }
    for (double p : dropout) {
        if (!(p >= 0.0 && p < 1.0)) throw Error("MLPConfig: dropout must lie in [0, 1)");
    }
}

json MLPConfig::to_json() const {
    return {{"input_dim", input_dim},
            {"layer_widths", layer_widths},
            {"dropout", dropout},
            {"use_batchnorm", use_batchnorm},
            {"output_dim", output_dim}};
}

MLPConfig MLPConfig::from_json(const json& doc) {
    MLPConfig c;
    if (doc.is_string()) {
        const auto preset = doc.get<std::string>();
        if (preset == "cicids") return cicids();
        if (preset == "unsw") return unsw();
        throw Error("unknown architecture preset: " + preset);
    }
    c.input_dim = doc.value("input_dim", std::size_t{66});
    c.layer_widths = doc.at("layer_widths").get<std::vector<std::size_t>>();
    c.dropout = doc.value("dropout", std::vector<double>(c.layer_widths.size(), 0.0));
    c.use_batchnorm = doc.value("use_batchnorm", false);
    c.output_dim = doc.value("output_dim", std::size_t{2});
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    if (patience < 1) throw Error("TrainConfig: patience must be >= 1");
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw Error("TrainConfig: max_epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error("TrainConfig: learning_rate must be non-negative");
}

json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"patience", patience},
            {"max_epochs", max_epochs},
            {"selection_metric", selection_metric == SelectionMetric::MacroF1 ? "macro_f1" : "accuracy"},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& doc) {
    TrainConfig c;
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.epsilon = doc.value("epsilon", c.epsilon);
    c.patience = doc.value("patience", c.patience);
    c.max_epochs = doc.value("max_epochs", c.max_epochs);
    const auto metric = doc.value("selection_metric", std::string("macro_f1"));
    if (metric == "macro_f1") {
        c.selection_metric = SelectionMetric::MacroF1;
    } else if (metric == "accuracy") {
        c.selection_metric = SelectionMetric::Accuracy;
    } else {
        throw Error("TrainConfig: unknown selection_metric " + metric);
    }
    c.seed = doc.value("seed", c.seed);
    c.validate();
    return c;
}

json EpochRecord::to_json() const {
    return {{"epoch", epoch},         {"train_loss", train_loss},     {"val_loss", val_loss},
            {"val_macro_f1", val_macro_f1}, {"val_accuracy", val_accuracy}, {"improved", improved}};
}

// ---------------------------------------------------------------------------
// Model

MLPModel MLPModel::initialize(const MLPConfig& config, ClassLabel target, std::uint64_t seed) {
    config.validate();
    MLPModel model;
    model.config = config;
    model.target_class = target;
    std::mt19937_64 rng(seed);
    std::size_t fan_in = config.input_dim;
    const auto make_layer = [&](std::size_t out, bool batchnorm) {
        DenseLayer layer;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        layer.weights.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(fan_in));
        for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = dist(rng);
        layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
        if (batchnorm) {
            const auto n = static_cast<Eigen::Index>(out);
            layer.batchnorm = BatchNormState{Vector::Ones(n), Vector::Zero(n), Vector::Zero(n), Vector::Ones(n)};
        }
        fan_in = out;
        return layer;
    };
    for (std::size_t width : config.layer_widths) model.layers.push_back(make_layer(width, config.use_batchnorm));
    model.layers.push_back(make_layer(config.output_dim, false));
    return model;
}

void MLPModel::validate() const {
    config.validate();
    if (layers.size() != config.layer_widths.size() + 1) throw Error("MLPModel: layer count mismatch");
    auto fan_in = static_cast<Eigen::Index>(config.input_dim);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const bool output = l + 1 == layers.size();
        const auto out = static_cast<Eigen::Index>(output ? config.output_dim : config.layer_widths[l]);
        if (layer.weights.rows() != out || layer.weights.cols() != fan_in || layer.bias.size() != out) {
            throw Error("MLPModel: shape mismatch at layer " + std::to_string(l));
        }
        const bool wants_bn = !output && config.use_batchnorm;
        if (wants_bn != layer.batchnorm.has_value()) {
            throw Error("MLPModel: batchnorm state mismatch at layer " + std::to_string(l));
        }
        if (layer.batchnorm) {
            const auto& bn = *layer.batchnorm;
            if (bn.gamma.size() != out || bn.beta.size() != out || bn.running_mean.size() != out ||
                bn.running_var.size() != out) {
                throw Error("MLPModel: batchnorm shape mismatch at layer " + std::to_string(l));
            }
            if ((bn.running_var.array() <= 0.0).any()) throw Error("MLPModel: running variance must be > 0");
        }
        fan_in = out;
    }
}

std::size_t MLPModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        if (l.batchnorm) n += static_cast<std::size_t>(2 * l.batchnorm->gamma.size());
    }
    return n;
}

namespace {

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vec_from(const json& doc) {
    const auto values = doc.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string class_key(ClassLabel c) { return lowercase(to_string(c)); }

}  // namespace

json MLPModel::to_json() const {
    json doc;
    doc["format"] = "idsrag-mlp";
    doc["version"] = 1;
    doc["target_class"] = class_key(target_class);
    doc["config"] = config.to_json();
    json layer_docs = json::array();
    for (const auto& l : layers) {
        json ld;
        ld["rows"] = l.weights.rows();
        ld["cols"] = l.weights.cols();
        ld["weights"] = std::vector<double>(l.weights.data(), l.weights.data() + l.weights.size());
        ld["bias"] = vec_json(l.bias);
        if (l.batchnorm) {
            ld["batchnorm"] = {{"gamma", vec_json(l.batchnorm->gamma)},
                               {"beta", vec_json(l.batchnorm->beta)},
                               {"running_mean", vec_json(l.batchnorm->running_mean)},
                               {"running_var", vec_json(l.batchnorm->running_var)}};
        }
        layer_docs.push_back(std::move(ld));
    }
    doc["layers"] = std::move(layer_docs);
    doc["class_weights"] = {{"w0", class_weights.w0}, {"w1", class_weights.w1}};
    doc["training"] = training_metadata;
    return doc;
}

MLPModel MLPModel::from_json(const json& doc) {
    if (doc.value("format", std::string()) != "idsrag-mlp") throw Error("model: not an idsrag-mlp document");
    if (doc.value("version", 0) != 1) throw Error("model: unsupported version");
    MLPModel m;
    m.target_class = parse_class_label(doc.at("target_class").get<std::string>());
    m.config = MLPConfig::from_json(doc.at("config"));
    for (const auto& ld : doc.at("layers")) {
        DenseLayer l;
        const auto rows = ld.at("rows").get<Eigen::Index>();
        const auto cols = ld.at("cols").get<Eigen::Index>();
        const auto w = ld.at("weights").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols) throw Error("model: weight count mismatch");
        l.weights = Eigen::Map<const Matrix>(w.data(), rows, cols);
        l.bias = vec_from(ld.at("bias"));
        if (ld.contains("batchnorm")) {
            const auto& bn = ld.at("batchnorm");
            l.batchnorm = BatchNormState{vec_from(bn.at("gamma")), vec_from(bn.at("beta")),
                                         vec_from(bn.at("running_mean")), vec_from(bn.at("running_var"))};
        }
        m.layers.push_back(std::move(l));
    }
    m.class_weights = {doc.at("class_weights").at("w0").get<double>(), doc.at("class_weights").at("w1").get<double>()};
    m.training_metadata = doc.value("training", json::object());
    m.validate();
    return m;
}

void MLPModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write model " + path.string());
    out << to_json().dump() << '\n';
}

MLPModel MLPModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error("model " + path.string() + ": " + e.what());
    }
}

Gradients Gradients::zeros_like(const MLPModel& model) {
    Gradients g;
    for (const auto& l : model.layers) {
        g.weights.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
        g.bias.push_back(Vector::Zero(l.bias.size()));
        const auto n = l.batchnorm ? l.batchnorm->gamma.size() : 0;
        g.gamma.push_back(Vector::Zero(n));
        g.beta.push_back(Vector::Zero(n));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double max = logits.row(r).maxCoeff();
        const auto e = (logits.row(r).array() - max).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

Matrix forward_impl(MLPModel& model, bool update_running, const Matrix& inputs, Mode mode,
                    std::mt19937_64* rng, ForwardCache* cache) {
    if (inputs.cols() != static_cast<Eigen::Index>(model.config.input_dim)) {
        throw Error("forward: expected input width " + std::to_string(model.config.input_dim) + ", got " +
                    std::to_string(inputs.cols()));
    }
    if (mode == Mode::Train && rng == nullptr) throw Error("forward: train mode requires a dropout RNG");
    if (inputs.rows() == 0) return Matrix(0, 2);
    const auto batch = static_cast<double>(inputs.rows());
    if (cache) {
        cache->mode = mode;
        cache->hidden.clear();
    }

    Matrix h = inputs;
    for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        ForwardCache::Layer lc;
        Matrix z = h * layer.weights.transpose();
        z.rowwise() += layer.bias.transpose();
        if (cache) {
            lc.input = h;
            lc.affine = z;
        }
        if (layer.batchnorm) {
            auto& bn = *layer.batchnorm;
            Vector mean, var;
            if (mode == Mode::Train) {
                mean = z.colwise().mean().transpose();
                var = (z.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
                if (update_running) {
                    const Vector unbiased = inputs.rows() > 1 ? Vector(var * (batch / (batch - 1.0))) : var;
                    bn.running_mean = kBatchNormMomentum * bn.running_mean + (1.0 - kBatchNormMomentum) * mean;
                    bn.running_var = kBatchNormMomentum * bn.running_var + (1.0 - kBatchNormMomentum) * unbiased;
                }
            } else {
                mean = bn.running_mean;
                var = bn.running_var;
            }
            const Vector inv_std = (var.array() + kBatchNormEpsilon).rsqrt();
            Matrix xhat = (z.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
            z = (xhat.array().rowwise() * bn.gamma.transpose().array()).rowwise() + bn.beta.transpose().array();
            if (cache) {
                lc.normalized = std::move(xhat);
                lc.batch_mean = mean;
                lc.batch_var = var;
            }
        }
        Matrix a = z.cwiseMax(0.0);
        if (cache) lc.activated = a;
        const double p = model.config.dropout[l];
        if (mode == Mode::Train && p > 0.0) {
            std::bernoulli_distribution keep(1.0 - p);
            Matrix mask(a.rows(), a.cols());
            const double scale = 1.0 / (1.0 - p);
            for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? scale : 0.0;
            a = a.cwiseProduct(mask);
            if (cache) lc.dropout_mask = std::move(mask);
        }
        if (cache) cache->hidden.push_back(std::move(lc));
        h = std::move(a);
    }
    const auto& out = model.layers.back();
    Matrix logits = h * out.weights.transpose();
    logits.rowwise() += out.bias.transpose();
    if (!logits.allFinite()) throw Error("forward: non-finite logits");
    Matrix probs = softmax_rows(logits);
    if (cache) {
        cache->output_input = std::move(h);
        cache->logits = logits;
        cache->probs = probs;
    }
    return probs;
}

}  // namespace

Matrix forward_batch(MLPModel& model, const Matrix& inputs, Mode mode, std::mt19937_64* rng, ForwardCache* cache) {
    return forward_impl(model, true, inputs, mode, rng, cache);
}

Matrix forward_batch(const MLPModel& model, const Matrix& inputs, ForwardCache* cache) {
    // Eval mode never writes to the model.
    return forward_impl(const_cast<MLPModel&>(model), false, inputs, Mode::Eval, nullptr, cache);
}

std::array<double, 2> forward(const MLPModel& model, std::span<const double> x) {
    const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    const Matrix p = forward_batch(model, row);
    return {p(0, 0), p(0, 1)};
}

std::array<double, 2> forward(MLPModel& model, std::span<const double> x, Mode mode, std::mt19937_64* rng) {
    if (mode == Mode::Eval) return forward(static_cast<const MLPModel&>(model), x);
    const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    const Matrix p = forward_batch(model, row, Mode::Train, rng, nullptr);
    return {p(0, 0), p(0, 1)};
}

Matrix backward(const MLPModel& model, const ForwardCache& cache, const Matrix& grad_logits, Gradients* grads) {
    const std::size_t out_index = model.layers.size() - 1;
    const auto& out = model.layers[out_index];
    if (grads) {
        grads->weights[out_index] += grad_logits.transpose() * cache.output_input;
        grads->bias[out_index] += grad_logits.colwise().sum().transpose();
    }
    Matrix grad = grad_logits * out.weights;  // dL/dh for the last hidden layer
    const auto batch = static_cast<double>(grad_logits.rows());

    for (std::size_t l = out_index; l-- > 0;) {
        const auto& layer = model.layers[l];
        const auto& lc = cache.hidden[l];
        if (lc.dropout_mask.size() > 0) grad = grad.cwiseProduct(lc.dropout_mask);
        grad = (lc.activated.array() > 0.0).select(grad, 0.0);
        if (layer.batchnorm) {
            const auto& bn = *layer.batchnorm;
            const Vector inv_std = (lc.batch_var.array() + kBatchNormEpsilon).rsqrt();
            if (grads) {
                grads->gamma[l] += grad.cwiseProduct(lc.normalized).colwise().sum().transpose();
                grads->beta[l] += grad.colwise().sum().transpose();
            }
            const Matrix dxhat = grad.array().rowwise() * bn.gamma.transpose().array();
            if (cache.mode == Mode::Train) {
                const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
                const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(lc.normalized).colwise().sum();
                Matrix centered = (batch * dxhat).rowwise() - sum_dxhat;
                centered -= (lc.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
                grad = (centered.array().rowwise() * (inv_std.transpose().array() / batch)).matrix();
            } else {
                grad = dxhat.array().rowwise() * inv_std.transpose().array();
            }
        }
        if (grads) {
            grads->weights[l] += grad.transpose() * lc.input;
            grads->bias[l] += grad.colwise().sum().transpose();
        }
        grad = grad * layer.weights;
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Loss

ClassWeights class_weights(std::size_t negatives, std::size_t positives) {
    if (negatives == 0 || positives == 0) throw Error("class_weights: every class needs a positive count");
    const auto n = static_cast<double>(negatives + positives);
    return {n / (2.0 * static_cast<double>(negatives)), n / (2.0 * static_cast<double>(positives))};
}

double weighted_bce_loss(int y, double y_hat, const ClassWeights& weights) {
    const double p = std::clamp(y_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
    return -(weights.w1 * y * std::log(p) + weights.w0 * (1 - y) * std::log(1.0 - p));
}

double batch_loss(const Matrix& probs, std::span<const int> labels, const ClassWeights& weights,
                  Matrix* grad_logits) {
    const auto n = probs.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw Error("batch_loss: label count mismatch");
    if (n == 0) throw Error("batch_loss: empty batch");
    if (grad_logits) grad_logits->setZero(n, 2);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double p1 = probs(i, 1);
        total += weighted_bce_loss(y, p1, weights);
        if (grad_logits && p1 > kProbabilityClamp && p1 < 1.0 - kProbabilityClamp) {
            const double dl_dp = (-weights.w1 * y / p1 + weights.w0 * (1 - y) / (1.0 - p1)) * inv_n;
            const double dp_dz = probs(i, 0) * p1;
            (*grad_logits)(i, 1) = dl_dp * dp_dz;
            (*grad_logits)(i, 0) = -dl_dp * dp_dz;
        }
    }
    return total * inv_n;
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(const MLPModel& model, double learning_rate, double beta1, double beta2,
                             double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon),
      m_(Gradients::zeros_like(model)), v_(Gradients::zeros_like(model)) {}

void AdamOptimizer::step(MLPModel& model, const Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        update(layer.weights, grads.weights[l], m_.weights[l], v_.weights[l]);
        update(layer.bias, grads.bias[l], m_.bias[l], v_.bias[l]);
        if (layer.batchnorm) {
            update(layer.batchnorm->gamma, grads.gamma[l], m_.gamma[l], v_.gamma[l]);
            update(layer.batchnorm->beta, grads.beta[l], m_.beta[l], v_.beta[l]);
        }
    }
}

// ---------------------------------------------------------------------------
// Training

std::vector<double> predict_positive(const MLPModel& model, const Matrix& inputs) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(inputs.rows()));
    constexpr Eigen::Index kChunk = 4096;
    for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
        const Eigen::Index rows = std::min(kChunk, inputs.rows() - start);
        const Matrix p = forward_batch(model, inputs.middleRows(start, rows));
        for (Eigen::Index r = 0; r < rows; ++r) out.push_back(p(r, 1));
    }
    return out;
}

namespace {

struct BinaryScores {
    double loss = 0.0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
};

BinaryScores score_binary(const MLPModel& model, const BinaryDataset& data, const ClassWeights& weights) {
    const auto probs = predict_positive(model, data.features);
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const int y = data.labels[i];
        const int pred = probs[i] > 0.5 ? 1 : 0;
        loss += weighted_bce_loss(y, probs[i], weights);
        if (pred == 1 && y == 1) ++tp;
        else if (pred == 0 && y == 0) ++tn;
        else if (pred == 1) ++fp;
        else ++fn;
    }
    const auto f1 = [](std::size_t t, std::size_t false_pos, std::size_t false_neg) {
        const auto denom = static_cast<double>(2 * t + false_pos + false_neg);
        return denom > 0.0 ? 2.0 * static_cast<double>(t) / denom : 0.0;
    };
    BinaryScores s;
    const auto n = static_cast<double>(probs.size());
    s.loss = loss / n;
    s.accuracy = static_cast<double>(tp + tn) / n;
    s.macro_f1 = 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
    return s;
}

}  // namespace

std::pair<MLPModel, TrainHistory> train_binary_classifier(const BinaryDataset& train, const BinaryDataset& validation,
                                                          const MLPConfig& config, const TrainConfig& tc,
                                                          const ClassWeights& weights, ClassLabel target,
                                                          const EpochCallback& on_epoch) {
    config.validate();
    tc.validate();
    if (train.size() == 0 || validation.size() == 0) {
        throw Error("train_binary_classifier: train and validation sets must be non-empty");
    }
    if (static_cast<std::size_t>(train.features.rows()) != train.size() ||
        static_cast<std::size_t>(validation.features.rows()) != validation.size()) {
        throw Error("train_binary_classifier: feature/label count mismatch");
    }

    MLPModel model = MLPModel::initialize(config, target, tc.seed);
    model.class_weights = weights;
    AdamOptimizer adam(model, tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon);
    std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto width = train.features.cols();

    TrainHistory history;
    MLPModel best = model;
    double best_metric = -1.0;
    std::size_t since_best = 0;
    ForwardCache cache;
    Matrix batch_x;
    Matrix grad_logits;
    std::vector<int> batch_y;

    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            const auto rows = static_cast<Eigen::Index>(end - start);
            batch_x.resize(rows, width);
            batch_y.resize(end - start);
            for (std::size_t i = start; i < end; ++i) {
                batch_x.row(static_cast<Eigen::Index>(i - start)) = train.features.row(static_cast<Eigen::Index>(order[i]));
                batch_y[i - start] = train.labels[order[i]];
            }
            Matrix probs;
            try {
                probs = forward_batch(model, batch_x, Mode::Train, &rng, &cache);
            } catch (const Error& e) {
                throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            const double loss = batch_loss(probs, batch_y, weights, &grad_logits);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch));
            }
            loss_sum += loss * static_cast<double>(rows);
            Gradients grads = Gradients::zeros_like(model);
            backward(model, cache, grad_logits, &grads);
            adam.step(model, grads);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        BinaryScores val;
        try {
            val = score_binary(model, validation, weights);
        } catch (const Error& e) {
            throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(val.loss) || !std::isfinite(rec.train_loss)) {
            throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch));
        }
        rec.val_loss = val.loss;
        rec.val_macro_f1 = val.macro_f1;
        rec.val_accuracy = val.accuracy;
        const double metric = tc.selection_metric == SelectionMetric::MacroF1 ? val.macro_f1 : val.accuracy;
        if (metric > best_metric) {
            best_metric = metric;
            best = model;
            history.selected_epoch = epoch;
            since_best = 0;
            rec.improved = true;
        } else {
            ++since_best;
        }
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (since_best >= tc.patience) break;
    }

    best.training_metadata = {{"selected_epoch", history.selected_epoch},
                              {"epochs_trained", history.epochs_trained()},
                              {"best_metric", best_metric},
                              {"train_config", tc.to_json()},
                              {"train_size", train.size()},
                              {"positives", std::count(train.labels.begin(), train.labels.end(), 1)}};
    return {std::move(best), std::move(history)};
}

}  // namespace idsrag::ensemble
