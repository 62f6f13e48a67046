#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "idsrag/common.hpp"

namespace idsrag::ensemble {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct MLPConfig {
    std::size_t input_dim = 66;
    std::vector<std::size_t> layer_widths;
    std::vector<double> dropout;  // one probability per hidden layer
    bool use_batchnorm = false;
    std::size_t output_dim = 2;

    // [128, 64, 32], uniform dropout 0.3.
    static MLPConfig cicids();
    // [256, 128, 64, 32], batchnorm, dropout graduated 0.4 -> 0.2.
    static MLPConfig unsw();

    void validate() const;
    nlohmann::json to_json() const;
    static MLPConfig from_json(const nlohmann::json& doc);
};

struct BatchNormState {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
};

struct DenseLayer {
    Matrix weights;  // out x in
    Vector bias;
    std::optional<BatchNormState> batchnorm;
};

struct ClassWeights {
    double w0 = 1.0;
    double w1 = 1.0;
};

// One binary one-vs-rest head. `layers` holds the hidden layers followed by
// the 2-way softmax output layer; output index 1 is the target class.
struct MLPModel {
    MLPConfig config;
    ClassLabel target_class = ClassLabel::Benign;
    std::vector<DenseLayer> layers;
    ClassWeights class_weights;
    nlohmann::json training_metadata = nlohmann::json::object();

    // He-uniform weights scaled by fan-in, zero biases, identity batchnorm.
    static MLPModel initialize(const MLPConfig& config, ClassLabel target, std::uint64_t seed);

    void validate() const;
    std::size_t parameter_count() const;

    nlohmann::json to_json() const;
    static MLPModel from_json(const nlohmann::json& doc);
    void save(const std::filesystem::path& path) const;
    static MLPModel load(const std::filesystem::path& path);
};

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kProbabilityClamp = 1e-7;

// Intermediate values kept for backpropagation.
struct ForwardCache {
    struct Layer {
        Matrix input;      // B x in
        Matrix affine;     // W h + b
        Matrix normalized; // x-hat when batchnorm is on
        Vector batch_mean;
        Vector batch_var;
        Matrix activated;  // after ReLU, before dropout
        Matrix dropout_mask;
    };
    Mode mode = Mode::Eval;
    std::vector<Layer> hidden;
    Matrix output_input;
    Matrix logits;
    Matrix probs;
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> bias;
    std::vector<Vector> gamma;
    std::vector<Vector> beta;

    static Gradients zeros_like(const MLPModel& model);
};

// Rows of `inputs` are samples. Train mode draws dropout masks from `rng`,
// normalizes with batch statistics and updates batchnorm running statistics
// in `model` (hence non-const). Returns B x 2 softmax probabilities.
Matrix forward_batch(MLPModel& model, const Matrix& inputs, Mode mode, std::mt19937_64* rng,
                     ForwardCache* cache);
Matrix forward_batch(const MLPModel& model, const Matrix& inputs, ForwardCache* cache = nullptr);

// Eval-mode softmax pair for one input.
std::array<double, 2> forward(const MLPModel& model, std::span<const double> x);
// Train-mode pass on a single sample (dropout active; batchnorm of a single
// sample collapses to beta). `rng` is required.
std::array<double, 2> forward(MLPModel& model, std::span<const double> x, Mode mode, std::mt19937_64* rng);

// Given dLoss/dlogits (B x 2), accumulates parameter gradients into `grads`
// (if non-null) and returns dLoss/dinputs (B x in).
Matrix backward(const MLPModel& model, const ForwardCache& cache, const Matrix& grad_logits,
                Gradients* grads);

ClassWeights class_weights(std::size_t negatives, std::size_t positives);

// Single-sample weighted binary cross-entropy on the positive-class probability,
// clamped to [eps, 1 - eps].
double weighted_bce_loss(int y, double y_hat, const ClassWeights& weights);

// Minibatch mean of weighted_bce_loss and its gradient w.r.t. the logits.
double batch_loss(const Matrix& probs, std::span<const int> labels, const ClassWeights& weights,
                  Matrix* grad_logits);

class AdamOptimizer {
public:
    AdamOptimizer(const MLPModel& model, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8);
    void step(MLPModel& model, const Gradients& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    Gradients m_, v_;
};

enum class SelectionMetric { MacroF1, Accuracy };

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 512;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t patience = 5;
    std::size_t max_epochs = 100;
    SelectionMetric selection_metric = SelectionMetric::MacroF1;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& doc);
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_macro_f1 = 0.0;
    double val_accuracy = 0.0;
    bool improved = false;

    nlohmann::json to_json() const;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t selected_epoch = 0;  // 1-based

    std::size_t epochs_trained() const { return epochs.size(); }
};

struct BinaryDataset {
    Matrix features;
    std::vector<int> labels;  // 1 = target class

    std::size_t size() const { return labels.size(); }
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(std::size_t epoch, const std::string& what)
        : Error(what), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minibatch Adam on the weighted objective with early stopping on the
// validation selection metric; returns the best-epoch weights.
std::pair<MLPModel, TrainHistory> train_binary_classifier(const BinaryDataset& train,
                                                          const BinaryDataset& validation,
                                                          const MLPConfig& config, const TrainConfig& train_config,
                                                          const ClassWeights& weights, ClassLabel target,
                                                          const EpochCallback& on_epoch = {});

// Positive-class probability for every row (eval mode).
std::vector<double> predict_positive(const MLPModel& model, const Matrix& inputs);

}  // namespace idsrag::ensemble
