#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trifuse/checkpoint.hpp"
#include "trifuse/data.hpp"
#include "trifuse/losses.hpp"
#include "trifuse/metrics.hpp"
#include "trifuse/model.hpp"

namespace trifuse {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 15;
    double ema_decay = 0.99;
    double clip_max_norm = 0.1;
    int clip_norm_type = 2;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1234;
    LossWeights loss_weights;
    FocalParams focal;
    bool use_class_loss = true;
    bool use_ema = true;
    bool use_l2 = true;
    bool use_clip = true;

    void validate() const;
};

// Adam moments, one pair per parameter tensor, plus the shared step counter.
struct AdamState {
    std::vector<Matrix> m, v;
    std::uint64_t step = 0;

    static AdamState init(const model::ModelParams& params);
};

void zero_gradients(model::ModelParams& params);

// Global L2 norm over a set of gradient tensors.
double global_norm(const std::vector<const Matrix*>& grads);

// Scales all gradients by max_norm/norm when the global norm exceeds
// max_norm. Returns true when scaling happened. Only norm_type 2 is
// supported.
bool clip_gradients(std::vector<Matrix*> grads, double max_norm, int norm_type = 2);
bool clip_gradients(model::ModelParams& params, double max_norm, int norm_type = 2);

// Bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8) reading each
// parameter's accumulated gradient. With use_l2, weight_decay * param is
// added to the gradient first.
void adam_step(model::ModelParams& params, AdamState& state, const TrainConfig& config);

// ema <- decay * ema + (1 - decay) * param, elementwise.
void ema_update(std::vector<Matrix>& ema, const model::ModelParams& params, double decay);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_reg = 0.0;
    double loss_class = 0.0;
    std::vector<double> val_per_class;
    double val_metric = 0.0;
    std::size_t clip_events = 0;
    bool improved = false;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
    double best_metric = 0.0;
    std::size_t best_epoch = 0;
    std::size_t clip_events_total = 0;
};

// Validation-style scoring of a parameter set over samples: mean per-class
// Pearson for intensity models, macro F1 for expression models.
struct EvalReport {
    std::string mode;
    std::vector<double> per_class;
    double mean = 0.0;
    std::vector<std::size_t> zero_variance_columns;
    std::size_t n = 0;
};

EvalReport evaluate(const std::vector<Sample>& samples, const model::ModelParams& params,
                    const ModelConfig& config);

PredictionSet predict_all(const std::vector<Sample>& samples, const model::ModelParams& params,
                          const ModelConfig& config);

EvalReport evaluate_predictions(const PredictionSet& predictions,
                                const std::vector<Sample>& samples, const ModelConfig& config);

// Full recipe: seeded shuffling, minibatch gradients of the weighted loss,
// optional clipping/L2/EMA, validation each epoch, early stop when the
// metric fails to improve for `patience` consecutive epochs. Returns the
// best checkpoint (raw + smoothed weights) and the per-epoch history.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config);

}  // namespace trifuse
