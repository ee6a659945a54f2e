#include "trifuse/train.hpp"

#include <cmath>
#include <limits>

namespace trifuse {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("train: ema_decay must be in [0, 1)");
    if (!(clip_max_norm > 0.0)) throw ConfigError("train: clip_max_norm must be > 0");
    if (clip_norm_type != 2) {
        throw ConfigError("train: only clip_norm_type 2 is supported, got " +
                          std::to_string(clip_norm_type));
    }
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (loss_weights.alpha < 0.0 || loss_weights.beta < 0.0) {
        throw ConfigError("train: loss weights must be >= 0");
    }
}

AdamState AdamState::init(const model::ModelParams& params) {
    AdamState state;
    state.m.reserve(params.items.size());
    state.v.reserve(params.items.size());
    for (const auto& [name, node] : params.items) {
        state.m.push_back(Matrix::zeros(node->value.rows(), node->value.cols()));
        state.v.push_back(Matrix::zeros(node->value.rows(), node->value.cols()));
    }
    return state;
}

void zero_gradients(model::ModelParams& params) {
    for (auto& [name, node] : params.items) node->zero_grad();
}

double global_norm(const std::vector<const Matrix*>& grads) {
    double sq = 0.0;
    for (const Matrix* g : grads) {
        for (std::size_t i = 0; i < g->size(); ++i) sq += g->data()[i] * g->data()[i];
    }
    return std::sqrt(sq);
}

bool clip_gradients(std::vector<Matrix*> grads, double max_norm, int norm_type) {
    if (norm_type != 2) {
        throw ConfigError("clip_gradients: only norm_type 2 is supported, got " +
                          std::to_string(norm_type));
    }
    if (!(max_norm > 0.0)) throw ConfigError("clip_gradients: max_norm must be > 0");
    std::vector<const Matrix*> view(grads.begin(), grads.end());
    const double norm = global_norm(view);
    if (norm <= max_norm) return false;
    const double scale = max_norm / norm;
    for (Matrix* g : grads) {
        for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] *= scale;
    }
    return true;
}

bool clip_gradients(model::ModelParams& params, double max_norm, int norm_type) {
    std::vector<Matrix*> grads;
    grads.reserve(params.items.size());
    for (auto& [name, node] : params.items) grads.push_back(&node->grad());
    return clip_gradients(std::move(grads), max_norm, norm_type);
}

void adam_step(model::ModelParams& params, AdamState& state, const TrainConfig& config) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (state.m.size() != params.items.size()) {
        throw ConfigError("adam_step: state tracks " + std::to_string(state.m.size()) +
                          " tensors, params have " + std::to_string(params.items.size()));
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        auto& node = *params.items[i].second;
        Matrix& g = node.grad();
        if (!g.all_finite()) {
            throw NumericError("adam_step: non-finite gradient in '" + params.items[i].first +
                               "'");
        }
        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
            double gj = g.data()[j];
            if (config.use_l2) gj += config.weight_decay * node.value.data()[j];
            m.data()[j] = beta1 * m.data()[j] + (1.0 - beta1) * gj;
            v.data()[j] = beta2 * v.data()[j] + (1.0 - beta2) * gj * gj;
            const double m_hat = m.data()[j] / bc1;
            const double v_hat = v.data()[j] / bc2;
            node.value.data()[j] -= config.lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

void ema_update(std::vector<Matrix>& ema, const model::ModelParams& params, double decay) {
    if (ema.size() != params.items.size()) {
        throw ConfigError("ema_update: " + std::to_string(ema.size()) + " tensors vs " +
                          std::to_string(params.items.size()) + " params");
    }
    for (std::size_t i = 0; i < ema.size(); ++i) {
        const Matrix& p = params.items[i].second->value;
        Matrix& e = ema[i];
        require_same_shape(e, p, "ema_update");
        for (std::size_t j = 0; j < e.size(); ++j) {
            e.data()[j] = decay * e.data()[j] + (1.0 - decay) * p.data()[j];
        }
    }
}

PredictionSet predict_all(const std::vector<Sample>& samples, const model::ModelParams& params,
                          const ModelConfig& config) {
    PredictionSet out;
    out.mode = to_string(config.head_mode);
    out.items.reserve(samples.size());
    for (const auto& sample : samples) {
        out.items.emplace_back(sample.id, model::predict(sample, params, config));
    }
    return out;
}

EvalReport evaluate_predictions(const PredictionSet& predictions,
                                const std::vector<Sample>& samples, const ModelConfig& config) {
    if (predictions.items.size() != samples.size()) {
        throw DataError("evaluate: " + std::to_string(predictions.items.size()) +
                        " predictions for " + std::to_string(samples.size()) + " samples");
    }
    EvalReport report;
    report.mode = to_string(config.head_mode);
    report.n = samples.size();
    if (config.head_mode == HeadMode::eri) {
        Matrix pred(samples.size(), 7), target(samples.size(), 7);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& values = predictions.items[i].second;
            for (std::size_t j = 0; j < 7; ++j) {
                pred(i, j) = values[j];
                target(i, j) = samples[i].intensities[j];
            }
        }
        PearsonReport pearson = pearson_per_class(pred, target);
        report.per_class = std::move(pearson.per_class);
        report.zero_variance_columns = std::move(pearson.zero_variance_columns);
        report.mean = pearson.mean;
    } else {
        std::vector<std::size_t> pred_class, target_class;
        pred_class.reserve(samples.size());
        target_class.reserve(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& probs = predictions.items[i].second;
            std::size_t best = 0;
            for (std::size_t j = 1; j < probs.size(); ++j) {
                if (probs[j] > probs[best]) best = j;
            }
            pred_class.push_back(best);
            target_class.push_back(samples[i].class_target);
        }
        F1Report f1 = macro_f1(pred_class, target_class, config.expr_classes);
        report.per_class = std::move(f1.per_class);
        report.mean = f1.macro;
    }
    return report;
}

EvalReport evaluate(const std::vector<Sample>& samples, const model::ModelParams& params,
                    const ModelConfig& config) {
    if (samples.empty()) throw ConfigError("evaluate: empty split");
    return evaluate_predictions(predict_all(samples, params, config), samples, config);
}

namespace {

// Temporarily substitutes a weight set into the parameter nodes.
class ScopedWeights {
public:
    ScopedWeights(model::ModelParams& params, const std::vector<Matrix>& replacement)
        : params_(params), saved_(params.values()) {
        params_.set_values(replacement);
    }
    ~ScopedWeights() { params_.set_values(saved_); }
    ScopedWeights(const ScopedWeights&) = delete;
    ScopedWeights& operator=(const ScopedWeights&) = delete;

private:
    model::ModelParams& params_;
    std::vector<Matrix> saved_;
};

struct BatchLosses {
    double total = 0.0;
    double reg = 0.0;
    double cls = 0.0;
};

// Builds the per-sample loss graph, runs backward with weight 1/batch, and
// returns the component values.
BatchLosses accumulate_sample(const Sample& sample, model::ModelParams& params,
                              const ModelConfig& mc, const TrainConfig& tc, double inv_batch,
                              Rng& rng) {
    BatchLosses out;
    const model::ForwardResult fwd = model::forward(sample, params, mc, /*train=*/true, rng);
    ad::NodePtr loss;
    if (mc.head_mode == HeadMode::eri) {
        Matrix target(1, 7);
        for (std::size_t j = 0; j < 7; ++j) target.data()[j] = sample.intensities[j];
        ad::NodePtr reg = ad::mse_against(fwd.intensity, std::move(target));
        out.reg = reg->value.data()[0];
        ad::NodePtr cls =
            ad::cross_entropy_with_indices(fwd.class_logits, {sample.class_target});
        out.cls = cls->value.data()[0];
        loss = ad::scale(reg, tc.loss_weights.alpha);
        if (tc.use_class_loss && tc.loss_weights.beta != 0.0) {
            loss = ad::add(loss, ad::scale(cls, tc.loss_weights.beta));
        }
    } else {
        ad::NodePtr probs = ad::softmax_rows(fwd.class_logits);
        ad::NodePtr p_true = ad::gather_true_prob(probs, {sample.class_target});
        loss = ad::mean_all(ad::focal_pointwise(p_true, tc.focal.alpha_t, tc.focal.gamma));
        out.cls = loss->value.data()[0];
    }
    out.total = loss->value.data()[0];
    ad::backward(ad::scale(loss, inv_batch));
    return out;
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    if (dataset.train.empty()) throw ConfigError("train: empty training split");
    if (dataset.val.empty()) throw ConfigError("train: empty validation split");

    Rng init_rng(mix_seed(train_config.seed, 0x1217));
    Rng epoch_rng(mix_seed(train_config.seed, 0x7e0c));

    model::ModelParams params = model::ModelParams::init(model_config, init_rng);
    AdamState adam = AdamState::init(params);
    std::vector<Matrix> ema = params.values();

    TrainResult result;
    result.best_metric = -std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(dataset.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        epoch_rng.shuffle(order);
        EpochRecord record;
        record.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
            const std::size_t end = std::min(start + train_config.batch_size, order.size());
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            zero_gradients(params);
            double batch_total = 0.0, batch_reg = 0.0, batch_cls = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const BatchLosses losses =
                    accumulate_sample(dataset.train[order[i]], params, model_config,
                                      train_config, inv_batch, epoch_rng);
                batch_total += losses.total;
                batch_reg += losses.reg;
                batch_cls += losses.cls;
            }
            if (!std::isfinite(batch_total)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches));
            }
            if (train_config.use_clip &&
                clip_gradients(params, train_config.clip_max_norm, train_config.clip_norm_type)) {
                ++record.clip_events;
            }
            adam_step(params, adam, train_config);
            if (train_config.use_ema) ema_update(ema, params, train_config.ema_decay);
            record.loss_total += batch_total * inv_batch;
            record.loss_reg += batch_reg * inv_batch;
            record.loss_class += batch_cls * inv_batch;
            ++batches;
        }
        record.loss_total /= static_cast<double>(batches);
        record.loss_reg /= static_cast<double>(batches);
        record.loss_class /= static_cast<double>(batches);
        result.clip_events_total += record.clip_events;

        EvalReport val;
        if (train_config.use_ema) {
            ScopedWeights swap(params, ema);
            val = evaluate(dataset.val, params, model_config);
        } else {
            val = evaluate(dataset.val, params, model_config);
        }
        record.val_per_class = val.per_class;
        record.val_metric = val.mean;

        if (val.mean > result.best_metric) {
            record.improved = true;
            result.best_metric = val.mean;
            result.best_epoch = epoch;
            result.best = make_checkpoint(model_config, train_config.use_ema, params, ema);
        }
        result.history.push_back(std::move(record));
        if (epoch - result.best_epoch >= train_config.patience) break;
    }
    return result;
}

}  // namespace trifuse
