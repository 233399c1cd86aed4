#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nac/graph_prior.hpp"
#include "nac/model.hpp"
#include "nac/params.hpp"
#include "nac/tasks.hpp"

namespace nac {

/// Raised when the loss becomes NaN or infinite; the message carries link
/// probability statistics.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t steps = 5000;
    double peak_lr = 1e-3;
    double min_lr = 1e-5;
    std::size_t warmup_steps = 100;
    double warmup_from = 1e-6;
    double weight_decay = 0.05;
    double lambda_graph = 1.0;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    std::size_t eval_every = 250;
    std::size_t eval_samples = 512;
    std::size_t eval_batch = 128;
    /// Stop once validation accuracy reaches this value (<= 0 disables).
    double stop_at_accuracy = 0.0;
    /// Re-solve the prior matching every this many steps (1 = every step).
    std::size_t matching_every = 1;
    /// Wall-clock budget in seconds, checked after each step (<= 0 disables).
    /// A run cut short is evaluated once more before returning.
    double max_seconds = 0.0;
};

/// Linear warmup from `warmup_from` to `peak_lr`, then cosine decay to
/// `min_lr` at `steps`.
double cosine_lr(const TrainConfig& cfg, std::size_t step);

class AdamW {
public:
    AdamW(ParamList params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(double lr, double weight_decay);
    void zero_grad();
    std::size_t steps_taken() const { return t_; }
    const ParamList& params() const { return params_; }

private:
    ParamList params_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

struct LossParts {
    Tensor total;
    double ce = 0.0;
    double graph = 0.0;
    std::optional<Assignment> matching;
};

/// CE + lambda * L_graph. The graph term is skipped when `prior` is null
/// or lambda is 0.
LossParts total_loss(const Tensor& logits, const std::vector<std::size_t>& labels, const Tensor& probs,
                     const PriorMatrix* prior, double lambda, const std::optional<Assignment>& frozen = std::nullopt);

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t samples = 0;
};

/// Fixed validation set built from its own seed.
std::vector<Batch> make_eval_set(const Task& task, std::size_t samples, std::size_t batch_size, std::uint64_t seed);

struct EvalOptions {
    std::uint64_t seed = 0;  // kernel sampling stream, reseeded per call
    ForwardOptions forward;
    std::function<CircuitDesign(const CircuitDesign&)> design_transform;
};

EvalResult evaluate(const NacModel& model, const std::vector<Batch>& batches, const EvalOptions& opts = {});

struct TrainResult {
    std::size_t steps = 0;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    double final_loss = 0.0;
    std::optional<std::size_t> reached_at;  // first eval step meeting stop_at_accuracy
    bool out_of_time = false;
    double seconds = 0.0;
};

struct TrainHooks {
    std::ostream* metrics = nullptr;  // JSONL, one record per step
    std::function<void(std::size_t step, const EvalResult&)> on_eval;
};

/// Trains in place. The prior is ignored for conditional models.
TrainResult train(NacModel& model, const Task& task, const TrainConfig& cfg, const PriorMatrix* prior,
                  const TrainHooks& hooks = {});

// ------------------------------------------------------------- checkpoints

/// Little-endian "NACC" | u32 version | u32 count | per tensor:
/// u32 name length, name, u32 rank, u32 dims[rank], f64 data.
void save_checkpoint(const ParamList& params, const std::string& path);
/// Loads into existing tensors; names and shapes must match exactly.
void load_checkpoint(const ParamList& params, const std::string& path);

}  // namespace nac
