#include "nac/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace nac {

double cosine_lr(const TrainConfig& cfg, std::size_t step) {
    if (step < cfg.warmup_steps) {
        const double frac = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
        return cfg.warmup_from + (cfg.peak_lr - cfg.warmup_from) * frac;
    }
    if (cfg.steps <= cfg.warmup_steps) return cfg.peak_lr;
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) /
                                              static_cast<double>(cfg.steps - cfg.warmup_steps));
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(ParamList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
    }
}

void AdamW::step(double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor w = params_[i].value;
        if (!w.has_grad()) continue;
        auto data = w.data();
        const auto g = w.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        const double decay = params_[i].decay ? 1.0 - lr * weight_decay : 1.0;
        for (std::size_t k = 0; k < data.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            data[k] = data[k] * decay - lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

double clip_grad_norm(const ParamList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.value.has_grad()) continue;
        for (double g : p.value.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (const auto& p : params) {
            if (!p.value.has_grad()) continue;
            Tensor t = p.value;
            for (double& g : t.mutable_grad()) g *= f;
        }
    }
    return norm;
}

LossParts total_loss(const Tensor& logits, const std::vector<std::size_t>& labels, const Tensor& probs,
                     const PriorMatrix* prior, double lambda, const std::optional<Assignment>& frozen) {
    LossParts parts;
    const Tensor ce = cross_entropy(logits, labels);
    parts.ce = ce.item();
    parts.total = ce;
    if (prior && lambda != 0.0 && probs.defined() && probs.rank() == 2) {
        auto reg = graph_regularizer(probs, *prior, frozen);
        parts.graph = reg.loss.item();
        parts.total = add(ce, scale(reg.loss, lambda));
        parts.matching = std::move(reg.matching);
    }
    return parts;
}

std::vector<Batch> make_eval_set(const Task& task, std::size_t samples, std::size_t batch_size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Batch> out;
    for (std::size_t done = 0; done < samples; done += batch_size) {
        out.push_back(task.batch(std::min(batch_size, samples - done), rng));
    }
    return out;
}

EvalResult evaluate(const NacModel& model, const std::vector<Batch>& batches, const EvalOptions& opts) {
    NoGradGuard guard;
    std::mt19937_64 rng(opts.seed);
    ForwardOptions fwd = opts.forward;
    fwd.training = false;
    EvalResult r;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& b : batches) {
        CircuitDesign design = model.design(b);
        if (opts.design_transform) design = opts.design_transform(design);
        const Tensor logits = model.forward(b, design, rng, fwd);
        loss_sum += cross_entropy(logits, b.labels).item() * static_cast<double>(b.size());
        const std::size_t classes = logits.dim(1);
        const auto z = logits.data();
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto row = z.begin() + static_cast<std::ptrdiff_t>(i * classes);
            const auto pred = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(classes)) - row);
            correct += pred == b.labels[i];
        }
        r.samples += b.size();
    }
    if (r.samples) {
        r.accuracy = static_cast<double>(correct) / static_cast<double>(r.samples);
        r.loss = loss_sum / static_cast<double>(r.samples);
    }
    return r;
}

namespace {

std::string probs_summary(const Tensor& probs) {
    if (!probs.defined()) return "link probabilities unavailable";
    const auto v = probs.data();
    double lo = INFINITY, hi = -INFINITY, s = 0.0;
    std::size_t bad = 0;
    for (double x : v) {
        if (!std::isfinite(x)) {
            ++bad;
            continue;
        }
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        s += x;
    }
    std::ostringstream os;
    os << "link probabilities: min " << lo << ", max " << hi << ", mean " << s / static_cast<double>(v.size())
       << ", non-finite " << bad;
    return os.str();
}

}  // namespace

TrainResult train(NacModel& model, const Task& task, const TrainConfig& cfg, const PriorMatrix* prior,
                  const TrainHooks& hooks) {
    if (cfg.batch_size == 0 || cfg.eval_every == 0) throw ContractError("train: batch size and eval interval must be positive");
    const bool conditional = model.config().mode == DesignMode::Conditional;
    const PriorMatrix* active_prior = conditional ? nullptr : prior;

    AdamW opt(model.params());
    std::mt19937_64 data_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
    std::mt19937_64 kernel_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 2);
    const auto eval_set = make_eval_set(task, cfg.eval_samples, cfg.eval_batch, cfg.seed + 0x5EED);

    TrainResult result;
    std::optional<Assignment> matching;
    auto run_eval = [&](std::size_t step) {
        EvalOptions eo;
        eo.seed = cfg.seed + 17;
        const EvalResult er = evaluate(model, eval_set, eo);
        result.final_accuracy = er.accuracy;
        result.best_accuracy = std::max(result.best_accuracy, er.accuracy);
        if (hooks.on_eval) hooks.on_eval(step, er);
        return er;
    };

    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const Batch batch = task.batch(cfg.batch_size, data_rng);
        const CircuitDesign design = model.design(batch);
        const Tensor probs = model.link_probs(design);
        const Tensor logits = model.forward(batch, design, kernel_rng);

        const bool resolve = !matching || cfg.matching_every <= 1 || step % cfg.matching_every == 0;
        LossParts loss = total_loss(logits, batch.labels, probs, active_prior, cfg.lambda_graph,
                                    resolve ? std::nullopt : matching);
        if (loss.matching) matching = loss.matching;
        const double total = loss.total.item();
        if (!std::isfinite(total)) {
            throw TrainingDiverged("loss became " + std::to_string(total) + " at step " + std::to_string(step) + "; " +
                                   probs_summary(probs));
        }
        opt.zero_grad();
        backward(loss.total);
        clip_grad_norm(opt.params(), cfg.grad_clip);
        const double lr = cosine_lr(cfg, step);
        opt.step(lr, cfg.weight_decay);
        result.steps = step + 1;
        result.final_loss = total;

        nlohmann::json rec = {{"step", step}, {"loss", total}, {"ce", loss.ce}, {"lr", lr}, {"l_graph", loss.graph}};
        const bool out_of_time = cfg.max_seconds > 0.0 && elapsed() >= cfg.max_seconds;
        const bool eval_now = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps || out_of_time;
        if (eval_now) {
            const EvalResult er = run_eval(step + 1);
            rec["accuracy"] = er.accuracy;
            if (cfg.stop_at_accuracy > 0.0 && er.accuracy >= cfg.stop_at_accuracy) {
                result.reached_at = step + 1;
                if (hooks.metrics) *hooks.metrics << rec.dump() << '\n';
                break;
            }
        }
        if (hooks.metrics) *hooks.metrics << rec.dump() << '\n';
        if (out_of_time) {
            result.out_of_time = true;
            break;
        }
    }
    if (hooks.metrics) hooks.metrics->flush();
    result.seconds = elapsed();
    return result;
}

}  // namespace nac
