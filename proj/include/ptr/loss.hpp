#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ptr/util.hpp"

namespace ptr::loss {

enum class BetaKind { uniform, linear, custom };

inline const char* to_string(BetaKind k) {
    switch (k) {
        case BetaKind::uniform: return "uniform";
        case BetaKind::linear: return "linear";
        case BetaKind::custom: return "custom";
    }
    return "linear";
}

inline BetaKind beta_kind_from_string(const std::string& s) {
    if (s == "uniform") return BetaKind::uniform;
    if (s == "linear") return BetaKind::linear;
    if (s == "custom") return BetaKind::custom;
    throw ConfigError("unknown beta schedule: " + s);
}

// Confidence-weight schedule: nonnegative, nondecreasing, sums to 1.
inline std::vector<double> beta_schedule(std::size_t n, BetaKind kind,
                                         const std::vector<double>& custom = {}) {
    if (n == 0) throw ContractError("beta schedule needs n >= 1");
    std::vector<double> beta;
    switch (kind) {
        case BetaKind::uniform:
            beta.assign(n, 1.0 / static_cast<double>(n));
            break;
        case BetaKind::linear: {
            const double denom = static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
            beta.reserve(n);
            for (std::size_t t = 1; t <= n; ++t) beta.push_back(static_cast<double>(t) / denom);
            break;
        }
        case BetaKind::custom: {
            if (custom.size() != n) {
                throw ConfigError("custom beta list length " + std::to_string(custom.size()) +
                                  " does not match n = " + std::to_string(n));
            }
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (custom[i] < 0.0) throw ConfigError("custom beta values must be >= 0");
                if (i > 0 && custom[i] < custom[i - 1]) {
                    throw ConfigError("custom beta values must be nondecreasing");
                }
                sum += custom[i];
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("custom beta values must sum to 1");
            beta = custom;
            break;
        }
    }
    return beta;
}

struct LossConfig {
    double lambda1 = 0.8;
    double lambda2 = 0.1;
    double lambda3 = 0.1;
    BetaKind beta_kind = BetaKind::linear;
    std::vector<double> beta_custom;
    // The original formulation adds the consistency sum, which rewards
    // inconsistency; the default penalizes (1 - F_cons) instead. The flag
    // restores the original sign for comparison.
    bool literal_consistency_sign = false;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) {
            throw ConfigError("lambda weights must be >= 0");
        }
        if (std::abs(lambda1 + lambda2 + lambda3 - 1.0) > 1e-9) {
            throw ConfigError("lambda1 + lambda2 + lambda3 must equal 1");
        }
        if (beta_kind == BetaKind::custom && beta_custom.empty()) {
            throw ConfigError("custom beta schedule requires a beta list");
        }
    }

    std::vector<double> betas(std::size_t n) const {
        return beta_schedule(n, beta_kind, beta_custom);
    }
};

inline constexpr double kMinStepProbability = 1e-12;

// p[t] = Pr(y_t | query, thought sequence), t = 1..n. Entries in (0,1].
struct StepProbabilities {
    std::vector<double> p;

    void validate() const {
        if (p.empty()) throw ContractError("step probabilities are empty");
        for (double v : p) {
            if (!(v > 0.0) || v > 1.0) {
                throw ContractError("step probabilities must lie in (0, 1]");
            }
            if (v < kMinStepProbability) {
                throw ContractError("step probability below 1e-12; log would be unstable");
            }
        }
    }
};

// c[j] = F_cons(y_{j+2}, y_{j+1}) for adjacent steps; length n - 1.
struct ConsistencyValues {
    std::vector<double> c;

    void validate() const {
        for (double v : c) {
            if (v < 0.0 || v > 1.0) throw ContractError("consistency values must lie in [0,1]");
        }
    }
};

struct LossBreakdown {
    double term_answer = 0.0;
    double term_consistency = 0.0;
    double term_confidence = 0.0;
    double total = 0.0;
};

// Reference objective for one example:
//   lambda1 * (-log p_n)
// + lambda2 * sum_t g(c_t)          g(c) = 1 - c, or c under the literal flag
// + lambda3 * sum_t beta_t (1 - p_t)
inline LossBreakdown ptr_loss(const StepProbabilities& probs, const ConsistencyValues& cons,
                              const LossConfig& cfg) {
    cfg.validate();
    probs.validate();
    cons.validate();
    const std::size_t n = probs.p.size();
    if (cons.c.size() + 1 != n) {
        throw ContractError("expected " + std::to_string(n - 1) + " consistency values, got " +
                            std::to_string(cons.c.size()));
    }
    LossBreakdown out;
    out.term_answer = -cfg.lambda1 * std::log(probs.p.back());
    for (double c : cons.c) {
        out.term_consistency += cfg.literal_consistency_sign ? c : (1.0 - c);
    }
    out.term_consistency *= cfg.lambda2;
    const std::vector<double> beta = cfg.betas(n);
    for (std::size_t t = 0; t < n; ++t) {
        out.term_confidence += beta[t] * (1.0 - probs.p[t]);
    }
    out.term_confidence *= cfg.lambda3;
    out.total = out.term_answer + out.term_consistency + out.term_confidence;
    return out;
}

// ----------------------------------------------------------------------------
// Desk-scale differentiable toy model: each step is a sequence of positions,
// each position a softmax over a small vocabulary with one labeled token.
// p[t] is the product of the labeled-token probabilities of step t.
// ----------------------------------------------------------------------------

struct ToyStep {
    std::vector<std::vector<double>> logits;  // [position][vocab]
    std::vector<int> labels;                  // [position]
};

struct ToyModel {
    std::vector<ToyStep> steps;
    // Raw product of labeled-token probabilities by default; the geometric
    // mean (length-normalized) reading is available behind this flag.
    bool length_normalized = false;

    void validate() const {
        if (steps.empty()) throw ContractError("toy model has no steps");
        for (const auto& step : steps) {
            if (step.logits.empty() || step.logits.size() != step.labels.size()) {
                throw ContractError("toy step positions and labels mismatch");
            }
            for (std::size_t j = 0; j < step.logits.size(); ++j) {
                if (step.labels[j] < 0 ||
                    step.labels[j] >= static_cast<int>(step.logits[j].size())) {
                    throw ContractError("toy step label out of vocabulary range");
                }
            }
        }
    }
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
    double m = logits.front();
    for (double v : logits) m = std::max(m, v);
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

inline StepProbabilities step_probabilities(const ToyModel& model) {
    model.validate();
    StepProbabilities probs;
    probs.p.reserve(model.steps.size());
    for (const auto& step : model.steps) {
        double p = 1.0;
        for (std::size_t j = 0; j < step.logits.size(); ++j) {
            p *= softmax(step.logits[j])[static_cast<std::size_t>(step.labels[j])];
        }
        if (model.length_normalized) {
            p = std::pow(p, 1.0 / static_cast<double>(step.logits.size()));
        }
        probs.p.push_back(p);
    }
    return probs;
}

inline double total_loss(const ToyModel& model, const ConsistencyValues& cons,
                         const LossConfig& cfg) {
    return ptr_loss(step_probabilities(model), cons, cfg).total;
}

// dL/dlogit in the same shape as the model's logits. The consistency term is
// constant in the parameters, so only the answer and confidence terms flow.
inline std::vector<std::vector<std::vector<double>>> analytic_gradients(
    const ToyModel& model, const ConsistencyValues& cons, const LossConfig& cfg) {
    cfg.validate();
    model.validate();
    (void)cons;
    const StepProbabilities probs = step_probabilities(model);
    probs.validate();
    const std::size_t n = model.steps.size();
    const std::vector<double> beta = cfg.betas(n);

    std::vector<std::vector<std::vector<double>>> grads(n);
    for (std::size_t t = 0; t < n; ++t) {
        // dL/dp_t: answer term only at the last step; confidence term at all.
        double dl_dp = -cfg.lambda3 * beta[t];
        if (t + 1 == n) dl_dp += -cfg.lambda1 / probs.p[t];

        const ToyStep& step = model.steps[t];
        const double length_scale =
            model.length_normalized ? 1.0 / static_cast<double>(step.logits.size()) : 1.0;
        grads[t].resize(step.logits.size());
        for (std::size_t j = 0; j < step.logits.size(); ++j) {
            const std::vector<double> s = softmax(step.logits[j]);
            const int label = step.labels[j];
            grads[t][j].resize(s.size());
            for (std::size_t k = 0; k < s.size(); ++k) {
                // dp_t/dz_{t,j,k} = p_t * scale * (1[k == label] - s_k), with
                // scale = 1/positions under length normalization.
                const double dp_dz = probs.p[t] * length_scale *
                                     ((static_cast<int>(k) == label ? 1.0 : 0.0) - s[k]);
                grads[t][j][k] = dl_dp * dp_dz;
            }
        }
    }
    return grads;
}

// Central-difference check of the analytic gradients. Returns the maximum
// relative error over every logit.
inline double grad_check(const ToyModel& model, const ConsistencyValues& cons,
                         const LossConfig& cfg, double eps) {
    if (!(eps > 0.0) || eps > 1e-3) throw ContractError("grad_check eps must lie in (0, 1e-3]");
    const auto analytic = analytic_gradients(model, cons, cfg);
    ToyModel perturbed = model;
    double max_rel = 0.0;
    for (std::size_t t = 0; t < model.steps.size(); ++t) {
        for (std::size_t j = 0; j < model.steps[t].logits.size(); ++j) {
            for (std::size_t k = 0; k < model.steps[t].logits[j].size(); ++k) {
                double& z = perturbed.steps[t].logits[j][k];
                const double original = z;
                z = original + eps;
                const double up = total_loss(perturbed, cons, cfg);
                z = original - eps;
                const double down = total_loss(perturbed, cons, cfg);
                z = original;
                const double numeric = (up - down) / (2.0 * eps);
                const double a = analytic[t][j][k];
                const double rel =
                    std::abs(a - numeric) / std::max(1e-4, std::abs(a) + std::abs(numeric));
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

}  // namespace ptr::loss
