#pragma once

// AdamW with decoupled weight decay, and reduce-on-plateau LR scheduling.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "swinseg/errors.hpp"
#include "swinseg/params.hpp"

namespace swinseg {

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Owns first/second-moment state for an explicit subset of parameters (the
// distillation stage trains encoder+neck only).
class AdamW {
  public:
    AdamW() = default;
    AdamW(std::vector<std::string> names, const ParamStore<float>& store, AdamWConfig cfg)
        : cfg_(cfg), names_(std::move(names)) {
        for (const std::string& n : names_) {
            const auto numel = static_cast<size_t>(store.at(n)->numel());
            m_[n].assign(numel, 0.0f);
            v_[n].assign(numel, 0.0f);
        }
    }

    void step(ParamStore<float>& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const std::string& n : names_) {
            Tensor<float> p = store.at(n);
            if (p->grad.empty()) p->ensure_grad();
            std::vector<float>& m = m_[n];
            std::vector<float>& v = v_[n];
            for (int64_t i = 0; i < p->numel(); ++i) {
                const double g = p->grad[i];
                m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
                v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                const double update =
                    mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->data[i];
                p->data[i] = static_cast<float>(p->data[i] - cfg_.lr * update);
            }
        }
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamWConfig& config() const { return cfg_; }
    int64_t t() const { return t_; }
    const std::vector<std::string>& names() const { return names_; }

    // Checkpoint plumbing.
    const std::vector<float>& m_state(const std::string& n) const { return m_.at(n); }
    const std::vector<float>& v_state(const std::string& n) const { return v_.at(n); }
    void restore(const std::string& n, std::vector<float> m, std::vector<float> v) {
        if (!m_.count(n)) throw CheckpointError("optimizer state for unknown parameter: " + n);
        if (m.size() != m_.at(n).size() || v.size() != v_.at(n).size())
            throw CheckpointError("optimizer state size mismatch for: " + n);
        m_[n] = std::move(m);
        v_[n] = std::move(v);
    }
    void set_t(int64_t t) { t_ = t; }

  private:
    AdamWConfig cfg_;
    std::vector<std::string> names_;
    std::map<std::string, std::vector<float>> m_, v_;
    int64_t t_ = 0;
};

struct PlateauConfig {
    double factor = 0.5;
    int patience = 2;
    double min_delta = 1e-4;
    double lr_min = 1e-6;
};

// Halves the LR once `patience` consecutive epochs fail to improve the best
// metric by more than min_delta; the bad-epoch counter resets on reduction.
class PlateauScheduler {
  public:
    PlateauScheduler() = default;
    explicit PlateauScheduler(PlateauConfig cfg) : cfg_(cfg) {}

    double update(double metric, double lr) {
        if (metric < best_ - cfg_.min_delta) {
            best_ = metric;
            bad_ = 0;
        } else if (++bad_ >= cfg_.patience) {
            bad_ = 0;
            lr = std::max(lr * cfg_.factor, cfg_.lr_min);
        }
        return lr;
    }

    double best() const { return best_; }
    int bad() const { return bad_; }
    void restore(double best, int bad) {
        best_ = best;
        bad_ = bad;
    }

  private:
    PlateauConfig cfg_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

}  // namespace swinseg
