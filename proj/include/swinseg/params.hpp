#pragma once

// Parameter declarations and storage. declare_model() is the single source of
// truth for parameter names, shapes, and initialization; the store, the
// profiler's parameter counts, and checkpoint validation all derive from it.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "swinseg/config.hpp"
#include "swinseg/errors.hpp"
#include "swinseg/rng.hpp"
#include "swinseg/tensor.hpp"

namespace swinseg {

enum class InitKind { TruncNormal, Zeros, Ones, Normal };

struct ParamDecl {
    std::string name;
    Shape shape;
    InitKind init = InitKind::TruncNormal;
    bool is_buffer = false;  // buffers (running stats, fixed matrices) take no gradient
};

// Ordered list of every tensor the model owns, grouped encoder -> prompt
// encoder -> decoder.
std::vector<ParamDecl> declare_model(const ModelConfig& cfg);

enum class ParamGroup { Encoder, PromptEncoder, Decoder };
ParamGroup param_group(const std::string& name);

// Trainable parameter count (buffers excluded) for one group / overall.
int64_t count_params(const std::vector<ParamDecl>& decls);
int64_t count_params(const std::vector<ParamDecl>& decls, ParamGroup group);

uint64_t fnv1a(const std::string& s);

template <typename T>
class ParamStore {
  public:
    ParamStore() = default;
    explicit ParamStore(const ModelConfig& cfg) : cfg_(cfg), decls_(declare_model(cfg)) {
        for (const ParamDecl& d : decls_)
            tensors_[d.name] = make_tensor<T>(d.shape, !d.is_buffer);
    }

    // Name-keyed streams make initialization order-independent.
    void init(uint64_t seed) {
        for (const ParamDecl& d : decls_) {
            Rng rng(Rng::mix(seed, fnv1a(d.name)));
            Tensor<T>& t = tensors_[d.name];
            switch (d.init) {
                case InitKind::TruncNormal:
                    for (auto& v : t->data) v = static_cast<T>(rng.trunc_normal(0.02));
                    break;
                case InitKind::Zeros:
                    std::fill(t->data.begin(), t->data.end(), T(0));
                    break;
                case InitKind::Ones:
                    std::fill(t->data.begin(), t->data.end(), T(1));
                    break;
                case InitKind::Normal:
                    for (auto& v : t->data) v = static_cast<T>(rng.normal());
                    break;
            }
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<ParamDecl>& decls() const { return decls_; }

    Tensor<T> at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw CheckpointError("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }

    std::vector<Tensor<T>> trainable() const {
        std::vector<Tensor<T>> out;
        for (const ParamDecl& d : decls_)
            if (!d.is_buffer) out.push_back(tensors_.at(d.name));
        return out;
    }
    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const ParamDecl& d : decls_)
            if (!d.is_buffer) out.push_back(d.name);
        return out;
    }

    void zero_grads() {
        for (const ParamDecl& d : decls_)
            if (!d.is_buffer) tensors_.at(d.name)->zero_grad();
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out(cfg_);
        for (const ParamDecl& d : decls_) {
            const Tensor<T>& src = tensors_.at(d.name);
            Tensor<U> dst = out.at(d.name);
            for (int64_t i = 0; i < src->numel(); ++i)
                dst->data[i] = static_cast<U>(src->data[i]);
        }
        return out;
    }

  private:
    ModelConfig cfg_;
    std::vector<ParamDecl> decls_;
    std::map<std::string, Tensor<T>> tensors_;
};

}  // namespace swinseg
