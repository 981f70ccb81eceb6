#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "xdr/tensor.hpp"

namespace xdr {

/// Named parameter tensors, iterated in lexicographic name order.
template <typename T>
using ParameterMap = std::map<std::string, Tensor<T>>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam with per-call freeze sets.
///
/// Frozen tensors are skipped entirely: neither the weight nor its moments are
/// touched, so they stay byte-identical across any number of steps.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Applies one update. Every frozen name must name a weight, and every
    /// non-frozen weight must have a gradient of the same shape.
    void step(ParameterMap<float>& weights, const ParameterMap<float>& grads,
              const std::set<std::string>& frozen);

    std::int64_t steps() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return config_; }
    const ParameterMap<float>& first_moment() const noexcept { return m_; }
    const ParameterMap<float>& second_moment() const noexcept { return v_; }

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    ParameterMap<float> m_;
    ParameterMap<float> v_;
};

}  // namespace xdr
