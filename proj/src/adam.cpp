#include "xdr/adam.hpp"

#include <cmath>

namespace xdr {

void Adam::step(ParameterMap<float>& weights, const ParameterMap<float>& grads,
                const std::set<std::string>& frozen) {
    for (const auto& name : frozen) {
        if (!weights.contains(name)) throw Error("frozen set names unknown tensor '" + name + "'");
    }
    for (const auto& [name, w] : weights) {
        if (frozen.contains(name)) continue;
        auto g = grads.find(name);
        if (g == grads.end()) throw Error("no gradient for trainable tensor '" + name + "'");
        if (g->second.shape() != w.shape()) {
            throw DimensionError("gradient shape " + shape_str(g->second.shape()) +
                                 " does not match weight '" + name + "' " + shape_str(w.shape()));
        }
    }

    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& [name, w] : weights) {
        if (frozen.contains(name)) continue;
        const auto& g = grads.at(name);
        auto [mi, m_new] = m_.try_emplace(name, w.shape(), 0.0f);
        auto [vi, v_new] = v_.try_emplace(name, w.shape(), 0.0f);
        auto& m = mi->second;
        auto& v = vi->second;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mn = b1 * m[i] + (1.0 - b1) * gi;
            const double vn = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mn);
            v[i] = static_cast<float>(vn);
            const double mhat = mn / c1;
            const double vhat = vn / c2;
            w[i] = static_cast<float>(w[i] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
        }
    }
}

}  // namespace xdr
