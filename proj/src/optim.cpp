#include "cprn/optim.hpp"

#include <cmath>

namespace cprn {

AdamW::AdamW(ParameterStore& store, AdamWConfig cfg) : store_(&store), cfg_(cfg) {
    for (const auto& name : store.names()) {
        const auto n = store.get(name).data().size();
        m_[name].assign(n, real(0));
        v_[name].assign(n, real(0));
    }
}

void AdamW::step(const std::map<std::string, std::vector<real>>& grads, real lr_override) {
    const real lr = lr_override < real(0) ? cfg_.lr : lr_override;
    ++t_;
    const real bc1 = real(1) - std::pow(cfg_.beta1, static_cast<real>(t_));
    const real bc2 = real(1) - std::pow(cfg_.beta2, static_cast<real>(t_));
    for (auto& [name, m] : m_) {
        auto& v = v_[name];
        auto& p = store_->get(name).node()->value;
        const auto it = grads.find(name);
        const std::vector<real>* g = it == grads.end() ? nullptr : &it->second;
        if (g != nullptr && g->size() != p.size()) {
            throw DimError("AdamW: gradient size mismatch for " + name);
        }
        const real decay = real(1) - lr * cfg_.weight_decay;
        for (size_t i = 0; i < p.size(); ++i) {
            const real gi = g ? (*g)[i] : real(0);
            m[i] = cfg_.beta1 * m[i] + (real(1) - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (real(1) - cfg_.beta2) * gi * gi;
            const real mhat = m[i] / bc1;
            const real vhat = v[i] / bc2;
            p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace cprn
