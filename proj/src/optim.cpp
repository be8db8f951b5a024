#include "owdet/optim.hpp"

#include <cmath>

namespace owdet {

Tensor ParamStore::add(const std::string& name, Tensor tensor, bool trainable) {
    if (entries_.count(name)) throw ContractError("duplicate parameter name: " + name);
    tensor.set_requires_grad(trainable);
    entries_[name] = Entry{tensor, trainable};
    return tensor;
}

Tensor ParamStore::get(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second.tensor;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    it->second.trainable = trainable;
    it->second.tensor.set_requires_grad(trainable);
}

bool ParamStore::trainable(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second.trainable;
}

void ParamStore::freeze_all() {
    for (auto& [name, entry] : entries_) {
        entry.trainable = false;
        entry.tensor.set_requires_grad(false);
    }
}

std::int64_t ParamStore::total_params() const {
    std::int64_t n = 0;
    for (const auto& [name, entry] : entries_) n += entry.tensor.numel();
    return n;
}

std::int64_t ParamStore::trainable_params() const {
    std::int64_t n = 0;
    for (const auto& [name, entry] : entries_)
        if (entry.trainable) n += entry.tensor.numel();
    return n;
}

void ParamStore::zero_grads() const {
    for (const auto& [name, entry] : entries_)
        if (entry.trainable) entry.tensor.zero_grad();
}

std::vector<double> ParamStore::snapshot_values() const {
    std::vector<double> out;
    for (const auto& [name, entry] : entries_)
        out.insert(out.end(), entry.tensor.values().begin(), entry.tensor.values().end());
    return out;
}

void ParamStore::restore_values(const std::vector<double>& snapshot) {
    std::size_t offset = 0;
    for (auto& [name, entry] : entries_) {
        auto& vals = entry.tensor.mutable_values();
        if (offset + vals.size() > snapshot.size())
            throw ContractError("parameter snapshot too short for store");
        std::copy(snapshot.begin() + static_cast<std::ptrdiff_t>(offset),
                  snapshot.begin() + static_cast<std::ptrdiff_t>(offset + vals.size()), vals.begin());
        offset += vals.size();
    }
    if (offset != snapshot.size()) throw ContractError("parameter snapshot size mismatch");
}

double CosineSchedule::lr_at(std::int64_t step) const {
    if (horizon <= 0) return base_lr;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void AdamW::step(ParamStore& store) {
    const CosineSchedule schedule{options_.base_lr, options_.schedule_horizon};
    // Pre-increment counter: the first step runs at the full base rate, the
    // schedule reaches zero one step past the horizon.
    const double lr = schedule.lr_at(step_count_);
    ++step_count_;
    last_lr_ = lr;

    const double b1 = options_.beta1, b2 = options_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));

    for (auto& [name, entry] : store.entries()) {
        if (!entry.trainable) continue;
        const Tensor& p = entry.tensor;
        if (!p.grad_allocated())
            throw ContractError("adamw step without gradients for parameter: " + name);
        const auto& g = p.grad();
        auto& moments = moments_[name];
        if (moments.m.empty()) {
            moments.m.assign(g.size(), 0.0);
            moments.v.assign(g.size(), 0.0);
        }
        auto& values = p.mutable_values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g[i];
            moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = moments.m[i] / bias1;
            const double vhat = moments.v[i] / bias2;
            values[i] -= lr * (mhat / (std::sqrt(vhat) + options_.eps) +
                               options_.weight_decay * values[i]);
        }
    }
}

}  // namespace owdet
