#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "owdet/tensor.hpp"

namespace owdet {

// Named parameters with a per-parameter trainable flag. Frozen parameters are
// never touched by the optimizer. Iteration order is the sorted name order,
// which keeps runs deterministic.
class ParamStore {
public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    Tensor add(const std::string& name, Tensor tensor, bool trainable = true);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor get(const std::string& name) const;
    void set_trainable(const std::string& name, bool trainable);
    bool trainable(const std::string& name) const;
    void freeze_all();

    std::size_t size() const { return entries_.size(); }
    std::int64_t total_params() const;
    std::int64_t trainable_params() const;

    const std::map<std::string, Entry>& entries() const { return entries_; }

    void zero_grads() const;

    // Flat value snapshot in name order; used for byte-identity checks and
    // checkpointing.
    std::vector<double> snapshot_values() const;
    void restore_values(const std::vector<double>& snapshot);

private:
    std::map<std::string, Entry> entries_;
};

struct CosineSchedule {
    double base_lr = 1e-2;
    std::int64_t horizon = 1;  // optimizer steps until the rate reaches zero

    double lr_at(std::int64_t step) const;
};

// AdamW with decoupled weight decay and a cosine learning-rate schedule.
// Moment buffers are keyed by parameter name and created lazily.
class AdamW {
public:
    struct Options {
        double base_lr = 1e-2;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-2;
        std::int64_t schedule_horizon = 1;
    };

    explicit AdamW(Options options) : options_(options) {}

    // Applies one update to every trainable parameter in the store. The
    // parameter's grad buffer must have been allocated by a
    // zero_grads()/backward() cycle since construction.
    void step(ParamStore& store);

    std::int64_t step_count() const { return step_count_; }
    double last_lr() const { return last_lr_; }
    const Options& options() const { return options_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    Options options_;
    std::map<std::string, Moments> moments_;
    std::int64_t step_count_ = 0;
    double last_lr_ = 0.0;
};

}  // namespace owdet
