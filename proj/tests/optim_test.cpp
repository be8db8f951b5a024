#include "owdet/optim.hpp"

#include "doctest.h"

using namespace owdet;

TEST_CASE("zero gradient and zero weight decay leave the parameter unchanged") {
    ParamStore store;
    Tensor p = store.add("p", Tensor::from_values({2}, {1.5, -2.5}));
    store.zero_grads();
    AdamW opt({.base_lr = 0.1, .weight_decay = 0.0, .schedule_horizon = 100});
    opt.step(store);
    CHECK(p.values() == std::vector<double>{1.5, -2.5});
}

TEST_CASE("single step with beta1=beta2=0 moves by -lr * sign(grad)") {
    ParamStore store;
    Tensor p = store.add("p", Tensor::from_values({1}, {0.0}));
    store.zero_grads();
    p.accumulate_grad({1.0});
    AdamW opt({.base_lr = 0.1, .beta1 = 0.0, .beta2 = 0.0, .weight_decay = 0.0,
               .schedule_horizon = 100});
    opt.step(store);
    CHECK(p.values()[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("cosine schedule reaches half the base rate at half horizon") {
    CosineSchedule schedule{1e-2, 10};
    CHECK(schedule.lr_at(5) == doctest::Approx(5e-3).epsilon(1e-12));
    CHECK(schedule.lr_at(0) == doctest::Approx(1e-2).epsilon(1e-12));
    CHECK(schedule.lr_at(10) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("decoupled weight decay shrinks the parameter independently of moments") {
    ParamStore store;
    Tensor p = store.add("p", Tensor::from_values({1}, {1.0}));
    store.zero_grads();
    AdamW opt({.base_lr = 0.1, .weight_decay = 0.01, .schedule_horizon = 100});
    opt.step(store);
    CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0).epsilon(1e-12));
}

TEST_CASE("frozen parameters are bit-identical after optimizer steps") {
    ParamStore store;
    Tensor frozen = store.add("frozen", Tensor::from_values({3}, {1.0, 2.0, 3.0}), false);
    Tensor live = store.add("live", Tensor::from_values({1}, {0.0}));
    const std::vector<double> before = frozen.values();
    store.zero_grads();
    live.accumulate_grad({1.0});
    frozen.accumulate_grad({5.0, 5.0, 5.0});  // even a stray gradient must not move it
    AdamW opt({.base_lr = 0.1, .schedule_horizon = 10});
    opt.step(store);
    CHECK(frozen.values() == before);
    CHECK(live.values()[0] != 0.0);
}

TEST_CASE("stepping without gradients is a contract error") {
    ParamStore store;
    store.add("p", Tensor::from_values({1}, {0.0}));
    AdamW opt({.base_lr = 0.1, .schedule_horizon = 10});
    CHECK_THROWS_AS(opt.step(store), ContractError);
}

TEST_CASE("duplicate parameter names are rejected") {
    ParamStore store;
    store.add("p", Tensor::zeros({1}));
    CHECK_THROWS_AS(store.add("p", Tensor::zeros({1})), ContractError);
}

TEST_CASE("snapshot and restore round-trip parameter values") {
    ParamStore store;
    Tensor a = store.add("a", Tensor::from_values({2}, {1.0, 2.0}));
    Tensor b = store.add("b", Tensor::from_values({1}, {3.0}));
    const auto snap = store.snapshot_values();
    a.mutable_values()[0] = 9.0;
    b.mutable_values()[0] = 9.0;
    store.restore_values(snap);
    CHECK(a.values() == std::vector<double>{1.0, 2.0});
    CHECK(b.values() == std::vector<double>{3.0});
}
