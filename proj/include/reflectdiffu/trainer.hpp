#pragma once

// Joint training loop: Noam-scheduled Adam, periodic validation with
// patience-based early stopping, and a per-step loss log.

#include <functional>
#include <iosfwd>
#include <limits>

#include "reflectdiffu/model.hpp"
#include "reflectdiffu/optim.hpp"

namespace rd {

struct TrainConfig {
    LossWeights weights;
    std::size_t batch_size = 16;
    std::uint64_t warmup_steps = 300;
    double lr_decay = 0.01;  // post-warmup floor as a fraction of the peak rate
    double lr_scale = 1.0;
    std::size_t max_iters = 3000;
    std::size_t patience = 5;
    std::size_t eval_every = 200;
    std::size_t mu_refresh = 50;
    std::uint64_t seed = 1;
    bool operator==(const TrainConfig&) const = default;
};

struct LogRow {
    std::uint64_t step = 0;
    double lr = 0.0;
    double l_em = 0.0, l_twice = 0.0, l_res = 0.0, l = 0.0;
    double val_l = std::numeric_limits<double>::quiet_NaN();  // only on validation steps
};

/// step,lr,L_em,L_twice,L_res,L,val_L with an empty val_L between validations.
void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const LogRow& row);

struct FitResult {
    std::vector<LogRow> log;
    std::uint64_t steps = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::uint64_t best_step = 0;
    bool early_stopped = false;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::uint64_t step, FitResult partial)
        : std::runtime_error(what), step_(step), partial_(std::move(partial)) {}
    std::uint64_t step() const { return step_; }
    const FitResult& partial() const { return partial_; }

private:
    std::uint64_t step_;
    FitResult partial_;
};

/// Mean joint loss over `data` in evaluation mode with a fixed noise seed.
double validation_loss(const ReflectDiffu& model, const std::vector<Dialogue>& data, const TrainConfig& cfg);

/// Trains `model` in place. On return the parameters hold the state with the
/// best validation loss (or the final state when `val` is empty). A
/// non-finite loss restores that state and throws DivergenceError.
FitResult fit(ReflectDiffu& model, const std::vector<Dialogue>& train, const std::vector<Dialogue>& val,
              const TrainConfig& cfg, Adam* optimizer = nullptr,
              const std::function<void(const LogRow&)>& on_row = {});

/// Deterministic 8:1:1 split after a seeded shuffle.
struct Split {
    std::vector<Dialogue> train, val, test;
};
Split split_corpus(std::vector<Dialogue> dialogues, std::uint64_t seed, double train_frac = 0.8,
                   double val_frac = 0.1);

}  // namespace rd
