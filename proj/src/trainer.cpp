#include "reflectdiffu/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace rd {

namespace {

constexpr std::uint64_t kValidationSeed = 0x5eed0f7a11ULL;

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const ParameterSet& ps) {
    Snapshot s;
    for (const auto& p : ps.all()) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return s;
}

void restore(ParameterSet& ps, const Snapshot& s) {
    const auto& all = ps.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
        auto d = Tensor(all[i].tensor).mutable_data();
        std::copy(s[i].begin(), s[i].end(), d.begin());
    }
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void write_log_header(std::ostream& os) { os << "step,lr,L_em,L_twice,L_res,L,val_L\n"; }

void write_log_row(std::ostream& os, const LogRow& r) {
    os << r.step << ',' << num(r.lr) << ',' << num(r.l_em) << ',' << num(r.l_twice) << ',' << num(r.l_res) << ','
       << num(r.l) << ',';
    if (!std::isnan(r.val_l)) os << num(r.val_l);
    os << '\n';
}

double validation_loss(const ReflectDiffu& model, const std::vector<Dialogue>& data, const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("validation_loss: empty set");
    NoGradGuard guard;
    Rng rng(kValidationSeed ^ cfg.seed);
    double total = 0.0;
    std::size_t batches = 0;
    std::vector<const Dialogue*> batch;
    for (std::size_t i = 0; i < data.size(); i += cfg.batch_size) {
        batch.clear();
        for (std::size_t j = i; j < std::min(data.size(), i + cfg.batch_size); ++j) batch.push_back(&data[j]);
        total += model.batch_loss(batch, cfg.weights, rng, false).total.item();
        ++batches;
    }
    return total / static_cast<double>(batches);
}

FitResult fit(ReflectDiffu& model, const std::vector<Dialogue>& train, const std::vector<Dialogue>& val,
              const TrainConfig& cfg, Adam* optimizer, const std::function<void(const LogRow&)>& on_row) {
    if (cfg.batch_size == 0) throw std::invalid_argument("fit: batch_size must be positive");
    if (cfg.warmup_steps == 0) throw std::invalid_argument("fit: warmup_steps must be positive");
    if (cfg.eval_every == 0 || cfg.mu_refresh == 0) throw std::invalid_argument("fit: intervals must be positive");
    FitResult result;
    if (cfg.max_iters == 0) return result;
    if (train.empty()) throw std::invalid_argument("fit: empty training set");
    for (const auto& d : train) require_labels(d);

    Adam local;
    if (!optimizer) {
        local = Adam(model.parameters().trainable());
        optimizer = &local;
    }
    ParameterSet& ps = model.parameters();
    Rng rng(cfg.seed);
    model.refresh_behaviour();

    Snapshot best = snapshot(ps);
    std::size_t bad_evals = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();
    std::vector<const Dialogue*> batch;

    auto diverge = [&](const std::string& why, std::uint64_t step) {
        restore(ps, best);
        throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + why, step, result);
    };

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        const std::uint64_t step = optimizer->steps() + 1;
        batch.clear();
        while (batch.size() < std::min(cfg.batch_size, train.size())) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(&train[order[cursor++]]);
        }

        LogRow row;
        row.step = step;
        row.lr = cfg.lr_scale * scheduled_lr(step, model.config().d_model, cfg.warmup_steps, cfg.lr_decay);
        ps.zero_grad();
        BatchLosses losses;
        try {
            losses = model.batch_loss(batch, cfg.weights, rng, true);
        } catch (const NonFiniteLoss& e) {
            diverge(e.what(), step);
        } catch (const NonFiniteValue& e) {
            diverge(e.what(), step);
        }
        row.l_em = losses.em.item();
        row.l_twice = losses.twice.item();
        row.l_res = losses.res.item();
        row.l = losses.total.item();
        if (!std::isfinite(row.l)) diverge("non-finite joint loss", step);
        losses.total.backward();
        const double gnorm = optimizer->step(row.lr);
        if (!std::isfinite(gnorm)) diverge("non-finite gradient norm", step);
        if (step % cfg.mu_refresh == 0) model.refresh_behaviour();
        ++result.steps;

        const bool last = it + 1 == cfg.max_iters;
        if (!val.empty() && (step % cfg.eval_every == 0 || last)) {
            row.val_l = validation_loss(model, val, cfg);
            if (!std::isfinite(row.val_l)) diverge("non-finite validation loss", step);
            if (row.val_l < result.best_val) {
                result.best_val = row.val_l;
                result.best_step = step;
                best = snapshot(ps);
                bad_evals = 0;
            } else {
                ++bad_evals;
            }
        }
        result.log.push_back(row);
        if (on_row) on_row(row);
        if (!val.empty() && bad_evals >= cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }
    // The behaviour snapshot is restored with everything else rather than
    // re-synced, so the returned model reproduces best_val exactly.
    if (!val.empty()) restore(ps, best);
    model.era().mark_trained();
    return result;
}

Split split_corpus(std::vector<Dialogue> dialogues, std::uint64_t seed, double train_frac, double val_frac) {
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
        throw std::invalid_argument("split_corpus: bad fractions");
    Rng rng(seed);
    rng.shuffle(dialogues);
    const std::size_t n = dialogues.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
    Split s;
    s.train.assign(std::make_move_iterator(dialogues.begin()),
                   std::make_move_iterator(dialogues.begin() + static_cast<std::ptrdiff_t>(n_train)));
    s.val.assign(std::make_move_iterator(dialogues.begin() + static_cast<std::ptrdiff_t>(n_train)),
                 std::make_move_iterator(dialogues.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)));
    s.test.assign(std::make_move_iterator(dialogues.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)),
                  std::make_move_iterator(dialogues.end()));
    return s;
}

}  // namespace rd
