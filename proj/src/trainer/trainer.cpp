#include "swtt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>

#include "swtt/errors.hpp"
#include "swtt/log.hpp"
#include "swtt/ops.hpp"
#include "swtt/random.hpp"

namespace swtt {

void TrainConfig::validate() const {
    if (batch == 0 || steps == 0) throw ConfigError("batch and steps must be positive");
    if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw ConfigError("learning rates need lr_start >= lr_end > 0");
    if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) throw ConfigError("drop_prob must lie in [0, 1]");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
}

double lr_at(const TrainConfig& cfg, std::size_t step) {
    if (cfg.steps <= 1) return cfg.lr_start;
    const double t = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * t;
}

TrainBatch make_batch(std::span<const FeatureMap> latents, std::span<const std::vector<std::size_t>> cond_ids,
                      const CodeBook& cb, const ScaleSchedule& sched, double sigma, double drop_prob,
                      std::uint64_t seed) {
    if (latents.size() != cond_ids.size()) throw UsageError("make_batch: one condition per latent required");
    TrainBatch batch;
    Rng drop(derive_seed(seed, 0));
    for (std::size_t b = 0; b < latents.size(); ++b) {
        const GridSize g = latents[b].grid();
        if (!(g == sched.final_size())) throw UsageError("make_batch: latent size does not match the schedule");
        const FeatureMap f = perturb_latents(latents[b], sigma, derive_seed(seed, b + 1));
        TokenPyramid p = encode_pyramid(f, cb, sched);
        ScaleInputs in;
        for (std::size_t s = 0; s < sched.size(); ++s) {
            in.maps.push_back(s == 0 ? Tensor({1, cb.channels()}, 0.0) : accumulate_prefix(p, s, cb, sched).to_tokens());
            for (std::uint32_t id : p.grids[s].ids) batch.targets.push_back(id);
        }
        batch.cond_ids.push_back(drop.uniform() < drop_prob ? std::vector<std::size_t>{0} : cond_ids[b]);
        batch.inputs.push_back(std::move(in));
        batch.pyramids.push_back(std::move(p));
    }
    return batch;
}

Var ce_loss(const Var& logits, std::span<const std::size_t> targets) { return ops::cross_entropy(logits, targets); }

BatchResult batch_loss(const Model& model, const TrainBatch& batch) {
    std::vector<ConditionBundle> conds;
    for (const auto& ids : batch.cond_ids) conds.push_back(model.encode_condition(ids));
    BatchResult r;
    ForwardOptions opts;
    opts.block_norms = &r.block_norms;
    const Var logits = model.forward(conds, batch.inputs, 0, model.config().schedule.size() - 1, opts);
    r.loss = ce_loss(logits, batch.targets);
    const Tensor& l = logits.value();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < l.rows(); ++i) {
        const auto row = l.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        hits += best == batch.targets[i];
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(l.rows());
    return r;
}

double teacher_forced_accuracy(const Model& model, const TrainData& data) {
    const TrainBatch b = make_batch(data.latents, data.cond_ids, data.codebook, model.config().schedule, 0.0, 0.0, 0);
    return batch_loss(model, b).accuracy;
}

namespace {

class Adam {
public:
    Adam(std::vector<Var> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const Var& p : params_) {
            m_.emplace_back(p.value().size(), 0.0);
            v_.emplace_back(p.value().size(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Var& p = params_[i];
            if (!p.has_grad()) continue;
            const auto g = p.grad().data();
            auto w = p.mutable_value().data();
            for (std::size_t j = 0; j < w.size(); ++j) {
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.adam_eps);
            }
            p.zero_grad();
        }
    }

private:
    std::vector<Var> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

std::string norms_str(const std::vector<double>& norms) {
    std::string s;
    for (double n : norms) s += " " + std::to_string(n);
    return s;
}

}  // namespace

TrainResult train_loop(Model& model, const TrainData& data, const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    if (data.latents.empty()) throw DataError("training data is empty");
    std::vector<Var> params;
    for (auto& [name, v] : model.named_parameters()) params.push_back(v);
    Adam adam(params, cfg);
    Rng pick(derive_seed(cfg.seed, 1));
    const std::size_t n = data.latents.size();
    if (log) write_log_header(*log, model.config().depth);

    TrainResult result;
    std::vector<double> last_norms;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<FeatureMap> lat;
        std::vector<std::vector<std::size_t>> ids;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const std::size_t i = cfg.batch == n ? b : pick.uniform_index(n);
            lat.push_back(data.latents[i]);
            ids.push_back(data.cond_ids[i]);
        }
        const TrainBatch batch = make_batch(lat, ids, data.codebook, model.config().schedule, cfg.sigma,
                                            cfg.drop_prob, derive_seed(cfg.seed, 1000 + step));
        TrainLogRow row;
        row.step = step;
        row.lr = lr_at(cfg, step);
        try {
            Tape tape;
            BatchResult r = batch_loss(model, batch);
            tape.backward(r.loss);
            row.loss = r.loss.value()[0];
            row.accuracy = r.accuracy;
            row.block_norms = std::move(r.block_norms);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " + std::to_string(step) + " (last block norms:" +
                               norms_str(last_norms) + "): " + e.what());
        }
        adam.step(row.lr);
        last_norms = row.block_norms;
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) write_log_row(*log, row);
        if (step % cfg.log_every == 0) {
            log::debug("step " + std::to_string(step) + " loss " + std::to_string(row.loss) + " acc " +
                       std::to_string(row.accuracy));
        }
        result.log.push_back(std::move(row));
    }
    result.final_accuracy = teacher_forced_accuracy(model, data);
    return result;
}

void write_log_header(std::ostream& os, std::size_t depth) {
    os << "step loss accuracy lr";
    for (std::size_t i = 1; i <= depth; ++i) os << " norm_" << i;
    os << '\n';
}

void write_log_row(std::ostream& os, const TrainLogRow& row) {
    os << row.step << std::setprecision(9) << ' ' << row.loss << ' ' << row.accuracy << ' ' << row.lr;
    for (double n : row.block_norms) os << ' ' << n;
    os << '\n';
}

std::vector<BlockVariant> ablation_variants() {
    std::vector<BlockVariant> out;
    for (int mask = 0; mask < 8; ++mask) out.push_back({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0});
    return out;
}

std::string variant_name(const BlockVariant& v) {
    if (!v.high_precision_head && !v.sandwich_norm && !v.swiglu) return "basic";
    std::string s;
    if (v.high_precision_head) s += "+fp-head";
    if (v.sandwich_norm) s += "+sandwich";
    if (v.swiglu) s += "+swiglu";
    return s;
}

}  // namespace swtt

namespace swtt {

ModelGradCheck model_gradient_check(const ModelConfig& cfg, std::uint64_t seed, double h) {
    const auto t0 = std::chrono::steady_clock::now();
    Model model(cfg);
    Rng rng(derive_seed(seed, 7));
    std::vector<Var> params;
    std::vector<std::string> names;
    for (auto& [name, v] : model.named_parameters()) {
        for (double& x : v.mutable_value().data()) x += rng.truncated_normal(0.25);
        params.push_back(v);
        names.push_back(name);
    }
    const ScaleSchedule& sched = cfg.schedule;
    Tensor codes({cfg.vocab, cfg.channels});
    for (double& x : codes.data()) x = rng.normal();
    const CodeBook cb(codes);
    // Scales whose tokens all coincide make attention independent of the
    // queries; such draws are rejected so every path carries gradient.
    auto varied = [&](const TrainBatch& b) {
        for (const TokenPyramid& p : b.pyramids)
            for (const TokenGrid& g : p.grids)
                if (g.ids.size() > 1 && std::all_of(g.ids.begin(), g.ids.end(), [&](auto id) { return id == g.ids[0]; }))
                    return false;
        return true;
    };
    TrainBatch batch;
    for (std::size_t attempt = 0;; ++attempt) {
        std::vector<FeatureMap> latents;
        std::vector<std::vector<std::size_t>> ids;
        for (std::size_t b = 0; b < 2; ++b) {
            FeatureMap f(cfg.channels, sched.final_size().h, sched.final_size().w);
            for (double& x : f.values()) x = 1.5 * rng.normal();
            latents.push_back(std::move(f));
            std::vector<std::size_t> cond;
            for (std::size_t t = 0; t <= b; ++t) cond.push_back(1 + rng.uniform_index(cfg.prompt_vocab.size() - 1));
            ids.push_back(cond);
        }
        batch = make_batch(latents, ids, cb, sched, 0.0, 0.0, seed);
        if (varied(batch) || attempt == 100) break;
    }
    ModelGradCheck out;
    out.result = finite_diff_check([&] { return batch_loss(model, batch).loss; }, params, h);
    out.worst_name = names.at(out.result.worst_param);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace swtt
