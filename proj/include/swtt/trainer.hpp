#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "swtt/codec.hpp"
#include "swtt/model.hpp"

namespace swtt {

struct TrainConfig {
    std::size_t batch = 16;
    std::size_t steps = 1000;
    double lr_start = 3e-3;
    double lr_end = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double sigma = 0.01;      // latent noise before quantization
    double drop_prob = 0.1;   // condition replaced by the null token
    std::size_t log_every = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

// Linear decay from lr_start at step 0 to lr_end at step steps-1.
double lr_at(const TrainConfig& cfg, std::size_t step);

struct TrainData {
    std::vector<FeatureMap> latents;
    std::vector<std::vector<std::size_t>> cond_ids;  // prompt token ids per latent
    CodeBook codebook;
};

// Teacher-forced samples: inputs[b].maps[s] is the prefix accumulation of the
// (possibly perturbed) pyramid's scales < s; targets concatenate every scale
// of every sample in forward row order.
struct TrainBatch {
    std::vector<std::vector<std::size_t>> cond_ids;  // {0} when dropped
    std::vector<ScaleInputs> inputs;
    std::vector<TokenPyramid> pyramids;
    std::vector<std::size_t> targets;
};

TrainBatch make_batch(std::span<const FeatureMap> latents, std::span<const std::vector<std::size_t>> cond_ids,
                      const CodeBook& cb, const ScaleSchedule& sched, double sigma, double drop_prob,
                      std::uint64_t seed);

// Mean token cross-entropy over all scales and positions.
Var ce_loss(const Var& logits, std::span<const std::size_t> targets);

struct BatchResult {
    Var loss;
    double accuracy = 0.0;
    std::vector<double> block_norms;
};

BatchResult batch_loss(const Model& model, const TrainBatch& batch);

// Argmax accuracy under teacher forcing on the clean, conditioned corpus.
double teacher_forced_accuracy(const Model& model, const TrainData& data);

struct TrainLogRow {
    std::size_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
    std::vector<double> block_norms;
};

struct TrainResult {
    std::vector<TrainLogRow> log;  // every step
    double final_accuracy = 0.0;   // teacher_forced_accuracy after the last step
};

// Adam with linear learning-rate decay. Rows are written to `log` every
// log_every steps and at the last step.
TrainResult train_loop(Model& model, const TrainData& data, const TrainConfig& cfg, std::ostream* log = nullptr);

// Whitespace-separated table: step loss accuracy lr norm_1 .. norm_d.
void write_log_header(std::ostream& os, std::size_t depth);
void write_log_row(std::ostream& os, const TrainLogRow& row);

// The 8 combinations of the three block switches, basic block first.
std::vector<BlockVariant> ablation_variants();
std::string variant_name(const BlockVariant& v);

}  // namespace swtt

#include "swtt/gradcheck.hpp"

namespace swtt {

struct ModelGradCheck {
    GradCheckResult result;
    std::string worst_name;  // parameter holding the worst entry
    double seconds = 0.0;
};

// Central-difference check of the teacher-forced cross-entropy through the
// whole model on a random codebook, two random latents and prompts. Every
// parameter is first moved away from its initialization so no path is
// trivially zero.
ModelGradCheck model_gradient_check(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-5);

}  // namespace swtt
