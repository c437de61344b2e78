#pragma once

// Rate-distortion training of a CodecModel on volume crops.

#include "voxwave/codec.hpp"

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

namespace voxwave {

struct StageSpec {
    std::string name;
    std::set<ModuleGroup> trained; // everything else is frozen
    int steps = 0;
};

/// entropy + post, then transform, then joint.
std::vector<StageSpec> default_stages(int entropy_steps = 2000, int transform_steps = 2000, int joint_steps = 6000);

struct TrainConfig {
    double lambda = 16.0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<StageSpec> stages = default_stages();
    int crop = 16;
    int batch = 1;
    std::uint64_t seed = 0;
    /// Surrogate for lossy models; lossless models always round with an
    /// identity gradient inside the transform.
    Surrogate surrogate = Surrogate::uniform_noise;
    int validate_every = 100;
    bool init_entropy_from_data = true;
    double divergence_factor = 10.0;
    int divergence_patience = 100;
    std::string log_path; // CSV step,rate_bits,mse,loss; empty = no log

    /// Throws ConfigError on non-positive lambda/lr or an empty schedule.
    void validate() const;
};

struct LossTerms {
    nn::Var loss;     // (bits + lambda * squared error) / samples
    double rate_bits = 0.0; // bits per sample
    double mse = 0.0;
};

/// Differentiable loss of one block. `deterministic` replaces the noise
/// surrogate by rounding (validation).
LossTerms block_loss(const CodecModel& model, const Volume& block, double lambda, Surrogate surrogate, nn::Rng& rng,
                     bool deterministic = false);

struct Evaluation {
    double rate_bits = 0.0;
    double mse = 0.0;
    double loss = 0.0;
};

/// Mean loss over blocks with rounding in place of noise.
Evaluation evaluate(const CodecModel& model, const std::vector<Volume>& blocks, double lambda);

/// Seed the entropy model from the coefficients of a few volumes.
void init_entropy_from_data(CodecModel& model, const std::vector<Volume>& volumes);

class Adam {
public:
    Adam(std::vector<nn::NamedParam> params, double lr, double beta1, double beta2, double eps);
    void step();
    void zero_grad();

private:
    std::vector<nn::NamedParam> params_;
    std::vector<nn::Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

struct TrainResult {
    CodecModel model; // best-validation snapshot
    double initial_validation = 0.0;
    double best_validation = 0.0;
    int best_step = 0;
    int steps = 0;
};

using TrainObserver = std::function<void(int step, const Evaluation& batch)>;

/// Runs the stage schedule. Throws DivergenceError when the loss is
/// non-finite or stays above divergence_factor x its initial value for
/// divergence_patience steps.
TrainResult train(const std::vector<Volume>& train_set, const std::vector<Volume>& validation, CodecModel model,
                  const TrainConfig& cfg, const TrainObserver& observer = {});

/// Random crop of edge `crop` (the whole axis when shorter).
Volume random_crop(const Volume& v, int crop, nn::Rng& rng);

} // namespace voxwave
