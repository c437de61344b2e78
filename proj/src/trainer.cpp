#include "voxwave/trainer.hpp"

#include "voxwave/errors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace voxwave {

using nn::Var;

std::vector<StageSpec> default_stages(int entropy_steps, int transform_steps, int joint_steps)
{
    return {
        {"entropy+post", {ModuleGroup::entropy, ModuleGroup::post}, entropy_steps},
        {"transform", {ModuleGroup::transform}, transform_steps},
        {"joint", {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post}, joint_steps},
    };
}

void TrainConfig::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ConfigError("lambda must be a finite nonnegative number");
    if (!(lr > 0.0))
        throw ConfigError("learning rate must be positive");
    if (crop < 2 || batch < 1)
        throw ConfigError("crop must be >= 2 and batch >= 1");
    int total = 0;
    for (const auto& s : stages) {
        if (s.steps < 0)
            throw ConfigError("stage '" + s.name + "' has a negative step count");
        total += s.steps;
    }
    if (total == 0)
        throw ConfigError("training schedule has no steps");
}

Volume random_crop(const Volume& v, int crop, nn::Rng& rng)
{
    Dims cd{std::min(crop, v.dims.d), std::min(crop, v.dims.h), std::min(crop, v.dims.w)};
    int off[3];
    for (int a = 0; a < 3; ++a) {
        std::uniform_int_distribution<int> u(0, v.dims[a] - cd[a]);
        off[a] = u(rng);
    }
    Volume out(cd, v.bit_depth, v.is_signed);
    for (int z = 0; z < cd.d; ++z)
        for (int y = 0; y < cd.h; ++y)
            for (int x = 0; x < cd.w; ++x)
                out.at(z, y, x) = v.at(z + off[0], y + off[1], x + off[2]);
    return out;
}

LossTerms block_loss(const CodecModel& model, const Volume& block, double lambda, Surrogate surrogate, nn::Rng& rng,
                     bool deterministic)
{
    const LiftContext ctx = model.lift_context(block.bit_depth);
    const double qs = model.effective_qs();
    const bool lossless = model.config.transform.lossless;
    Var x = to_var(block);
    SubbandSet y = model.transform.forward(x, ctx);

    SubbandSet yt{y.levels, y.block_dims, {}};
    QuantConfig qc{qs, deterministic ? Surrogate::straight_through : surrogate};
    for (const auto& b : y.bands)
        yt.bands.push_back(lossless ? b : voxwave::surrogate(b, qc, rng));

    Var bits;
    const double half = 0.5 * qs;
    if (model.config.entropy == EntropyKind::factorized) {
        for (std::size_t pos = 0; pos < yt.bands.size(); ++pos) {
            Var b = rate_bits(interval_likelihood(yt.bands[pos], model.factorized.bands[pos], half));
            bits = bits.defined() ? nn::add(bits, b) : b;
        }
    } else {
        const double vs = context_value_scale(block.bit_depth);
        for (std::size_t pos = 0; pos < yt.bands.size(); ++pos) {
            Var input = model.context.band_input_var(yt, pos, model.transform, ctx, vs);
            Var psi = model.context.psi(input, nn::scale(yt.bands[pos], vs), pos);
            Var b = rate_bits(interval_likelihood(yt.bands[pos], psi, half));
            bits = bits.defined() ? nn::add(bits, b) : b;
        }
    }

    const double samples = double(block.dims.count());
    LossTerms out;
    out.rate_bits = bits.value()[0] / samples;
    Var total = bits;
    if (!lossless) {
        Var xhat = model.post.forward(model.transform.inverse(yt, ctx), ctx.input_scale);
        Var sse = nn::squared_error(xhat, x);
        out.mse = sse.value()[0] / samples;
        total = nn::add(total, nn::scale(sse, lambda));
    }
    out.loss = nn::scale(total, 1.0 / samples);
    return out;
}

Evaluation evaluate(const CodecModel& model, const std::vector<Volume>& blocks, double lambda)
{
    nn::NoGradGuard ng;
    nn::Rng rng(0);
    Evaluation e;
    for (const auto& b : blocks) {
        LossTerms t = block_loss(model, b, lambda, Surrogate::straight_through, rng, true);
        e.rate_bits += t.rate_bits;
        e.mse += t.mse;
        e.loss += t.loss.value()[0];
    }
    if (!blocks.empty()) {
        double n = double(blocks.size());
        e.rate_bits /= n;
        e.mse /= n;
        e.loss /= n;
    }
    return e;
}

void init_entropy_from_data(CodecModel& model, const std::vector<Volume>& volumes)
{
    nn::NoGradGuard ng;
    std::vector<SubbandSet> sets;
    const double qs = model.effective_qs();
    for (std::size_t i = 0; i < volumes.size() && i < 8; ++i) {
        const Volume& v = volumes[i];
        SubbandSet y = model.transform.forward(to_var(v), model.lift_context(v.bit_depth));
        sets.push_back(dequantize(quantize(y, QuantConfig{qs}), QuantConfig{qs}));
    }
    if (sets.empty())
        return;
    FactorizedModel f = FactorizedModel::create(model.config.transform.levels);
    f.init_from_data(sets);
    auto& target = model.config.entropy == EntropyKind::context ? model.context.base : model.factorized.bands;
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i].mutable_value() = f.bands[i].value();
}

// ---- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<nn::NamedParam> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.var.shape(), 0.0);
        v_.emplace_back(p.var.shape(), 0.0);
    }
}

void Adam::zero_grad()
{
    for (auto& p : params_)
        p.var.zero_grad();
}

void Adam::step()
{
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Var& var = params_[k].var;
        if (!var.has_grad())
            continue;
        const nn::Tensor& g = var.grad();
        nn::Tensor& w = var.mutable_value();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g[i];
            v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g[i] * g[i];
            double update = lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
            w[i] = nn::to_storage_precision(w[i] - update);
        }
    }
}

// ---- schedule --------------------------------------------------------------

namespace {

void set_trainable(const CodecModel& model, const std::set<ModuleGroup>& groups)
{
    for (auto g : {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post})
        for (auto& p : model.params(g))
            p.var.node()->requires_grad = groups.count(g) > 0;
}

} // namespace

TrainResult train(const std::vector<Volume>& train_set, const std::vector<Volume>& validation, CodecModel model,
                  const TrainConfig& cfg, const TrainObserver& observer)
{
    cfg.validate();
    if (train_set.empty())
        throw ConfigError("training needs at least one volume");
    // Work on a private copy; the caller's weights are shared handles.
    model = CodecModel::from_tensors(model.to_tensors());
    nn::Rng rng(cfg.seed);
    if (cfg.init_entropy_from_data)
        init_entropy_from_data(model, train_set);
    model.canonicalize();

    const std::vector<Volume>& val = validation.empty() ? train_set : validation;
    TrainResult result;
    result.initial_validation = evaluate(model, val, cfg.lambda).loss;
    result.best_validation = result.initial_validation;
    std::vector<NamedTensor> best = model.to_tensors();

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log)
            throw IoError("cannot write training log '" + cfg.log_path + "'");
        log << "step,rate_bits,mse,loss\n" << std::setprecision(9);
    }

    auto validate_now = [&](int step) {
        double v;
        try {
            v = evaluate(model, val, cfg.lambda).loss;
        } catch (const NumericError& e) {
            set_trainable(model, {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post});
            throw DivergenceError(std::string(e.what()) + " during validation at step " + std::to_string(step));
        }
        if (v < result.best_validation) {
            result.best_validation = v;
            result.best_step = step;
            best = model.to_tensors();
        }
    };

    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    int above = 0;
    int step = 0;
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    for (const auto& stage : cfg.stages) {
        std::vector<nn::NamedParam> params;
        for (auto g : stage.trained) {
            auto p = model.params(g);
            params.insert(params.end(), p.begin(), p.end());
        }
        if (stage.steps == 0 || params.empty())
            continue;
        set_trainable(model, stage.trained);
        Adam opt(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        for (int s = 0; s < stage.steps; ++s) {
            opt.zero_grad();
            Var total;
            Evaluation batch;
            for (int b = 0; b < cfg.batch; ++b) {
                Volume crop = random_crop(train_set[pick(rng)], cfg.crop, rng);
                LossTerms t;
                try {
                    t = block_loss(model, crop, cfg.lambda, cfg.surrogate, rng);
                } catch (const NumericError& e) {
                    set_trainable(model, {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post});
                    throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step) + " (stage " +
                                          stage.name + ")");
                }
                total = total.defined() ? nn::add(total, t.loss) : t.loss;
                batch.rate_bits += t.rate_bits / cfg.batch;
                batch.mse += t.mse / cfg.batch;
            }
            total = nn::scale(total, 1.0 / cfg.batch);
            batch.loss = total.value()[0];
            if (!std::isfinite(batch.loss)) {
                set_trainable(model, {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post});
                throw DivergenceError("non-finite loss at step " + std::to_string(step) + " (stage " + stage.name +
                                      ", rate " + std::to_string(batch.rate_bits) + " bits/sample, mse " +
                                      std::to_string(batch.mse) + ")");
            }
            if (std::isnan(initial_loss))
                initial_loss = batch.loss;
            above = batch.loss > cfg.divergence_factor * initial_loss ? above + 1 : 0;
            if (above >= cfg.divergence_patience) {
                set_trainable(model, {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post});
                throw DivergenceError("loss stayed above " + std::to_string(cfg.divergence_factor) +
                                      "x its initial value for " + std::to_string(above) + " steps (step " +
                                      std::to_string(step) + ", loss " + std::to_string(batch.loss) + ")");
            }
            nn::backward(total);
            opt.step();
            ++step;
            if (log)
                log << step << ',' << batch.rate_bits << ',' << batch.mse << ',' << batch.loss << '\n';
            if (observer)
                observer(step, batch);
            if (cfg.validate_every > 0 && step % cfg.validate_every == 0)
                validate_now(step);
        }
        validate_now(step);
    }
    set_trainable(model, {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post});
    result.steps = step;
    result.model = CodecModel::from_tensors(best);
    return result;
}

} // namespace voxwave
