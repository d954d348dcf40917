#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cfld/data.hpp"
#include "cfld/model.hpp"
#include "cfld/optim.hpp"
#include "cfld/schedule.hpp"
#include "cfld/streams.hpp"

// Optimization: the pose-translation loss plus the source-to-source
// self-reconstruction loss, cubic timestep draws, condition dropout, and the
// pretraining stages for the codec and the unconditional backbone.

namespace cfld {

enum class DropFlag { kKeep, kDropBoth };

// DROP_BOTH with probability eta/100: the prompt becomes the null embeddings
// and the pose pyramid becomes zeros.
inline DropFlag drop_conditions(Rng& rng, int eta_percent) {
    return rng.uniform() < double(eta_percent) / 100.0 ? DropFlag::kDropBoth : DropFlag::kKeep;
}

// Linear warmup to lr, then x0.1 after the milestone.
inline double lr_schedule(long long step, const Config& cfg) {
    double lr = cfg.lr;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        lr = cfg.lr * double(step) / double(cfg.warmup_steps);
    }
    if (step > cfg.milestone_step) lr *= 0.1;
    return lr;
}

inline Tensor<float> gaussian_tensor(numkit::Shape shape, Rng& rng) {
    Tensor<float> t = Tensor<float>::zeros(std::move(shape));
    rng.fill_gaussian(t.mutable_values());
    return t;
}

// Cached training data: pairs plus frozen-codec latents for both images.
struct TrainPool {
    std::vector<SamplePair> pairs;
    std::vector<Tensor<float>> z_src, z_gt;  // standardized latents
};

inline TrainPool build_train_pool(const CfldModel<float>& model, const Config& cfg) {
    TrainPool pool;
    for (int i = 0; i < cfg.train_pairs; ++i) {
        pool.pairs.push_back(gen_pair(cfg.seed, i, cfg.image_size, cfg.image_size));
        pool.z_src.push_back(model.codec.encode(pool.pairs.back().x_s));
        pool.z_gt.push_back(model.codec.encode(pool.pairs.back().x_g));
    }
    return pool;
}

struct BatchItem {
    int pair_index = 0;
    bool drop = false;
    int t_mse = 1, t_rec = 1;
    Tensor<float> eps_mse, eps_rec;
};

struct Batch {
    long long step = 0;
    std::vector<BatchItem> items;
};

// All draws come from the step-keyed substream, so a batch is a pure function
// of (seed, step).
inline Batch make_batch(const Config& cfg, long long step) {
    Batch batch;
    batch.step = step;
    Rng rng = Rng(cfg.seed).stream(Rng::key(streams::kTrainStep, std::uint64_t(step)));
    const std::size_t latent = cfg.latent_size();
    const numkit::Shape zshape{std::size_t(cfg.latent_channels), latent, latent};
    for (int i = 0; i < cfg.batch_size; ++i) {
        BatchItem item;
        item.pair_index = int(rng.below(cfg.train_pairs));
        item.drop = drop_conditions(rng, cfg.eta_drop_percent) == DropFlag::kDropBoth;
        item.t_mse = sample_timestep_cubic(rng, cfg.diffusion_steps);
        item.t_rec = sample_timestep_cubic(rng, cfg.diffusion_steps);
        item.eps_mse = gaussian_tensor(zshape, rng);
        item.eps_rec = gaussian_tensor(zshape, rng);
        batch.items.push_back(std::move(item));
    }
    return batch;
}

struct StepLosses {
    double mse = 0, rec = 0, overall = 0;
};

// One optimization step over the two-term objective. The translation term
// denoises z0 = E(x_g) conditioned on (x_s, x_tp); the reconstruction term
// denoises z0 = E(x_s) conditioned on (x_s, x_sp). Both use independent
// timestep and noise draws; the overall loss is their plain sum.
inline StepLosses training_step(CfldModel<float>& model, Adam<float>& opt,
                                const TrainPool& pool, const Batch& batch,
                                const VarianceSchedule& sched, double lr) {
    using Tf = Tensor<float>;
    numkit::Tape<float> tape;
    StepLosses out;
    {
        numkit::TapeScope<float> scope(tape);
        Tf loss_mse, loss_rec;
        for (const BatchItem& item : batch.items) {
            const SamplePair& pair = pool.pairs[item.pair_index];
            Tf prompt;
            std::array<Tf, 3> biases{};
            std::vector<Tf> pose_mse, pose_rec;
            if (item.drop) {
                prompt = model.null_embed;
                pose_mse = model.pose.zero_pyramid();
                pose_rec = model.pose.zero_pyramid();
            } else {
                auto maps = model.enc.forward(pair.x_s);
                prompt = model.prd.forward(maps[3]);
                const std::size_t s0 = maps[0].dim(1);
                biases[0] = model.hga[0].bias(maps[2], s0 / 4, s0 / 4);
                biases[1] = model.hga[1].bias(maps[1], s0 / 2, s0 / 2);
                biases[2] = model.hga[2].bias(maps[0], s0, s0);
                pose_mse = model.pose.forward(pair.x_tp);
                pose_rec = model.pose.forward(pair.x_sp);
            }

            Tf zt_mse = q_sample(pool.z_gt[item.pair_index], item.t_mse, item.eps_mse, sched);
            Tf eps_hat_mse =
                model.unet.forward(zt_mse, item.t_mse, prompt, pose_mse, biases);
            Tf li_mse = numkit::sq_error_sum(item.eps_mse, eps_hat_mse);

            Tf zt_rec = q_sample(pool.z_src[item.pair_index], item.t_rec, item.eps_rec, sched);
            Tf eps_hat_rec =
                model.unet.forward(zt_rec, item.t_rec, prompt, pose_rec, biases);
            Tf li_rec = numkit::sq_error_sum(item.eps_rec, eps_hat_rec);

            loss_mse = loss_mse.defined() ? numkit::add(loss_mse, li_mse) : li_mse;
            loss_rec = loss_rec.defined() ? numkit::add(loss_rec, li_rec) : li_rec;
        }
        const float inv_b = 1.0f / float(batch.items.size());
        loss_mse = numkit::mul_scalar(loss_mse, inv_b);
        loss_rec = numkit::mul_scalar(loss_rec, inv_b);
        Tf overall = numkit::add(loss_mse, loss_rec);

        out.mse = loss_mse.item();
        out.rec = loss_rec.item();
        out.overall = overall.item();
        if (!std::isfinite(out.overall)) {
            throw std::runtime_error("training: loss is not finite at step " +
                                     std::to_string(batch.step) + " (replay with seed " +
                                     std::to_string(0) + "+step stream)");
        }
        opt.zero_grad();
        tape.backward(overall);
    }
    opt.step(lr);
    return out;
}

using StepCallback = std::function<void(long long step, const StepLosses&, double lr)>;

// CFLD conditioning training over [start_step, end_step).
inline void train_cfld(CfldModel<float>& model, Adam<float>& opt, const TrainPool& pool,
                       const Config& cfg, long long start_step, long long end_step,
                       const StepCallback& on_step = nullptr) {
    model.apply_cfld_partition();
    const VarianceSchedule sched(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
    for (long long step = start_step; step < end_step; ++step) {
        const double lr = lr_schedule(step, cfg);
        const Batch batch = make_batch(cfg, step);
        const StepLosses losses = training_step(model, opt, pool, batch, sched, lr);
        if (on_step) on_step(step, losses, lr);
    }
}

// --------------------------------------------------------------- pretraining

using CurveCallback = std::function<void(long long step, double loss)>;

// Deterministic-autoencoder reconstruction training; returns the loss curve.
// Afterwards the latent scale is measured over the image pool so that
// standardized latents have unit-ish element scale.
inline std::vector<double> pretrain_codec(CfldModel<float>& model, const Config& cfg,
                                          long long steps, const CurveCallback& on_step = nullptr) {
    using Tf = Tensor<float>;
    std::vector<Tf> images;
    for (int i = 0; i < cfg.codec_images; ++i) {
        images.push_back(gen_image(cfg.seed, i, cfg.image_size, cfg.image_size));
    }

    ParamList<float> params = model.codec_params();
    params.set_trainable(true);
    Adam<float> opt;
    opt.init(params);

    std::vector<double> curve;
    const double lr = 2e-3;  // codec-only stage; fast convergence, no schedule
    for (long long step = 0; step < steps; ++step) {
        Rng rng = Rng(cfg.seed).stream(Rng::key(streams::kCodecStep, std::uint64_t(step)));
        numkit::Tape<float> tape;
        double loss_value = 0;
        {
            numkit::TapeScope<float> scope(tape);
            Tf loss;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const Tf& img = images[rng.below(images.size())];
                Tf recon = model.codec.decode_raw(model.codec.encode_raw(img));
                Tf li = numkit::mean_all(
                    numkit::mul(numkit::sub(recon, img), numkit::sub(recon, img)));
                loss = loss.defined() ? numkit::add(loss, li) : li;
            }
            loss = numkit::mul_scalar(loss, 1.0f / float(cfg.batch_size));
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("pretrain_codec: loss diverged (NaN) at step " +
                                         std::to_string(step));
            }
            opt.zero_grad();
            tape.backward(loss);
        }
        opt.step(lr);
        curve.push_back(loss_value);
        if (on_step) on_step(step, loss_value);
    }
    params.set_trainable(false);

    // measure raw-latent std for standardization
    double sum = 0, sq = 0;
    std::size_t count = 0;
    for (const Tf& img : images) {
        Tf z = model.codec.encode_raw(img);
        for (std::size_t i = 0; i < z.numel(); ++i) {
            sum += z.at(i);
            sq += double(z.at(i)) * z.at(i);
            ++count;
        }
    }
    const double mean = sum / double(count);
    const double var = sq / double(count) - mean * mean;
    model.codec.latent_scale = std::sqrt(std::max(var, 1e-12));
    return curve;
}

// Unconditional denoising pretraining of the UNet (null prompt, zero pose,
// no appearance bias). The result becomes the frozen base for CFLD training.
inline std::vector<double> pretrain_backbone(CfldModel<float>& model, const TrainPool& pool,
                                             const Config& cfg, long long steps,
                                             const CurveCallback& on_step = nullptr) {
    using Tf = Tensor<float>;
    std::vector<const Tf*> latents;
    for (const Tf& z : pool.z_src) latents.push_back(&z);
    for (const Tf& z : pool.z_gt) latents.push_back(&z);

    ParamList<float> params = model.backbone_params();
    params.set_trainable(true);
    Adam<float> opt;
    opt.init(params);

    const VarianceSchedule sched(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
    const std::size_t latent = cfg.latent_size();
    const numkit::Shape zshape{std::size_t(cfg.latent_channels), latent, latent};
    const double lr = 1e-3;  // unconditional base stage

    std::vector<double> curve;
    for (long long step = 0; step < steps; ++step) {
        Rng rng = Rng(cfg.seed).stream(Rng::key(streams::kBackboneStep, std::uint64_t(step)));
        numkit::Tape<float> tape;
        double loss_value = 0;
        {
            numkit::TapeScope<float> scope(tape);
            Tf loss;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const Tf& z0 = *latents[rng.below(latents.size())];
                const int t = int(rng.below(cfg.diffusion_steps)) + 1;
                Tf eps = gaussian_tensor(zshape, rng);
                Tf zt = q_sample(z0, t, eps, sched);
                std::array<Tf, 3> no_bias{};
                Tf eps_hat =
                    model.unet.forward(zt, t, model.null_embed, model.pose.zero_pyramid(),
                                       no_bias);
                Tf li = numkit::sq_error_sum(eps, eps_hat);
                loss = loss.defined() ? numkit::add(loss, li) : li;
            }
            loss = numkit::mul_scalar(loss, 1.0f / float(cfg.batch_size));
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("pretrain_backbone: loss diverged (NaN) at step " +
                                         std::to_string(step));
            }
            opt.zero_grad();
            tape.backward(loss);
        }
        opt.step(lr);
        curve.push_back(loss_value);
        if (on_step) on_step(step, loss_value);
    }
    params.set_trainable(false);
    return curve;
}

}  // namespace cfld
