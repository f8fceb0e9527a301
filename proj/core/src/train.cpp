#include "ecfnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "ecfnet/metrics.hpp"

namespace ecfnet {

void TrainConfig::validate() const {
    if (lr_final <= 0 || lr_final > lr_init) throw Error("train: need 0 < lr_final <= lr_init");
    if (total_steps < 0) throw Error("train: total_steps must be nonnegative");
    if (batch < 1) throw Error("train: batch must be positive");
    if (patch % 16 != 0) throw Error("train: patch size must be divisible by 16");
    if (eval_interval < 1) throw Error("train: eval_interval must be positive");
}

double eval_psnr(Model& model, const std::vector<ImagePair>& pairs) {
    double acc = 0;
    for (const auto& p : pairs) {
        auto outs = model.forward(p.input);
        acc += psnr(outs[0], p.target);
    }
    return acc / static_cast<double>(pairs.size());
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& items) {
    const Shape s = items[0].shape;
    Tensor out = Tensor::zeros(Shape{static_cast<int>(items.size()) * s.n, s.c, s.h, s.w});
    std::int64_t off = 0;
    for (const auto& t : items) {
        std::copy(t.data->begin(), t.data->end(), out.data->begin() + off);
        off += t.numel();
    }
    return out;
}

}  // namespace

std::vector<TrainRecord> train_loop(Model& model, const std::vector<ImagePair>& train_pairs,
                                    const std::vector<ImagePair>& eval_pairs, const TrainConfig& cfg) {
    cfg.validate();
    if (train_pairs.empty()) throw Error("train: empty dataset");
    ParamRegistry params = model.params();
    Adam adam(params, cfg.beta1, cfg.beta2);
    Rng root(cfg.seed);

    std::vector<TrainRecord> records;
    double held_psnr = std::numeric_limits<double>::quiet_NaN();
    for (int step = 0; step < cfg.total_steps; ++step) {
        Rng rng = root.split(static_cast<std::uint64_t>(step));
        std::vector<Tensor> ins, tgts;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& pair = train_pairs[rng.below(train_pairs.size())];
            ImagePair p = pair;
            if (p.input.shape.h > cfg.patch || p.input.shape.w > cfg.patch)
                p = sample_patch(p, cfg.patch, rng);
            if (cfg.flips) p = augment(p, rng);
            ins.push_back(p.input);
            tgts.push_back(p.target);
        }
        Tensor in_batch = stack_batch(ins);
        Tensor tgt_batch = stack_batch(tgts);

        TapePtr tape = Tape::create();
        auto outputs = model.forward(in_batch, tape);
        std::vector<Tensor> targets;
        for (const auto& o : outputs)
            targets.push_back(bilinear_resize(tgt_batch, o.shape.h, o.shape.w));
        Tensor loss = total_loss(outputs, targets, cfg.loss);
        tape->backward(loss);

        std::vector<std::vector<scalar>> grads(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto* g = params[i]->grad(tape);
            if (!g) continue;
            for (scalar v : *g)
                if (std::isnan(v))
                    throw Error("train: NaN gradient in parameter '" + params[i]->name + "' at step " +
                                std::to_string(step));
            grads[i] = *g;
        }
        const double lr = cosine_lr(step, cfg.total_steps, cfg.lr_init, cfg.lr_final);
        adam.step(grads, lr);

        const int shown = step + 1;
        if (!eval_pairs.empty() &&
            (shown == 1 || shown % cfg.eval_interval == 0 || shown == cfg.total_steps))
            held_psnr = eval_psnr(model, eval_pairs);
        records.push_back(TrainRecord{shown, lr, (*loss.data)[0], held_psnr});
    }
    return records;
}

void write_loss_csv(const std::vector<TrainRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("write_loss_csv: cannot open " + path);
    f << "step,lr,loss,psnr\n";
    char buf[160];
    for (const auto& r : records) {
        if (std::isinf(r.psnr)) {
            std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,inf\n", r.step, r.lr, r.loss);
        } else if (std::isnan(r.psnr)) {
            std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,\n", r.step, r.lr, r.loss);
        } else {
            std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g\n", r.step, r.lr, r.loss, r.psnr);
        }
        f << buf;
    }
}

}  // namespace ecfnet
