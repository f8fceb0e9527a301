#ifndef ECFNET_TRAIN_HPP
#define ECFNET_TRAIN_HPP

#include <string>
#include <vector>

#include "ecfnet/data.hpp"
#include "ecfnet/loss.hpp"
#include "ecfnet/model.hpp"
#include "ecfnet/optim.hpp"

namespace ecfnet {

struct TrainConfig {
    double beta1 = 0.9, beta2 = 0.999;
    double lr_init = 8e-4, lr_final = 1e-6;
    int total_steps = 200;
    int batch = 4;
    int patch = 64;  // full-scale training would use 256
    bool flips = true;
    int eval_interval = 10;  // heldout PSNR cadence
    std::uint64_t seed = 0;
    LossWeights loss;

    void validate() const;
};

struct TrainRecord {
    int step;
    double lr, loss, psnr;
};

// Runs sample -> augment -> forward -> loss -> backward -> Adam with a
// cosine-annealed learning rate. Fully deterministic given (seed, data).
// Throws on the first NaN gradient, naming the parameter.
std::vector<TrainRecord> train_loop(Model& model, const std::vector<ImagePair>& train_pairs,
                                    const std::vector<ImagePair>& eval_pairs, const TrainConfig& cfg);

// Mean full-resolution output PSNR against targets.
double eval_psnr(Model& model, const std::vector<ImagePair>& pairs);

// Header `step,lr,loss,psnr`; infinite PSNR prints the literal "inf".
void write_loss_csv(const std::vector<TrainRecord>& records, const std::string& path);

}  // namespace ecfnet

#endif
