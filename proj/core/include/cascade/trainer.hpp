#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cascade/augment.hpp"
#include "cascade/dataset.hpp"
#include "cascade/schedule.hpp"
#include "cascade/unet.hpp"

namespace cascade {

struct TrainOptions {
    int batch_size = 1;
    std::uint64_t seed = 0;
    AugConfig aug;                 // aug.master_seed keys the per-epoch draws
    bool augment_train = true;
    std::vector<float> class_weights;     // size = model num_classes
    std::vector<int> dice_label_ids{2, 3, 4};  // foreground labels for val dice
};

struct EpochLog {
    int phase = 0;
    int epoch = 0;       // global across phases
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice = 0.0;
};

/// epoch,phase,lr,train_loss,val_loss,val_dice
std::string logs_csv(std::span<const EpochLog> logs);

/// One pass over the training samples: shuffle keyed by (seed, epoch),
/// per-sample augmentation keyed by (aug seed, sample id, epoch), batches of
/// consecutive same-shape samples, Adam step per batch. Returns mean
/// per-sample loss.
double train_one_epoch(UNet<float>& model, std::span<const Sample> train, AdamState<float>& adam,
                       double lr, const TrainOptions& opt, std::uint64_t epoch);

struct ValScores {
    double loss = 0.0;
    double dice = 0.0;
};

/// Eval-mode loss and mean foreground dice over the validation samples.
ValScores validate(UNet<float>& model, std::span<const Sample> val, const TrainOptions& opt);

/// Parameter values plus batch-norm running statistics; used for best-epoch
/// restores.
struct ModelSnapshot {
    std::vector<Tensor<float>> values;
    std::vector<BatchNormState<float>> bn;
};

ModelSnapshot snapshot_model(UNet<float>& model);
void restore_model(UNet<float>& model, const ModelSnapshot& snap);

/// Validation-loss early stopping: stop after `patience` epochs without
/// improvement over the best seen value.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Returns true when `val` improves on the best value so far.
    bool observe(double val) {
        if (val < best_) {
            best_ = val;
            since_ = 0;
            return true;
        }
        ++since_;
        return false;
    }

    bool should_stop() const { return since_ >= patience_; }
    double best() const { return best_; }
    int epochs_since_improvement() const { return since_; }

    void restore(double best, int since) {
        best_ = best;
        since_ = since;
    }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_ = 0;
};

struct TrainResult {
    std::vector<EpochLog> logs;
};

/// Executes the schedule phase by phase: applies each phase's frozen set,
/// resets the optimizer, decays the learning rate per epoch within the
/// phase, early-stops on validation loss, and restores the phase's best-val
/// weights before moving on. Weights carry across phases.
TrainResult run_schedule(UNet<float>& model, std::span<const Sample> train,
                         std::span<const Sample> val, const Schedule& schedule,
                         const TrainOptions& opt);

}  // namespace cascade
