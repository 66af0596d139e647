#include "cascade/trainer.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "cascade/metrics.hpp"
#include "cascade/ops.hpp"
#include "cascade/rng.hpp"

namespace cascade {

namespace {

/// Foreground mask over the given label ids.
MaskGrid foreground(const MaskGrid& labels, std::span<const int> ids) {
    MaskGrid out(labels.h, labels.w, 0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (int id : ids)
            if (labels.v[i] == id) {
                out.v[i] = 1;
                break;
            }
    return out;
}

struct Batch {
    std::vector<ImageGrid> images;
    std::vector<MaskGrid> labels;
};

double step_batch(UNet<float>& model, const Batch& batch, AdamState<float>& adam, double lr,
                  const TrainOptions& opt) {
    Tensor<float> x = batch_to_tensor(batch.images);
    Tensor<float> y = labels_to_onehot(batch.labels, static_cast<int>(model.config().num_classes));
    Tape<float> tape;
    Tensor<float> logits = model.forward(&tape, x, true);
    Tensor<float> probs = softmax_pixelwise(&tape, logits);
    Tensor<float> loss = weighted_cross_entropy<float>(&tape, probs, y, opt.class_weights);

    auto params = model.parameters();
    for (auto* p : params) p->value.zero_grad();
    tape.backward(loss);
    adam_step<float>(params, adam, static_cast<float>(lr));
    return static_cast<double>(loss.item());
}

}  // namespace

std::string logs_csv(std::span<const EpochLog> logs) {
    std::ostringstream os;
    os << "epoch,phase,lr,train_loss,val_loss,val_dice\n";
    char buf[160];
    for (const auto& l : logs) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.8e,%.8e,%.8e,%.8e\n", l.epoch, l.phase, l.lr,
                      l.train_loss, l.val_loss, l.val_dice);
        os << buf;
    }
    return os.str();
}

double train_one_epoch(UNet<float>& model, std::span<const Sample> train, AdamState<float>& adam,
                       double lr, const TrainOptions& opt, std::uint64_t epoch) {
    if (train.empty()) throw ValueError("train_one_epoch: empty training set");
    if (opt.class_weights.size() != model.config().num_classes)
        throw ConfigError("train_one_epoch: class weight count does not match the model");
    if (opt.batch_size < 1) throw ConfigError("train_one_epoch: batch_size must be positive");

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix64(opt.seed, 0x65706f63ULL, epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t done = 0;
    Batch batch;
    auto flush = [&]() {
        if (batch.images.empty()) return;
        const double loss = step_batch(model, batch, adam, lr, opt);
        loss_sum += loss * static_cast<double>(batch.images.size());
        done += batch.images.size();
        batch.images.clear();
        batch.labels.clear();
    };

    for (std::size_t idx : order) {
        Sample s = opt.augment_train ? augment(train[idx], opt.aug, epoch) : train[idx];
        if (!batch.images.empty() &&
            (batch.images.back().h != s.image.h || batch.images.back().w != s.image.w))
            flush();
        batch.images.push_back(std::move(s.image));
        batch.labels.push_back(std::move(s.label_map));
        if (batch.images.size() == static_cast<std::size_t>(opt.batch_size)) flush();
    }
    flush();
    return loss_sum / static_cast<double>(done);
}

ValScores validate(UNet<float>& model, std::span<const Sample> val, const TrainOptions& opt) {
    if (val.empty()) throw ValueError("validate: empty validation set");
    const int num_classes = static_cast<int>(model.config().num_classes);
    double loss_sum = 0.0, dice_sum = 0.0;
    for (const auto& s : val) {
        Tensor<float> x = image_to_tensor(s.image);
        std::span<const MaskGrid> lbl(&s.label_map, 1);
        Tensor<float> y = labels_to_onehot(lbl, num_classes);
        Tensor<float> logits = model.forward(nullptr, x, false);
        Tensor<float> probs = softmax_pixelwise<float>(nullptr, logits);
        Tensor<float> loss = weighted_cross_entropy<float>(nullptr, probs, y, opt.class_weights);
        loss_sum += static_cast<double>(loss.item());
        const MaskGrid pred = argmax_labels(logits);
        dice_sum += binary_dice(foreground(pred, opt.dice_label_ids),
                                foreground(s.label_map, opt.dice_label_ids));
    }
    return ValScores{loss_sum / static_cast<double>(val.size()),
                     dice_sum / static_cast<double>(val.size())};
}

ModelSnapshot snapshot_model(UNet<float>& model) {
    ModelSnapshot snap;
    for (auto* p : model.parameters()) snap.values.push_back(p->value.clone());
    for (auto& b : model.buffers()) snap.bn.push_back(*b.state);
    return snap;
}

void restore_model(UNet<float>& model, const ModelSnapshot& snap) {
    auto params = model.parameters();
    auto buffers = model.buffers();
    if (snap.values.size() != params.size() || snap.bn.size() != buffers.size())
        throw ShapeError("restore_model: snapshot does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!shape_eq(snap.values[i].shape(), params[i]->value.shape()))
            throw ShapeError("restore_model: shape mismatch for '" + params[i]->name + "'");
        std::copy(snap.values[i].v().begin(), snap.values[i].v().end(),
                  params[i]->value.v().begin());
    }
    for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].state = snap.bn[i];
}

TrainResult run_schedule(UNet<float>& model, std::span<const Sample> train,
                         std::span<const Sample> val, const Schedule& schedule,
                         const TrainOptions& opt) {
    if (train.empty()) throw ValueError("run_schedule: empty training set");
    validate_schedule_basic(schedule, static_cast<int>(model.config().encoder_blocks));

    TrainResult result;
    std::uint64_t global_epoch = 0;
    for (std::size_t phase_idx = 0; phase_idx < schedule.phases.size(); ++phase_idx) {
        const Phase& phase = schedule.phases[phase_idx];
        model.set_frozen_blocks(phase.frozen_blocks);
        AdamState<float> adam;  // fresh optimizer per phase
        EarlyStopper stopper(phase.patience);
        ModelSnapshot best = snapshot_model(model);

        for (int epoch = 0; epoch < phase.max_epochs; ++epoch, ++global_epoch) {
            const double lr = lr_at_epoch(phase.lr0, epoch);
            const double train_loss = train_one_epoch(model, train, adam, lr, opt, global_epoch);
            const ValScores vs = validate(model, val, opt);
            result.logs.push_back(EpochLog{static_cast<int>(phase_idx),
                                           static_cast<int>(global_epoch), lr, train_loss, vs.loss,
                                           vs.dice});
            if (stopper.observe(vs.loss)) best = snapshot_model(model);
            if (stopper.should_stop()) {
                ++global_epoch;
                break;
            }
        }
        restore_model(model, best);
    }
    return result;
}

}  // namespace cascade
