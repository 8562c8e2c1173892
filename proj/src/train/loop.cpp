#include <cmath>
#include <condition_variable>
#include <deque>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <thread>

#include "rapose/train.hpp"

namespace rapose {
namespace {

struct Batch {
    int epoch = 0;
    int index = 0;
    Tensor<float> images;
    Tensor<float> targets;
};

template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

    // False once the queue has been closed by the consumer.
    bool push(T item) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return finished_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void finish() {
        std::lock_guard lock(mu_);
        finished_ = true;
        not_empty_.notify_all();
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = finished_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

private:
    std::size_t capacity_;
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    bool closed_ = false, finished_ = false;
};

// Produces every batch of the run in order. All randomness lives here, so the
// sequence depends only on the seed, not on which thread runs it.
class BatchSource {
public:
    BatchSource(std::span<const SyntheticSample> data, const TrainConfig& cfg, int hm_h, int hm_w)
        : data_(data), cfg_(cfg), hm_h_(hm_h), hm_w_(hm_w), rng_(cfg.seed), order_(data.size()) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }

    int batches_per_epoch() const {
        return static_cast<int>((data_.size() + cfg_.batch_size - 1) / static_cast<std::size_t>(cfg_.batch_size));
    }

    template <typename Sink>
    void run(Sink&& sink) {
        const int nb = batches_per_epoch();
        for (int e = 0; e < cfg_.epochs; ++e) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            for (int b = 0; b < nb; ++b)
                if (!sink(make(e, b))) return;
        }
    }

private:
    Batch make(int epoch, int index) {
        const std::size_t lo = static_cast<std::size_t>(index) * cfg_.batch_size;
        const std::size_t hi = std::min(data_.size(), lo + cfg_.batch_size);
        std::vector<Tensor<float>> imgs, tgts;
        for (std::size_t i = lo; i < hi; ++i) {
            SyntheticSample s = augment(data_[order_[i]], cfg_, rng_);
            tgts.push_back(render_sample_target(s, hm_h_, hm_w_, cfg_.sigma));
            imgs.push_back(std::move(s.image));
        }
        return Batch{epoch, index, stack_batch<float>(imgs), stack_batch<float>(tgts)};
    }

    std::span<const SyntheticSample> data_;
    const TrainConfig& cfg_;
    int hm_h_, hm_w_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
};

void check_dataset(const NetworkConfig& net, std::span<const SyntheticSample> dataset) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Shape s = dataset[i].image.shape();
        if (s.n != 1 || s.c != 3 || s.h != net.input_h || s.w != net.input_w)
            throw DimensionError("train_loop", {"image"},
                                 "sample " + std::to_string(i) + " is " + s.str() + ", model expects (1,3," +
                                     std::to_string(net.input_h) + "," + std::to_string(net.input_w) + ")");
        if (static_cast<int>(dataset[i].keypoints.size()) != net.num_keypoints)
            throw DimensionError("train_loop", {"keypoints"},
                                 "sample " + std::to_string(i) + " has " +
                                     std::to_string(dataset[i].keypoints.size()) + " keypoints, model has " +
                                     std::to_string(net.num_keypoints));
    }
}

}  // namespace

void write_epoch_log(std::ostream& os, const EpochLog& e) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << "epoch=" << e.epoch << " lr=" << std::setprecision(9) << e.lr << " loss=" << e.loss << '\n';
    os.flags(flags);
    os.precision(prec);
}

void sgd_step(ParameterSet<float>& params, std::span<const Tensor<float>> grads, double lr) {
    if (grads.size() != params.size())
        throw DimensionError("sgd_step", {"parameters"}, std::to_string(grads.size()) + " gradients for " +
                                                             std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params.at(i).data();
        auto g = grads[i].data();
        require_same_shape("sgd_step", params.at(i).shape(), grads[i].shape());
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = static_cast<float>(p[j] - lr * g[j]);
    }
}

TrainResult train_loop(PoseNet<float>& model, std::span<const SyntheticSample> dataset, const TrainConfig& cfg,
                       const TrainCallbacks& callbacks) {
    cfg.validate();
    const NetworkConfig& net = model.config();
    check_dataset(net, dataset);
    if (cfg.flip) flip_permutation(net.num_keypoints, cfg.flip_pairs);
    TrainResult result;
    if (cfg.epochs == 0 || dataset.empty()) return result;

    BatchSource source(dataset, cfg, net.heatmap_h(), net.heatmap_w());
    const int nb = source.batches_per_epoch();
    double epoch_loss = 0;

    auto consume = [&](Batch batch) {
        const double lr = sgdr_lr(batch.epoch + static_cast<double>(batch.index) / nb, cfg);
        Tape<float> tape;
        Binding<float> b = bind(tape, model.params(), true);
        auto fwd = model.forward(b, tape.constant(std::move(batch.images)));
        Var<float> loss = mse_loss(fwd.heatmap, tape.constant(std::move(batch.targets)));
        const double loss_value = loss.value()[0];
        tape.backward(loss);
        std::vector<Tensor<float>> grads;
        grads.reserve(b.vars.size());
        for (std::size_t i = 0; i < b.vars.size(); ++i) {
            grads.push_back(tape.grad(b.vars[i]));
            if (!grads.back().all_finite())
                throw TrainingDiverged("non-finite gradient for parameter '" + model.params().name(i) + "' at epoch " +
                                           std::to_string(batch.epoch) + " batch " + std::to_string(batch.index) +
                                           " (loss " + std::to_string(loss_value) + ")",
                                       model.params().name(i));
        }
        if (!std::isfinite(loss_value))
            throw TrainingDiverged("non-finite loss at epoch " + std::to_string(batch.epoch) +
                                       " with finite gradients",
                                   "");
        if (batch.index == 0 && callbacks.on_attention) callbacks.on_attention(batch.epoch, fwd.attention);
        sgd_step(model.params(), grads, lr);
        if (callbacks.on_step) callbacks.on_step(result.steps, loss_value);
        ++result.steps;
        epoch_loss += loss_value;
        if (batch.index == nb - 1) {
            EpochLog e{batch.epoch, sgdr_lr(batch.epoch, cfg), epoch_loss / nb};
            epoch_loss = 0;
            result.log.push_back(e);
            if (callbacks.on_epoch) callbacks.on_epoch(e);
        }
    };

    if (!cfg.prefetch) {
        source.run([&](Batch b) {
            consume(std::move(b));
            return true;
        });
        return result;
    }

    BoundedQueue<Batch> queue(2);
    std::exception_ptr producer_error;
    std::thread producer([&] {
        try {
            source.run([&](Batch b) { return queue.push(std::move(b)); });
        } catch (...) {
            producer_error = std::current_exception();
        }
        queue.finish();
    });
    try {
        while (auto batch = queue.pop()) consume(std::move(*batch));
    } catch (...) {
        queue.close();
        producer.join();
        throw;
    }
    producer.join();
    if (producer_error) std::rethrow_exception(producer_error);
    return result;
}

double evaluate_mse(const PoseNet<float>& model, std::span<const SyntheticSample> dataset, double sigma) {
    const NetworkConfig& net = model.config();
    check_dataset(net, dataset);
    if (dataset.empty()) throw ValueError("evaluate_mse: empty dataset");
    double sq = 0;
    std::size_t count = 0;
    // One image per forward: RAM attention averages over the batch, so larger
    // chunks would let images influence each other's heatmaps.
    constexpr std::size_t chunk = 1;
    for (std::size_t lo = 0; lo < dataset.size(); lo += chunk) {
        const std::size_t hi = std::min(dataset.size(), lo + chunk);
        std::vector<Tensor<float>> imgs;
        for (std::size_t i = lo; i < hi; ++i) imgs.push_back(dataset[i].image);
        const Tensor<float> pred = model.predict(stack_batch<float>(imgs));
        for (std::size_t i = lo; i < hi; ++i) {
            const Tensor<float> t = render_sample_target(dataset[i], net.heatmap_h(), net.heatmap_w(), sigma);
            const Tensor<float> p = pred.sample(static_cast<int>(i - lo));
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double d = static_cast<double>(p[j]) - t[j];
                sq += d * d;
            }
            count += t.numel();
        }
    }
    return sq / static_cast<double>(count);
}

}  // namespace rapose
