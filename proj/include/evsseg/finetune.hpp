// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "evsseg/training.hpp"

namespace evsseg {

/// Counts for the positive (road) class.
struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    void add(int truth, int prediction) {
        if (truth == 1)
            (prediction == 1 ? tp : fn) += 1;
        else
            (prediction == 1 ? fp : tn) += 1;
    }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct EvalReport {
    double accuracy = 0;
    double miou = 0;
    double iou_road = 0;
    double iou_nonroad = 0;
    ConfusionMatrix confusion;
};

/// Accuracy and two-class mean IoU. A class whose union is empty scores IoU 1.
EvalReport metrics_from_confusion(const ConfusionMatrix& cm);

/// Confusion matrix of predictions against binary labels.
ConfusionMatrix confusion_of(std::span<const int> labels, std::span<const int> predictions);

/// Window-level road label from per-event labels: 1 when more than half of the events are road.
int majority_label(std::span<const std::uint8_t> event_labels);

/// Arg-max class of each window; ties go to class 0. Windows are split into
/// `threads` contiguous chunks evaluated concurrently; results do not depend on `threads`.
template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& params, std::span<const EventWindow> windows,
                         std::size_t threads = 1, std::size_t batch_size = 32) {
    std::vector<int> out(windows.size(), 0);
    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t start = begin; start < end; start += batch_size) {
            const std::size_t stop = std::min(end, start + batch_size);
            std::vector<const EventWindow*> batch;
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&windows[i]);
            Tape<Scalar> tape;
            const auto vars = bind_constants(tape, params);
            const auto logits = forward_batch(tape, vars, params.config, batch).value();
            for (std::size_t i = start; i < stop; ++i) {
                const auto r = static_cast<Eigen::Index>(i - start);
                out[i] = logits(r, 1) > logits(r, 0) ? 1 : 0;
            }
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, windows.size()));
    if (threads == 1) {
        run(0, windows.size());
        return out;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (windows.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(windows.size(), begin + chunk);
        if (begin < end) pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
    return out;
}

template <typename Scalar>
EvalReport evaluate(const ModelParams<Scalar>& params, std::span<const EventWindow> windows,
                    std::span<const int> labels, std::size_t threads = 1) {
    if (windows.empty()) throw ConfigError("evaluation set is empty");
    if (windows.size() != labels.size()) throw ConfigError("window and label counts differ");
    for (int y : labels)
        if (y != 0 && y != 1) throw ConfigError("evaluation labels must be 0 or 1");
    const auto predictions = predict(params, windows, threads);
    return metrics_from_confusion(confusion_of(labels, predictions));
}

struct FinetuneConfig {
    TrainConfig train;
    std::size_t max_samples = 256;
};

/// End-to-end training of every tensor on labelled windows. Uses at most
/// `max_samples` windows, taken from the front. `pretrained` is not modified.
template <typename Scalar, typename EpochHook = std::nullptr_t>
TrainResult<Scalar> finetune(const ModelParams<Scalar>& pretrained, std::span<const EventWindow> windows,
                             std::span<const int> labels, const FinetuneConfig& config,
                             EpochHook on_epoch = nullptr) {
    if (pretrained.config.head != HeadKind::SegmentationHead)
        throw ConfigError("finetune needs a segmentation_head; call swap_head first");
    if (windows.empty()) throw ConfigError("fine-tuning set is empty");
    if (windows.size() != labels.size()) throw ConfigError("window and label counts differ");
    const std::size_t n = std::min(windows.size(), config.max_samples);
    return train_classifier(pretrained, windows.first(n), labels.first(n), config.train, on_epoch);
}

struct BenchReport {
    std::size_t param_count = 0;
    double flops = 0;
    std::string flop_formula;
    double mean_seconds = 0;
    double std_seconds = 0;
    double median_seconds = 0;
    double windows_per_second = 0;
    std::size_t runs = 0;
};

/// Times single-window forward passes (float path) on synthetic windows.
BenchReport bench(const ModelParams<float>& params, std::size_t n_warmup, std::size_t n_runs, std::uint64_t seed = 0);

}  // namespace evsseg
