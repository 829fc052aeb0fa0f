// SPDX-License-Identifier: Apache-2.0
#include "evsseg/finetune.hpp"

#include <numeric>

#include "evsseg/stream_io.hpp"

namespace evsseg {

EvalReport metrics_from_confusion(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ConfigError("evaluation set is empty");
    auto iou = [](std::size_t inter, std::size_t uni) {
        return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    };
    EvalReport r;
    r.confusion = cm;
    r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    r.iou_road = iou(cm.tp, cm.tp + cm.fp + cm.fn);
    r.iou_nonroad = iou(cm.tn, cm.tn + cm.fn + cm.fp);
    r.miou = 0.5 * (r.iou_road + r.iou_nonroad);
    return r;
}

ConfusionMatrix confusion_of(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.size() != predictions.size()) throw ConfigError("label and prediction counts differ");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
    return cm;
}

int majority_label(std::span<const std::uint8_t> event_labels) {
    std::size_t road = 0;
    for (auto l : event_labels) road += l != 0 ? 1 : 0;
    return 2 * road > event_labels.size() ? 1 : 0;
}

BenchReport bench(const ModelParams<float>& params, std::size_t n_warmup, std::size_t n_runs, std::uint64_t seed) {
    if (n_runs < 1) throw ConfigError("bench needs at least one timed run");
    const auto& config = params.config;

    SynthOptions opts;
    opts.n_events = config.window * (n_warmup + n_runs);
    opts.seed = seed;
    const auto stream = synth_moving_edge(opts);
    const auto windows = window_stream(stream.events, opts.geometry, config.window).windows;

    using clock = std::chrono::steady_clock;
    std::vector<double> times;
    times.reserve(n_runs);
    volatile float sink = 0;
    for (std::size_t i = 0; i < n_warmup + n_runs; ++i) {
        const auto start = clock::now();
        const auto logits = forward(params, windows[i]);
        const auto stop = clock::now();
        sink = sink + logits(0);
        if (i >= n_warmup) times.push_back(std::chrono::duration<double>(stop - start).count());
    }

    BenchReport r;
    r.param_count = count_params(config);
    const auto flops = count_flops(config);
    r.flops = flops.total;
    r.flop_formula = flops.formula;
    r.runs = n_runs;
    r.mean_seconds = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    if (times.size() > 1) {
        double ss = 0;
        for (double t : times) ss += (t - r.mean_seconds) * (t - r.mean_seconds);
        r.std_seconds = std::sqrt(ss / static_cast<double>(times.size() - 1));
    }
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    r.median_seconds = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    r.windows_per_second = 1.0 / r.mean_seconds;
    return r;
}

}  // namespace evsseg
