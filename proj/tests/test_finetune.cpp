#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "evsseg/finetune.hpp"
#include "evsseg/stream_io.hpp"

using namespace evsseg;

namespace {

struct Labeled {
    std::vector<EventWindow> windows;
    std::vector<int> labels;
};

Labeled synth_labeled(std::size_t count, std::size_t n, std::uint64_t seed) {
    SynthOptions o;
    o.n_events = count * n;
    o.seed = seed;
    const auto s = synth_moving_edge(o);
    Labeled out;
    out.windows = window_stream(s.events, o.geometry, n).windows;
    for (std::size_t w = 0; w < out.windows.size(); ++w)
        out.labels.push_back(majority_label(std::span(s.labels).subspan(w * n, n)));
    return out;
}

ModelConfig small_seg_config(std::size_t window = 10) {
    ModelConfig c;
    c.window = window;
    c.trunk_ffn = {32, 16};
    c.seg_head = {8, 2};
    c.head = HeadKind::SegmentationHead;
    return c;
}

}  // namespace

TEST_CASE("metric examples") {
    ConfusionMatrix perfect{40, 0, 0, 60};
    auto r = metrics_from_confusion(perfect);
    CHECK(r.accuracy == 1.0);
    CHECK(r.miou == 1.0);

    // everything predicted non-road on a 50/50 set
    std::vector<int> labels(100, 0), preds(100, 0);
    std::fill(labels.begin(), labels.begin() + 50, 1);
    const auto cm = confusion_of(labels, preds);
    CHECK(cm == ConfusionMatrix{0, 0, 50, 50});
    r = metrics_from_confusion(cm);
    CHECK(r.accuracy == doctest::Approx(0.5));
    CHECK(r.iou_nonroad == doctest::Approx(0.5));
    CHECK(r.iou_road == 0.0);
    CHECK(r.miou == doctest::Approx(0.25));

    // no road anywhere: the road class has an empty union
    r = metrics_from_confusion(ConfusionMatrix{0, 0, 0, 7});
    CHECK(r.iou_road == 1.0);
    CHECK(r.miou == 1.0);

    CHECK_THROWS_AS(metrics_from_confusion(ConfusionMatrix{}), ConfigError);
    CHECK_THROWS_AS(confusion_of(labels, std::vector<int>(3, 0)), ConfigError);
}

TEST_CASE("metric invariants on random instances") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t n = 1 + rng() % 200;
        std::bernoulli_distribution coin(std::uniform_real_distribution<double>(0.05, 0.95)(rng));
        std::vector<int> labels(n), preds(n);
        for (auto& l : labels) l = coin(rng);
        // independent of labels, same marginal
        for (auto& p : preds) p = coin(rng);
        const auto cm = confusion_of(labels, preds);
        CHECK(cm.total() == n);
        const auto r = metrics_from_confusion(cm);
        CHECK(r.accuracy >= 0);
        CHECK(r.accuracy <= 1);
        CHECK(r.miou >= 0);
        CHECK(r.miou <= 1);
        CHECK(r.miou <= r.accuracy + 1e-12);

        // permuting the evaluation set changes nothing
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int> lp(n), pp(n);
        for (std::size_t i = 0; i < n; ++i) {
            lp[i] = labels[perm[i]];
            pp[i] = preds[perm[i]];
        }
        CHECK(confusion_of(lp, pp) == cm);
    }
}

TEST_CASE("majority label is strict") {
    const std::vector<std::uint8_t> half{1, 1, 0, 0}, more{1, 1, 1, 0}, none{};
    CHECK(majority_label(half) == 0);
    CHECK(majority_label(more) == 1);
    CHECK(majority_label(none) == 0);
}

TEST_CASE("predictions do not depend on the thread count") {
    const auto c = small_seg_config();
    const auto p = init_model<double>(c, 8);
    const auto data = synth_labeled(70, c.window, 4);
    const std::span<const EventWindow> w(data.windows);
    const auto one = predict(p, w, 1, 16);
    CHECK(one.size() == data.windows.size());
    for (std::size_t t : {2u, 3u, 8u, 200u}) CHECK(predict(p, w, t, 16) == one);
    CHECK(predict(p, w, 1, 1) == one);

    const auto r1 = evaluate(p, w, std::span<const int>(data.labels), 1);
    const auto r4 = evaluate(p, w, std::span<const int>(data.labels), 4);
    CHECK(r1.confusion == r4.confusion);
    CHECK(r1.confusion.total() == data.windows.size());
}

TEST_CASE("evaluate preconditions") {
    const auto c = small_seg_config();
    const auto p = init_model<double>(c, 8);
    const auto data = synth_labeled(4, c.window, 4);
    const std::span<const EventWindow> w(data.windows);
    CHECK_THROWS_AS(evaluate(p, w.first(0), std::span<const int>()), ConfigError);
    const std::vector<int> short_labels{1};
    CHECK_THROWS_AS(evaluate(p, w, std::span<const int>(short_labels)), ConfigError);
    const std::vector<int> bad{0, 1, 2, 0};
    CHECK_THROWS_AS(evaluate(p, w, std::span<const int>(bad)), ConfigError);
}

TEST_CASE("finetune") {
    auto c = small_seg_config();
    const auto data = synth_labeled(40, c.window, 9);
    const std::span<const EventWindow> w(data.windows);
    const std::span<const int> y(data.labels);
    FinetuneConfig fc;
    fc.train.epochs = 3;
    fc.train.batch_size = 8;
    fc.max_samples = 24;

    SUBCASE("requires the segmentation head") {
        c.head = HeadKind::SslClassifier;
        CHECK_THROWS_AS(finetune(init_model<double>(c, 1), w, y, fc), ConfigError);
    }
    SUBCASE("empty or mismatched sets") {
        const auto p = init_model<double>(c, 1);
        CHECK_THROWS_AS(finetune(p, w.first(0), y.first(0), fc), ConfigError);
        CHECK_THROWS_AS(finetune(p, w, y.first(3), fc), ConfigError);
    }
    SUBCASE("updates every tensor and leaves the input alone") {
        const auto p = init_model<double>(c, 1);
        const auto before = p.tensors;
        const auto r = finetune(p, w, y, fc);
        CHECK(r.history.size() == 3);
        for (const auto& [name, t] : p.tensors) {
            INFO(name);
            CHECK((t.array() == before.at(name).array()).all());
            CHECK_FALSE((r.params.tensors.at(name).array() == t.array()).all());
        }
    }
    SUBCASE("deterministic and capped at max_samples") {
        const auto p = init_model<double>(c, 1);
        const auto a = finetune(p, w, y, fc);
        const auto b = finetune(p, w, y, fc);
        const auto capped = finetune(p, w.first(24), y.first(24), fc);
        for (std::size_t e = 0; e < a.history.size(); ++e) {
            CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
            CHECK(a.history[e].mean_loss == capped.history[e].mean_loss);
        }
    }
}

TEST_CASE("bench") {
    ModelConfig c;
    c.head = HeadKind::SegmentationHead;
    const auto p = init_model<float>(c, 0);
    const auto one = bench(p, 1, 1);
    CHECK(one.runs == 1);
    CHECK(one.std_seconds == 0);
    CHECK(one.mean_seconds > 0);
    CHECK(one.median_seconds == one.mean_seconds);
    CHECK(one.param_count == count_params(c));
    CHECK(one.flops == count_flops(c).total);
    CHECK(one.flops < 0.02e9);
    CHECK_FALSE(one.flop_formula.empty());

    const auto three = bench(p, 0, 3);
    CHECK(three.runs == 3);
    CHECK(three.std_seconds >= 0);
    CHECK(three.windows_per_second == doctest::Approx(1 / three.mean_seconds));
    CHECK_THROWS_AS(bench(p, 1, 0), ConfigError);
}
