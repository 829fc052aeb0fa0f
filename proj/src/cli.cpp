// SPDX-License-Identifier: Apache-2.0
#include "evsseg/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "evsseg/finetune.hpp"
#include "evsseg/manifest.hpp"
#include "evsseg/stream_io.hpp"

#ifndef EVSSEG_VERSION
#define EVSSEG_VERSION "0.0.0"
#endif

namespace evsseg {
namespace {

namespace fs = std::filesystem;

// Keys a config file may carry besides the model keys.
const std::set<std::string> kRunKeys{"epochs", "batch_size", "lr", "weight_decay", "seed", "threshold",
                                     "stride", "samples", "threads", "precision", "warmup", "runs"};

std::string dashed(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << std::setprecision(17);
    return out;
}

// Run settings resolved as: flag given > config file > built-in default.
class Settings {
public:
    explicit Settings(CLI::App* app) : app_(app) {}

    void add(const std::string& key, const std::string& def, const std::string& help) {
        auto& item = items_[key];
        item.value = def;
        item.opt = app_->add_option("--" + dashed(key), item.value, help)->capture_default_str();
    }

    void resolve(const std::map<std::string, std::string>& file) {
        for (const auto& [k, v] : file) {
            const auto it = items_.find(k);
            if (it != items_.end() && it->second.opt->count() == 0) it->second.value = v;
        }
    }

    const std::string& str(const std::string& key) const { return items_.at(key).value; }

    double real(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used == s.size() && std::isfinite(v)) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(key + " must be a number, got '" + s + "'");
    }

    std::uint64_t count(const std::string& key) const {
        const auto& s = str(key);
        std::uint64_t v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw ConfigError(key + " must be a non-negative integer, got '" + s + "'");
        return v;
    }

    std::map<std::string, std::string> snapshot() const {
        std::map<std::string, std::string> out;
        for (const auto& [k, item] : items_) out[k] = item.value;
        return out;
    }

private:
    struct Item {
        std::string value;
        CLI::Option* opt = nullptr;
    };
    CLI::App* app_;
    std::map<std::string, Item> items_;
};

// Splits a config file into model keys (applied to `model`) and run keys.
std::map<std::string, std::string> apply_config_file(const std::string& path, ModelConfig& model) {
    std::map<std::string, std::string> run;
    if (path.empty()) return run;
    for (const auto& [k, v] : parse_key_values(read_text(path))) {
        if (model.set(k, v)) continue;
        if (!kRunKeys.count(k)) throw ConfigError("unknown config key '" + k + "' in " + path);
        run[k] = v;
    }
    model.validate();
    return run;
}

bool wants_double(const Settings& s) {
    const auto& p = s.str("precision");
    if (p == "64") return true;
    if (p == "32") return false;
    throw ConfigError("precision must be 32 or 64, got '" + p + "'");
}

TrainConfig train_config(const Settings& s) {
    TrainConfig tc;
    tc.epochs = s.count("epochs");
    tc.batch_size = s.count("batch_size");
    tc.adam.lr = s.real("lr");
    tc.adam.weight_decay = s.real("weight_decay");
    tc.seed = s.count("seed");
    if (tc.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(tc.adam.lr > 0)) throw ConfigError("lr must be > 0");
    if (tc.adam.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    return tc;
}

void add_train_settings(Settings& s, const std::string& epochs) {
    s.add("epochs", epochs, "Training epochs");
    s.add("batch_size", "32", "Windows per optimizer step");
    s.add("lr", "0.001", "AdamW learning rate");
    s.add("weight_decay", "0.01", "AdamW decoupled weight decay");
    s.add("seed", "0", "Seed for initialization and shuffling");
    s.add("precision", "32", "Arithmetic width: 32 or 64");
}

void write_history(const fs::path& path, const std::vector<EpochStats>& history) {
    auto out = open_out(path);
    out << "epoch,mean_loss,label1_fraction\n";
    for (const auto& e : history) out << e.epoch << ',' << e.mean_loss << ',' << e.label1_fraction << '\n';
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

struct Run {
    RunManifest manifest;
    std::ostream& out;

    void input(const std::string& path) { manifest.inputs.push_back({path, sha256_hex(path)}); }
    void output(const std::string& path) { manifest.outputs.push_back(path); }
};

WindowedStream load_windows(Run& run, const std::string& path, std::size_t n, std::size_t stride = 0) {
    const auto stream = parse_event_file(path);
    run.input(path);
    auto w = window_stream(stream.events, stream.header.geometry, n, stride);
    if (w.windows.empty())
        throw FormatError(path + " holds " + std::to_string(stream.events.size()) + " events, fewer than one window of " +
                          std::to_string(n));
    return w;
}

LabeledWindowSet load_labeled(Run& run, const std::string& events, const std::string& labels, std::size_t n) {
    auto w = load_windows(run, events, n);
    auto file = read_label_file(labels);
    run.input(labels);
    return attach_labels(std::move(w.windows), file, n);
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string out, labels;
    std::size_t events = 5000, n = 50;
    std::uint32_t width = 346, height = 260;
    std::uint64_t seed = 0;
    bool binary = false;
};

void run_synth(Run& run, const SynthArgs& a) {
    SynthOptions o;
    o.n_events = a.events;
    o.geometry = {a.width, a.height};
    o.seed = a.seed;
    const auto s = synth_moving_edge(o);
    const EventFileHeader header{o.geometry, PolarityEncoding::Signed};
    const std::string labels = a.labels.empty() ? a.out + ".labels" : a.labels;
    if (a.binary) {
        std::ofstream f(a.out, std::ios::binary);
        if (!f) throw FormatError("cannot write " + a.out);
        write_event_binary(f, header, s.events);
        if (!f) throw FormatError("write to " + a.out + " failed");
    } else {
        write_event_file(a.out, header, s.events);
    }
    write_event_labels(labels, s.labels, a.n);
    run.output(a.out);
    run.output(labels);
    run.manifest.seed = a.seed;
    run.manifest.settings = {{"events", std::to_string(a.events)}, {"width", std::to_string(a.width)},
                             {"height", std::to_string(a.height)}, {"seed", std::to_string(a.seed)},
                             {"n", std::to_string(a.n)}, {"binary", a.binary ? "1" : "0"}};
    run.out << "wrote " << a.events << " events to " << a.out << " and labels to " << labels << '\n';
    write_manifest(run.manifest, manifest_path_for(a.out));
}

// ---- ssl-labels -----------------------------------------------------------

void run_ssl_labels(Run& run, const std::string& events, std::size_t n, const std::string& threshold,
                    const std::string& out_path) {
    const auto w = load_windows(run, events, n);
    SslConfig sc;
    if (threshold != "median") {
        sc.mode = ThresholdMode::Fixed;
        try {
            std::size_t used = 0;
            sc.threshold = std::stod(threshold, &used);
            if (used != threshold.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError("threshold must be 'median' or a number, got '" + threshold + "'");
        }
    }
    const auto t = make_ssl_targets(w.windows, sc);
    auto out = open_out(out_path);
    out << "entropy,label\n";
    for (std::size_t i = 0; i < t.labels.size(); ++i) out << t.entropies[i] << ',' << t.labels[i] << '\n';
    out.close();

    const auto ones = std::count(t.labels.begin(), t.labels.end(), 1);
    const double frac = static_cast<double>(ones) / static_cast<double>(t.labels.size());
    run.output(out_path);
    run.manifest.settings = {{"n", std::to_string(n)}, {"threshold", threshold}};
    run.manifest.results = {{"threshold", fmt(t.threshold)}, {"windows", std::to_string(t.labels.size())},
                            {"label1_fraction", fmt(frac)}};
    run.out << "threshold=" << fmt(t.threshold) << " windows=" << t.labels.size() << " label1_fraction=" << frac
            << " dropped_events=" << w.dropped << '\n';
    write_manifest(run.manifest, manifest_path_for(out_path));
}

// ---- pretrain -------------------------------------------------------------

template <typename Scalar>
void pretrain_as(Run& run, const Settings& s, ModelConfig config, const std::string& events, const std::string& out) {
    config.head = HeadKind::SslClassifier;
    const auto w = load_windows(run, events, config.window, s.count("stride"));
    SslConfig sc;
    sc.train = train_config(s);
    if (s.str("threshold") != "median") {
        sc.mode = ThresholdMode::Fixed;
        sc.threshold = s.real("threshold");
    }
    const auto targets = make_ssl_targets(w.windows, sc);
    const auto r = train_classifier(init_model<Scalar>(config, sc.train.seed), std::span<const EventWindow>(w.windows),
                                    std::span<const int>(targets.labels), sc.train,
                                    [&](const EpochStats& e, const ModelParams<Scalar>&) {
                                        run.out << "epoch " << e.epoch << " loss " << e.mean_loss << '\n';
                                        return true;
                                    });
    save_checkpoint(r.params, out);
    const std::string hist = out + ".history.csv";
    write_history(hist, r.history);
    run.output(out);
    run.output(config_path_for(out).string());
    run.output(hist);
    run.manifest.model_config = config.to_text();
    run.manifest.results = {{"threshold", fmt(targets.threshold)},
                            {"windows", std::to_string(w.windows.size())},
                            {"final_loss", fmt(r.history.back().mean_loss)}};
    run.out << "threshold=" << fmt(targets.threshold) << " windows=" << w.windows.size()
            << " final_loss=" << r.history.back().mean_loss << '\n';
}

// ---- finetune -------------------------------------------------------------

template <typename Scalar>
void finetune_as(Run& run, const Settings& s, ModelConfig config, bool config_has_model_keys,
                 const std::string& checkpoint, const std::string& events, const std::string& labels,
                 const std::string& out) {
    const auto seed = s.count("seed");
    ModelParams<Scalar> start;
    if (checkpoint.empty()) {
        config.head = HeadKind::SegmentationHead;
        start = init_model<Scalar>(config, seed);
    } else {
        run.input(checkpoint);
        run.input(config_path_for(checkpoint).string());
        auto loaded = load_checkpoint<Scalar>(checkpoint);
        if (config_has_model_keys) {
            config.head = loaded.config.head;
            if (!(config == loaded.config))
                throw ShapeError("checkpoint " + checkpoint + " does not match the model keys of --config");
        }
        start = loaded.config.head == HeadKind::SegmentationHead
                    ? std::move(loaded)
                    : swap_head(loaded, HeadKind::SegmentationHead, seed);
    }
    const auto data = load_labeled(run, events, labels, start.config.window);
    FinetuneConfig fc;
    fc.train = train_config(s);
    fc.max_samples = s.count("samples");
    if (fc.max_samples < 1) throw ConfigError("samples must be >= 1");
    const auto r = finetune(start, std::span<const EventWindow>(data.windows), std::span<const int>(data.labels), fc,
                            [&](const EpochStats& e, const ModelParams<Scalar>&) {
                                run.out << "epoch " << e.epoch << " loss " << e.mean_loss << '\n';
                                return true;
                            });
    save_checkpoint(r.params, out);
    const std::string hist = out + ".history.csv";
    write_history(hist, r.history);
    run.output(out);
    run.output(config_path_for(out).string());
    run.output(hist);
    const std::size_t used = std::min(data.windows.size(), fc.max_samples);
    run.manifest.model_config = r.params.config.to_text();
    run.manifest.results = {{"samples_used", std::to_string(used)},
                            {"final_loss", fmt(r.history.back().mean_loss)}};
    run.out << "samples_used=" << used << " final_loss=" << r.history.back().mean_loss << '\n';
}

// ---- eval -----------------------------------------------------------------

template <typename Scalar>
void eval_as(Run& run, const Settings& s, const std::string& checkpoint, const std::string& config_file,
             const std::string& events, const std::string& labels, const std::string& out) {
    run.input(checkpoint);
    run.input(config_path_for(checkpoint).string());
    ModelParams<Scalar> params;
    if (config_file.empty()) {
        params = load_checkpoint<Scalar>(checkpoint);
    } else {
        // The head defaults to the checkpoint's unless the file names one.
        ModelConfig expected;
        expected.head = load_model_config(config_path_for(checkpoint).string()).head;
        apply_config_file(config_file, expected);
        params = load_checkpoint<Scalar>(checkpoint, expected);
    }
    const auto data = load_labeled(run, events, labels, params.config.window);
    const auto r = evaluate(params, std::span<const EventWindow>(data.windows), std::span<const int>(data.labels),
                            s.count("threads"));
    auto f = open_out(out);
    f << "accuracy,miou,tp,fp,fn,tn\n"
      << r.accuracy << ',' << r.miou << ',' << r.confusion.tp << ',' << r.confusion.fp << ',' << r.confusion.fn << ','
      << r.confusion.tn << '\n';
    f.close();
    run.output(out);
    run.manifest.model_config = params.config.to_text();
    run.manifest.results = {{"accuracy", fmt(r.accuracy)}, {"miou", fmt(r.miou)}};
    run.out << "accuracy=" << r.accuracy << " miou=" << r.miou << " (mean of road and non-road IoU) tp=" << r.confusion.tp
            << " fp=" << r.confusion.fp << " fn=" << r.confusion.fn << " tn=" << r.confusion.tn << '\n';
}

// ---- bench ----------------------------------------------------------------

void run_bench(Run& run, const Settings& s, ModelConfig config, const std::string& checkpoint, const std::string& out) {
    ModelParams<float> params;
    if (checkpoint.empty()) {
        config.head = HeadKind::SegmentationHead;
        params = init_model<float>(config, s.count("seed"));
    } else {
        run.input(checkpoint);
        run.input(config_path_for(checkpoint).string());
        params = load_checkpoint<float>(checkpoint);
    }
    const auto r = bench(params, s.count("warmup"), s.count("runs"), s.count("seed"));
    auto f = open_out(out);
    f << "param_count,flops,mean_seconds,std_seconds,median_seconds,windows_per_second,runs\n"
      << r.param_count << ',' << r.flops << ',' << r.mean_seconds << ',' << r.std_seconds << ',' << r.median_seconds
      << ',' << r.windows_per_second << ',' << r.runs << '\n';
    f.close();
    run.output(out);
    run.manifest.model_config = params.config.to_text();
    run.manifest.results = {{"param_count", std::to_string(r.param_count)}, {"flops", fmt(r.flops)}};
    run.out << "param_count=" << r.param_count << '\n'
            << "flops=" << r.flops << " (" << r.flops / 1e9 << " GFLOPs per window)\n"
            << "flop_formula=" << r.flop_formula << '\n'
            << "mean_seconds=" << r.mean_seconds << " std_seconds=" << r.std_seconds
            << " median_seconds=" << r.median_seconds << " windows_per_second=" << r.windows_per_second
            << " runs=" << r.runs << " (CPU wall clock, single thread)\n";
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    return kExitData;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::ios_base::failure& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

namespace {

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Self-supervised event-stream segmentation with probabilistic attention", "evsseg"};
    app.set_version_flag("--version", EVSSEG_VERSION);
    app.require_subcommand(1);

    // synth
    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Write a synthetic event stream and per-event labels");
    synth->add_option("--out", sa.out, "Event file to write")->required();
    synth->add_option("--labels", sa.labels, "Label file to write (default: <out>.labels)");
    synth->add_option("--events", sa.events, "Number of events")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--width", sa.width, "Sensor width")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--height", sa.height, "Sensor height")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
    synth->add_option("--n", sa.n, "Events per label line")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_flag("--binary", sa.binary, "Write the binary event format");

    // ssl-labels
    std::string sl_events, sl_threshold = "median", sl_out;
    std::size_t sl_n = 50;
    auto* ssl = app.add_subcommand("ssl-labels", "Per-window polarity entropy and pretext labels");
    ssl->add_option("--events", sl_events, "Event file")->required();
    ssl->add_option("--n", sl_n, "Events per window")->capture_default_str()->check(CLI::PositiveNumber);
    ssl->add_option("--threshold", sl_threshold, "'median' or a value in (0, ln 2)")->capture_default_str();
    ssl->add_option("--out", sl_out, "CSV to write")->required();

    // pretrain
    std::string pt_events, pt_config, pt_out;
    auto* pre = app.add_subcommand("pretrain", "Train on polarity-entropy labels");
    pre->add_option("--events", pt_events, "Unlabelled event file")->required();
    pre->add_option("--config", pt_config, "key=value file with model and run keys");
    pre->add_option("--out", pt_out, "Checkpoint to write")->required();
    Settings pre_s(pre);
    add_train_settings(pre_s, "10");
    pre_s.add("threshold", "median", "'median' or a value in (0, ln 2)");
    pre_s.add("stride", "0", "Window stride in events (0: non-overlapping)");

    // finetune
    std::string ft_ckpt, ft_events, ft_labels, ft_config, ft_out;
    auto* fin = app.add_subcommand("finetune", "Swap in the segmentation head and train end to end");
    fin->add_option("--checkpoint", ft_ckpt, "Pretrained checkpoint (omit for random init)");
    fin->add_option("--events", ft_events, "Event file")->required();
    fin->add_option("--labels", ft_labels, "Label file")->required();
    fin->add_option("--config", ft_config, "key=value file with model and run keys");
    fin->add_option("--out", ft_out, "Checkpoint to write")->required();
    Settings fin_s(fin);
    add_train_settings(fin_s, "10");
    fin_s.add("samples", "256", "Labelled windows used, taken from the front");

    // eval
    std::string ev_ckpt, ev_events, ev_labels, ev_config, ev_out;
    auto* ev = app.add_subcommand("eval", "Accuracy and mean IoU on labelled windows");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required();
    ev->add_option("--events", ev_events, "Event file")->required();
    ev->add_option("--labels", ev_labels, "Label file")->required();
    ev->add_option("--config", ev_config, "Expected model config; a mismatch is an error");
    ev->add_option("--out", ev_out, "CSV to write")->required();
    Settings ev_s(ev);
    ev_s.add("threads", "1", "Worker threads");
    ev_s.add("precision", "32", "Arithmetic width: 32 or 64");

    // bench
    std::string bn_ckpt, bn_config, bn_out = "bench.csv";
    auto* bn = app.add_subcommand("bench", "Parameter count, FLOPs and forward-pass timing");
    bn->add_option("--checkpoint", bn_ckpt, "Checkpoint (omit to time a fresh model)");
    bn->add_option("--config", bn_config, "key=value file with model and run keys");
    bn->add_option("--out", bn_out, "CSV to write")->capture_default_str();
    Settings bn_s(bn);
    bn_s.add("warmup", "5", "Untimed forward passes");
    bn_s.add("runs", "20", "Timed forward passes");
    bn_s.add("seed", "0", "Seed for the model and the synthetic windows");

    // rerun
    std::string rr_manifest;
    auto* rr = app.add_subcommand("rerun", "Repeat the run a manifest describes");
    rr->add_option("--manifest", rr_manifest, "Manifest to replay")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    Run run{RunManifest{}, out};
    run.manifest.version = EVSSEG_VERSION;
    run.manifest.argv = args;
    run.manifest.command = app.get_subcommands().front()->get_name();

    if (synth->parsed()) {
        run_synth(run, sa);
        return kExitOk;
    }
    if (ssl->parsed()) {
        run_ssl_labels(run, sl_events, sl_n, sl_threshold, sl_out);
        return kExitOk;
    }
    if (rr->parsed()) {
        const auto m = read_manifest(rr_manifest);
        if (m.version != EVSSEG_VERSION)
            throw VersionError("manifest was written by version " + m.version + ", this is " + EVSSEG_VERSION);
        if (m.command == "rerun") throw ConfigError("a rerun manifest cannot be replayed");
        for (const auto& in : m.inputs)
            if (sha256_hex(in.path) != in.sha256) throw FormatError("input " + in.path + " changed since the manifest");
        return run_cli(m.argv, out, err);
    }

    auto finish = [&](Settings& s, const std::string& output) {
        run.manifest.settings = s.snapshot();
        if (run.manifest.settings.count("seed")) run.manifest.seed = s.count("seed");
        write_manifest(run.manifest, manifest_path_for(output));
        return kExitOk;
    };

    if (pre->parsed()) {
        ModelConfig config;
        if (!pt_config.empty()) run.input(pt_config);
        pre_s.resolve(apply_config_file(pt_config, config));
        if (wants_double(pre_s))
            pretrain_as<double>(run, pre_s, config, pt_events, pt_out);
        else
            pretrain_as<float>(run, pre_s, config, pt_events, pt_out);
        return finish(pre_s, pt_out);
    }
    if (fin->parsed()) {
        ModelConfig config;
        bool model_keys = false;
        if (!ft_config.empty()) {
            run.input(ft_config);
            for (const auto& [k, v] : parse_key_values(read_text(ft_config))) model_keys |= !kRunKeys.count(k);
        }
        fin_s.resolve(apply_config_file(ft_config, config));
        if (wants_double(fin_s))
            finetune_as<double>(run, fin_s, config, model_keys, ft_ckpt, ft_events, ft_labels, ft_out);
        else
            finetune_as<float>(run, fin_s, config, model_keys, ft_ckpt, ft_events, ft_labels, ft_out);
        return finish(fin_s, ft_out);
    }
    if (ev->parsed()) {
        if (!ev_config.empty()) {
            run.input(ev_config);
            ModelConfig scratch;
            ev_s.resolve(apply_config_file(ev_config, scratch));
        }
        if (wants_double(ev_s))
            eval_as<double>(run, ev_s, ev_ckpt, ev_config, ev_events, ev_labels, ev_out);
        else
            eval_as<float>(run, ev_s, ev_ckpt, ev_config, ev_events, ev_labels, ev_out);
        return finish(ev_s, ev_out);
    }
    if (bn->parsed()) {
        ModelConfig config;
        if (!bn_config.empty()) run.input(bn_config);
        bn_s.resolve(apply_config_file(bn_config, config));
        run_bench(run, bn_s, config, bn_ckpt, bn_out);
        return finish(bn_s, bn_out);
    }
    return kExitUsage;
}

}  // namespace
}  // namespace evsseg
