// SPDX-License-Identifier: Apache-2.0
#include "evsseg/model.hpp"

#include <sstream>

namespace evsseg {

std::string block_prefix(std::size_t block) { return "block" + std::to_string(block); }

std::string head_prefix(std::size_t block, std::size_t head) {
    return block_prefix(block) + ".head" + std::to_string(head);
}

namespace {

void add_dense(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t in, std::size_t outs,
               bool head = false) {
    out.push_back({prefix + ".weight", outs, in, InitKind::FanInUniform, static_cast<double>(in), head});
    out.push_back({prefix + ".bias", 1, outs, InitKind::FanInUniform, static_cast<double>(in), head});
}

std::size_t dense_params(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

std::vector<TensorSpec> tensor_specs(const ModelConfig& config) {
    config.validate();
    const std::size_t n = config.window;
    const std::size_t dm = config.d_model;
    const std::size_t hd = config.head_dim();
    const auto raw = matched_raw<double>(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(hd));

    std::vector<TensorSpec> specs;
    add_dense(specs, "input", 4, dm);
    specs.push_back({"pos_embedding", n, dm, InitKind::Normal, kPositionalStd});
    for (std::size_t b = 0; b < config.n_blocks; ++b) {
        const std::string p = block_prefix(b);
        specs.push_back({p + ".ln1.scale", 1, dm, InitKind::Constant, 1.0});
        specs.push_back({p + ".ln1.shift", 1, dm, InitKind::Constant, 0.0});
        for (std::size_t h = 0; h < config.n_heads; ++h) {
            const std::string hp = head_prefix(b, h);
            for (const char* w : {".wq", ".wk", ".wv"})
                specs.push_back({hp + w, hd, dm, InitKind::FanInUniform, static_cast<double>(dm)});
            specs.push_back({hp + ".pi_logits", 1, n, InitKind::Constant, 0.0});
            specs.push_back({hp + ".gamma_logits", 1, n, InitKind::Constant, 0.0});
            specs.push_back({hp + ".beta_raw", 1, n, InitKind::Constant, raw.beta_raw(0)});
            specs.push_back({hp + ".sigma_k_raw", 1, 1, InitKind::Constant, raw.sigma_k_raw});
            specs.push_back({hp + ".sigma_q_raw", 1, 1, InitKind::Constant, raw.sigma_q_raw});
            specs.push_back({hp + ".sigma_delta_raw", 1, 1, InitKind::Constant, raw.sigma_delta_raw});
        }
        add_dense(specs, p + ".attn_out", dm, dm);
        specs.push_back({p + ".ln2.scale", 1, dm, InitKind::Constant, 1.0});
        specs.push_back({p + ".ln2.shift", 1, dm, InitKind::Constant, 0.0});
        std::size_t in = dm;
        for (std::size_t i = 0; i < config.block_ffn.size(); ++i) {
            add_dense(specs, p + ".ffn" + std::to_string(i), in, config.block_ffn[i]);
            in = config.block_ffn[i];
        }
    }
    std::size_t in = dm;
    for (std::size_t i = 0; i < config.trunk_ffn.size(); ++i) {
        add_dense(specs, "trunk" + std::to_string(i), in, config.trunk_ffn[i]);
        in = config.trunk_ffn[i];
    }
    const auto& head = config.head_layers();
    for (std::size_t i = 0; i < head.size(); ++i) {
        add_dense(specs, "head.fc" + std::to_string(i), in, head[i], true);
        in = head[i];
    }
    return specs;
}

std::size_t count_params(const ModelConfig& config) {
    config.validate();
    const std::size_t n = config.window;
    const std::size_t dm = config.d_model;
    const std::size_t hd = config.head_dim();

    std::size_t total = dense_params(4, dm) + n * dm;

    const std::size_t per_head = 3 * hd * dm + 3 * n + 3;
    std::size_t ffn = 0;
    for (std::size_t i = 0, in = dm; i < config.block_ffn.size(); in = config.block_ffn[i++])
        ffn += dense_params(in, config.block_ffn[i]);
    const std::size_t per_block = 4 * dm + config.n_heads * per_head + dense_params(dm, dm) + ffn;
    total += config.n_blocks * per_block;

    std::size_t in = dm;
    for (auto d : config.trunk_ffn) {
        total += dense_params(in, d);
        in = d;
    }
    for (auto d : config.head_layers()) {
        total += dense_params(in, d);
        in = d;
    }
    return total;
}

FlopReport count_flops(const ModelConfig& config) {
    config.validate();
    const double n = static_cast<double>(config.window);
    const double dm = static_cast<double>(config.d_model);
    const double hd = static_cast<double>(config.head_dim());
    const double heads = static_cast<double>(config.n_heads);
    auto dense = [](double rows, double in, double out) { return 2.0 * rows * (in * out + out); };

    FlopReport r;
    r.input = dense(n, 4, dm);

    const double projections = heads * 3.0 * 2.0 * n * dm * hd;
    const double scores = heads * (2.0 * n * n * hd + n * n);
    const double weighted_sum = heads * 2.0 * n * n * hd;
    double ffn = 0;
    double in = dm;
    for (auto d : config.block_ffn) {
        ffn += dense(n, in, static_cast<double>(d));
        in = static_cast<double>(d);
    }
    r.per_block = projections + scores + weighted_sum + dense(n, dm, dm) + ffn;

    in = dm;
    for (auto d : config.trunk_ffn) {
        r.trunk += dense(1, in, static_cast<double>(d));
        in = static_cast<double>(d);
    }
    for (auto d : config.head_layers()) {
        r.head += dense(1, in, static_cast<double>(d));
        in = static_cast<double>(d);
    }
    r.total = r.input + static_cast<double>(config.n_blocks) * r.per_block + r.trunk + r.head;

    std::ostringstream f;
    f << "input 2N(4d+d) + blocks x [heads x (3*2Nd*dh + 2N^2dh + N^2 + 2N^2dh) + 2N(d^2+d) + ffn 2N(in*out+out)]"
         " + trunk 2(in*out+out) + head 2(in*out+out); N="
      << config.window << " d=" << config.d_model << " dh=" << config.head_dim() << " heads=" << config.n_heads
      << " blocks=" << config.n_blocks;
    r.formula = f.str();
    return r;
}

bool decays(const std::string& name) {
    auto ends_with = [&](const std::string& suffix) {
        return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return !(ends_with(".bias") || ends_with(".scale") || ends_with(".shift") || name == "pos_embedding");
}

}  // namespace evsseg
