#pragma once

// Conditional noise predictor eps(x_t, t, c) and the low-rank adapters that can be attached to it.

#include "tailgen/autodiff/graph.hpp"
#include "tailgen/prior/schedule.hpp"
#include "tailgen/rng.hpp"

#include <string>
#include <vector>

namespace tailgen {

struct DenoiserDims {
    int ambient = 16;
    int cond = 8;
    int time_embed = 8;
    std::vector<int> hidden{64, 64};

    int layer_count() const { return static_cast<int>(hidden.size()) + 1; }
    int input_width() const { return ambient + time_embed + cond; }
};

/// MLP over [x_t; timestep features; condition] -> predicted noise, SiLU between layers.
/// Weights live in `params` as "net.W<l>" and "net.b<l>".
struct DenoiserNet {
    DenoiserDims dims;
    ParameterSet params;

    static std::string weight_name(int layer) { return "net.W" + std::to_string(layer); }
    static std::string bias_name(int layer) { return "net.b" + std::to_string(layer); }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
    static DenoiserNet init(const DenoiserDims& dims, std::uint64_t seed) {
        DenoiserNet net;
        net.dims = dims;
        CounterRng rng(seed);
        int fan_in = dims.input_width();
        for (int l = 0; l < dims.layer_count(); ++l) {
            const int fan_out = l + 1 < dims.layer_count() ? dims.hidden[static_cast<std::size_t>(l)] : dims.ambient;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            net.params.add(weight_name(l), rng.uniform_matrix(fan_out, fan_in, -bound, bound));
            net.params.add(bias_name(l), Matrix::Zero(fan_out, 1));
            fan_in = fan_out;
        }
        return net;
    }

    void set_trainable(bool flag) {
        for (auto& e : params.entries()) e.trainable = flag;
    }
};

/// Low-rank update for one weight matrix W (p x q): effective W + scale * B A, A r x q, B p x r.
struct LoraAdapter {
    std::string target;
    Matrix A;
    Matrix B;
    double scale = 1.0;

    int rank() const { return static_cast<int>(A.rows()); }
    std::string a_name() const { return "lora." + target + ".A"; }
    std::string b_name() const { return "lora." + target + ".B"; }
};

struct LoraConfig {
    int rank = 10;
    double scale = 1.0;
};

inline Matrix apply_lora(const Matrix& weight, const LoraAdapter& adapter) {
    if (adapter.B.rows() != weight.rows() || adapter.A.cols() != weight.cols() || adapter.B.cols() != adapter.A.rows())
        throw DimensionError("apply_lora: adapter shape does not match weight " + adapter.target);
    return weight + adapter.scale * (adapter.B * adapter.A);
}

/// One adapter per affine weight. A ~ Uniform(-1/sqrt(q), 1/sqrt(q)); B = 0, so the effective delta starts at zero.
inline std::vector<LoraAdapter> init_adapters(const DenoiserNet& net, const LoraConfig& cfg, std::uint64_t seed) {
    if (cfg.rank < 1) throw ConfigError("LoRA rank must be at least 1");
    CounterRng rng(seed);
    std::vector<LoraAdapter> out;
    for (int l = 0; l < net.dims.layer_count(); ++l) {
        const Matrix& w = net.params.get(DenoiserNet::weight_name(l));
        LoraAdapter a;
        a.target = DenoiserNet::weight_name(l);
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        a.A = rng.uniform_matrix(cfg.rank, w.cols(), -bound, bound);
        a.B = Matrix::Zero(w.rows(), cfg.rank);
        a.scale = cfg.scale;
        out.push_back(std::move(a));
    }
    return out;
}

/// Which parameters a creative trial may move.
enum class SpaceSelection { Token, Adapters, Both };

inline const char* to_string(SpaceSelection s) {
    switch (s) {
        case SpaceSelection::Token: return "token";
        case SpaceSelection::Adapters: return "adapters";
        case SpaceSelection::Both: return "both";
    }
    return "?";
}

inline SpaceSelection space_from_string(const std::string& s) {
    if (s == "token") return SpaceSelection::Token;
    if (s == "adapters" || s == "lora") return SpaceSelection::Adapters;
    if (s == "both") return SpaceSelection::Both;
    throw ConfigError("unknown conceptual space '" + s + "' (token | adapters | both)");
}

/// Parameters searched during creative optimization: the learned token ("token") and, unless the
/// selection is token-only, every adapter's A and B. Unselected parts stay in the set, frozen.
inline ParameterSet make_conceptual_space(const Vector& token, const std::vector<LoraAdapter>& adapters,
                                          SpaceSelection selection) {
    ParameterSet space;
    space.add("token", token, selection != SpaceSelection::Adapters);
    if (selection == SpaceSelection::Token) return space;
    for (const auto& a : adapters) {
        space.add(a.a_name(), a.A, true);
        space.add(a.b_name(), a.B, true);
    }
    return space;
}

/// Graph handles for the network weights, with adapters folded in where the space has them.
struct NetNodes {
    std::vector<NodeId> weights;
    std::vector<NodeId> biases;
};

inline NetNodes declare_net(Graph& g, const DenoiserNet& net, const ParameterSet* space, double lora_scale) {
    NetNodes nodes;
    for (int l = 0; l < net.dims.layer_count(); ++l) {
        const std::string wn = DenoiserNet::weight_name(l);
        const Matrix& w = net.params.get(wn);
        NodeId weight = g.parameter(wn, w.rows(), w.cols());
        const std::string an = "lora." + wn + ".A";
        const std::string bn = "lora." + wn + ".B";
        if (space && space->contains(an) && space->contains(bn)) {
            const Matrix& a = space->get(an);
            const Matrix& b = space->get(bn);
            NodeId an_node = g.parameter(an, a.rows(), a.cols());
            NodeId bn_node = g.parameter(bn, b.rows(), b.cols());
            weight = g.add(weight, g.scale(g.matmul(bn_node, an_node), lora_scale));
        }
        nodes.weights.push_back(weight);
        const Matrix& b = net.params.get(DenoiserNet::bias_name(l));
        nodes.biases.push_back(g.parameter(DenoiserNet::bias_name(l), b.rows(), b.cols()));
    }
    return nodes;
}

/// eps prediction for column-stacked states `x` (m x n), features `temb` and condition `cond`.
inline NodeId predict_noise(Graph& g, const NetNodes& net, NodeId x, NodeId temb, NodeId cond) {
    NodeId h = g.concat(g.concat(x, temb), cond);
    const std::size_t layers = net.weights.size();
    for (std::size_t l = 0; l + 1 < layers; ++l) h = g.silu(g.affine(net.weights[l], h, net.biases[l]));
    return g.affine(net.weights[layers - 1], h, net.biases[layers - 1]);
}

/// Plain (graph-free) evaluation of the network for one state; used as an independent check.
inline Vector predict_noise_direct(const DenoiserNet& net, const Vector& x, const Vector& temb, const Vector& cond,
                                   const std::vector<LoraAdapter>* adapters = nullptr) {
    Vector h(x.size() + temb.size() + cond.size());
    h << x, temb, cond;
    const int layers = net.dims.layer_count();
    for (int l = 0; l < layers; ++l) {
        Matrix w = net.params.get(DenoiserNet::weight_name(l));
        if (adapters) {
            for (const auto& a : *adapters)
                if (a.target == DenoiserNet::weight_name(l)) w = apply_lora(w, a);
        }
        Vector z = w * h + net.params.get(DenoiserNet::bias_name(l)).col(0);
        if (l + 1 < layers) z = z.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
        h = std::move(z);
    }
    return h;
}

}  // namespace tailgen
