#include "ear/erasure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "ear/rng.hpp"

namespace ear {

using nlohmann::json;

WindowSpec partition_windows(std::size_t T, std::size_t W) {
    if (W == 0) throw std::invalid_argument("partition_windows: window length must be positive");
    if (W > T)
        throw std::invalid_argument("partition_windows: window length " + std::to_string(W) +
                                    " exceeds sequence length " + std::to_string(T));
    WindowSpec spec;
    for (std::size_t s = 0; s < T; s += W) spec.ranges.emplace_back(s, std::min(s + W, T));
    return spec;
}

EraseConfig esd_baseline_config(std::size_t T) {
    EraseConfig cfg;
    cfg.window = T;
    cfg.mu = 0.0;
    cfg.policy = UpdatePolicy::kAccumulateAll;
    return cfg;
}

Tensor guidance_target(const Tensor& h_org_tar, const Tensor& h_org_sur, double eta) {
    if (!h_org_tar.same_shape(h_org_sur))
        throw std::invalid_argument("guidance_target: shape mismatch " + h_org_tar.shape_str() +
                                    " vs " + h_org_sur.shape_str());
    Tensor g(h_org_sur.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = h_org_sur[i] - eta * (h_org_tar[i] - h_org_sur[i]);
    return g;
}

double window_loss(const Tensor& h_ft, const Tensor& g, std::size_t begin, std::size_t end) {
    if (!h_ft.same_shape(g))
        throw std::invalid_argument("window_loss: shape mismatch " + h_ft.shape_str() + " vs " +
                                    g.shape_str());
    if (begin >= end || end > h_ft.rows())
        throw std::invalid_argument("window_loss: window [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of range for " +
                                    h_ft.shape_str());
    std::size_t d = h_ft.cols();
    double loss = 0.0;
    for (std::size_t t = begin; t < end; ++t)
        for (std::size_t j = 0; j < d; ++j) {
            double diff = h_ft.at(t, j) - g.at(t, j);
            loss += diff * diff;
        }
    return loss;
}

bool apply_tlm(double loss, double mu, std::map<std::string, Tensor>& grads) {
    if (!(loss < mu)) return false;
    for (auto& [key, g] : grads) g.fill(0.0);
    return true;
}

std::set<std::string> select_trainable(const ModelParams& params, std::size_t layer_begin,
                                       std::size_t layer_end,
                                       const std::set<std::string>& projections) {
    if (layer_begin > layer_end || layer_end > params.config.n_layers)
        throw std::invalid_argument("select_trainable: layer range [" +
                                    std::to_string(layer_begin) + "," +
                                    std::to_string(layer_end) + ") invalid for depth " +
                                    std::to_string(params.config.n_layers));
    std::set<std::string> keys;
    for (const std::string& proj : projections) {
        std::vector<std::string> sublayers;
        if (proj == "q" || proj == "k" || proj == "v" || proj == "o")
            sublayers = {proj};
        else if (proj == "mlp")
            sublayers = {"mlp_in", "mlp_out"};
        else if (proj == "norm")
            sublayers = {"norm1", "norm2"};
        else
            throw std::invalid_argument("select_trainable: unknown projection '" + proj + "'");
        for (std::size_t l = layer_begin; l < layer_end; ++l)
            for (const auto& s : sublayers) keys.insert(ModelParams::layer_key(l, s));
    }
    return keys;
}

StepContext prepare_step(const ModelParams& theta_star, const World& world,
                         const PromptPair& pair, double eta) {
    Vocab vocab = world.vocab();
    StepContext ctx;
    ctx.prompt_tar = tokenize_prompt(pair.target_prompt, vocab);
    ctx.prompt_sur = tokenize_prompt(pair.surrogate_prompt, vocab);
    ctx.forced_codes = generate(theta_star, ctx.prompt_tar, theta_star.config.image_tokens);
    ctx.h_org_tar = forward_latents(theta_star, ctx.prompt_tar, ctx.forced_codes);
    ctx.h_org_sur = forward_latents(theta_star, ctx.prompt_sur, ctx.forced_codes);
    ctx.target = guidance_target(ctx.h_org_tar, ctx.h_org_sur, eta);
    return ctx;
}

namespace {

struct LossGraph {
    ForwardGraph fg;
    std::vector<NodeId> window_roots;
    NodeId full_root{0};
};

LossGraph build_loss_graph(const ModelParams& theta, const StepContext& ctx,
                           const WindowSpec& windows) {
    LossGraph lg;
    std::vector<int> fed(ctx.forced_codes.begin(), ctx.forced_codes.end() - 1);
    lg.fg = build_forward(theta, ctx.prompt_tar, fed, false);
    Graph& g = lg.fg.graph;
    NodeId target = g.input(ctx.target);
    NodeId diff = g.add(lg.fg.latents, g.scale(target, -1.0));
    for (const auto& [s, e] : windows.ranges)
        lg.window_roots.push_back(g.sum_squares(g.slice(diff, 0, s, e)));
    lg.full_root = g.sum_squares(diff);
    return lg;
}

std::map<std::string, Tensor> collect_trainable_grads(const ForwardGraph& fg,
                                                      const std::set<std::string>& trainable) {
    std::map<std::string, Tensor> out;
    for (const std::string& key : trainable) out.emplace(key, fg.graph.grad(fg.param_nodes.at(key)));
    return out;
}

double grads_l2(const std::map<std::string, Tensor>& grads) {
    double s = 0.0;
    for (const auto& [key, g] : grads)
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i];
    return std::sqrt(s);
}

void add_grads(std::map<std::string, Tensor>& accum, const std::map<std::string, Tensor>& g) {
    for (const auto& [key, grad] : g) {
        auto it = accum.try_emplace(key, Tensor::zeros(grad.shape())).first;
        for (std::size_t i = 0; i < grad.size(); ++i) it->second[i] += grad[i];
    }
}

}  // namespace

std::vector<WindowGrads> window_gradients(const ModelParams& theta, const StepContext& ctx,
                                          const WindowSpec& windows,
                                          const std::set<std::string>& trainable) {
    LossGraph lg = build_loss_graph(theta, ctx, windows);
    lg.fg.graph.forward(lg.full_root);
    std::vector<WindowGrads> out;
    out.reserve(windows.ranges.size());
    for (std::size_t w = 0; w < windows.ranges.size(); ++w) {
        lg.fg.graph.backward(lg.window_roots[w]);
        WindowGrads wg;
        wg.loss = lg.fg.graph.value(lg.window_roots[w])[0];
        wg.grads = collect_trainable_grads(lg.fg, trainable);
        out.push_back(std::move(wg));
    }
    return out;
}

WindowGrads full_loss_gradients(const ModelParams& theta, const StepContext& ctx,
                                const std::set<std::string>& trainable) {
    WindowSpec none;
    LossGraph lg = build_loss_graph(theta, ctx, none);
    lg.fg.graph.forward(lg.full_root);
    lg.fg.graph.backward(lg.full_root);
    WindowGrads wg;
    wg.loss = lg.fg.graph.value(lg.full_root)[0];
    wg.grads = collect_trainable_grads(lg.fg, trainable);
    return wg;
}

StepLog erase_step(EraseState& state, const World& world, const PromptPair& pair,
                   const EraseConfig& cfg) {
    const std::size_t T = state.theta.config.image_tokens;
    StepContext ctx = prepare_step(state.theta_star, world, pair, cfg.eta);
    WindowSpec windows = partition_windows(T, cfg.window);

    std::vector<std::size_t> order(windows.ranges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.ordering == WindowOrdering::kRandom) {
        Rng rng(derive_seed(cfg.seed, "window-order", state.step_counter));
        rng.shuffle(order);
    }

    AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    std::map<std::string, Tensor> theta_before;
    for (const std::string& key : state.trainable)
        theta_before.emplace(key, state.theta.at(key));

    StepLog log;
    log.step = state.step_counter;
    log.target_prompt = pair.target_prompt;

    if (cfg.policy == UpdatePolicy::kPerWindow) {
        for (std::size_t wi : order) {
            WindowSpec single;
            single.ranges.push_back(windows.ranges[wi]);
            std::vector<WindowGrads> wg =
                window_gradients(state.theta, ctx, single, state.trainable);
            bool discarded = apply_tlm(wg[0].loss, cfg.mu, wg[0].grads);
            bool update = !(discarded && cfg.freeze_moments_on_discard);
            if (update) adam_step(state.theta.tensors, wg[0].grads, state.opt, adam);
            WindowLogEntry entry;
            entry.step = state.step_counter;
            entry.window_index = wi;
            entry.begin = windows.ranges[wi].first;
            entry.end = windows.ranges[wi].second;
            entry.loss = wg[0].loss;
            entry.grad_norm = grads_l2(wg[0].grads);
            entry.discarded = discarded;
            entry.update_applied = update;
            log.windows.push_back(entry);
            if (discarded) ++log.discarded_count;
        }
        std::sort(log.windows.begin(), log.windows.end(),
                  [](const WindowLogEntry& a, const WindowLogEntry& b) {
                      return a.window_index < b.window_index;
                  });
    } else {
        std::vector<WindowGrads> wgs = window_gradients(state.theta, ctx, windows, state.trainable);
        std::map<std::string, Tensor> total;
        std::size_t kept = 0;
        for (std::size_t wi : order) {
            WindowGrads& wg = wgs[wi];
            bool discarded = apply_tlm(wg.loss, cfg.mu, wg.grads);
            if (!discarded) {
                add_grads(total, wg.grads);
                ++kept;
            }
            WindowLogEntry entry;
            entry.step = state.step_counter;
            entry.window_index = wi;
            entry.begin = windows.ranges[wi].first;
            entry.end = windows.ranges[wi].second;
            entry.loss = wg.loss;
            entry.grad_norm = grads_l2(wg.grads);
            entry.discarded = discarded;
            entry.update_applied = false;
            log.windows.push_back(entry);
            if (discarded) ++log.discarded_count;
        }
        std::sort(log.windows.begin(), log.windows.end(),
                  [](const WindowLogEntry& a, const WindowLogEntry& b) {
                      return a.window_index < b.window_index;
                  });
        bool update = !(kept == 0 && cfg.freeze_moments_on_discard);
        if (update) {
            if (total.empty())
                for (const std::string& key : state.trainable)
                    total.emplace(key, Tensor::zeros(state.theta.at(key).shape()));
            adam_step(state.theta.tensors, total, state.opt, adam);
            if (!log.windows.empty()) log.windows.back().update_applied = true;
        }
    }

    double delta = 0.0;
    for (const std::string& key : state.trainable) {
        const Tensor& before = theta_before.at(key);
        const Tensor& after = state.theta.at(key);
        for (std::size_t i = 0; i < before.size(); ++i) {
            double d = after[i] - before[i];
            delta += d * d;
        }
    }
    log.param_delta_norm = std::sqrt(delta);
    state.step_counter += 1;
    return log;
}

EraseResult run_erasure(const ModelParams& theta0, const World& world,
                        const std::vector<PromptPair>& dataset, const EraseConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("run_erasure: empty dataset");
    EraseState state;
    state.theta = theta0;
    state.theta_star = theta0;
    state.trainable =
        select_trainable(theta0, cfg.layer_begin, cfg.layer_end, cfg.projections);

    EraseResult result;
    result.report.dataset_size = dataset.size();
    result.report.dataset_cycled = dataset.size() < cfg.steps;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const PromptPair& pair = dataset[step % dataset.size()];
        StepLog log = erase_step(state, world, pair, cfg);
        log.pair_index = step % dataset.size();
        result.report.steps.push_back(std::move(log));
    }
    result.params = std::move(state.theta);
    return result;
}

std::string RunReport::to_jsonl() const {
    std::string out;
    json header{{"type", "run-header"},
                {"dataset-size", dataset_size},
                {"dataset-cycled", dataset_cycled},
                {"teacher-forcing", "greedy-frozen-target"}};
    out += header.dump();
    out += "\n";
    for (const StepLog& s : steps) {
        for (const WindowLogEntry& w : s.windows) {
            json rec{{"step", w.step},
                     {"window-index", w.window_index},
                     {"range", json::array({w.begin, w.end})},
                     {"loss", w.loss},
                     {"discarded", w.discarded},
                     {"update-applied", w.update_applied},
                     {"grad-norm", w.grad_norm}};
            out += rec.dump();
            out += "\n";
        }
        json summary{{"type", "step-summary"},
                     {"step", s.step},
                     {"pair-index", s.pair_index},
                     {"prompt", s.target_prompt},
                     {"param-delta-norm", s.param_delta_norm},
                     {"discarded", s.discarded_count},
                     {"windows", s.windows.size()}};
        out += summary.dump();
        out += "\n";
    }
    return out;
}

}  // namespace ear
