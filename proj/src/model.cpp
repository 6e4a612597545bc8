#include "ear/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ear/adam.hpp"
#include "ear/rng.hpp"

namespace ear {

bool ModelParams::bit_equal(const ModelParams& o) const {
    if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
    auto it = tensors.begin();
    auto jt = o.tensors.begin();
    for (; it != tensors.end(); ++it, ++jt)
        if (it->first != jt->first || !it->second.bit_equal(jt->second)) return false;
    return true;
}

ModelConfig default_model_config(const World& world) {
    ModelConfig cfg;
    Vocab v = world.vocab();
    cfg.vocab_size = v.size();
    cfg.codebook_size = world.codebook_size();
    cfg.image_tokens = world.image_tokens();
    std::size_t max_prompt = 0;
    for (const auto& tmpl : world.templates) {
        std::size_t words = 1;  // <bos>
        for (char ch : tmpl)
            if (ch == ' ') ++words;
        max_prompt = std::max(max_prompt, words + 1);
    }
    cfg.max_len = max_prompt + 1 + cfg.image_tokens + 2;
    return cfg;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p;
    p.config = config;
    Rng rng(seed);
    const double emb_scale = 0.1;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    auto uniform_tensor = [&rng](std::vector<std::size_t> shape, double s) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
        return t;
    };
    p.tensors["tok_emb"] = uniform_tensor({config.vocab_size, config.d_model}, emb_scale);
    p.tensors["pos_emb"] = uniform_tensor({config.max_len, config.d_model}, emb_scale);
    p.tensors["head"] = Tensor::zeros({config.d_model, config.codebook_size});
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        for (const char* name : {"q", "k", "v", "o"})
            p.tensors[ModelParams::layer_key(l, name)] =
                uniform_tensor({config.d_model, config.d_model}, w_scale);
        p.tensors[ModelParams::layer_key(l, "mlp_in")] =
            uniform_tensor({config.d_model, config.mlp_hidden}, w_scale);
        p.tensors[ModelParams::layer_key(l, "mlp_out")] =
            uniform_tensor({config.mlp_hidden, config.d_model},
                           1.0 / std::sqrt(static_cast<double>(config.mlp_hidden)));
        p.tensors[ModelParams::layer_key(l, "norm1")] =
            Tensor({config.d_model}, std::vector<double>(config.d_model, 1.0));
        p.tensors[ModelParams::layer_key(l, "norm2")] =
            Tensor({config.d_model}, std::vector<double>(config.d_model, 1.0));
    }
    return p;
}

namespace {

void validate_tokens(const ModelConfig& cfg, const std::vector<int>& prompt_tokens,
                     const std::vector<int>& image_codes) {
    if (prompt_tokens.empty())
        throw std::invalid_argument("forward: prompt token sequence is empty");
    for (int t : prompt_tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw std::invalid_argument("forward: prompt token " + std::to_string(t) +
                                        " outside vocabulary of size " +
                                        std::to_string(cfg.vocab_size));
    for (int c : image_codes)
        if (c < 0 || static_cast<std::size_t>(c) >= cfg.codebook_size)
            throw std::invalid_argument("forward: image code " + std::to_string(c) +
                                        " outside codebook of size " +
                                        std::to_string(cfg.codebook_size));
    std::size_t n = prompt_tokens.size() + 1 + image_codes.size();
    if (n > cfg.max_len)
        throw std::invalid_argument("forward: sequence length " + std::to_string(n) +
                                    " exceeds max_len " + std::to_string(cfg.max_len));
}

Tensor causal_mask(std::size_t n) {
    Tensor m({n, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) m.at(r, c) = c <= r ? 0.0 : -1e9;
    return m;
}

}  // namespace

ForwardGraph build_forward(const ModelParams& params, const std::vector<int>& prompt_tokens,
                           const std::vector<int>& image_codes, bool with_logits) {
    const ModelConfig& cfg = params.config;
    validate_tokens(cfg, prompt_tokens, image_codes);

    ForwardGraph fg;
    Graph& g = fg.graph;
    for (const auto& [key, tensor] : params.tensors)
        fg.param_nodes[key] = g.input(tensor, key);

    const std::size_t P = prompt_tokens.size();
    std::vector<int> seq = prompt_tokens;
    seq.push_back(Vocab::kBoi);
    // image codes occupy the tail of the vocabulary id range
    const int code_base = static_cast<int>(cfg.vocab_size - cfg.codebook_size);
    for (int c : image_codes) seq.push_back(code_base + c);
    const std::size_t n = seq.size();

    std::vector<int> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);

    NodeId x = g.add(g.embedding(fg.param_nodes.at("tok_emb"), seq),
                     g.embedding(fg.param_nodes.at("pos_emb"), positions));
    NodeId mask = g.input(causal_mask(n));

    const std::size_t head_dim = cfg.d_model / cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        NodeId a = g.layer_norm(x, fg.param_nodes.at(ModelParams::layer_key(l, "norm1")),
                                cfg.ln_eps);
        NodeId q = g.matmul(a, fg.param_nodes.at(ModelParams::layer_key(l, "q")));
        NodeId k = g.matmul(a, fg.param_nodes.at(ModelParams::layer_key(l, "k")));
        NodeId v = g.matmul(a, fg.param_nodes.at(ModelParams::layer_key(l, "v")));
        std::vector<NodeId> heads;
        heads.reserve(cfg.n_heads);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            std::size_t lo = h * head_dim, hi = (h + 1) * head_dim;
            NodeId qh = g.slice(q, 1, lo, hi);
            NodeId kh = g.slice(k, 1, lo, hi);
            NodeId vh = g.slice(v, 1, lo, hi);
            NodeId scores = g.add(g.scale(g.matmul(qh, kh, false, true), att_scale), mask);
            heads.push_back(g.matmul(g.softmax(scores), vh));
        }
        NodeId attn = g.matmul(g.concat(heads, 1),
                               fg.param_nodes.at(ModelParams::layer_key(l, "o")));
        x = g.add(x, attn);
        NodeId b = g.layer_norm(x, fg.param_nodes.at(ModelParams::layer_key(l, "norm2")),
                                cfg.ln_eps);
        NodeId mlp = g.matmul(
            g.relu(g.matmul(b, fg.param_nodes.at(ModelParams::layer_key(l, "mlp_in")))),
            fg.param_nodes.at(ModelParams::layer_key(l, "mlp_out")));
        x = g.add(x, mlp);
    }

    // rows P..n-1 are the hidden states that predict image tokens 1..n-P
    fg.latents = g.slice(x, 0, P, n);
    if (with_logits) {
        fg.logits = g.matmul(fg.latents, fg.param_nodes.at("head"));
        fg.has_logits = true;
    }
    return fg;
}

Tensor forward_latents(const ModelParams& params, const std::vector<int>& prompt_tokens,
                       const std::vector<int>& image_codes) {
    if (image_codes.size() != params.config.image_tokens)
        throw std::invalid_argument(
            "forward_latents: expected " + std::to_string(params.config.image_tokens) +
            " image tokens, got " + std::to_string(image_codes.size()));
    // the final token is never an input: position t only sees tokens < t
    std::vector<int> fed(image_codes.begin(), image_codes.end() - 1);
    ForwardGraph fg = build_forward(params, prompt_tokens, fed, false);
    fg.graph.forward(fg.latents);
    return fg.graph.value(fg.latents);
}

std::vector<int> generate(const ModelParams& params, const std::vector<int>& prompt_tokens,
                          std::size_t T, const Sampling& sampling) {
    if (T < 1) throw std::invalid_argument("generate: T must be at least 1");
    if (sampling.temperature && *sampling.temperature <= 0.0)
        throw std::invalid_argument("generate: temperature must be positive");
    const std::size_t K = params.config.codebook_size;
    Rng rng(derive_seed(sampling.seed, "generate"));
    std::vector<int> codes;
    codes.reserve(T);
    for (std::size_t i = 0; i < T; ++i) {
        ForwardGraph fg = build_forward(params, prompt_tokens, codes, true);
        fg.graph.forward(fg.logits);
        const Tensor& logits = fg.graph.value(fg.logits);
        const std::size_t last = logits.rows() - 1;
        int pick = 0;
        if (!sampling.temperature) {
            double best = logits.at(last, 0);
            for (std::size_t j = 1; j < K; ++j)
                if (logits.at(last, j) > best) {
                    best = logits.at(last, j);
                    pick = static_cast<int>(j);
                }
        } else {
            double tau = *sampling.temperature;
            double mx = logits.at(last, 0) / tau;
            for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.at(last, j) / tau);
            std::vector<double> probs(K);
            double sum = 0.0;
            for (std::size_t j = 0; j < K; ++j) {
                probs[j] = std::exp(logits.at(last, j) / tau - mx);
                sum += probs[j];
            }
            double r = rng.next_double() * sum;
            double acc = 0.0;
            pick = static_cast<int>(K) - 1;
            for (std::size_t j = 0; j < K; ++j) {
                acc += probs[j];
                if (r < acc) {
                    pick = static_cast<int>(j);
                    break;
                }
            }
        }
        codes.push_back(pick);
    }
    return codes;
}

double loss_and_gradients(const ModelParams& params, const std::vector<int>& prompt_tokens,
                          const std::vector<int>& image_codes, double grad_scale,
                          std::map<std::string, Tensor>& grads_accum) {
    if (image_codes.size() != params.config.image_tokens)
        throw std::invalid_argument("loss_and_gradients: expected " +
                                    std::to_string(params.config.image_tokens) +
                                    " image tokens, got " + std::to_string(image_codes.size()));
    std::vector<int> fed(image_codes.begin(), image_codes.end() - 1);
    ForwardGraph fg = build_forward(params, prompt_tokens, fed, true);
    NodeId loss = fg.graph.cross_entropy(fg.graph.softmax(fg.logits), image_codes);
    fg.graph.forward(loss);
    fg.graph.backward(loss);
    for (const auto& [key, node] : fg.param_nodes) {
        Tensor g = fg.graph.grad(node);
        auto it = grads_accum.try_emplace(key, Tensor::zeros(g.shape())).first;
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += grad_scale * g[i];
    }
    return fg.graph.value(loss)[0];
}

PretrainResult pretrain(const World& world, const std::vector<CorpusExample>& corpus,
                        const PretrainConfig& cfg) {
    if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
    ModelConfig mc = default_model_config(world);
    ModelParams params = init_params(mc, derive_seed(cfg.seed, "init"));
    Vocab vocab = world.vocab();

    std::vector<std::vector<int>> prompts;
    prompts.reserve(corpus.size());
    for (const auto& ex : corpus) {
        prompts.push_back(tokenize_prompt(ex.prompt, vocab));
        if (ex.codes.size() != mc.image_tokens)
            throw std::invalid_argument("pretrain: corpus image must have " +
                                        std::to_string(mc.image_tokens) + " tokens");
    }

    Rng batch_rng(derive_seed(cfg.seed, "batches"));
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    AdamState opt;
    PretrainResult result;
    result.loss_trace.reserve(cfg.steps);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::map<std::string, Tensor> grads;
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            std::size_t idx = static_cast<std::size_t>(batch_rng.below(corpus.size()));
            loss += loss_and_gradients(params, prompts[idx], corpus[idx].codes,
                                       1.0 / static_cast<double>(cfg.batch), grads);
        }
        loss /= static_cast<double>(cfg.batch);
        if (std::isnan(loss))
            throw std::runtime_error("pretrain: loss diverged (NaN) at step " +
                                     std::to_string(step));
        result.loss_trace.push_back(loss);
        adam_step(params.tensors, grads, opt, adam);
    }
    result.params = std::move(params);
    return result;
}

}  // namespace ear
