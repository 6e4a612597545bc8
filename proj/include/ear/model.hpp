#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ear/graph.hpp"
#include "ear/tensor.hpp"
#include "ear/world.hpp"

namespace ear {

struct ModelConfig {
    std::size_t n_layers{6};
    std::size_t d_model{48};
    std::size_t n_heads{4};
    std::size_t mlp_hidden{192};
    std::size_t vocab_size{0};
    std::size_t codebook_size{32};  // K, width of the image head
    std::size_t image_tokens{16};   // T
    std::size_t max_len{28};
    double ln_eps{1e-5};

    bool operator==(const ModelConfig&) const = default;
};

// All weights addressable by key. Layer sublayers use "L<i>.<name>" with
// names q, k, v, o, mlp_in, mlp_out, norm1, norm2; global tensors are
// tok_emb, pos_emb and head. std::map keeps iteration order fixed, which the
// checkpoint format and the optimizer rely on.
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    static std::string layer_key(std::size_t layer, const std::string& sublayer) {
        return "L" + std::to_string(layer) + "." + sublayer;
    }

    const Tensor& at(const std::string& key) const { return tensors.at(key); }
    Tensor& at(const std::string& key) { return tensors.at(key); }

    bool bit_equal(const ModelParams& o) const;
};

// Scaled-uniform initialization; the image head starts at zero so the first
// pretraining loss is exactly ln K.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

ModelConfig default_model_config(const World& world);

// Teacher-forced transformer pass, built as an autodiff graph. `latents` is
// the (T x d) block of final hidden states that feeds the image head, one row
// per image position.
struct ForwardGraph {
    Graph graph;
    NodeId latents{0};
    NodeId logits{0};
    bool has_logits{false};
    std::map<std::string, NodeId> param_nodes;
};

ForwardGraph build_forward(const ModelParams& params, const std::vector<int>& prompt_tokens,
                           const std::vector<int>& image_codes, bool with_logits);

// Final-layer hidden state at each image position, causally masked.
Tensor forward_latents(const ModelParams& params, const std::vector<int>& prompt_tokens,
                       const std::vector<int>& image_codes);

struct Sampling {
    std::optional<double> temperature;  // empty = greedy
    std::uint64_t seed{0};
};

// Appends <boi> to the prompt internally, then emits exactly T codebook ids.
std::vector<int> generate(const ModelParams& params, const std::vector<int>& prompt_tokens,
                          std::size_t T, const Sampling& sampling = {});

struct PretrainConfig {
    std::size_t steps{700};
    double lr{3e-3};
    std::size_t batch{8};
    std::uint64_t seed{0};
};

struct PretrainResult {
    ModelParams params;
    std::vector<double> loss_trace;
};

// Adam training on mean next-image-token cross-entropy over the corpus.
PretrainResult pretrain(const World& world, const std::vector<CorpusExample>& corpus,
                        const PretrainConfig& cfg);

// Mean cross-entropy of the teacher-forced codes under the model, plus the
// parameter gradients scaled by `grad_scale`. Gradient map covers every key.
double loss_and_gradients(const ModelParams& params, const std::vector<int>& prompt_tokens,
                          const std::vector<int>& image_codes, double grad_scale,
                          std::map<std::string, Tensor>& grads_accum);

}  // namespace ear
