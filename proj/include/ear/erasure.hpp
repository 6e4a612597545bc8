#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ear/adam.hpp"
#include "ear/model.hpp"
#include "ear/tensor.hpp"
#include "ear/world.hpp"

namespace ear {

// A target/surrogate prompt pair: the surrogate prompt is the target prompt
// with the concept word replaced.
struct PromptPair {
    std::string concept;
    std::string target_prompt;
    std::string surrogate_prompt;
    std::string source;
    int iteration{0};
    std::uint64_t seed{0};

    bool operator==(const PromptPair&) const = default;
};

// Disjoint, ordered half-open ranges covering [0, T).
struct WindowSpec {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
};

WindowSpec partition_windows(std::size_t T, std::size_t W);

enum class WindowOrdering { kSequential, kRandom };
enum class UpdatePolicy { kPerWindow, kAccumulateAll };

struct EraseConfig {
    double eta{1.0};   // guidance factor; 0 regresses straight onto the surrogate latents
    double mu{0.05};   // loss threshold below which a window's gradients are discarded
    std::size_t window{4};
    std::size_t layer_begin{0};
    std::size_t layer_end{5};  // half-open: the first five layers by default
    std::set<std::string> projections{"q", "k", "v"};
    std::size_t steps{50};
    double lr{1e-4};
    WindowOrdering ordering{WindowOrdering::kSequential};
    UpdatePolicy policy{UpdatePolicy::kPerWindow};
    std::uint64_t seed{0};
    // when true, a discarded window skips the optimizer entirely instead of
    // stepping with a zero gradient
    bool freeze_moments_on_discard{false};
    double adam_beta1{0.9};
    double adam_beta2{0.999};
    double adam_eps{1e-8};
};

// Full-sequence regression without windowing or loss masking.
EraseConfig esd_baseline_config(std::size_t T);

// g_t = h_sur_t - eta * (h_tar_t - h_sur_t), per position.
Tensor guidance_target(const Tensor& h_org_tar, const Tensor& h_org_sur, double eta);

// Sum over window positions of squared Euclidean distance between rows.
double window_loss(const Tensor& h_ft, const Tensor& g, std::size_t begin, std::size_t end);

// Zeroes every gradient in place when loss < mu (strictly); returns whether
// the window was discarded.
bool apply_tlm(double loss, double mu, std::map<std::string, Tensor>& grads);

// Keys of the (layer, sublayer) cross product. Projections may name q, k, v,
// o, mlp (both mlp matrices) and norm (both norm gains).
std::set<std::string> select_trainable(const ModelParams& params, std::size_t layer_begin,
                                       std::size_t layer_end,
                                       const std::set<std::string>& projections);

struct LatentTriple {
    Tensor h_org_tar;  // frozen model on the target prompt
    Tensor h_org_sur;  // frozen model on the surrogate prompt
    Tensor h_ft;       // fine-tuned model on the target prompt
};

// Everything about one erasure step that does not depend on the parameters
// being tuned: the teacher-forcing codes come from greedy decoding of the
// frozen model on the target prompt, and both frozen passes run on them.
struct StepContext {
    std::vector<int> prompt_tar;
    std::vector<int> prompt_sur;
    std::vector<int> forced_codes;
    Tensor h_org_tar;
    Tensor h_org_sur;
    Tensor target;  // g, from guidance_target
};

StepContext prepare_step(const ModelParams& theta_star, const World& world,
                         const PromptPair& pair, double eta);

struct WindowGrads {
    double loss{0.0};
    std::map<std::string, Tensor> grads;  // keys restricted to the trainable set
};

// Gradients of every window loss from one shared forward pass of theta.
std::vector<WindowGrads> window_gradients(const ModelParams& theta, const StepContext& ctx,
                                          const WindowSpec& windows,
                                          const std::set<std::string>& trainable);

// Gradient of the total loss over all positions in one backward pass.
WindowGrads full_loss_gradients(const ModelParams& theta, const StepContext& ctx,
                                const std::set<std::string>& trainable);

struct WindowLogEntry {
    std::size_t step{0};
    std::size_t window_index{0};
    std::size_t begin{0};
    std::size_t end{0};
    double loss{0.0};
    double grad_norm{0.0};
    bool discarded{false};
    bool update_applied{false};
};

struct StepLog {
    std::size_t step{0};
    std::size_t pair_index{0};
    std::string target_prompt;
    std::vector<WindowLogEntry> windows;
    double param_delta_norm{0.0};
    std::size_t discarded_count{0};
};

struct EraseState {
    ModelParams theta;
    ModelParams theta_star;
    AdamState opt;
    std::set<std::string> trainable;
    std::size_t step_counter{0};
};

StepLog erase_step(EraseState& state, const World& world, const PromptPair& pair,
                   const EraseConfig& cfg);

struct RunReport {
    std::vector<StepLog> steps;
    bool dataset_cycled{false};
    std::size_t dataset_size{0};
    // JSON lines: one record per window per step plus per-step summaries
    std::string to_jsonl() const;
};

struct EraseResult {
    ModelParams params;
    RunReport report;
};

EraseResult run_erasure(const ModelParams& theta0, const World& world,
                        const std::vector<PromptPair>& dataset, const EraseConfig& cfg);

}  // namespace ear
