#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/ecgvf.hpp"
#include "ear/erasure.hpp"
#include "ear/model.hpp"
#include "ear/world.hpp"

namespace ear {

// Per-image feature: codebook token histogram (length K, sums to T) followed
// by mean pixel value per channel (length 3).
struct FeatureVector {
    std::vector<double> v;
};

FeatureVector image_features(const World& world, const std::vector<int>& codes);

// Fraction of prompts whose generated image the classifier flags as showing
// the concept. Generation failures are skipped and counted via `errored`.
double erasure_rate(const ModelParams& model, const World& world,
                    const std::vector<std::string>& prompts, const ConceptClassifier& classifier,
                    const std::string& concept, std::uint64_t seed = 0,
                    std::size_t* errored = nullptr);

// Frechet distance between Gaussian fits of the two feature clouds:
// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), the matrix square root
// taken through the symmetrized product with negative eigenvalues clamped.
double frechet_proxy(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b,
                     bool diagonal = false);

struct AnnotatedPrompt {
    std::string prompt;
    std::string expected_concept;
};

// Mean classifier score of each prompt's expected concept on its generation.
double alignment_score(const ModelParams& model, const World& world,
                       const std::vector<AnnotatedPrompt>& prompts,
                       const ConceptClassifier& classifier, std::uint64_t seed = 0);

struct MetricsReport {
    std::string target_concept;
    double erasure_accuracy{0.0};  // classifier hit rate on target-concept prompts
    double fidelity_proxy{0.0};    // Frechet distance original vs model on concept-free prompts
    double alignment{0.0};         // mean expected-concept score on concept-free prompts
    std::map<std::string, double> per_concept;  // classifier hit rate per concept
    std::size_t generation_errors{0};

    nlohmann::json to_json() const;
};

// Grammar prompts for one concept (every template x background combination).
std::vector<std::string> concept_prompts(const World& world, const std::string& concept);

MetricsReport compute_metrics(const ModelParams& model, const ModelParams& reference,
                              const World& world, const std::string& target_concept,
                              std::uint64_t seed = 0);

enum class SweepAxis { kWindowLength, kMuOnOff, kLayerDepth, kOrdering };

SweepAxis sweep_axis_from_string(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepContext {
    const World* world{nullptr};
    const ModelParams* base_params{nullptr};
    std::vector<PromptPair> dataset;
    std::string concept;
    EraseConfig base_config;
    std::uint64_t eval_seed{0};
};

// One erasure run + metrics per value; returns the RFC-4180 CSV text with a
// header row and one data row per value. Per-run failures land in the error
// column and the sweep continues.
std::string ablation_sweep(const SweepContext& ctx, SweepAxis axis,
                           const std::vector<std::string>& values);

std::string csv_quote(const std::string& field);
std::string format_double(double v);  // shortest round-trip representation

}  // namespace ear
