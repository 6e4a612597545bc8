#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/erasure.hpp"
#include "ear/model.hpp"
#include "ear/world.hpp"

namespace ear {

class PromptSource {
public:
    virtual ~PromptSource() = default;
    virtual std::string name() const = 0;
    virtual std::vector<PromptPair> generate(const std::string& concept,
                                             const std::vector<std::string>& templates,
                                             int iteration, std::size_t count) = 0;
};

// Offline grammar sampler; stands in for one external language model. Six
// differently-seeded instances model the multi-source setup.
class SyntheticPromptSource : public PromptSource {
public:
    SyntheticPromptSource(const World& world, std::string name, std::uint64_t seed)
        : world_(&world), name_(std::move(name)), seed_(seed) {}

    std::string name() const override { return name_; }
    std::vector<PromptPair> generate(const std::string& concept,
                                     const std::vector<std::string>& templates, int iteration,
                                     std::size_t count) override;

private:
    const World* world_;
    std::string name_;
    std::uint64_t seed_;
};

// Plain-text request/response source. The request body lists the concept,
// surrogate, templates and count; the response is a numbered list of
// "target ||| surrogate" lines, parsed leniently. Disabled unless a host is
// configured explicitly.
class EndpointPromptSource : public PromptSource {
public:
    EndpointPromptSource(std::string name, std::string host, int port,
                         std::string path = "/pairs")
        : name_(std::move(name)), host_(std::move(host)), port_(port), path_(std::move(path)) {}

    std::string name() const override { return name_; }
    std::vector<PromptPair> generate(const std::string& concept,
                                     const std::vector<std::string>& templates, int iteration,
                                     std::size_t count) override;

    std::string surrogate_hint;  // substituted concept offered to the endpoint

private:
    std::string name_;
    std::string host_;
    int port_;
    std::string path_;
};

// Lenient line parser used by the endpoint source: accepts "1. a ||| b",
// "2) a | b", "a => b"; skips lines that do not contain a separator.
std::vector<PromptPair> parse_pair_lines(const std::string& body, const std::string& concept,
                                         const std::string& source_name, int iteration);

// iterations x count pairs, deduplicated on (target, surrogate) string
// equality, each carrying provenance.
std::vector<PromptPair> generate_pairs(PromptSource& source, const std::string& concept,
                                       const std::vector<std::string>& templates, int iterations,
                                       std::size_t count_per_iteration);

struct FilterReport {
    std::vector<PromptPair> kept;
    std::vector<PromptPair> rejected_false_negative;  // target image lacked the concept
    std::vector<PromptPair> rejected_false_positive;  // surrogate image showed the concept
    std::vector<PromptPair> errored;

    std::size_t input_size() const {
        return kept.size() + rejected_false_negative.size() + rejected_false_positive.size() +
               errored.size();
    }
    nlohmann::json to_json() const;
};

struct FilterOptions {
    bool sampled{false};  // greedy by default; sampled mode draws with each pair's seed
    double temperature{1.0};
};

// Generates both prompts of every pair under the same model and seed, then
// keeps a pair only when the classifier sees the concept in the target image
// and not in the surrogate image. Double failures count as false negatives.
FilterReport visual_filter(const std::vector<PromptPair>& pairs, const ModelParams& model,
                           const World& world, const ConceptClassifier& classifier,
                           const std::string& concept, const FilterOptions& options = {});

void save_dataset(const std::vector<PromptPair>& pairs, const std::string& path);
std::vector<PromptPair> load_dataset(const std::string& path);

}  // namespace ear
