#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ear/vocab.hpp"

namespace ear {

struct Image {
    std::size_t width{0};
    std::size_t height{0};
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    bool operator==(const Image& o) const = default;
};

struct ConceptSpec {
    std::string name;
    std::vector<int> motif_codes;  // codebook ids that signal this concept
    std::vector<int> motif_cells;  // grid cells the motif occupies in corpus images
    std::string surrogate;         // concept substituted for this one in prompt pairs
};

struct BackgroundSpec {
    std::string name;
    std::vector<int> codes;
};

// Closed synthetic universe: a fixed codebook of pixel patches, concepts tied
// to dedicated codebook entries, a small prompt grammar, and a deterministic
// motif classifier. Everything downstream (corpus, prompts, evaluation) is a
// pure function of this structure.
struct World {
    std::uint64_t seed{0};
    std::size_t grid{4};        // image is grid x grid patches
    std::size_t patch{4};       // each patch is patch x patch pixels
    std::vector<std::vector<std::uint8_t>> codebook;  // K entries, patch*patch*3 bytes
    std::vector<ConceptSpec> concepts;
    std::vector<BackgroundSpec> backgrounds;
    std::vector<std::string> templates;  // contain "{c}" and "{b}" placeholders
    double classifier_threshold{0.25};

    std::size_t codebook_size() const { return codebook.size(); }
    std::size_t image_tokens() const { return grid * grid; }

    int concept_index(const std::string& name) const;
    int background_index(const std::string& name) const;
    const ConceptSpec& concept_by_name(const std::string& name) const;

    // Vocabulary derived from grammar + concept + background words, in a
    // fixed order, so two loads of the same world agree token for token.
    Vocab vocab() const;
};

World make_world(std::uint64_t seed);

nlohmann::json world_to_json(const World& w);
World world_from_json(const nlohmann::json& j);
void save_world(const World& w, const std::string& path);
World load_world(const std::string& path);

// FNV-1a of the canonical JSON dump, as fixed-width hex.
std::string world_hash(const World& w);

std::string render_template(const std::string& tmpl, const std::string& concept_name,
                            const std::string& background_name);

// The canonical image for (concept, background): motif cells carry the
// concept's codes, the rest carry the background's codes.
std::vector<int> compose_image(const World& w, std::size_t concept_idx,
                               std::size_t background_idx);

struct CorpusExample {
    std::string prompt;
    std::vector<int> codes;
};

// Every (concept, background, template) combination.
std::vector<CorpusExample> build_corpus(const World& w);

// Pure codebook lookup; token count must be a perfect square.
Image decode_image(const std::vector<int>& tokens,
                   const std::vector<std::vector<std::uint8_t>>& codebook,
                   std::size_t patch = 4);
Image decode_image(const World& w, const std::vector<int>& tokens);

// Nearest-patch (L2) encoder; exact inverse of decode_image for images that
// are tilings of codebook entries.
std::vector<int> encode_image(const World& w, const Image& image);

void write_ppm(const Image& image, const std::string& path);

struct Verdict {
    bool present{false};
    double score{0.0};  // in [0,1], monotone in motif cell count
};

class ConceptClassifier {
public:
    virtual ~ConceptClassifier() = default;
    virtual Verdict classify(const Image& image, const std::string& concept) const = 0;
};

// Counts grid cells whose nearest codebook entry belongs to the concept's
// motif set; present iff the matching fraction reaches the world threshold.
class MotifClassifier : public ConceptClassifier {
public:
    explicit MotifClassifier(const World& world) : world_(&world) {}
    Verdict classify(const Image& image, const std::string& concept) const override;

private:
    const World* world_;
};

}  // namespace ear
