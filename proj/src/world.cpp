#include "ear/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ear/rng.hpp"

namespace ear {

using nlohmann::json;

std::vector<int> tokenize_prompt(const std::string& text, const Vocab& vocab) {
    std::istringstream in(text);
    std::vector<int> out{Vocab::kBos};
    std::string word;
    bool any = false;
    while (in >> word) {
        out.push_back(vocab.word_id(word));
        any = true;
    }
    if (!any) throw std::invalid_argument("tokenize_prompt: empty prompt");
    return out;
}

int World::concept_index(const std::string& name) const {
    for (std::size_t i = 0; i < concepts.size(); ++i)
        if (concepts[i].name == name) return static_cast<int>(i);
    return -1;
}

int World::background_index(const std::string& name) const {
    for (std::size_t i = 0; i < backgrounds.size(); ++i)
        if (backgrounds[i].name == name) return static_cast<int>(i);
    return -1;
}

const ConceptSpec& World::concept_by_name(const std::string& name) const {
    int idx = concept_index(name);
    if (idx < 0) throw std::invalid_argument("world: unknown concept '" + name + "'");
    return concepts[static_cast<std::size_t>(idx)];
}

Vocab World::vocab() const {
    Vocab v;
    v.codebook_size = codebook.size();
    auto add = [&v](const std::string& w) {
        for (const auto& existing : v.words)
            if (existing == w) return;
        v.words.push_back(w);
    };
    for (const auto& tmpl : templates) {
        std::istringstream in(tmpl);
        std::string word;
        while (in >> word)
            if (word != "{c}" && word != "{b}") add(word);
    }
    for (const auto& c : concepts) add(c.name);
    for (const auto& b : backgrounds) add(b.name);
    return v;
}

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1)      { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else             { r = c; b = x; }
    double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

std::vector<std::uint8_t> make_patch(Rng& rng, std::size_t patch, double hue, double value) {
    std::vector<std::uint8_t> bytes(patch * patch * 3);
    double base[3];
    hsv_to_rgb(hue, 0.85, value, base);
    for (std::size_t i = 0; i < patch * patch; ++i) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            double jitter = rng.uniform(-0.09, 0.09);
            double px = std::clamp(base[ch] + jitter, 0.0, 1.0);
            bytes[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(px * 255.0));
        }
    }
    return bytes;
}

}  // namespace

World make_world(std::uint64_t seed) {
    World w;
    w.seed = seed;
    w.grid = 4;
    w.patch = 4;
    w.classifier_threshold = 0.25;

    const std::vector<std::pair<std::string, std::string>> concept_names = {
        {"red-square", "blue-circle"}, {"blue-circle", "red-square"},
        {"green-tree", "gold-star"},   {"gold-star", "green-tree"},
        {"dark-tower", "pink-flower"}, {"pink-flower", "dark-tower"},
    };
    const std::vector<std::string> background_names = {"plain", "field", "night", "beach"};
    w.templates = {"a {c} on {b}", "the {c} near {b}", "one {c} over {b}"};

    const std::size_t K = 32;
    Rng patch_rng(derive_seed(seed, "codebook"));
    w.codebook.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        // golden-ratio hue spacing plus two brightness bands keeps entries apart
        double hue = std::fmod(0.11 + 0.61803398875 * static_cast<double>(k), 1.0);
        double value = k % 2 == 0 ? 0.9 : 0.55;
        std::vector<std::uint8_t> entry = make_patch(patch_rng, w.patch, hue, value);
        while (std::find(w.codebook.begin(), w.codebook.end(), entry) != w.codebook.end())
            entry = make_patch(patch_rng, w.patch, hue, value);
        w.codebook.push_back(std::move(entry));
    }

    Rng cell_rng(derive_seed(seed, "motif-cells"));
    const std::size_t cells_per_concept = 8;
    for (std::size_t i = 0; i < concept_names.size(); ++i) {
        ConceptSpec c;
        c.name = concept_names[i].first;
        c.surrogate = concept_names[i].second;
        c.motif_codes = {static_cast<int>(3 * i), static_cast<int>(3 * i + 1),
                         static_cast<int>(3 * i + 2)};
        std::vector<int> all_cells(w.image_tokens());
        for (std::size_t t = 0; t < all_cells.size(); ++t) all_cells[t] = static_cast<int>(t);
        cell_rng.shuffle(all_cells);
        c.motif_cells.assign(all_cells.begin(),
                             all_cells.begin() + static_cast<long>(cells_per_concept));
        std::sort(c.motif_cells.begin(), c.motif_cells.end());
        w.concepts.push_back(std::move(c));
    }

    const int bg_base = static_cast<int>(3 * concept_names.size());
    for (std::size_t j = 0; j < background_names.size(); ++j) {
        BackgroundSpec b;
        b.name = background_names[j];
        b.codes = {bg_base + static_cast<int>(2 * j), bg_base + static_cast<int>(2 * j + 1)};
        w.backgrounds.push_back(std::move(b));
    }
    return w;
}

json world_to_json(const World& w) {
    json j;
    j["version"] = 1;
    j["seed"] = w.seed;
    j["grid"] = w.grid;
    j["patch"] = w.patch;
    j["classifier_threshold"] = w.classifier_threshold;
    j["codebook"] = json::array();
    for (const auto& entry : w.codebook) j["codebook"].push_back(entry);
    j["concepts"] = json::array();
    for (const auto& c : w.concepts)
        j["concepts"].push_back({{"name", c.name},
                                 {"motif_codes", c.motif_codes},
                                 {"motif_cells", c.motif_cells},
                                 {"surrogate", c.surrogate}});
    j["backgrounds"] = json::array();
    for (const auto& b : w.backgrounds)
        j["backgrounds"].push_back({{"name", b.name}, {"codes", b.codes}});
    j["templates"] = w.templates;
    return j;
}

World world_from_json(const json& j) {
    if (!j.is_object()) throw std::runtime_error("world: root must be an object");
    if (j.value("version", 0) != 1)
        throw std::runtime_error("world: unsupported version " +
                                 std::to_string(j.value("version", 0)));
    World w;
    w.seed = j.at("seed").get<std::uint64_t>();
    w.grid = j.at("grid").get<std::size_t>();
    w.patch = j.at("patch").get<std::size_t>();
    w.classifier_threshold = j.at("classifier_threshold").get<double>();
    for (const auto& entry : j.at("codebook")) {
        auto bytes = entry.get<std::vector<std::uint8_t>>();
        if (bytes.size() != w.patch * w.patch * 3)
            throw std::runtime_error("world: codebook entry has wrong byte count");
        w.codebook.push_back(std::move(bytes));
    }
    for (const auto& cj : j.at("concepts")) {
        ConceptSpec c;
        c.name = cj.at("name").get<std::string>();
        c.motif_codes = cj.at("motif_codes").get<std::vector<int>>();
        c.motif_cells = cj.at("motif_cells").get<std::vector<int>>();
        c.surrogate = cj.at("surrogate").get<std::string>();
        for (int code : c.motif_codes)
            if (code < 0 || static_cast<std::size_t>(code) >= w.codebook.size())
                throw std::runtime_error("world: motif code out of range for '" + c.name + "'");
        w.concepts.push_back(std::move(c));
    }
    for (const auto& bj : j.at("backgrounds")) {
        BackgroundSpec b;
        b.name = bj.at("name").get<std::string>();
        b.codes = bj.at("codes").get<std::vector<int>>();
        w.backgrounds.push_back(std::move(b));
    }
    w.templates = j.at("templates").get<std::vector<std::string>>();
    return w;
}

void save_world(const World& w, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("world: cannot open '" + path + "' for writing");
    out << world_to_json(w).dump(2) << "\n";
    if (!out) throw std::runtime_error("world: write to '" + path + "' failed");
}

World load_world(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("world: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("world: parse error in '" + path + "': " + e.what());
    }
    return world_from_json(j);
}

std::string world_hash(const World& w) {
    std::uint64_t h = fnv1a64(world_to_json(w).dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string render_template(const std::string& tmpl, const std::string& concept_name,
                            const std::string& background_name) {
    std::string out = tmpl;
    auto replace = [&out](const std::string& key, const std::string& value) {
        std::size_t pos;
        while ((pos = out.find(key)) != std::string::npos) out.replace(pos, key.size(), value);
    };
    replace("{c}", concept_name);
    replace("{b}", background_name);
    return out;
}

std::vector<int> compose_image(const World& w, std::size_t concept_idx,
                               std::size_t background_idx) {
    const ConceptSpec& c = w.concepts.at(concept_idx);
    const BackgroundSpec& b = w.backgrounds.at(background_idx);
    std::vector<int> codes(w.image_tokens());
    for (std::size_t t = 0; t < codes.size(); ++t) {
        bool motif = std::find(c.motif_cells.begin(), c.motif_cells.end(),
                               static_cast<int>(t)) != c.motif_cells.end();
        codes[t] = motif ? c.motif_codes[t % c.motif_codes.size()]
                         : b.codes[t % b.codes.size()];
    }
    return codes;
}

std::vector<CorpusExample> build_corpus(const World& w) {
    std::vector<CorpusExample> corpus;
    for (std::size_t ci = 0; ci < w.concepts.size(); ++ci)
        for (std::size_t bi = 0; bi < w.backgrounds.size(); ++bi) {
            std::vector<int> codes = compose_image(w, ci, bi);
            for (const auto& tmpl : w.templates)
                corpus.push_back(
                    {render_template(tmpl, w.concepts[ci].name, w.backgrounds[bi].name), codes});
        }
    return corpus;
}

Image decode_image(const std::vector<int>& tokens,
                   const std::vector<std::vector<std::uint8_t>>& codebook, std::size_t patch) {
    std::size_t g = static_cast<std::size_t>(std::lround(std::sqrt(double(tokens.size()))));
    if (g * g != tokens.size())
        throw std::invalid_argument("decode_image: token count " +
                                    std::to_string(tokens.size()) +
                                    " is not a perfect square");
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= codebook.size())
            throw std::invalid_argument("decode_image: token " + std::to_string(t) +
                                        " outside codebook of size " +
                                        std::to_string(codebook.size()));
    Image img;
    img.width = g * patch;
    img.height = g * patch;
    img.rgb.assign(img.width * img.height * 3, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::size_t cell_r = i / g, cell_c = i % g;
        const auto& entry = codebook[static_cast<std::size_t>(tokens[i])];
        for (std::size_t pr = 0; pr < patch; ++pr) {
            std::size_t dst = ((cell_r * patch + pr) * img.width + cell_c * patch) * 3;
            std::copy(entry.begin() + static_cast<long>(pr * patch * 3),
                      entry.begin() + static_cast<long>((pr + 1) * patch * 3),
                      img.rgb.begin() + static_cast<long>(dst));
        }
    }
    return img;
}

Image decode_image(const World& w, const std::vector<int>& tokens) {
    return decode_image(tokens, w.codebook, w.patch);
}

std::vector<int> encode_image(const World& w, const Image& image) {
    if (image.width % w.patch != 0 || image.height % w.patch != 0)
        throw std::invalid_argument("encode_image: image size not a multiple of the patch size");
    std::size_t gc = image.width / w.patch, gr = image.height / w.patch;
    std::vector<int> codes;
    codes.reserve(gr * gc);
    std::vector<std::uint8_t> cell(w.patch * w.patch * 3);
    for (std::size_t r = 0; r < gr; ++r) {
        for (std::size_t c = 0; c < gc; ++c) {
            for (std::size_t pr = 0; pr < w.patch; ++pr) {
                std::size_t src = ((r * w.patch + pr) * image.width + c * w.patch) * 3;
                std::copy(image.rgb.begin() + static_cast<long>(src),
                          image.rgb.begin() + static_cast<long>(src + w.patch * 3),
                          cell.begin() + static_cast<long>(pr * w.patch * 3));
            }
            long best = 0;
            long long best_dist = -1;
            for (std::size_t k = 0; k < w.codebook.size(); ++k) {
                long long dist = 0;
                for (std::size_t i = 0; i < cell.size(); ++i) {
                    long long diff = static_cast<long long>(cell[i]) - w.codebook[k][i];
                    dist += diff * diff;
                }
                if (best_dist < 0 || dist < best_dist) {
                    best_dist = dist;
                    best = static_cast<long>(k);
                }
            }
            codes.push_back(static_cast<int>(best));
        }
    }
    return codes;
}

void write_ppm(const Image& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.rgb.data()),
              static_cast<std::streamsize>(image.rgb.size()));
    if (!out) throw std::runtime_error("write_ppm: write to '" + path + "' failed");
}

Verdict MotifClassifier::classify(const Image& image, const std::string& concept) const {
    const ConceptSpec& spec = world_->concept_by_name(concept);
    std::vector<int> codes = encode_image(*world_, image);
    std::size_t hits = 0;
    for (int code : codes)
        if (std::find(spec.motif_codes.begin(), spec.motif_codes.end(), code) !=
            spec.motif_codes.end())
            ++hits;
    Verdict v;
    v.score = static_cast<double>(hits) / static_cast<double>(codes.size());
    v.present = v.score >= world_->classifier_threshold;
    return v;
}

}  // namespace ear
