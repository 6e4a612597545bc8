#include "ear/ecgvf.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <httplib.h>

#include "ear/rng.hpp"

namespace ear {

using nlohmann::json;

std::vector<PromptPair> SyntheticPromptSource::generate(const std::string& concept,
                                                        const std::vector<std::string>& templates,
                                                        int iteration, std::size_t count) {
    const ConceptSpec& spec = world_->concept_by_name(concept);
    if (templates.empty())
        throw std::invalid_argument("prompt source: no templates");
    Rng rng(derive_seed(seed_, "gen", static_cast<std::uint64_t>(iteration)));
    std::vector<PromptPair> pairs;
    pairs.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const std::string& tmpl = templates[rng.below(templates.size())];
        const BackgroundSpec& bg = world_->backgrounds[rng.below(world_->backgrounds.size())];
        PromptPair p;
        p.concept = concept;
        p.target_prompt = render_template(tmpl, spec.name, bg.name);
        p.surrogate_prompt = render_template(tmpl, spec.surrogate, bg.name);
        p.source = name_;
        p.iteration = iteration;
        p.seed = derive_seed(seed_, "pair",
                             static_cast<std::uint64_t>(iteration) * 1000 + n);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<PromptPair> parse_pair_lines(const std::string& body, const std::string& concept,
                                         const std::string& source_name, int iteration) {
    std::vector<PromptPair> pairs;
    std::istringstream in(body);
    std::string line;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        std::string s = trim(line);
        if (s.empty()) continue;
        // strip a leading "12." / "12)" / "12:" item number
        std::size_t i = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')' || s[i] == ':'))
            s = trim(s.substr(i + 1));
        std::string target, surrogate;
        for (const char* sep : {"|||", "=>", "|"}) {
            std::size_t pos = s.find(sep);
            if (pos != std::string::npos) {
                target = trim(s.substr(0, pos));
                surrogate = trim(s.substr(pos + std::string(sep).size()));
                break;
            }
        }
        if (target.empty() || surrogate.empty()) continue;
        PromptPair p;
        p.concept = concept;
        p.target_prompt = target;
        p.surrogate_prompt = surrogate;
        p.source = source_name;
        p.iteration = iteration;
        p.seed = fnv1a64(target + "\n" + surrogate);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<PromptPair> EndpointPromptSource::generate(const std::string& concept,
                                                       const std::vector<std::string>& templates,
                                                       int iteration, std::size_t count) {
    std::string body = "concept: " + concept + "\n";
    if (!surrogate_hint.empty()) body += "surrogate: " + surrogate_hint + "\n";
    body += "iteration: " + std::to_string(iteration) + "\n";
    body += "count: " + std::to_string(count) + "\n";
    for (const auto& t : templates) body += "template: " + t + "\n";

    httplib::Client client(host_, port_);
    client.set_connection_timeout(5);
    client.set_read_timeout(15);
    auto res = client.Post(path_, body, "text/plain");
    if (!res)
        throw std::runtime_error("endpoint source '" + name_ + "': no response from " + host_ +
                                 ":" + std::to_string(port_));
    if (res->status != 200)
        throw std::runtime_error("endpoint source '" + name_ + "': HTTP " +
                                 std::to_string(res->status));
    return parse_pair_lines(res->body, concept, name_, iteration);
}

std::vector<PromptPair> generate_pairs(PromptSource& source, const std::string& concept,
                                       const std::vector<std::string>& templates, int iterations,
                                       std::size_t count_per_iteration) {
    if (count_per_iteration < 1)
        throw std::invalid_argument("generate_pairs: count must be at least 1");
    std::vector<PromptPair> all;
    for (int it = 0; it < iterations; ++it) {
        std::vector<PromptPair> batch;
        try {
            batch = source.generate(concept, templates, it, count_per_iteration);
        } catch (const std::exception& e) {
            throw std::runtime_error("generate_pairs: source '" + source.name() +
                                     "' failed: " + e.what());
        }
        all.insert(all.end(), batch.begin(), batch.end());
    }
    std::vector<PromptPair> unique;
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& p : all)
        if (seen.emplace(p.target_prompt, p.surrogate_prompt).second)
            unique.push_back(std::move(p));
    if (unique.empty())
        throw std::runtime_error("generate_pairs: source '" + source.name() +
                                 "' produced no surviving pairs after deduplication");
    return unique;
}

FilterReport visual_filter(const std::vector<PromptPair>& pairs, const ModelParams& model,
                           const World& world, const ConceptClassifier& classifier,
                           const std::string& concept, const FilterOptions& options) {
    Vocab vocab = world.vocab();
    const std::size_t T = model.config.image_tokens;
    FilterReport report;
    for (const PromptPair& pair : pairs) {
        try {
            Sampling sampling;
            sampling.seed = pair.seed;
            if (options.sampled) sampling.temperature = options.temperature;
            std::vector<int> target_tokens = tokenize_prompt(pair.target_prompt, vocab);
            std::vector<int> surrogate_tokens = tokenize_prompt(pair.surrogate_prompt, vocab);
            Image target_img = decode_image(world, generate(model, target_tokens, T, sampling));
            Image surrogate_img =
                decode_image(world, generate(model, surrogate_tokens, T, sampling));
            bool target_present = classifier.classify(target_img, concept).present;
            bool surrogate_present = classifier.classify(surrogate_img, concept).present;
            if (target_present && !surrogate_present)
                report.kept.push_back(pair);
            else if (!target_present)  // double failures land here by fixed precedence
                report.rejected_false_negative.push_back(pair);
            else
                report.rejected_false_positive.push_back(pair);
        } catch (const std::exception&) {
            report.errored.push_back(pair);
        }
    }
    return report;
}

namespace {

json pair_to_json(const PromptPair& p) {
    return json{{"concept", p.concept},
                {"target_prompt", p.target_prompt},
                {"surrogate_prompt", p.surrogate_prompt},
                {"source", p.source},
                {"iteration", p.iteration},
                {"seed", p.seed}};
}

PromptPair pair_from_json(const json& j, std::size_t index) {
    PromptPair p;
    for (const char* field :
         {"concept", "target_prompt", "surrogate_prompt", "source", "iteration", "seed"})
        if (!j.contains(field))
            throw std::runtime_error("dataset: record " + std::to_string(index) +
                                     " missing field '" + field + "'");
    try {
        p.concept = j.at("concept").get<std::string>();
        p.target_prompt = j.at("target_prompt").get<std::string>();
        p.surrogate_prompt = j.at("surrogate_prompt").get<std::string>();
        p.source = j.at("source").get<std::string>();
        p.iteration = j.at("iteration").get<int>();
        p.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw std::runtime_error("dataset: record " + std::to_string(index) + " malformed: " +
                                 e.what());
    }
    return p;
}

}  // namespace

json FilterReport::to_json() const {
    json j;
    auto dump_list = [](const std::vector<PromptPair>& v) {
        json arr = json::array();
        for (const auto& p : v) arr.push_back(pair_to_json(p));
        return arr;
    };
    j["kept"] = dump_list(kept);
    j["rejected_false_negative"] = dump_list(rejected_false_negative);
    j["rejected_false_positive"] = dump_list(rejected_false_positive);
    j["errored"] = dump_list(errored);
    j["counts"] = {{"kept", kept.size()},
                   {"rejected_false_negative", rejected_false_negative.size()},
                   {"rejected_false_positive", rejected_false_positive.size()},
                   {"errored", errored.size()},
                   {"input", input_size()}};
    return j;
}

void save_dataset(const std::vector<PromptPair>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
    json arr = json::array();
    for (const auto& p : pairs) arr.push_back(pair_to_json(p));
    out << arr.dump(2) << "\n";
    if (!out) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

std::vector<PromptPair> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");
    json arr;
    try {
        in >> arr;
    } catch (const json::exception& e) {
        throw std::runtime_error("dataset: parse error in '" + path + "': " + e.what());
    }
    if (!arr.is_array()) throw std::runtime_error("dataset: root must be an array");
    std::vector<PromptPair> pairs;
    for (std::size_t i = 0; i < arr.size(); ++i) pairs.push_back(pair_from_json(arr[i], i));
    return pairs;
}

}  // namespace ear
