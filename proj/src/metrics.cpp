#include "ear/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "ear/rng.hpp"

namespace ear {

using nlohmann::json;

FeatureVector image_features(const World& world, const std::vector<int>& codes) {
    const std::size_t K = world.codebook_size();
    FeatureVector f;
    f.v.assign(K + 3, 0.0);
    for (int c : codes) {
        if (c < 0 || static_cast<std::size_t>(c) >= K)
            throw std::invalid_argument("image_features: code " + std::to_string(c) +
                                        " outside codebook");
        f.v[static_cast<std::size_t>(c)] += 1.0;
    }
    Image img = decode_image(world, codes);
    double sums[3] = {0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < img.rgb.size(); i += 3)
        for (std::size_t ch = 0; ch < 3; ++ch) sums[ch] += img.rgb[i + ch];
    double pixels = static_cast<double>(img.width * img.height);
    for (std::size_t ch = 0; ch < 3; ++ch) f.v[K + ch] = sums[ch] / (pixels * 255.0);
    return f;
}

double erasure_rate(const ModelParams& model, const World& world,
                    const std::vector<std::string>& prompts, const ConceptClassifier& classifier,
                    const std::string& concept, std::uint64_t seed, std::size_t* errored) {
    if (prompts.empty()) throw std::invalid_argument("erasure_rate: empty prompt set");
    Vocab vocab = world.vocab();
    std::size_t flagged = 0, ok = 0, failed = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        try {
            std::vector<int> tokens = tokenize_prompt(prompts[i], vocab);
            Sampling sampling;
            sampling.seed = derive_seed(seed, "eval-gen", i);
            std::vector<int> codes = generate(model, tokens, model.config.image_tokens, sampling);
            Image img = decode_image(world, codes);
            if (classifier.classify(img, concept).present) ++flagged;
            ++ok;
        } catch (const std::exception&) {
            ++failed;
        }
    }
    if (errored) *errored = failed;
    return ok == 0 ? 0.0 : static_cast<double>(flagged) / static_cast<double>(ok);
}

namespace {

void feature_moments(const std::vector<FeatureVector>& set, Eigen::VectorXd& mean,
                     Eigen::MatrixXd& cov) {
    const std::size_t n = set.size();
    const std::size_t d = set[0].v.size();
    mean = Eigen::VectorXd::Zero(static_cast<long>(d));
    for (const auto& f : set) {
        if (f.v.size() != d)
            throw std::invalid_argument("frechet_proxy: inconsistent feature dimensions");
        for (std::size_t j = 0; j < d; ++j) mean[static_cast<long>(j)] += f.v[j];
    }
    mean /= static_cast<double>(n);
    cov = Eigen::MatrixXd::Zero(static_cast<long>(d), static_cast<long>(d));
    for (const auto& f : set) {
        Eigen::VectorXd x(static_cast<long>(d));
        for (std::size_t j = 0; j < d; ++j) x[static_cast<long>(j)] = f.v[j];
        Eigen::VectorXd c = x - mean;
        cov.noalias() += c * c.transpose();
    }
    cov /= static_cast<double>(n - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    Eigen::VectorXd vals = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * vals.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double frechet_proxy(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b,
                     bool diagonal) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("frechet_proxy: each feature set needs at least 2 vectors");
    if (a[0].v.size() != b[0].v.size())
        throw std::invalid_argument("frechet_proxy: feature dimension mismatch");
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    feature_moments(a, mu_a, cov_a);
    feature_moments(b, mu_b, cov_b);
    double mean_term = (mu_a - mu_b).squaredNorm();
    double trace_term;
    if (diagonal) {
        trace_term = 0.0;
        for (long i = 0; i < cov_a.rows(); ++i) {
            double va = std::max(cov_a(i, i), 0.0);
            double vb = std::max(cov_b(i, i), 0.0);
            trace_term += va + vb - 2.0 * std::sqrt(va * vb);
        }
    } else {
        Eigen::MatrixXd root_a = psd_sqrt(cov_a);
        Eigen::MatrixXd inner = root_a * cov_b * root_a;  // symmetrized product
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(inner);
        double tr_sqrt = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
        trace_term = cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    }
    return std::max(0.0, mean_term + trace_term);
}

double alignment_score(const ModelParams& model, const World& world,
                       const std::vector<AnnotatedPrompt>& prompts,
                       const ConceptClassifier& classifier, std::uint64_t seed) {
    if (prompts.empty()) throw std::invalid_argument("alignment_score: empty prompt set");
    Vocab vocab = world.vocab();
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].expected_concept.empty())
            throw std::invalid_argument("alignment_score: prompt " + std::to_string(i) +
                                        " has no expected-concept annotation");
        try {
            std::vector<int> tokens = tokenize_prompt(prompts[i].prompt, vocab);
            Sampling sampling;
            sampling.seed = derive_seed(seed, "eval-gen", i);
            std::vector<int> codes = generate(model, tokens, model.config.image_tokens, sampling);
            Image img = decode_image(world, codes);
            total += classifier.classify(img, prompts[i].expected_concept).score;
            ++counted;
        } catch (const std::exception&) {
        }
    }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

std::vector<std::string> concept_prompts(const World& world, const std::string& concept) {
    const ConceptSpec& spec = world.concept_by_name(concept);
    std::vector<std::string> prompts;
    for (const auto& tmpl : world.templates)
        for (const auto& bg : world.backgrounds)
            prompts.push_back(render_template(tmpl, spec.name, bg.name));
    return prompts;
}

MetricsReport compute_metrics(const ModelParams& model, const ModelParams& reference,
                              const World& world, const std::string& target_concept,
                              std::uint64_t seed) {
    MotifClassifier classifier(world);
    Vocab vocab = world.vocab();
    MetricsReport report;
    report.target_concept = target_concept;

    std::size_t errors = 0;
    for (const auto& concept : world.concepts) {
        std::size_t e = 0;
        double rate = erasure_rate(model, world, concept_prompts(world, concept.name), classifier,
                                   concept.name, seed, &e);
        report.per_concept[concept.name] = rate;
        errors += e;
    }
    report.erasure_accuracy = report.per_concept.at(target_concept);

    // concept-free prompts: the grammar restricted to non-target concepts
    std::vector<AnnotatedPrompt> unrelated;
    for (const auto& concept : world.concepts) {
        if (concept.name == target_concept) continue;
        for (const auto& prompt : concept_prompts(world, concept.name))
            unrelated.push_back({prompt, concept.name});
    }
    std::vector<FeatureVector> model_features, reference_features;
    std::size_t idx = 0;
    for (const auto& ap : unrelated) {
        try {
            std::vector<int> tokens = tokenize_prompt(ap.prompt, vocab);
            Sampling sampling;
            sampling.seed = derive_seed(seed, "fidelity-gen", idx);
            model_features.push_back(image_features(
                world, generate(model, tokens, model.config.image_tokens, sampling)));
            reference_features.push_back(image_features(
                world, generate(reference, tokens, reference.config.image_tokens, sampling)));
        } catch (const std::exception&) {
            ++errors;
        }
        ++idx;
    }
    report.fidelity_proxy = frechet_proxy(reference_features, model_features);
    report.alignment = alignment_score(model, world, unrelated, classifier, seed);
    report.generation_errors = errors;
    return report;
}

json MetricsReport::to_json() const {
    return json{{"target_concept", target_concept},
                {"erasure_accuracy", erasure_accuracy},
                {"fidelity_proxy", fidelity_proxy},
                {"alignment_score", alignment},
                {"per_concept", per_concept},
                {"generation_errors", generation_errors}};
}

SweepAxis sweep_axis_from_string(const std::string& name) {
    if (name == "window-length") return SweepAxis::kWindowLength;
    if (name == "mu-on-off") return SweepAxis::kMuOnOff;
    if (name == "layer-depth") return SweepAxis::kLayerDepth;
    if (name == "ordering") return SweepAxis::kOrdering;
    throw std::invalid_argument("ablation_sweep: unknown axis '" + name + "'");
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::kWindowLength: return "window-length";
        case SweepAxis::kMuOnOff: return "mu-on-off";
        case SweepAxis::kLayerDepth: return "layer-depth";
        case SweepAxis::kOrdering: return "ordering";
    }
    return "?";
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string ablation_sweep(const SweepContext& ctx, SweepAxis axis,
                           const std::vector<std::string>& values) {
    if (values.empty()) throw std::invalid_argument("ablation_sweep: no values given");
    if (!ctx.world || !ctx.base_params)
        throw std::invalid_argument("ablation_sweep: context missing world or parameters");
    std::string csv = sweep_axis_name(axis) +
                      ",erasure_accuracy,fidelity_proxy,alignment_score,error\r\n";
    for (const std::string& value : values) {
        std::string error;
        MetricsReport report;
        try {
            EraseConfig cfg = ctx.base_config;
            switch (axis) {
                case SweepAxis::kWindowLength:
                    cfg.window = static_cast<std::size_t>(std::stoul(value));
                    break;
                case SweepAxis::kMuOnOff:
                    if (value == "on")
                        cfg.mu = ctx.base_config.mu;
                    else if (value == "off")
                        cfg.mu = 0.0;
                    else
                        throw std::invalid_argument("mu-on-off value must be 'on' or 'off'");
                    break;
                case SweepAxis::kLayerDepth:
                    cfg.layer_begin = 0;
                    cfg.layer_end = static_cast<std::size_t>(std::stoul(value));
                    break;
                case SweepAxis::kOrdering:
                    if (value == "sequential")
                        cfg.ordering = WindowOrdering::kSequential;
                    else if (value == "random")
                        cfg.ordering = WindowOrdering::kRandom;
                    else
                        throw std::invalid_argument("ordering value must be 'sequential' or 'random'");
                    break;
            }
            EraseResult erased = run_erasure(*ctx.base_params, *ctx.world, ctx.dataset, cfg);
            report = compute_metrics(erased.params, *ctx.base_params, *ctx.world, ctx.concept,
                                     ctx.eval_seed);
        } catch (const std::exception& e) {
            error = e.what();
        }
        csv += csv_quote(value);
        csv += ',';
        if (error.empty()) {
            csv += format_double(report.erasure_accuracy);
            csv += ',';
            csv += format_double(report.fidelity_proxy);
            csv += ',';
            csv += format_double(report.alignment);
            csv += ',';
        } else {
            csv += ",,,";
        }
        csv += csv_quote(error);
        csv += "\r\n";
    }
    return csv;
}

}  // namespace ear
