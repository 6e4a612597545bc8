#include "ear/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ear {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'A', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64_array(std::ostream& out, const double* data, std::size_t n) {
    static_assert(sizeof(double) == 8);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
        out.write(b, 8);
    }
}

void get_f64_array(std::istream& in, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (!in) throw std::runtime_error("checkpoint: truncated tensor payload");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        std::memcpy(&data[i], &bits, 8);
    }
}

json config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},       {"d_model", c.d_model},
                {"n_heads", c.n_heads},         {"mlp_hidden", c.mlp_hidden},
                {"vocab_size", c.vocab_size},   {"codebook_size", c.codebook_size},
                {"image_tokens", c.image_tokens}, {"max_len", c.max_len},
                {"ln_eps", c.ln_eps}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.codebook_size = j.at("codebook_size").get<std::size_t>();
    c.image_tokens = j.at("image_tokens").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.ln_eps = j.at("ln_eps").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, 8);
    out.put(static_cast<char>(kVersion));
    put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, tensor] : params.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        put_f64_array(out, tensor.data(), tensor.size());
    }
    json meta_json{{"init_seed", meta.init_seed},
                   {"world_hash", meta.world_hash},
                   {"config", config_to_json(params.config)}};
    std::string meta_str = meta_json.dump();
    put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' has unknown magic");
    int version = in.get();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    std::uint32_t count = get_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error("checkpoint: truncated tensor name");
        std::uint32_t rank = get_u32(in);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) shape[r] = get_u32(in);
        Tensor t(shape);
        get_f64_array(in, t.data(), t.size());
        ckpt.params.tensors.emplace(std::move(name), std::move(t));
    }
    std::uint32_t meta_len = get_u32(in);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), meta_len);
    if (!in) throw std::runtime_error("checkpoint: truncated metadata");
    json meta_json;
    try {
        meta_json = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: bad metadata JSON: ") + e.what());
    }
    ckpt.meta.init_seed = meta_json.at("init_seed").get<std::uint64_t>();
    ckpt.meta.world_hash = meta_json.at("world_hash").get<std::string>();
    ckpt.params.config = config_from_json(meta_json.at("config"));
    return ckpt;
}

}  // namespace ear
