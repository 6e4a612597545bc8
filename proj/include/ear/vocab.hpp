#pragma once

#include <string>
#include <vector>

namespace ear {

// Token id layout: [0]=<bos> [1]=<boi> [2]=<unk>, then text words, then the
// codebook ids in a disjoint range starting at code_base().
struct Vocab {
    static constexpr int kBos = 0;
    static constexpr int kBoi = 1;
    static constexpr int kUnk = 2;

    std::vector<std::string> words;
    std::size_t codebook_size{0};

    std::size_t code_base() const { return 3 + words.size(); }
    std::size_t size() const { return code_base() + codebook_size; }

    int word_id(const std::string& w) const {
        for (std::size_t i = 0; i < words.size(); ++i)
            if (words[i] == w) return static_cast<int>(3 + i);
        return kUnk;
    }

    int code_token(int code) const { return static_cast<int>(code_base()) + code; }

    bool is_code_token(int id) const {
        return id >= static_cast<int>(code_base()) && id < static_cast<int>(size());
    }

    std::string token_name(int id) const {
        if (id == kBos) return "<bos>";
        if (id == kBoi) return "<boi>";
        if (id == kUnk) return "<unk>";
        if (id >= 3 && static_cast<std::size_t>(id) < code_base())
            return words[static_cast<std::size_t>(id) - 3];
        if (is_code_token(id))
            return "#" + std::to_string(id - static_cast<int>(code_base()));
        return "?" + std::to_string(id);
    }
};

// Whitespace tokenization against the fixed word list; unknown words map to
// <unk>, the result always begins with <bos>. Empty input is rejected.
std::vector<int> tokenize_prompt(const std::string& text, const Vocab& vocab);

}  // namespace ear
