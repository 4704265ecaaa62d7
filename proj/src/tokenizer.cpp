#include "tvlm/tokenizer.hpp"

#include "tvlm/error.hpp"

namespace tvlm {

Tokenizer::Tokenizer() {
    for (auto& v : char_to_id_) v = -1;
    // ids 0..3 are BOS/EOS/EOT/IMG; characters follow.
    id_to_char_ = "????";
    std::string chars;
    for (char c = 'A'; c <= 'Z'; ++c) chars.push_back(c);
    for (char c = '0'; c <= '9'; ++c) chars.push_back(c);
    chars += " \n:.,?-$%/";
    for (const char c : chars) {
        char_to_id_[static_cast<unsigned char>(c)] = static_cast<std::int32_t>(id_to_char_.size());
        id_to_char_.push_back(c);
    }
    vocab_ = static_cast<std::int32_t>(id_to_char_.size());
}

std::vector<std::int32_t> Tokenizer::encode(const std::string& text) const {
    std::vector<std::int32_t> out;
    out.reserve(text.size());
    for (const char ch : text) {
        const std::int32_t id = char_to_id_[static_cast<unsigned char>(ch)];
        if (id < 0) {
            throw ConfigError(std::string("tokenizer: character '") + ch + "' (0x" +
                              std::to_string(static_cast<int>(static_cast<unsigned char>(ch))) +
                              ") not in vocabulary");
        }
        out.push_back(id);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (const std::int32_t id : ids) {
        if (id <= kImg) continue;
        if (id < 0 || id >= vocab_) throw IncompatError("tokenizer: id out of range");
        out.push_back(id_to_char_[static_cast<std::size_t>(id)]);
    }
    return out;
}

std::int32_t Tokenizer::char_id(char ch) const {
    const std::int32_t id = char_to_id_[static_cast<unsigned char>(ch)];
    if (id < 0) throw ConfigError(std::string("tokenizer: character '") + ch + "' not in vocabulary");
    return id;
}

bool Tokenizer::has_char(char ch) const { return char_to_id_[static_cast<unsigned char>(ch)] >= 0; }

}  // namespace tvlm
