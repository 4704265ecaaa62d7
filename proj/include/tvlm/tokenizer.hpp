#pragma once

// Fixed character-level vocabulary. No trained merges: the symbol set is
// closed over everything the synthetic corpus and chat template can emit.

#include <cstdint>
#include <string>
#include <vector>

namespace tvlm {

class Tokenizer {
  public:
    static constexpr std::int32_t kBos = 0;
    static constexpr std::int32_t kEos = 1;
    static constexpr std::int32_t kEot = 2;  // end of turn
    static constexpr std::int32_t kImg = 3;  // reserved image placeholder

    Tokenizer();

    std::int32_t vocab_size() const { return vocab_; }

    // Throws ConfigError on characters outside the vocabulary.
    std::vector<std::int32_t> encode(const std::string& text) const;

    // Drops special tokens.
    std::string decode(const std::vector<std::int32_t>& ids) const;

    std::int32_t char_id(char ch) const;
    bool has_char(char ch) const;

  private:
    std::int32_t vocab_ = 0;
    std::int32_t char_to_id_[256];
    std::string id_to_char_;
};

}  // namespace tvlm
