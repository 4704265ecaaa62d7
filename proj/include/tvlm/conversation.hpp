#pragma once

// Conversations: the unit of instruction-tuning data. Serialized as
// JSON-lines {image, turns: [{role, text, supervised}]}.

#include <string>
#include <vector>

namespace tvlm {

enum class Role { user, assistant };

struct Turn {
    Role role = Role::user;
    std::string text;
    bool supervised = false;
    // Supervision weight for this turn's tokens relative to other supervised
    // turns; 1.0 everywhere unless a mixture config says otherwise.
    float weight = 1.0f;
};

struct Conversation {
    std::string image;  // path relative to the corpus root; empty = text-only
    std::vector<Turn> turns;
    std::string variant;  // R1..R4, caption, read

    void validate_alternation() const;
};

std::string conversation_to_json(const Conversation& conv);
Conversation conversation_from_json(const std::string& line);

std::vector<Conversation> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Conversation>& convs, const std::string& path);

}  // namespace tvlm
