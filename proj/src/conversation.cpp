#include "tvlm/conversation.hpp"

#include <fstream>

#include <json.hpp>

#include "tvlm/error.hpp"

namespace tvlm {

using nlohmann::json;

void Conversation::validate_alternation() const {
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const Role expected = (i % 2 == 0) ? Role::user : Role::assistant;
        if (turns[i].role != expected) {
            throw ConfigError("conversation: roles must alternate starting with user (turn " +
                              std::to_string(i) + ")");
        }
    }
}

std::string conversation_to_json(const Conversation& conv) {
    json turns = json::array();
    for (const auto& t : conv.turns) {
        json jt = {{"role", t.role == Role::user ? "user" : "assistant"},
                   {"text", t.text},
                   {"supervised", t.supervised}};
        if (t.weight != 1.0f) jt["weight"] = t.weight;
        turns.push_back(std::move(jt));
    }
    json j = {{"image", conv.image}, {"turns", turns}};
    if (!conv.variant.empty()) j["variant"] = conv.variant;
    return j.dump();
}

Conversation conversation_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("conversation: invalid JSON line: ") + e.what());
    }
    Conversation conv;
    if (!j.contains("turns") || !j["/turns"_json_pointer].is_array()) {
        throw ConfigError("conversation: missing array at /turns");
    }
    conv.image = j.value("image", std::string());
    conv.variant = j.value("variant", std::string());
    for (const auto& t : j["turns"]) {
        Turn turn;
        const std::string role = t.value("role", std::string());
        if (role == "user") turn.role = Role::user;
        else if (role == "assistant") turn.role = Role::assistant;
        else throw ConfigError("conversation: bad role '" + role + "' at /turns/role");
        if (!t.contains("text") || !t["text"].is_string()) {
            throw ConfigError("conversation: missing string at /turns/text");
        }
        turn.text = t["text"].get<std::string>();
        turn.supervised = t.value("supervised", false);
        turn.weight = t.value("weight", 1.0f);
        conv.turns.push_back(std::move(turn));
    }
    return conv;
}

std::vector<Conversation> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open conversations file: " + path);
    std::vector<Conversation> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(conversation_from_json(line));
    }
    return out;
}

void save_jsonl(const std::vector<Conversation>& convs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write conversations file: " + path);
    for (const auto& c : convs) out << conversation_to_json(c) << "\n";
}

}  // namespace tvlm
