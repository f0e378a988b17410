#include "kinject/dialog.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "kinject/errors.hpp"

namespace kinject {

std::string_view to_string(Speaker s) { return s == Speaker::kUser ? "user" : "system"; }

bool DialogHistory::alternating() const {
  for (std::size_t i = 1; i < turns.size(); ++i) {
    if (turns[i].speaker == turns[i - 1].speaker) return false;
  }
  return true;
}

DialogHistory DialogHistory::last(std::size_t max_turns) const {
  if (max_turns == 0 || turns.size() <= max_turns) return *this;
  DialogHistory out;
  out.turns.assign(turns.end() - static_cast<std::ptrdiff_t>(max_turns), turns.end());
  return out;
}

std::string DialogHistory::joined_text() const {
  std::string out;
  for (const auto& t : turns) {
    if (!out.empty()) out.push_back(' ');
    out += t.text;
  }
  return out;
}

nlohmann::json to_json(const DialogHistory& history) {
  auto turns = nlohmann::json::array();
  for (const auto& t : history.turns) {
    turns.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  }
  return {{"turns", std::move(turns)}};
}

DialogHistory dialog_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array()) {
    throw ParseError("dialog record needs a \"turns\" array");
  }
  DialogHistory history;
  for (const auto& t : j["turns"]) {
    if (!t.is_object() || !t.contains("speaker") || !t.contains("text") ||
        !t["speaker"].is_string() || !t["text"].is_string()) {
      throw ParseError("turn needs string \"speaker\" and \"text\"");
    }
    const auto speaker = t["speaker"].get<std::string>();
    Turn turn;
    if (speaker == "user") {
      turn.speaker = Speaker::kUser;
    } else if (speaker == "system") {
      turn.speaker = Speaker::kSystem;
    } else {
      throw ParseError("unknown speaker: " + speaker);
    }
    turn.text = t["text"].get<std::string>();
    history.turns.push_back(std::move(turn));
  }
  return history;
}

DialogFile read_dialog_file(std::istream& in) {
  DialogFile file;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      file.dialogs.push_back(dialog_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception&) {
      ++file.malformed;
    } catch (const ParseError&) {
      ++file.malformed;
    }
  }
  return file;
}

DialogFile read_dialog_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open dialog file: " + path.string());
  return read_dialog_file(in);
}

}  // namespace kinject
