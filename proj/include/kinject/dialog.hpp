#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace kinject {

enum class Speaker { kUser, kSystem };

std::string_view to_string(Speaker s);

struct Turn {
  Speaker speaker = Speaker::kUser;
  std::string text;

  bool operator==(const Turn&) const = default;
};

/// Ordered dialog turns; the conditioning context for every model call.
struct DialogHistory {
  std::vector<Turn> turns;

  bool empty() const noexcept { return turns.empty(); }
  bool operator==(const DialogHistory&) const = default;

  /// Whether speakers strictly alternate. Recorded, not enforced.
  bool alternating() const;
  /// Keeps only the last `max_turns` turns (0 keeps everything).
  DialogHistory last(std::size_t max_turns) const;
  /// All turn texts joined by single spaces.
  std::string joined_text() const;
};

/// {"turns":[{"speaker":"user","text":...},...]}
nlohmann::json to_json(const DialogHistory& history);
/// Throws ParseError on a missing field or unknown speaker.
DialogHistory dialog_from_json(const nlohmann::json& j);

struct DialogFile {
  std::vector<DialogHistory> dialogs;
  std::size_t malformed = 0;  // skipped lines
};

/// JSON-lines dialog file. Malformed lines are skipped and counted.
DialogFile read_dialog_file(std::istream& in);
DialogFile read_dialog_file(const std::filesystem::path& path);

}  // namespace kinject
