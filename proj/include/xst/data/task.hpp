#pragma once

#include <array>
#include <string>
#include <string_view>

namespace xst {

// Fixed ids of the special vocabulary entries; language tags follow them.
namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kEos = 1;
inline constexpr int kUnk = 2;
inline constexpr int kAudio = 3;
inline constexpr int kFirstLanguage = 4;
inline constexpr std::array<std::string_view, 4> kSpecialNames = {"[pad]", "[eos]", "[unk]", "[audio]"};
}  // namespace tokens

enum class Task { kST, kASR, kMT, kMTExt };

inline constexpr std::array<Task, 4> kAllTasks = {Task::kST, Task::kASR, Task::kMT, Task::kMTExt};

enum class Modality { kAudio, kText };

inline Modality source_modality(Task task) {
  return (task == Task::kST || task == Task::kASR) ? Modality::kAudio : Modality::kText;
}

// True when the decoder must produce the source language (transcription).
inline bool targets_source_language(Task task) { return task == Task::kASR; }

std::string task_name(Task task);
// Accepts ST, ASR, MT, MT_EXT (any case, '-' or '_').
Task parse_task(std::string_view name);

}  // namespace xst
