#include "xst/data/task.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace xst {

std::string task_name(Task task) {
  switch (task) {
    case Task::kST: return "ST";
    case Task::kASR: return "ASR";
    case Task::kMT: return "MT";
    case Task::kMTExt: return "MT_EXT";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  std::string key(name);
  for (char& c : key) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (key == "ST") return Task::kST;
  if (key == "ASR") return Task::kASR;
  if (key == "MT") return Task::kMT;
  if (key == "MT_EXT" || key == "MTEXT") return Task::kMTExt;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

}  // namespace xst
