#include "instyle/jsonl.hpp"

#include <fstream>
#include <string>

#include "instyle/error.hpp"

namespace instyle::jsonl {

std::vector<nlohmann::json> read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<nlohmann::json> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      lines.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lines;
}

void write(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& j : lines) out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

}  // namespace instyle::jsonl
