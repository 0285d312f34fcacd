#ifndef WPCL_SERIALIZE_HPP_
#define WPCL_SERIALIZE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "wpcl/error.hpp"

namespace wpcl {

std::string read_file(const std::string& path);
bool file_exists(const std::string& path);

// Write via temp file + rename so readers never observe partial content.
void atomic_write_file(const std::string& path, const std::string& content);

void append_line(const std::string& path, const std::string& line);

void ensure_dir(const std::string& path);

// RFC-4180-style escaping; rows must match the header width.
std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows);

// Shortest round-trip decimal form (repeatable across runs).
std::string format_double(double v);

// FNV-1a over the canonical config text, hex-encoded; identifies runs.
std::string content_hash(const std::string& text);

// Owns <dir>/.lock for the process lifetime; a second holder throws IoError.
class RunLock {
 public:
  explicit RunLock(const std::string& dir);
  ~RunLock();

  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

}  // namespace wpcl

#endif  // WPCL_SERIALIZE_HPP_
