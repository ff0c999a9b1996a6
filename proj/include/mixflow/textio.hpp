#pragma once

#include <zlib.h>

#include <memory>
#include <string>
#include <vector>

#include "mixflow/error.hpp"

namespace mixflow {

inline bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

/// Reads a whole file; gzip content is inflated transparently.
inline std::string read_text(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);
  std::string out;
  std::vector<char> buf(1 << 16);
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) throw IoError("read error in " + path);
    if (n == 0) break;
    out.append(buf.data(), static_cast<std::size_t>(n));
  }
  return out;
}

/// Writes a whole file, gzip-compressed when the path ends in ".gz".
inline void write_text(const std::string& path, const std::string& text) {
  gzFile f = gzopen(path.c_str(), has_gz_suffix(path) ? "wb6" : "wbT");
  if (!f) throw IoError("cannot open " + path + " for writing");
  std::size_t done = 0;
  while (done < text.size()) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(text.size() - done, 1u << 20));
    if (gzwrite(f, text.data() + done, chunk) != static_cast<int>(chunk)) {
      gzclose(f);
      throw IoError("write error in " + path);
    }
    done += chunk;
  }
  if (gzclose(f) != Z_OK) throw IoError("close failed for " + path);
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

}  // namespace mixflow
