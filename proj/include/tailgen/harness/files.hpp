#pragma once

#include "tailgen/common.hpp"
#include "tailgen/tensor_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace tailgen {

namespace fs = std::filesystem;

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Json read_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

/// Writes through a temporary sibling and renames, so readers never see a half-written file.
inline void write_text_file(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << contents;
        if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

/// Canonical on-disk form of every JSON artifact: sorted keys (nlohmann's default), two-space indent.
inline void write_json_file(const fs::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline std::string file_digest(const fs::path& path) { return hex64(fnv1a(read_text_file(path))); }

}  // namespace tailgen
