#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace tinydetr {

// Flat key=value config text: one pair per line, '#' starts a comment, blank
// lines ignored. Readers consume the keys they understand; finish() rejects
// anything left over, so hyperparameter typos fail loudly.
class KvConfig {
public:
    KvConfig() = default;
    static KvConfig from_file(const std::string& path);
    static KvConfig from_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback);

    // Throws DataError naming every unconsumed key.
    void finish() const;

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> consumed_;
};

}  // namespace tinydetr
