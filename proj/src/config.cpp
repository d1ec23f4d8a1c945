#include "tinydetr/config.hpp"

#include <fstream>
#include <sstream>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("config " + path + ": cannot open");
    }
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return from_string(buffer.str(), path);
}

KvConfig KvConfig::from_string(const std::string& text, const std::string& origin) {
    KvConfig out;
    out.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) {
            line = line.substr(0, comment);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("config " + origin + ":" + std::to_string(line_no) +
                            ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw DataError("config " + origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (out.values_.count(key)) {
            throw DataError("config " + origin + ":" + std::to_string(line_no) +
                            ": duplicate key '" + key + "'");
        }
        out.values_[key] = value;
        out.consumed_[key] = false;
    }
    return out;
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    consumed_[key] = true;
    return it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    consumed_[key] = true;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        throw DataError("config " + origin_ + ": key '" + key + "' has non-numeric value '" +
                        it->second + "'");
    }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    consumed_[key] = true;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(it->second, &used);
        if (used != it->second.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        throw DataError("config " + origin_ + ": key '" + key + "' has non-integer value '" +
                        it->second + "'");
    }
}

std::uint64_t KvConfig::get_uint(const std::string& key, std::uint64_t fallback) {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    consumed_[key] = true;
    if (!it->second.empty() && it->second[0] == '-') {
        throw DataError("config " + origin_ + ": key '" + key + "' must be non-negative");
    }
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(it->second, &used);
        if (used != it->second.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        throw DataError("config " + origin_ + ": key '" + key + "' has non-integer value '" +
                        it->second + "'");
    }
}

void KvConfig::finish() const {
    std::string unknown;
    for (const auto& [key, used] : consumed_) {
        if (!used) {
            if (!unknown.empty()) {
                unknown += ", ";
            }
            unknown += "'" + key + "'";
        }
    }
    if (!unknown.empty()) {
        throw DataError("config " + origin_ + ": unknown key(s) " + unknown);
    }
}

}  // namespace tinydetr
