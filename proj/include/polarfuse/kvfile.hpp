#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace polarfuse::io {

// Plain-text key-value store with optional [section] headers. A key inside a
// section is addressed as "section.key". Values are whitespace-separated
// tokens after '='. Lines starting with '#' are comments. Writing preserves
// insertion order and groups keys back under their sections.
class KeyValueFile {
public:
    KeyValueFile() = default;

    static KeyValueFile load(const std::string& path);
    static KeyValueFile parse(std::istream& in, const std::string& origin = "<stream>");

    bool has(const std::string& key) const;
    const std::vector<std::string>& tokens(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::vector<double> get_doubles(const std::string& key, std::size_t expected) const;

    void set(const std::string& key, const std::string& value);
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, long long value);
    void set_doubles(const std::string& key, const std::vector<double>& values);

    std::vector<std::string> keys() const;

    void save(const std::string& path) const;
    void write(std::ostream& out) const;

private:
    void put(const std::string& key, std::vector<std::string> toks);

    std::vector<std::string> order_;
    std::unordered_map<std::string, std::vector<std::string>> values_;
};

}  // namespace polarfuse::io
