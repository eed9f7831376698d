#include "polarfuse/kvfile.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace polarfuse::io {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return parse(in, path);
}

KeyValueFile KeyValueFile::parse(std::istream& in, const std::string& origin) {
    KeyValueFile kv;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": unterminated section");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        std::istringstream vs(t.substr(eq + 1));
        std::vector<std::string> toks;
        std::string tok;
        while (vs >> tok) toks.push_back(tok);
        kv.put(key, std::move(toks));
    }
    return kv;
}

void KeyValueFile::put(const std::string& key, std::vector<std::string> toks) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = std::move(toks);
}

bool KeyValueFile::has(const std::string& key) const { return values_.count(key) != 0; }

const std::vector<std::string>& KeyValueFile::tokens(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("missing config key: " + key);
    return it->second;
}

std::string KeyValueFile::get_string(const std::string& key) const {
    const auto& t = tokens(key);
    if (t.empty()) throw std::runtime_error("config key has no value: " + key);
    std::string s = t[0];
    for (std::size_t i = 1; i < t.size(); ++i) s += " " + t[i];
    return s;
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

double KeyValueFile::get_double(const std::string& key) const {
    const auto& t = tokens(key);
    if (t.size() != 1) throw std::runtime_error("config key is not a scalar: " + key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(t[0], &pos);
        if (pos != t[0].size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": '" + t[0] + "' is not a number");
    }
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long long KeyValueFile::get_int(const std::string& key) const {
    const auto& t = tokens(key);
    if (t.size() != 1) throw std::runtime_error("config key is not a scalar: " + key);
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(t[0], &pos);
        if (pos != t[0].size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": '" + t[0] + "' is not an integer");
    }
}

long long KeyValueFile::get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key, std::size_t expected) const {
    const auto& t = tokens(key);
    if (t.size() != expected)
        throw std::runtime_error("config key " + key + ": expected " + std::to_string(expected) +
                                 " values, got " + std::to_string(t.size()));
    std::vector<double> out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        try {
            std::size_t pos = 0;
            out[i] = std::stod(t[i], &pos);
            if (pos != t[i].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::runtime_error("config key " + key + ": '" + t[i] + "' is not a number");
        }
    }
    return out;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
    std::istringstream vs(value);
    std::vector<std::string> toks;
    std::string tok;
    while (vs >> tok) toks.push_back(tok);
    put(key, std::move(toks));
}

void KeyValueFile::set_double(const std::string& key, double value) { set(key, format_double(value)); }

void KeyValueFile::set_int(const std::string& key, long long value) { set(key, std::to_string(value)); }

void KeyValueFile::set_doubles(const std::string& key, const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += " ";
        s += format_double(values[i]);
    }
    put(key, [&] {
        std::istringstream vs(s);
        std::vector<std::string> toks;
        std::string tok;
        while (vs >> tok) toks.push_back(tok);
        return toks;
    }());
}

std::vector<std::string> KeyValueFile::keys() const { return order_; }

void KeyValueFile::write(std::ostream& out) const {
    // sectionless keys first, then sections in first-appearance order
    std::vector<std::string> sections;
    for (const auto& key : order_) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) continue;
        const std::string sec = key.substr(0, dot);
        if (std::find(sections.begin(), sections.end(), sec) == sections.end())
            sections.push_back(sec);
    }
    auto emit = [&](const std::string& key, const std::string& name) {
        out << name << " =";
        for (const auto& t : values_.at(key)) out << " " << t;
        out << "\n";
    };
    for (const auto& key : order_)
        if (key.find('.') == std::string::npos) emit(key, key);
    for (const auto& sec : sections) {
        out << "[" << sec << "]\n";
        for (const auto& key : order_)
            if (key.size() > sec.size() + 1 && key.compare(0, sec.size(), sec) == 0 &&
                key[sec.size()] == '.')
                emit(key, key.substr(sec.size() + 1));
    }
}

void KeyValueFile::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write(out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace polarfuse::io
