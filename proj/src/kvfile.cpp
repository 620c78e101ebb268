#include "dtmp/kvfile.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dtmp::kv {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void Document::set(const std::string& key, const std::string& value) {
    entries_.emplace_back(key, value);
}

void Document::set_int(const std::string& key, int64_t value) {
    set(key, std::to_string(value));
}

void Document::set_double(const std::string& key, double value) {
    set(key, format_double(value));
}

bool Document::has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return true;
    return false;
}

const std::string& Document::get(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    throw std::runtime_error("missing key '" + key + "'");
}

std::string Document::get_or(const std::string& key, const std::string& fallback) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    return fallback;
}

int64_t Document::get_int(const std::string& key) const {
    return parse_int(get(key), key);
}

double Document::get_double(const std::string& key) const {
    return parse_double(get(key), key);
}

std::vector<std::string> Document::all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
        if (k == key) out.push_back(v);
    return out;
}

Document parse_string(const std::string& text, const std::string& source_name) {
    Document doc;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t colon = t.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error(source_name + ":" + std::to_string(lineno) +
                                     ": expected 'key: value', got '" + t + "'");
        doc.set(trim(t.substr(0, colon)), trim(t.substr(colon + 1)));
    }
    return doc;
}

Document parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

std::string to_string(const Document& doc) {
    std::ostringstream out;
    for (const auto& [k, v] : doc.entries())
        out << k << ": " << v << "\n";
    return out.str();
}

void write_file(const Document& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << to_string(doc);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string format_double(double value) {
    // 17 significant digits round-trip any finite IEEE-754 double
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

double parse_double(const std::string& text, const std::string& context) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE)
        throw std::runtime_error(context + ": not a number: '" + text + "'");
    return v;
}

int64_t parse_int(const std::string& text, const std::string& context) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(text.c_str(), &end, 10);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE)
        throw std::runtime_error(context + ": not an integer: '" + text + "'");
    return static_cast<int64_t>(v);
}

std::vector<int64_t> parse_int_list(const std::string& text, const std::string& context) {
    std::vector<int64_t> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        std::string t = trim(item);
        if (t.empty())
            throw std::runtime_error(context + ": empty entry in list '" + text + "'");
        out.push_back(parse_int(t, context));
    }
    if (out.empty())
        throw std::runtime_error(context + ": empty list");
    return out;
}

std::string format_int_list(const std::vector<int64_t>& values) {
    std::string out;
    for (size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

} // namespace dtmp::kv
