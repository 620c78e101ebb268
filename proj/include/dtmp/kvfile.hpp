#pragma once

// Flat "key: value" text documents. Used for metadata files, run configs,
// checkpoint manifests and metric reports. Keys may repeat; order is kept.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dtmp::kv {

class Document {
public:
    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, int64_t value);
    void set_double(const std::string& key, double value);

    bool has(const std::string& key) const;
    /// First value for key; throws std::runtime_error naming the key if absent.
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    /// All values recorded under key, in file order.
    std::vector<std::string> all(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

Document parse_string(const std::string& text, const std::string& source_name);
Document parse_file(const std::string& path);
void write_file(const Document& doc, const std::string& path);
std::string to_string(const Document& doc);

/// Shortest decimal form that round-trips a finite double exactly.
std::string format_double(double value);
double parse_double(const std::string& text, const std::string& context);
int64_t parse_int(const std::string& text, const std::string& context);
std::vector<int64_t> parse_int_list(const std::string& text, const std::string& context);
std::string format_int_list(const std::vector<int64_t>& values);

} // namespace dtmp::kv
