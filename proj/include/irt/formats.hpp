#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "irt/tensor.hpp"

namespace irt {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// `key = value` lines, '#' comments, blank lines ignored. Keys outside
// `allowed` are rejected so typos fail loudly.
class Config {
  public:
    static Config parse_file(const std::string& path,
                             const std::set<std::string>& allowed);
    static Config parse_text(const std::string& text,
                             const std::set<std::string>& allowed);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    std::string get(const std::string& key) const;  // throws if missing
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    long long get_int(const std::string& key) const;
    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& fallback) const;

    void set(const std::string& key, const std::string& value) {
        kv_[key] = value;
    }

  private:
    std::map<std::string, std::string> kv_;
};

// UTF-8, comma-separated, '.' decimal point regardless of locale.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path,
                       const std::vector<std::string>& header);
    void row(const std::vector<std::string>& cells);
    void close();

    static std::string num(double v);  // %.10g rendering used everywhere

  private:
    std::string path_;
    std::string buf_;
    std::size_t cols_;
    bool closed_ = false;
};

// Binary PGM (P5, maxval 255). Values are divided by `norm` and clamped
// to [0,1]; pass the common largest value when exporting a compared pair
// so the two images share a scale.
void write_pgm(const std::string& path, std::size_t rows, std::size_t cols,
               const std::vector<float>& values, double norm);

}  // namespace irt
