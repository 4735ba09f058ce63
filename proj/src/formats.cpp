#include "irt/formats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace irt {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_text(const std::string& text,
                          const std::set<std::string>& allowed) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": empty key");
        if (!allowed.empty() && !allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "'");
        if (cfg.kv_.count(key))
            throw ConfigError("config: duplicate key '" + key + "'");
        cfg.kv_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path,
                          const std::set<std::string>& allowed) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), allowed);
}

std::string Config::get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end())
        throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
}

std::string Config::get(const std::string& key,
                        const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a number: '" + v +
                          "'");
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long long Config::get_int(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t used = 0;
        long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: '" + v +
                          "'");
    }
}

long long Config::get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::vector<double> Config::get_list(
    const std::string& key, const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    std::istringstream is(get(key));
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' has a bad entry '" +
                              tok + "'");
        }
    }
    return out;
}

std::string CsvWriter::num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path,
                     const std::vector<std::string>& header)
    : path_(path), cols_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += header[i];
    }
    buf_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != cols_)
        throw std::invalid_argument("csv: row width does not match header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += cells[i];
    }
    buf_ += '\n';
}

void CsvWriter::close() {
    if (closed_) return;
    std::ofstream f(path_, std::ios::binary);
    if (!f) throw IoError("csv: cannot open '" + path_ + "'");
    f.write(buf_.data(), (std::streamsize)buf_.size());
    if (!f) throw IoError("csv: write failed for '" + path_ + "'");
    closed_ = true;
}

void write_pgm(const std::string& path, std::size_t rows, std::size_t cols,
               const std::vector<float>& values, double norm) {
    if (values.size() != rows * cols)
        throw std::invalid_argument("pgm: size mismatch");
    if (!(norm > 0)) norm = 1.0;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("pgm: cannot open '" + path + "'");
    f << "P5\n" << cols << " " << rows << "\n255\n";
    std::vector<unsigned char> px(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        double v = std::clamp((double)values[i] / norm, 0.0, 1.0);
        px[i] = (unsigned char)std::lround(v * 255.0);
    }
    f.write(reinterpret_cast<const char*>(px.data()), (std::streamsize)px.size());
    if (!f) throw IoError("pgm: write failed for '" + path + "'");
}

}  // namespace irt
