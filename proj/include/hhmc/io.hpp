#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hhmc/errors.hpp"
#include "hhmc/rng.hpp"

namespace hhmc {

using Json = nlohmann::ordered_json;

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigInvalid("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string &path, const std::string &content) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigInvalid("cannot write " + path);
    out << content;
}

inline std::string content_hash(const std::string &bytes) {
    std::ostringstream ss;
    ss << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a64(bytes);
    return ss.str();
}

// Collects every produced file and emits manifest.json with content hashes;
// (config, seed) -> identical manifest is the reproducibility contract.
class Manifest {
  public:
    explicit Manifest(std::string out_dir) : dir_(std::move(out_dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::string &dir() const { return dir_; }

    std::string path(const std::string &name) const { return dir_ + "/" + name; }

    void emit(const std::string &name, const std::string &content) {
        write_file(path(name), content);
        hashes_[name] = content_hash(content);
    }

    void emit_json(const std::string &name, const Json &j) {
        emit(name, j.dump(2) + "\n");
    }

    void finalize(const Json &meta) {
        Json m;
        m["meta"] = meta;
        Json files = Json::object();
        for (const auto &[name, hash] : hashes_)
            files[name] = hash;
        m["files"] = files;
        write_file(path("manifest.json"), m.dump(2) + "\n");
    }

  private:
    std::string dir_;
    std::map<std::string, std::string> hashes_;
};

// Minimal schema check of our own outputs: required keys must exist.
inline void validate_json_keys(const Json &j, const std::vector<std::string> &keys,
                               const std::string &what) {
    for (const auto &k : keys)
        if (!j.contains(k))
            throw ConfigInvalid(what + " is missing required key '" + k + "'");
}

inline std::string csv_join(const std::vector<std::string> &cols) {
    std::string s;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i)
            s += ",";
        s += cols[i];
    }
    return s + "\n";
}

class CsvBuilder {
  public:
    explicit CsvBuilder(const std::vector<std::string> &header) {
        body_ += csv_join(header);
        cols_ = header.size();
    }
    void row(const std::vector<double> &vals) {
        if (vals.size() != cols_)
            throw ConfigInvalid("csv row width mismatch");
        std::ostringstream ss;
        ss << std::setprecision(17);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (i)
                ss << ",";
            ss << vals[i];
        }
        body_ += ss.str() + "\n";
    }
    const std::string &str() const { return body_; }

  private:
    std::string body_;
    std::size_t cols_ = 0;
};

} // namespace hhmc
