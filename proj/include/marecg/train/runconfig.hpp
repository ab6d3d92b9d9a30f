#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace marecg::train {

class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Plain-text key=value configuration. The key set is fixed to the documented
// defaults below; parsing a file with an unknown key fails, and
// parse(dump(config)) reproduces the configuration byte for byte.
class RunConfig {
public:
    RunConfig();  // defaults

    static RunConfig parse(const std::string& text);  // throws config_error
    std::string dump() const;                         // sorted keys, LF lines
    std::uint64_t hash() const;                       // FNV-1a of dump()

    void set(const std::string& key, const std::string& value);  // unknown key -> throws
    const std::string& get(const std::string& key) const;

    double get_f(const std::string& key) const;
    std::int64_t get_i(const std::string& key) const;
    std::uint64_t get_u(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace marecg::train
