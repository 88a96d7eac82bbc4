#pragma once

// Plain-text configuration: one `key = value` per line, `#` starts a comment.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ssnet/trainer.hpp"

namespace ssnet {

struct ConfigKey {
    std::string name;
    std::string help;
};

/// Every accepted key in canonical dump order.
std::vector<ConfigKey> config_keys();

/// Starts from the defaults; unknown keys and malformed values throw BadConfig naming the key.
TrainConfig parse_config(std::istream& is);
TrainConfig load_config(const std::filesystem::path& path);

/// Sets one key on an existing config.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& cfg, const std::string& key);

/// Every key in canonical order with shortest round-trip number formatting.
void dump_config(std::ostream& os, const TrainConfig& cfg);
std::string dump_config(const TrainConfig& cfg);

} // namespace ssnet
