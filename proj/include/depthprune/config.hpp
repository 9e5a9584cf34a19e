#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "depthprune/mask_learning.hpp"
#include "depthprune/recovery.hpp"

namespace depthprune {

using ConfigValue = std::variant<std::int64_t, double, bool, std::string>;

enum class ConfigType { Int, Real, Bool, String };

struct ConfigKey {
    std::string_view name;
    ConfigType type;
    ConfigValue fallback;
    std::string_view help;
};

/// Every recognised key with its default, in display order.
const std::vector<ConfigKey>& config_schema();

class Config {
  public:
    /// All defaults.
    Config();

    std::int64_t get_int(std::string_view key) const;
    std::uint64_t get_size(std::string_view key) const;  ///< int key, must be >= 0
    double get_real(std::string_view key) const;
    bool get_bool(std::string_view key) const;
    const std::string& get_string(std::string_view key) const;

    /// Parses `text` by the key's type. Throws ParseError naming the key and
    /// `line` (0 when the value did not come from a file).
    void set(std::string_view key, std::string_view text, std::size_t line = 0);
    bool is_set(std::string_view key) const;

    const std::vector<std::string>& warnings() const { return warnings_; }
    /// "key = value" lines for every key, defaults included.
    std::string resolved() const;

    TrainConfig train_config() const;
    TeacherConfig teacher_config() const;
    FinetuneConfig finetune_config() const;
    BenchmarkConfig benchmark_config() const;

  private:
    friend Config parse_config(std::string_view text);
    const ConfigValue& value(std::string_view key, ConfigType type) const;

    std::map<std::string, ConfigValue, std::less<>> values_;
    std::map<std::string, std::size_t, std::less<>> set_at_;
    std::vector<std::string> warnings_;
};

/// Line-oriented "key = value" text; '#' starts a comment. Unknown keys and
/// malformed lines throw ParseError carrying the 1-based line number.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

}  // namespace depthprune
