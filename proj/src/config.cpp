#include "depthprune/config.hpp"

#include <charconv>
#include <cmath>
#include <system_error>

#include "depthprune/errors.hpp"
#include "depthprune/report.hpp"

namespace depthprune {

namespace {

using I = std::int64_t;

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

const ConfigKey* find_key(std::string_view name) {
    for (const ConfigKey& k : config_schema()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

std::string where(std::size_t line) {
    return line == 0 ? std::string() : "line " + std::to_string(line) + ": ";
}

ConfigValue parse_value(const ConfigKey& key, std::string_view text, std::size_t line) {
    const auto bad = [&](std::string_view expected) {
        return ParseError(where(line) + "key '" + std::string(key.name) + "' expects " +
                              std::string(expected) + ", got '" + std::string(text) + "'",
                          line);
    };
    switch (key.type) {
        case ConfigType::Int: {
            I v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (text.empty() || ec != std::errc() || p != text.data() + text.size()) throw bad("an integer");
            return v;
        }
        case ConfigType::Real: {
            const std::string s(text);
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                throw bad("a real number");
            }
            if (used != s.size() || !std::isfinite(v)) throw bad("a finite real number");
            return v;
        }
        case ConfigType::Bool:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            throw bad("true or false");
        case ConfigType::String:
            return std::string(text);
    }
    throw bad("a value");
}

std::string render(const ConfigValue& v) {
    if (const auto* i = std::get_if<I>(&v)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&v)) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *d);
        return buf;
    }
    if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
    return std::get<std::string>(v);
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema{
        {"seed", ConfigType::Int, I{80}, "master seed for data, nets and sampling"},
        {"layers", ConfigType::Int, I{12}, "layers N of the teacher"},
        {"d", ConfigType::Int, I{16}, "embedding width"},
        {"cond", ConfigType::Int, I{4}, "conditioning width c"},
        {"block", ConfigType::Int, I{4}, "block size B"},
        {"keep", ConfigType::Int, I{2}, "layers s kept per block"},
        {"k", ConfigType::Int, I{1}, "layers moved by one transformation"},
        {"train_samples", ConfigType::Int, I{4096}, "training split size"},
        {"teacher_steps", ConfigType::Int, I{5000}, "teacher training steps"},
        {"teacher_lr", ConfigType::Real, 3e-3, "teacher peak learning rate"},
        {"teacher_batch", ConfigType::Int, I{64}, "teacher batch size"},
        {"mask_steps", ConfigType::Int, I{2000}, "mask learning steps"},
        {"lr_params", ConfigType::Real, 0.01, "mask learning rate for deltas"},
        {"lr_logits", ConfigType::Real, 0.05, "mask learning rate for logits"},
        {"batch", ConfigType::Int, I{64}, "mask learning batch size"},
        {"lambda_task", ConfigType::Real, 1.0, "weight of the task MSE"},
        {"lambda_distill", ConfigType::Real, 1.0, "weight of the L1 distillation term"},
        {"activation", ConfigType::Bool, true, "dynamic inter-block activation"},
        {"tau_start", ConfigType::Real, 1.0, "Gumbel-Softmax temperature at step 0"},
        {"tau_end", ConfigType::Real, 1.0, "temperature at the last step"},
        {"grad_clip", ConfigType::Real, 1.0, "global gradient-norm clip"},
        {"rank", ConfigType::Int, I{4}, "low-rank delta rank"},
        {"pi_refresh", ConfigType::Int, I{1}, "steps between marginal-profile refreshes"},
        {"finetune_steps", ConfigType::Int, I{2000}, "distillation fine-tuning steps"},
        {"finetune_lr", ConfigType::Real, 0.05, "fine-tuning learning rate"},
        {"finetune_batch", ConfigType::Int, I{64}, "fine-tuning batch size"},
        {"random_trials", ConfigType::Int, I{8}, "random-min trials"},
        {"probe_samples", ConfigType::Int, I{256}, "probe rows for similarity and sensitivity"},
        {"uniform_phase", ConfigType::Int, I{0}, "offset of the uniform baseline"},
        {"cache_cond", ConfigType::String, std::string(), "comma-separated conditioning to cache; empty is zeros"},
    };
    return schema;
}

Config::Config() {
    for (const ConfigKey& k : config_schema()) values_.emplace(std::string(k.name), k.fallback);
}

const ConfigValue& Config::value(std::string_view key, ConfigType type) const {
    const ConfigKey* k = find_key(key);
    if (k == nullptr) throw ContractError("unknown config key '" + std::string(key) + "'");
    if (k->type != type) throw ContractError("config key '" + std::string(key) + "' read with the wrong type");
    return values_.find(key)->second;
}

std::int64_t Config::get_int(std::string_view key) const {
    return std::get<I>(value(key, ConfigType::Int));
}

std::uint64_t Config::get_size(std::string_view key) const {
    const I v = get_int(key);
    if (v < 0) throw DomainError("config key '" + std::string(key) + "' must be non-negative");
    return static_cast<std::uint64_t>(v);
}

double Config::get_real(std::string_view key) const {
    return std::get<double>(value(key, ConfigType::Real));
}

bool Config::get_bool(std::string_view key) const {
    return std::get<bool>(value(key, ConfigType::Bool));
}

const std::string& Config::get_string(std::string_view key) const {
    return std::get<std::string>(value(key, ConfigType::String));
}

void Config::set(std::string_view key, std::string_view text, std::size_t line) {
    const ConfigKey* k = find_key(key);
    if (k == nullptr) {
        throw ParseError(where(line) + "unknown key '" + std::string(key) + "'", line);
    }
    ConfigValue v = parse_value(*k, text, line);
    if (auto it = set_at_.find(key); it != set_at_.end() && line != 0 && it->second != 0) {
        warnings_.push_back(where(line) + "duplicate key '" + std::string(key) + "' overrides line " +
                            std::to_string(it->second));
    }
    values_[std::string(key)] = std::move(v);
    set_at_[std::string(key)] = line;
}

bool Config::is_set(std::string_view key) const { return set_at_.contains(key); }

std::string Config::resolved() const {
    std::string out;
    for (const ConfigKey& k : config_schema()) {
        out += std::string(k.name) + " = " + render(values_.find(k.name)->second) + '\n';
    }
    return out;
}

TrainConfig Config::train_config() const {
    TrainConfig cfg;
    cfg.lambda_task = get_real("lambda_task");
    cfg.lambda_distill = get_real("lambda_distill");
    cfg.steps = get_size("mask_steps");
    cfg.lr_params = get_real("lr_params");
    cfg.lr_logits = get_real("lr_logits");
    cfg.batch = get_size("batch");
    cfg.seed = get_size("seed");
    cfg.activation_enabled = get_bool("activation");
    cfg.tau = TauSchedule{get_real("tau_start"), get_real("tau_end")};
    cfg.k = get_size("k");
    cfg.grad_clip = get_real("grad_clip");
    cfg.block_size = get_size("block");
    cfg.keep = get_size("keep");
    cfg.rank = get_size("rank");
    cfg.pi_refresh = get_size("pi_refresh");
    return cfg;
}

TeacherConfig Config::teacher_config() const {
    TeacherConfig cfg;
    cfg.n_layers = get_size("layers");
    cfg.d = get_size("d");
    cfg.c = get_size("cond");
    cfg.seed = get_size("seed");
    cfg.steps = get_size("teacher_steps");
    cfg.lr = get_real("teacher_lr");
    cfg.batch = get_size("teacher_batch");
    cfg.grad_clip = get_real("grad_clip");
    return cfg;
}

FinetuneConfig Config::finetune_config() const {
    FinetuneConfig cfg;
    cfg.steps = get_size("finetune_steps");
    cfg.lr = get_real("finetune_lr");
    cfg.batch = get_size("finetune_batch");
    cfg.rank = get_size("rank");
    cfg.seed = get_size("seed");
    cfg.grad_clip = get_real("grad_clip");
    return cfg;
}

BenchmarkConfig Config::benchmark_config() const {
    BenchmarkConfig cfg;
    cfg.mask = train_config();
    cfg.finetune = finetune_config();
    cfg.random_trials = get_size("random_trials");
    cfg.probe = get_size("probe_samples");
    cfg.uniform_phase = get_size("uniform_phase");
    return cfg;
}

Config parse_config(std::string_view text) {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'", line_no);
        }
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view val = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError("line " + std::to_string(line_no) + ": missing key", line_no);
        cfg.set(key, val, line_no);
    }
    return cfg;
}

Config load_config(const std::filesystem::path& path) {
    return parse_config(read_text_file(path));
}

}  // namespace depthprune
