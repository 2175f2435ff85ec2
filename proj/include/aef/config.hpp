#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "aef/common.hpp"

namespace aef {

// Flat key=value configuration with preset layering. No hidden defaults:
// whatever was resolved is what gets dumped next to every artifact.
class Config {
  public:
    Config() = default;

    static Config preset(const std::string& name);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    void set(const std::string& key, const std::string& v) { kv_[key] = v; }
    void set(const std::string& key, int64_t v) { kv_[key] = std::to_string(v); }
    void set(const std::string& key, double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        kv_[key] = o.str();
    }

    const std::string& str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("config: missing key '" + key + "'");
        return it->second;
    }

    std::string str_or(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }

    int64_t integer(const std::string& key) const {
        const auto& s = str(key);
        try {
            size_t pos = 0;
            const int64_t v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::logic_error&) {
            throw ConfigError("config: key '" + key + "' = '" + s + "' is not an integer");
        }
    }

    double real(const std::string& key) const {
        const auto& s = str(key);
        try {
            size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::logic_error&) {
            throw ConfigError("config: key '" + key + "' = '" + s + "' is not a number");
        }
    }

    // Overlay other's keys on top of this one.
    void merge(const Config& other) {
        for (const auto& [k, v] : other.kv_) kv_[k] = v;
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("config: cannot open " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": expected key=value");
            kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }

    // Canonical serialization: sorted key=value lines.
    std::string dump() const {
        std::string out;
        for (const auto& [k, v] : kv_) out += k + "=" + v + "\n";
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        f << dump();
        if (!f) throw ConfigError("config: cannot write " + path);
    }

    std::string hash() const { return hex64(fnv1a64(dump())); }

    const std::map<std::string, std::string>& items() const { return kv_; }

  private:
    std::map<std::string, std::string> kv_;
};

// Desk preset: everything the default pipeline runs with. The paper preset
// overrides the model geometry to the published configuration; it must build
// but is not meant to be trained here.
inline Config Config::preset(const std::string& name) {
    Config c;
    c.set("preset", name);
    c.set("seed", int64_t(0));

    c.set("data.size", int64_t(16));
    c.set("data.fps", int64_t(4));
    c.set("data.clip_len", int64_t(20));
    c.set("data.gap_seconds", 0.75);
    c.set("data.pool_prob", 0.5);
    c.set("data.max_agent_cover", 0.5);
    c.set("data.difficulty", 0.5);

    c.set("codec.mode", "exact-patch");
    c.set("codec.patch", int64_t(1));
    c.set("codec.latent_channels", int64_t(3));

    c.set("diffusion.T", int64_t(1000));
    c.set("diffusion.beta_start", 1e-4);
    c.set("diffusion.beta_end", 0.02);
    c.set("diffusion.infer_steps", int64_t(12));

    c.set("unet.context_frames", int64_t(3));
    c.set("unet.base_channels", int64_t(64));
    c.set("unet.channel_multipliers", "1,2,4");
    c.set("unet.res_blocks", int64_t(2));
    c.set("unet.heads", int64_t(8));
    c.set("unet.groupnorm_groups", int64_t(32));
    c.set("unet.attention_levels", "0,1,1");
    c.set("unet.token_budget", int64_t(4096));
    c.set("unet.latent_size", int64_t(16));

    c.set("train.lr", 2e-4);
    c.set("train.loss_region", "full");
    c.set("train.batch", int64_t(8));
    c.set("train.steps", int64_t(20000));
    c.set("train.log_every", int64_t(50));

    c.set("metrics.ssim_window", int64_t(7));
    c.set("metrics.fid_dim", int64_t(24));

    c.set("cem.trials", int64_t(20));
    c.set("cem.elites", int64_t(7));
    c.set("cem.iters", int64_t(6));
    c.set("cem.sigma_min_frac", 0.02);

    c.set("reward.epochs", int64_t(40));
    c.set("reward.lr", 1e-3);

    if (name == "desk") return c;
    if (name == "paper") {
        // Published geometry: 256x256 images, 64x64 latents with d=3,
        // base width 256 rising to 1024, 8 heads, T=1000, 200 inference steps.
        c.set("data.size", int64_t(256));
        c.set("train.lr", 4.8e-5);
        c.set("codec.patch", int64_t(4));
        c.set("diffusion.infer_steps", int64_t(200));
        c.set("train.batch", int64_t(48));
        c.set("train.steps", int64_t(600000));
        c.set("unet.base_channels", int64_t(256));
        c.set("unet.channel_multipliers", "1,2,4");
        c.set("unet.latent_size", int64_t(64));
        c.set("unet.attention_levels", "1,1,1");
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected 'desk' or 'paper')");
}

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

inline std::string data_dir_fallback() {
    const char* env = std::getenv("AEF_DATA_DIR");
    return env ? std::string(env) : std::string();
}

}  // namespace aef
