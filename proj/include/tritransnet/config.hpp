#pragma once

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tritransnet/common.hpp"

namespace ttn {

// Every architectural knob, including the ablation switches.
struct ModelConfig {
    long input_size = 64;
    std::array<long, 5> channels{8, 16, 32, 64, 128};  // backbone stage widths
    long ct = 16;                                      // common transition width C_t
    long k = 3;                                        // enhanced level count (2..4)
    bool use_ttem = true;
    long embed_dim = 32;   // D
    long num_layers = 2;   // L
    long num_heads = 4;    // h
    std::string decoder_mode = "three";  // "three" | "single"
    std::string fusion_mode = "dpm";     // "dpm" | "add"
    long cbam_reduction = 4;
    long loss_window = 31;
    double loss_gain = 5.0;
    double loss_smooth = 1.0;
    std::string loss_kind = "ppa";  // "ppa" | "bce" (debug fallback)

    long lowest_level() const { return 5 - k + 1; }  // 1-based level index
    long aligned_size() const { return input_size >> lowest_level(); }
    long tokens() const { return aligned_size() * aligned_size(); }

    void validate() const {
        if (input_size % 32 != 0)
            throw DataError("model: input_size " + std::to_string(input_size) +
                            " must be divisible by 32");
        if (k < 2 || k > 4) throw DataError("model: k must be in {2,3,4}, got " + std::to_string(k));
        if (embed_dim % num_heads != 0)
            throw DataError("model: embed_dim " + std::to_string(embed_dim) +
                            " not divisible by heads " + std::to_string(num_heads));
        for (long c : channels)
            if (c <= 0) throw DataError("model: channel widths must be positive");
        if (channels[0] < cbam_reduction)
            throw DataError("model: channel width " + std::to_string(channels[0]) +
                            " below CBAM reduction " + std::to_string(cbam_reduction));
        if (decoder_mode != "three" && decoder_mode != "single")
            throw DataError("model: decoder mode must be three|single, got " + decoder_mode);
        if (fusion_mode != "dpm" && fusion_mode != "add")
            throw DataError("model: fusion mode must be dpm|add, got " + fusion_mode);
        if (loss_kind != "ppa" && loss_kind != "bce")
            throw DataError("model: loss must be ppa|bce, got " + loss_kind);
        if (loss_window % 2 == 0) throw DataError("model: loss_window must be odd");
    }

    // k=4 pulls level 2 into the transformer; token count grows 4x per level.
    std::string memory_warning() const {
        if (k == 4 && input_size >= 256)
            return "warning: k=4 at input " + std::to_string(input_size) + " yields " +
                   std::to_string(tokens()) + " tokens; attention cost grows quadratically";
        return "";
    }
};

struct TrainConfig {
    ModelConfig model;
    double lr = 1e-3;
    long batch = 4;
    long epochs = 30;
    long lr_decay_every = 60;      // epochs
    double lr_decay_factor = 0.1;  // multiplied in at each boundary
    unsigned long long seed = 0;
    bool augment = true;
    long checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
    long max_steps = 0;         // 0 = no cap

    double lr_at_epoch(long epoch) const {
        double l = lr;
        for (long e = lr_decay_every; e <= epoch; e += lr_decay_every) l *= lr_decay_factor;
        return l;
    }
};

inline ModelConfig desk_model() { return ModelConfig{}; }

inline ModelConfig paper_model() {
    ModelConfig m;
    m.input_size = 256;
    m.channels = {64, 128, 256, 512, 1024};
    m.ct = 64;
    m.k = 3;
    m.embed_dim = 768;
    m.num_layers = 12;
    m.num_heads = 12;
    return m;
}

inline TrainConfig desk_train() {
    TrainConfig t;
    t.model = desk_model();
    t.lr = 1e-3;
    t.batch = 4;
    t.epochs = 30;
    return t;
}

inline TrainConfig paper_train() {
    TrainConfig t;
    t.model = paper_model();
    t.lr = 1e-5;
    t.batch = 3;
    t.epochs = 150;
    t.lr_decay_every = 60;
    t.lr_decay_factor = 0.1;
    return t;
}

inline TrainConfig preset_train(const std::string& name) {
    if (name == "desk") return desk_train();
    if (name == "paper") return paper_train();
    throw UsageError("unknown preset '" + name + "' (expected desk|paper)");
}

// ---------------------------------------------------------------------------
// Line-oriented `key = value` config files, '#' comments.

inline std::map<std::string, std::string> parse_config_text(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    long lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = val;
    }
    return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config file not found: " + path);
    return parse_config_text(f);
}

namespace detail {
inline long to_long(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw DataError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}
inline double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw DataError("config key '" + key + "': expected number, got '" + v + "'");
    }
}
inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw DataError("config key '" + key + "': expected on/off, got '" + v + "'");
}
}  // namespace detail

// Applies one key; throws UsageError naming unknown keys.
inline void apply_config_key(TrainConfig& c, const std::string& key, const std::string& val) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_long;
    ModelConfig& m = c.model;
    if (key == "input_size") m.input_size = to_long(key, val);
    else if (key == "channels") {
        std::istringstream ss(val);
        std::string tok;
        size_t i = 0;
        while (std::getline(ss, tok, ',')) {
            if (i >= 5) throw DataError("config key 'channels': expected 5 values");
            m.channels[i++] = to_long(key, tok);
        }
        if (i != 5) throw DataError("config key 'channels': expected 5 values");
    } else if (key == "ct") m.ct = to_long(key, val);
    else if (key == "k") m.k = to_long(key, val);
    else if (key == "ttem") m.use_ttem = to_bool(key, val);
    else if (key == "embed_dim") m.embed_dim = to_long(key, val);
    else if (key == "layers") m.num_layers = to_long(key, val);
    else if (key == "heads") m.num_heads = to_long(key, val);
    else if (key == "decoder") m.decoder_mode = val;
    else if (key == "fusion") m.fusion_mode = val;
    else if (key == "cbam_reduction") m.cbam_reduction = to_long(key, val);
    else if (key == "loss_window") m.loss_window = to_long(key, val);
    else if (key == "loss_gain") m.loss_gain = to_double(key, val);
    else if (key == "loss_smooth") m.loss_smooth = to_double(key, val);
    else if (key == "loss") m.loss_kind = val;
    else if (key == "lr") c.lr = to_double(key, val);
    else if (key == "batch") c.batch = to_long(key, val);
    else if (key == "epochs") c.epochs = to_long(key, val);
    else if (key == "lr_decay_every") c.lr_decay_every = to_long(key, val);
    else if (key == "lr_decay_factor") c.lr_decay_factor = to_double(key, val);
    else if (key == "seed") c.seed = (unsigned long long)to_long(key, val);
    else if (key == "augment") c.augment = to_bool(key, val);
    else if (key == "checkpoint_every") c.checkpoint_every = to_long(key, val);
    else if (key == "max_steps") c.max_steps = to_long(key, val);
    else throw UsageError("unknown config key '" + key + "'");
}

inline std::string serialize_config(const TrainConfig& c) {
    const ModelConfig& m = c.model;
    std::ostringstream os;
    os << "input_size = " << m.input_size << "\n";
    os << "channels = " << m.channels[0] << "," << m.channels[1] << "," << m.channels[2] << ","
       << m.channels[3] << "," << m.channels[4] << "\n";
    os << "ct = " << m.ct << "\n";
    os << "k = " << m.k << "\n";
    os << "ttem = " << (m.use_ttem ? "on" : "off") << "\n";
    os << "embed_dim = " << m.embed_dim << "\n";
    os << "layers = " << m.num_layers << "\n";
    os << "heads = " << m.num_heads << "\n";
    os << "decoder = " << m.decoder_mode << "\n";
    os << "fusion = " << m.fusion_mode << "\n";
    os << "cbam_reduction = " << m.cbam_reduction << "\n";
    os << "loss_window = " << m.loss_window << "\n";
    os << "loss_gain = " << m.loss_gain << "\n";
    os << "loss_smooth = " << m.loss_smooth << "\n";
    os << "loss = " << m.loss_kind << "\n";
    os << "lr = " << c.lr << "\n";
    os << "batch = " << c.batch << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "lr_decay_every = " << c.lr_decay_every << "\n";
    os << "lr_decay_factor = " << c.lr_decay_factor << "\n";
    os << "seed = " << c.seed << "\n";
    os << "augment = " << (c.augment ? "on" : "off") << "\n";
    os << "checkpoint_every = " << c.checkpoint_every << "\n";
    os << "max_steps = " << c.max_steps << "\n";
    return os.str();
}

inline TrainConfig parse_train_config(const std::map<std::string, std::string>& kv,
                                      TrainConfig base = TrainConfig{}) {
    for (const auto& [k, v] : kv) apply_config_key(base, k, v);
    return base;
}

}  // namespace ttn
