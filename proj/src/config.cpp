#include "resmatch/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "resmatch/errors.hpp"

namespace resmatch {

void DistillConfig::validate() const {
    if (arc_count < 0) throw ConfigError("arc_count must be >= 0");
    if (budget < arc_count + 1)
        throw ConfigError("budget " + std::to_string(budget) + " must be >= arc_count+1 = " +
                          std::to_string(arc_count + 1));
    if (!(merge_ratio >= 0.0f && merge_ratio <= 1.0f))
        throw ConfigError("merge_ratio must be in [0,1]");
    if (d_ds < 1 || d_orig < 1) throw ConfigError("resolutions must be >= 1");
    if (d_ds > d_orig) throw ConfigError("d_ds must be <= d_orig");
    if (ipc < 1) throw ConfigError("ipc must be >= 1");
    if (grid != 1 && grid != 2) throw ConfigError("grid must be 1x1 or 2x2");
    if (!(lambda >= 0.0f)) throw ConfigError("lambda must be >= 0");
    if (!(lr > 0.0f)) throw ConfigError("lr must be > 0");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f))
        throw ConfigError("betas must be in [0,1)");
    if (!(epsilon > 0.0f)) throw ConfigError("epsilon must be > 0");
    if (patch_candidates < 1) throw ConfigError("patch_candidates must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

float parse_float(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        float f = std::stof(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return f;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    int out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected on/off, got '" + v + "'");
}

Precision parse_precision(const std::string& key, const std::string& v) {
    if (v == "full32") return Precision::full32;
    if (v == "half16") return Precision::half16;
    throw ConfigError("config key '" + key + "': expected full32/half16, got '" + v + "'");
}

std::string format_float(float v) {
    std::ostringstream os;
    os.precision(9);  // max_digits10 for binary32: exact round trip
    os << v;
    return os.str();
}

}  // namespace

DistillConfig parse_config(const std::string& text) {
    DistillConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "budget") cfg.budget = parse_int(key, value);
        else if (key == "arc_count") cfg.arc_count = parse_int(key, value);
        else if (key == "merge_ratio") cfg.merge_ratio = parse_float(key, value);
        else if (key == "arc") cfg.arc_enabled = parse_bool(key, value);
        else if (key == "d_ds") cfg.d_ds = parse_int(key, value);
        else if (key == "d_orig") cfg.d_orig = parse_int(key, value);
        else if (key == "ipc") cfg.ipc = parse_int(key, value);
        else if (key == "grid") {
            if (value == "1x1") cfg.grid = 1;
            else if (value == "2x2") cfg.grid = 2;
            else throw ConfigError("config key 'grid': expected 1x1 or 2x2, got '" + value + "'");
        }
        else if (key == "lambda") cfg.lambda = parse_float(key, value);
        else if (key == "lr") cfg.lr = parse_float(key, value);
        else if (key == "beta1") cfg.beta1 = parse_float(key, value);
        else if (key == "beta2") cfg.beta2 = parse_float(key, value);
        else if (key == "epsilon") cfg.epsilon = parse_float(key, value);
        else if (key == "params_precision") cfg.params_precision = parse_precision(key, value);
        else if (key == "logits_precision") cfg.logits_precision = parse_precision(key, value);
        else if (key == "scheduler") {
            if (value == "none") cfg.scheduler = LrSchedule::none;
            else if (value == "cosine") cfg.scheduler = LrSchedule::cosine;
            else throw ConfigError("config key 'scheduler': expected none/cosine, got '" + value + "'");
        }
        else if (key == "scheduler_horizon") {
            if (value == "whole") cfg.scheduler_horizon = ScheduleHorizon::whole;
            else if (value == "per_stage") cfg.scheduler_horizon = ScheduleHorizon::per_stage;
            else throw ConfigError("config key 'scheduler_horizon': expected whole/per_stage");
        }
        else if (key == "seed") cfg.seed = parse_u64(key, value);
        else if (key == "patch_candidates") cfg.patch_candidates = parse_int(key, value);
        else if (key == "data") cfg.data = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::string serialize_config(const DistillConfig& cfg) {
    std::ostringstream out;
    out << "budget = " << cfg.budget << "\n";
    out << "arc_count = " << cfg.arc_count << "\n";
    out << "merge_ratio = " << format_float(cfg.merge_ratio) << "\n";
    out << "arc = " << (cfg.arc_enabled ? "on" : "off") << "\n";
    out << "d_ds = " << cfg.d_ds << "\n";
    out << "d_orig = " << cfg.d_orig << "\n";
    out << "ipc = " << cfg.ipc << "\n";
    out << "grid = " << (cfg.grid == 1 ? "1x1" : "2x2") << "\n";
    out << "lambda = " << format_float(cfg.lambda) << "\n";
    out << "lr = " << format_float(cfg.lr) << "\n";
    out << "beta1 = " << format_float(cfg.beta1) << "\n";
    out << "beta2 = " << format_float(cfg.beta2) << "\n";
    out << "epsilon = " << format_float(cfg.epsilon) << "\n";
    out << "params_precision = " << precision_name(cfg.params_precision) << "\n";
    out << "logits_precision = " << precision_name(cfg.logits_precision) << "\n";
    out << "scheduler = " << (cfg.scheduler == LrSchedule::none ? "none" : "cosine") << "\n";
    out << "scheduler_horizon = "
        << (cfg.scheduler_horizon == ScheduleHorizon::whole ? "whole" : "per_stage") << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "patch_candidates = " << cfg.patch_candidates << "\n";
    if (!cfg.data.empty()) out << "data = " << cfg.data << "\n";
    return out.str();
}

DistillConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

}  // namespace resmatch
