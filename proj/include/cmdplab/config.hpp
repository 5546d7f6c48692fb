#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmdplab/driver.hpp"
#include "cmdplab/errors.hpp"

namespace cmdplab {

// ---------------------------------------------------------------------------
// Config files are either JSON or a small TOML subset: [section] and
// [nested.section] headers, `key = value` pairs, `#` comments, and scalar or
// flat-array values (strings, booleans, integers, floats).
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (ch == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (ch == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

inline nlohmann::json parse_toml_scalar(const std::string& raw, int line_no) {
    std::string v = trim(raw);
    if (v.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw ConfigError("line " + std::to_string(line_no) + ": unterminated string");
        std::string out;
        for (size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                ++i;
                out.push_back(v[i] == 'n' ? '\n' : v[i] == 't' ? '\t' : v[i]);
            } else {
                out.push_back(v[i]);
            }
        }
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    bool integral = true;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i == 0 && (v[i] == '+' || v[i] == '-')) continue;
        if (!std::isdigit(static_cast<unsigned char>(v[i]))) integral = false;
    }
    try {
        size_t used = 0;
        if (integral) {
            long long n = std::stoll(v, &used);
            if (used == v.size()) return n;
        }
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("line " + std::to_string(line_no) + ": cannot parse value '" + v + "'");
}

inline nlohmann::json parse_toml_value(const std::string& raw, int line_no) {
    std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']')
            throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        std::string body = v.substr(1, v.size() - 2);
        std::string item;
        bool in_string = false;
        for (char ch : body) {
            if (ch == '"') in_string = !in_string;
            if (ch == ',' && !in_string) {
                if (!trim(item).empty()) arr.push_back(parse_toml_scalar(item, line_no));
                item.clear();
            } else {
                item.push_back(ch);
            }
        }
        if (!trim(item).empty()) arr.push_back(parse_toml_scalar(item, line_no));
        return arr;
    }
    return parse_toml_scalar(v, line_no);
}

inline bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char ch : k)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') return false;
    return true;
}

} // namespace detail

/// Parses the TOML subset described above into a JSON object tree.
inline nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = detail::trim(detail::strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section");
            std::string path = detail::trim(body.substr(1, body.size() - 2));
            section = &root;
            std::istringstream parts(path);
            std::string part;
            while (std::getline(parts, part, '.')) {
                part = detail::trim(part);
                if (!detail::valid_key(part))
                    throw ConfigError("line " + std::to_string(line_no) + ": bad section name");
                if (!section->contains(part)) (*section)[part] = nlohmann::json::object();
                section = &(*section)[part];
                if (!section->is_object())
                    throw ConfigError("line " + std::to_string(line_no) +
                                      ": section collides with a value");
            }
            continue;
        }
        size_t eq = std::string::npos;
        bool in_string = false;
        for (size_t i = 0; i < body.size(); ++i) {
            if (body[i] == '"') in_string = !in_string;
            if (body[i] == '=' && !in_string) {
                eq = i;
                break;
            }
        }
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::trim(body.substr(0, eq));
        if (!detail::valid_key(key))
            throw ConfigError("line " + std::to_string(line_no) + ": bad key '" + key + "'");
        if (section->contains(key))
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        (*section)[key] = detail::parse_toml_value(body.substr(eq + 1), line_no);
    }
    return root;
}

/// Parses a config document, auto-detecting JSON ('{' first) vs TOML subset.
inline nlohmann::json parse_config_text(const std::string& text) {
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) continue;
        if (ch == '{') return nlohmann::json::parse(text);
        break;
    }
    return parse_toml(text);
}

// ---------------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string env_name;
    nlohmann::json env_params = nlohmann::json::object();
    AlgoConfig algo;                  // overrides; -1 fields resolve at run time
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "out";
    std::vector<double> theta0;      // empty = all zeros (uniform policy)
    std::vector<long> sweep_budgets; // empty = single-budget run
};

namespace detail {

inline void expect_keys(const nlohmann::json& obj, const std::string& where,
                        std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be a table");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

inline double as_number(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + " must be a number");
    return v.get<double>();
}

inline long as_integer(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
    return v.get<long>();
}

inline bool as_boolean(const nlohmann::json& v, const std::string& where) {
    if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
    return v.get<bool>();
}

} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& doc) {
    detail::expect_keys(doc, "config", {"env", "algo", "run", "sweep"});
    if (!doc.contains("env")) throw ConfigError("config: missing [env] section");
    RunConfig cfg;

    const nlohmann::json& env = doc.at("env");
    detail::expect_keys(env, "env", {"name", "params"});
    if (!env.contains("name") || !env.at("name").is_string())
        throw ConfigError("env.name must be a string");
    cfg.env_name = env.at("name").get<std::string>();
    if (env.contains("params")) {
        if (!env.at("params").is_object()) throw ConfigError("env.params must be a table");
        cfg.env_params = env.at("params");
    }

    if (doc.contains("algo")) {
        const nlohmann::json& a = doc.at("algo");
        detail::expect_keys(a, "algo",
                            {"total_steps", "epochs", "inner_iters", "burn_in", "t_max", "alpha",
                             "beta", "gamma_xi", "gamma_omega", "c_gamma", "eps_reg",
                             "slater_delta", "temperature"});
        if (a.contains("total_steps"))
            cfg.algo.total_steps = detail::as_integer(a.at("total_steps"), "algo.total_steps");
        if (a.contains("epochs"))
            cfg.algo.epochs = static_cast<int>(detail::as_integer(a.at("epochs"), "algo.epochs"));
        if (a.contains("inner_iters"))
            cfg.algo.inner_iters =
                static_cast<int>(detail::as_integer(a.at("inner_iters"), "algo.inner_iters"));
        if (a.contains("burn_in"))
            cfg.algo.burn_in =
                static_cast<int>(detail::as_integer(a.at("burn_in"), "algo.burn_in"));
        if (a.contains("t_max")) cfg.algo.t_max = detail::as_integer(a.at("t_max"), "algo.t_max");
        if (a.contains("alpha")) cfg.algo.alpha = detail::as_number(a.at("alpha"), "algo.alpha");
        if (a.contains("beta")) cfg.algo.beta = detail::as_number(a.at("beta"), "algo.beta");
        if (a.contains("gamma_xi"))
            cfg.algo.gamma_xi = detail::as_number(a.at("gamma_xi"), "algo.gamma_xi");
        if (a.contains("gamma_omega"))
            cfg.algo.gamma_omega = detail::as_number(a.at("gamma_omega"), "algo.gamma_omega");
        if (a.contains("c_gamma"))
            cfg.algo.c_gamma = detail::as_number(a.at("c_gamma"), "algo.c_gamma");
        if (a.contains("eps_reg"))
            cfg.algo.eps_reg = detail::as_number(a.at("eps_reg"), "algo.eps_reg");
        if (a.contains("slater_delta"))
            cfg.algo.slater_delta = detail::as_number(a.at("slater_delta"), "algo.slater_delta");
        if (a.contains("temperature"))
            cfg.algo.temperature = detail::as_number(a.at("temperature"), "algo.temperature");
    }

    if (doc.contains("run")) {
        const nlohmann::json& r = doc.at("run");
        detail::expect_keys(r, "run", {"seeds", "out_dir", "theta0", "debug_exact"});
        if (r.contains("seeds")) {
            if (!r.at("seeds").is_array() || r.at("seeds").empty())
                throw ConfigError("run.seeds must be a non-empty array");
            cfg.seeds.clear();
            for (const auto& v : r.at("seeds"))
                cfg.seeds.push_back(
                    static_cast<std::uint64_t>(detail::as_integer(v, "run.seeds[]")));
        }
        if (r.contains("out_dir")) {
            if (!r.at("out_dir").is_string()) throw ConfigError("run.out_dir must be a string");
            cfg.out_dir = r.at("out_dir").get<std::string>();
        }
        if (r.contains("theta0")) {
            if (!r.at("theta0").is_array()) throw ConfigError("run.theta0 must be an array");
            for (const auto& v : r.at("theta0"))
                cfg.theta0.push_back(detail::as_number(v, "run.theta0[]"));
        }
        if (r.contains("debug_exact"))
            cfg.algo.debug_exact = detail::as_boolean(r.at("debug_exact"), "run.debug_exact");
    }

    if (doc.contains("sweep")) {
        const nlohmann::json& s = doc.at("sweep");
        detail::expect_keys(s, "sweep", {"budgets"});
        if (!s.contains("budgets") || !s.at("budgets").is_array() || s.at("budgets").empty())
            throw ConfigError("sweep.budgets must be a non-empty array");
        for (const auto& v : s.at("budgets"))
            cfg.sweep_budgets.push_back(detail::as_integer(v, "sweep.budgets[]"));
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return run_config_from_json(parse_config_text(buf.str()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
}

} // namespace cmdplab
