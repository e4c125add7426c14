#include "fidgp/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fidgp/errors.hpp"

namespace fidgp {

void RunConfig::validate() const {
    if (task != "regression1d" && task != "toy_classification") {
        throw ConfigError("task must be regression1d or toy_classification, got '" + task + "'");
    }
    if (optimizer != "adam" && optimizer != "sgd") {
        throw ConfigError("optimizer must be adam or sgd, got '" + optimizer + "'");
    }
    if (!(lambda_init > 0.0) || lambda_init > lambda_max) {
        throw ConfigError("need 0 < lambda_init <= lambda_max");
    }
    if (train_samples < 1) throw ConfigError("train_samples must be >= 1");
    if (kl_warmup_frac < 0.0 || kl_warmup_frac > 1.0) {
        throw ConfigError("kl_warmup_frac must lie in [0,1]");
    }
    if (m_in == 0 || m_out == 0) throw ConfigError("inducing dims must be positive");
    if (noise_std <= 0.0) throw ConfigError("noise_std must be positive");
    if (lambda_proj <= 0.0) throw ConfigError("lambda_proj must be positive");
    for (std::size_t k : key_layers) {
        if (k == 0 || k > n_hidden) {
            throw ConfigError("key_layers entries must be hidden-layer ids in [1, n_hidden]");
        }
    }
}

void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name == "A" || name == "a") {
        cfg.m_out = 64;
        cfg.m_in = 64;
        cfg.lambda_max = 0.08;
        cfg.prior_sd = 0.5;
    } else if (name == "B" || name == "b") {
        cfg.m_out = 32;
        cfg.m_in = 32;
        cfg.lambda_max = 0.05;
        cfg.prior_sd = 0.3;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected A or B)");
    }
    if (cfg.lambda_init > cfg.lambda_max) cfg.lambda_init = cfg.lambda_max / 30.0;
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    const double x = parse_real(key, v);
    if (x < 0 || std::floor(x) != x) {
        throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(x);
}

std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_count(key, item));
    }
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"seed", [&](const std::string& k, const std::string& v) { cfg.seed = parse_count(k, v); }},
        {"task", [&](const std::string&, const std::string& v) { cfg.task = v; }},
        {"preset", [&](const std::string&, const std::string& v) { apply_preset(cfg, v); }},
        {"epochs", [&](const std::string& k, const std::string& v) { cfg.epochs = parse_count(k, v); }},
        {"batch_size", [&](const std::string& k, const std::string& v) { cfg.batch_size = parse_count(k, v); }},
        {"lr", [&](const std::string& k, const std::string& v) { cfg.lr = parse_real(k, v); }},
        {"optimizer", [&](const std::string&, const std::string& v) { cfg.optimizer = v; }},
        {"momentum", [&](const std::string& k, const std::string& v) { cfg.momentum = parse_real(k, v); }},
        {"label_smoothing", [&](const std::string& k, const std::string& v) { cfg.label_smoothing = parse_real(k, v); }},
        {"inducing.m_out", [&](const std::string& k, const std::string& v) { cfg.m_out = parse_count(k, v); }},
        {"inducing.m_in", [&](const std::string& k, const std::string& v) { cfg.m_in = parse_count(k, v); }},
        {"whitened_u", [&](const std::string& k, const std::string& v) { cfg.whitened_u = parse_bool(k, v); }},
        {"lambda_init", [&](const std::string& k, const std::string& v) { cfg.lambda_init = parse_real(k, v); }},
        {"lambda_max", [&](const std::string& k, const std::string& v) { cfg.lambda_max = parse_real(k, v); }},
        {"prior_sd", [&](const std::string& k, const std::string& v) { cfg.prior_sd = parse_real(k, v); }},
        {"max_std_u", [&](const std::string& k, const std::string& v) { cfg.max_std_u = parse_real(k, v); }},
        {"cache_cholesky", [&](const std::string& k, const std::string& v) { cfg.cache_cholesky = parse_bool(k, v); }},
        {"flow.depth", [&](const std::string& k, const std::string& v) { cfg.flow_depth = parse_count(k, v); }},
        {"flow.hidden", [&](const std::string& k, const std::string& v) { cfg.flow_hidden = parse_count(k, v); }},
        {"flow.s_cap", [&](const std::string& k, const std::string& v) { cfg.flow_s_cap = parse_real(k, v); }},
        {"key_layers", [&](const std::string& k, const std::string& v) { cfg.key_layers = parse_count_list(k, v); }},
        {"lambda_proj", [&](const std::string& k, const std::string& v) { cfg.lambda_proj = parse_real(k, v); }},
        {"kl_warmup_frac", [&](const std::string& k, const std::string& v) { cfg.kl_warmup_frac = parse_real(k, v); }},
        {"train_samples", [&](const std::string& k, const std::string& v) { cfg.train_samples = parse_count(k, v); }},
        {"test_samples", [&](const std::string& k, const std::string& v) { cfg.test_samples = parse_count(k, v); }},
        {"sampling_mode", [&](const std::string&, const std::string& v) { cfg.sampling_mode = v; }},
        {"noise_std", [&](const std::string& k, const std::string& v) { cfg.noise_std = parse_real(k, v); }},
        {"backbone.hidden_width", [&](const std::string& k, const std::string& v) { cfg.hidden_width = parse_count(k, v); }},
        {"backbone.n_hidden", [&](const std::string& k, const std::string& v) { cfg.n_hidden = parse_count(k, v); }},
        {"data.n_per_cluster", [&](const std::string& k, const std::string& v) { cfg.n_per_cluster = parse_count(k, v); }},
        {"data.grid_points", [&](const std::string& k, const std::string& v) { cfg.grid_points = parse_count(k, v); }},
        {"data.toy_n_train", [&](const std::string& k, const std::string& v) { cfg.toy_n_train = parse_count(k, v); }},
        {"data.toy_n_test", [&](const std::string& k, const std::string& v) { cfg.toy_n_test = parse_count(k, v); }},
        {"data.toy_n_ood", [&](const std::string& k, const std::string& v) { cfg.toy_n_ood = parse_count(k, v); }},
        {"ood.margin_probes", [&](const std::string& k, const std::string& v) { cfg.margin_probes = parse_count(k, v); }},
        {"ood.margin_e_samples", [&](const std::string& k, const std::string& v) { cfg.margin_e_samples = parse_count(k, v); }},
        {"ood.projector_max_rows", [&](const std::string& k, const std::string& v) { cfg.projector_max_rows = parse_count(k, v); }},
    };

    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        }
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "seed = " << cfg.seed << "\n";
    out << "task = " << cfg.task << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "lr = " << cfg.lr << "\n";
    out << "optimizer = " << cfg.optimizer << "\n";
    out << "momentum = " << cfg.momentum << "\n";
    out << "label_smoothing = " << cfg.label_smoothing << "\n";
    out << "inducing.m_out = " << cfg.m_out << "\n";
    out << "inducing.m_in = " << cfg.m_in << "\n";
    out << "whitened_u = " << (cfg.whitened_u ? "true" : "false") << "\n";
    out << "lambda_init = " << cfg.lambda_init << "\n";
    out << "lambda_max = " << cfg.lambda_max << "\n";
    out << "prior_sd = " << cfg.prior_sd << "\n";
    out << "max_std_u = " << cfg.max_std_u << "\n";
    out << "cache_cholesky = " << (cfg.cache_cholesky ? "true" : "false") << "\n";
    out << "flow.depth = " << cfg.flow_depth << "\n";
    out << "flow.hidden = " << cfg.flow_hidden << "\n";
    out << "flow.s_cap = " << cfg.flow_s_cap << "\n";
    out << "key_layers = ";
    for (std::size_t i = 0; i < cfg.key_layers.size(); ++i) {
        if (i) out << ",";
        out << cfg.key_layers[i];
    }
    out << "\n";
    out << "lambda_proj = " << cfg.lambda_proj << "\n";
    out << "kl_warmup_frac = " << cfg.kl_warmup_frac << "\n";
    out << "train_samples = " << cfg.train_samples << "\n";
    out << "test_samples = " << cfg.test_samples << "\n";
    out << "sampling_mode = " << cfg.sampling_mode << "\n";
    out << "noise_std = " << cfg.noise_std << "\n";
    out << "backbone.hidden_width = " << cfg.hidden_width << "\n";
    out << "backbone.n_hidden = " << cfg.n_hidden << "\n";
    out << "data.n_per_cluster = " << cfg.n_per_cluster << "\n";
    out << "data.grid_points = " << cfg.grid_points << "\n";
    out << "data.toy_n_train = " << cfg.toy_n_train << "\n";
    out << "data.toy_n_test = " << cfg.toy_n_test << "\n";
    out << "data.toy_n_ood = " << cfg.toy_n_ood << "\n";
    out << "ood.margin_probes = " << cfg.margin_probes << "\n";
    out << "ood.margin_e_samples = " << cfg.margin_e_samples << "\n";
    out << "ood.projector_max_rows = " << cfg.projector_max_rows << "\n";
    return out.str();
}

}  // namespace fidgp
