#include "promptfed/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace promptfed {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, int line) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) fail(line, "trailing characters after number '" + v + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(line, "expected a number, got '" + v + "'");
    }
}

long long parse_int(const std::string& v, int line) {
    long long x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || p != v.data() + v.size())
        fail(line, "expected an integer, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(line, "expected true/false, got '" + v + "'");
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        std::size_t hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail(line, "expected 'key = value', got '" + trim(raw) + "'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty()) fail(line, "empty key");
        if (val.empty()) fail(line, "empty value for key '" + key + "'");

        TrainingConfig& t = cfg.train;
        if (key == "run_name") cfg.run_name = val;
        else if (key == "master_seed") t.master_seed = static_cast<std::uint64_t>(parse_int(val, line));
        else if (key == "num_clients") t.num_clients = static_cast<int>(parse_int(val, line));
        else if (key == "rounds") t.rounds = static_cast<int>(parse_int(val, line));
        else if (key == "local_steps") t.local_steps = static_cast<int>(parse_int(val, line));
        else if (key == "beta") t.beta = parse_double(val, line);
        else if (key == "lambda") t.lambda = parse_double(val, line);
        else if (key == "gamma") t.gamma = parse_double(val, line);
        else if (key == "mu") t.mu = parse_double(val, line);
        else if (key == "global_len") t.global_len = static_cast<int>(parse_int(val, line));
        else if (key == "local_len") t.local_len = static_cast<int>(parse_int(val, line));
        else if (key == "local_length_mode") {
            if (val == "fixed") t.heterogeneous_lengths = false;
            else if (val == "uniform_random") t.heterogeneous_lengths = true;
            else fail(line, "local_length_mode must be fixed or uniform_random");
        }
        else if (key == "participation_fraction") t.participation_fraction = parse_double(val, line);
        else if (key == "batch_size") t.batch_size = static_cast<int>(parse_int(val, line));
        else if (key == "workers") t.workers = static_cast<int>(parse_int(val, line));
        else if (key == "per_step_projector") t.per_step_projector = parse_bool(val, line);
        else if (key == "init_std") t.init_std = parse_double(val, line);
        else if (key == "token_scale") t.token_scale = parse_double(val, line);
        else if (key == "feature_scale") t.feature_scale = parse_double(val, line);
        else if (key == "global_only") t.global_only = parse_bool(val, line);
        else if (key == "disable_refinement") t.disable_refinement = parse_bool(val, line);
        else if (key == "disable_str") t.disable_str = parse_bool(val, line);
        else if (key == "disable_sep") t.disable_sep = parse_bool(val, line);
        else if (key == "detach_override") t.detach_override = parse_bool(val, line);
        else if (key == "num_classes") t.task.num_classes = static_cast<int>(parse_int(val, line));
        else if (key == "feature_dim") t.task.feature_dim = static_cast<int>(parse_int(val, line));
        else if (key == "noise_std") t.task.noise_std = parse_double(val, line);
        else if (key == "n_per_class") t.task.n_per_class = static_cast<int>(parse_int(val, line));
        else if (key == "partition_mode") {
            if (val == "pathological") t.partition.mode = PartitionSpec::Mode::pathological;
            else if (val == "dirichlet") t.partition.mode = PartitionSpec::Mode::dirichlet;
            else fail(line, "partition_mode must be pathological or dirichlet");
        }
        else if (key == "classes_per_client") t.partition.classes_per_client = static_cast<int>(parse_int(val, line));
        else if (key == "dirichlet_alpha") t.partition.alpha = parse_double(val, line);
        else fail(line, "unknown key '" + key + "'");
    }

    const TrainingConfig& t = cfg.train;
    auto invariant = [&](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    invariant(t.lambda > 0.0 && t.lambda < 1.0, "lambda must be in (0,1)");
    invariant(t.gamma >= 0.0, "gamma must be >= 0");
    invariant(t.beta > 0.0, "beta must be > 0");
    invariant(t.mu > 0.0, "mu must be > 0");
    invariant(t.rounds >= 1, "rounds must be >= 1");
    invariant(t.num_clients >= 1, "num_clients must be >= 1");
    invariant(t.local_steps >= 0, "local_steps must be >= 0");
    invariant(t.batch_size >= 1, "batch_size must be >= 1");
    invariant(t.workers >= 1, "workers must be >= 1");
    invariant(t.participation_fraction > 0.0 && t.participation_fraction <= 1.0,
              "participation_fraction must be in (0,1]");
    invariant(t.global_len >= 1 && t.local_len >= 1, "prompt lengths must be >= 1");
    invariant(t.init_std > 0.0, "init_std must be > 0");
    invariant(t.token_scale > 0.0, "token_scale must be > 0");
    invariant(t.feature_scale > 0.0, "feature_scale must be > 0");
    invariant(t.task.num_classes >= 1, "num_classes must be >= 1");
    invariant(t.task.feature_dim >= 1, "feature_dim must be >= 1");
    invariant(t.task.noise_std >= 0.0, "noise_std must be >= 0");
    invariant(t.task.n_per_class >= 1, "n_per_class must be >= 1");
    invariant(t.partition.alpha > 0.0, "dirichlet_alpha must be > 0");
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_snapshot(const ExperimentConfig& cfg) {
    const TrainingConfig& t = cfg.train;
    char num[64];
    std::ostringstream out;
    auto put_num = [&](const char* key, double v) {
        std::snprintf(num, sizeof(num), "%.17g", v);
        out << key << " = " << num << "\n";
    };
    out << "run_name = " << cfg.run_name << "\n";
    out << "master_seed = " << t.master_seed << "\n";
    out << "num_clients = " << t.num_clients << "\n";
    out << "rounds = " << t.rounds << "\n";
    out << "local_steps = " << t.local_steps << "\n";
    put_num("beta", t.beta);
    put_num("lambda", t.lambda);
    put_num("gamma", t.gamma);
    put_num("mu", t.mu);
    out << "global_len = " << t.global_len << "\n";
    out << "local_len = " << t.local_len << "\n";
    out << "local_length_mode = " << (t.heterogeneous_lengths ? "uniform_random" : "fixed") << "\n";
    put_num("participation_fraction", t.participation_fraction);
    out << "batch_size = " << t.batch_size << "\n";
    out << "workers = " << t.workers << "\n";
    out << "per_step_projector = " << (t.per_step_projector ? "true" : "false") << "\n";
    put_num("init_std", t.init_std);
    put_num("token_scale", t.token_scale);
    put_num("feature_scale", t.feature_scale);
    out << "global_only = " << (t.global_only ? "true" : "false") << "\n";
    out << "disable_refinement = " << (t.disable_refinement ? "true" : "false") << "\n";
    out << "disable_str = " << (t.disable_str ? "true" : "false") << "\n";
    out << "disable_sep = " << (t.disable_sep ? "true" : "false") << "\n";
    out << "detach_override = " << (t.detach_override ? "true" : "false") << "\n";
    out << "num_classes = " << t.task.num_classes << "\n";
    out << "feature_dim = " << t.task.feature_dim << "\n";
    put_num("noise_std", t.task.noise_std);
    out << "n_per_class = " << t.task.n_per_class << "\n";
    out << "partition_mode = "
        << (t.partition.mode == PartitionSpec::Mode::pathological ? "pathological" : "dirichlet")
        << "\n";
    out << "classes_per_client = " << t.partition.classes_per_client << "\n";
    put_num("dirichlet_alpha", t.partition.alpha);
    return out.str();
}

} // namespace promptfed
