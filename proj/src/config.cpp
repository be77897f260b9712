#include "ermpp/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "ermpp/report.hpp"

namespace ermpp {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct Anchor {
    std::string origin;
    int line = 0;

    std::string str() const { return origin + ":" + std::to_string(line); }
};

[[noreturn]] void fail(const Anchor& at, const std::string& msg) {
    throw ConfigError(at.str() + ": " + msg);
}

bool parse_bool(const std::string& v, const Anchor& at) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    fail(at, "expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& v, const Anchor& at) {
    try {
        size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        fail(at, "expected an integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v, const Anchor& at) {
    try {
        size_t pos = 0;
        const uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        fail(at, "expected an unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& v, const Anchor& at) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        fail(at, "expected a number, got '" + v + "'");
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& v, const Anchor& at) {
    std::vector<int> out;
    for (const auto& item : split_list(v)) out.push_back(parse_int(item, at));
    return out;
}

std::vector<double> parse_double_list(const std::string& v, const Anchor& at) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(parse_double(item, at));
    return out;
}

}  // namespace

ComponentToggles parse_toggle_row(const std::string& row, const std::string& anchor) {
    ComponentToggles t;
    Anchor at{anchor, 0};
    for (const auto& item : split_list(row)) {
        if (item == "none") continue;
        if (item == "mpa") t.mpa = true;
        else if (item == "fd") t.fd = true;
        else if (item == "lt") t.lt = true;
        else if (item == "ws") t.ws = true;
        else if (item == "es") t.es = true;
        else if (item == "strong_init") t.strong_init = true;
        else if (item == "ubn") t.ubn = true;
        else if (item == "sampler=balanced") t.sampler = SamplerKind::Balanced;
        else if (item == "sampler=resampled") t.sampler = SamplerKind::Resampled;
        else throw ConfigError(anchor + ": unknown toggle '" + item + "'");
    }
    return t;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    bool burn_in_set = false;

    while (std::getline(in, raw)) {
        ++line_no;
        Anchor at{origin, line_no};
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(at, "malformed section header '" + line + "'");
            section = line.substr(1, line.size() - 2);
            static const std::vector<std::string> known = {"dataset", "model",   "optim",
                                                           "schedule", "toggles", "run",
                                                           "ablation", "pretrain"};
            if (std::find(known.begin(), known.end(), section) == known.end()) {
                fail(at, "unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(at, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) fail(at, "key '" + key + "' appears before any [section]");

        if (section == "dataset") {
            if (key == "family") cfg.family = value;
            else if (key == "num_domains") cfg.num_domains = parse_int(value, at);
            else if (key == "num_classes") cfg.num_classes = parse_int(value, at);
            else if (key == "n_per_domain") cfg.n_per_domain = parse_int(value, at);
            else if (key == "rotation_step_deg") cfg.rotation_step_deg = parse_double(value, at);
            else if (key == "noise_sigma") cfg.noise_sigma = parse_double(value, at);
            else if (key == "spurious_corr") cfg.spurious_corr = parse_double_list(value, at);
            else if (key == "path") cfg.dataset_path = value;
            else fail(at, "unknown key '" + key + "' in section [dataset]");
        } else if (section == "model") {
            if (key == "hidden_dims") cfg.hidden_dims = parse_int_list(value, at);
            else if (key == "use_batchnorm") cfg.use_batchnorm = parse_bool(value, at);
            else fail(at, "unknown key '" + key + "' in section [model]");
        } else if (section == "optim") {
            if (key == "lr") cfg.adam.lr = parse_double(value, at);
            else if (key == "beta1") cfg.adam.beta1 = parse_double(value, at);
            else if (key == "beta2") cfg.adam.beta2 = parse_double(value, at);
            else if (key == "eps") cfg.adam.eps = parse_double(value, at);
            else if (key == "weight_decay") cfg.adam.weight_decay = parse_double(value, at);
            else fail(at, "unknown key '" + key + "' in section [optim]");
        } else if (section == "schedule") {
            if (key == "total_steps") cfg.schedule.total_steps = parse_int(value, at);
            else if (key == "warmstart_steps") cfg.schedule.warmstart_steps = parse_int(value, at);
            else if (key == "mpa_burn_in") {
                cfg.schedule.mpa_burn_in = parse_int(value, at);
                burn_in_set = true;
            } else if (key == "val_every") cfg.schedule.val_every = parse_int(value, at);
            else if (key == "long_train_multiplier")
                cfg.schedule.long_train_multiplier = parse_double(value, at);
            else fail(at, "unknown key '" + key + "' in section [schedule]");
        } else if (section == "toggles") {
            if (key == "mpa") cfg.toggles.mpa = parse_bool(value, at);
            else if (key == "fd") cfg.toggles.fd = parse_bool(value, at);
            else if (key == "lt") cfg.toggles.lt = parse_bool(value, at);
            else if (key == "ws") cfg.toggles.ws = parse_bool(value, at);
            else if (key == "es") cfg.toggles.es = parse_bool(value, at);
            else if (key == "strong_init") cfg.toggles.strong_init = parse_bool(value, at);
            else if (key == "ubn") cfg.toggles.ubn = parse_bool(value, at);
            else if (key == "sampler") {
                if (value == "balanced") cfg.toggles.sampler = SamplerKind::Balanced;
                else if (value == "resampled") cfg.toggles.sampler = SamplerKind::Resampled;
                else fail(at, "sampler must be 'balanced' or 'resampled', got '" + value + "'");
            } else fail(at, "unknown key '" + key + "' in section [toggles]");
        } else if (section == "run") {
            if (key == "seed") {
                cfg.seed = parse_u64(value, at);
                cfg.seed_present = true;
            } else if (key == "num_seeds") cfg.num_seeds = parse_int(value, at);
            else if (key == "mode") cfg.mode = value;
            else if (key == "workers") cfg.workers = parse_int(value, at);
            else if (key == "val_fraction") cfg.val_fraction = parse_double(value, at);
            else if (key == "per_domain_batch") cfg.per_domain_batch = parse_int(value, at);
            else if (key == "total_batch") cfg.total_batch = parse_int(value, at);
            else if (key == "strong_init_path") cfg.strong_init_path = value;
            else fail(at, "unknown key '" + key + "' in section [run]");
        } else if (section == "ablation") {
            if (key == "row") cfg.ablation_rows.push_back(parse_toggle_row(value, at.str()));
            else fail(at, "unknown key '" + key + "' in section [ablation]");
        } else if (section == "pretrain") {
            if (key == "steps") cfg.pretrain.steps = parse_int(value, at);
            else if (key == "lr") cfg.pretrain.lr = parse_double(value, at);
            else if (key == "noise") cfg.pretrain.noise = parse_double(value, at);
            else if (key == "aux_classes") cfg.pretrain.aux_classes = parse_int(value, at);
            else if (key == "batch_size") cfg.pretrain.batch_size = parse_int(value, at);
            else if (key == "out") cfg.pretrain.out = value;
            else fail(at, "unknown key '" + key + "' in section [pretrain]");
        }
    }
    if (!burn_in_set) cfg.schedule.mpa_burn_in = -1;
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

void ExperimentConfig::validate() const {
    if (family != "rotated_blobs" && family != "spurious_blobs" && family != "import") {
        throw ConfigError("dataset family must be rotated_blobs, spurious_blobs or import, got '" +
                          family + "'");
    }
    if (family == "import" && dataset_path.empty()) {
        throw ConfigError("dataset family 'import' requires a path");
    }
    if (mode != "leave_one_out" && mode != "ablation") {
        throw ConfigError("run mode must be leave_one_out or ablation, got '" + mode + "'");
    }
    if (mode == "ablation" && ablation_rows.empty()) {
        throw ConfigError("ablation mode needs at least one [ablation] row");
    }
    if (num_seeds < 1) {
        throw ConfigError("num_seeds must be >= 1");
    }
    if (workers < 1) {
        throw ConfigError("workers must be >= 1");
    }
    auto needs_strong_init = toggles.strong_init;
    for (const auto& row : ablation_rows) needs_strong_init |= row.strong_init;
    if (needs_strong_init && strong_init_path.empty()) {
        throw ConfigError("strong_init toggle requires run.strong_init_path");
    }
}

namespace {

std::string toggle_row_text(const ComponentToggles& t) {
    std::string out;
    auto add = [&out](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ",";
        out += name;
    };
    add(t.mpa, "mpa");
    add(t.fd, "fd");
    add(t.lt, "lt");
    add(t.ws, "ws");
    add(t.es, "es");
    add(t.strong_init, "strong_init");
    add(t.ubn, "ubn");
    if (out.empty()) out = "none";
    if (t.sampler == SamplerKind::Resampled) out += ",sampler=resampled";
    return out;
}

}  // namespace

std::string ExperimentConfig::canonical_text() const {
    std::ostringstream os;
    os << "[dataset]\n";
    os << "family = " << family << "\n";
    if (family == "import") {
        os << "path = " << dataset_path << "\n";
    } else if (family == "rotated_blobs") {
        os << "num_domains = " << num_domains << "\n";
        os << "num_classes = " << num_classes << "\n";
        os << "n_per_domain = " << n_per_domain << "\n";
        os << "rotation_step_deg = " << format_double(rotation_step_deg) << "\n";
        os << "noise_sigma = " << format_double(noise_sigma) << "\n";
    } else {
        os << "num_classes = " << num_classes << "\n";
        os << "n_per_domain = " << n_per_domain << "\n";
        os << "noise_sigma = " << format_double(noise_sigma) << "\n";
        os << "spurious_corr = ";
        for (size_t i = 0; i < spurious_corr.size(); ++i) {
            if (i) os << ",";
            os << format_double(spurious_corr[i]);
        }
        os << "\n";
    }
    os << "\n[model]\nhidden_dims = ";
    for (size_t i = 0; i < hidden_dims.size(); ++i) {
        if (i) os << ",";
        os << hidden_dims[i];
    }
    os << "\nuse_batchnorm = " << (use_batchnorm ? "true" : "false") << "\n";
    os << "\n[optim]\n";
    os << "lr = " << format_double(adam.lr) << "\n";
    os << "beta1 = " << format_double(adam.beta1) << "\n";
    os << "beta2 = " << format_double(adam.beta2) << "\n";
    os << "eps = " << format_double(adam.eps) << "\n";
    os << "weight_decay = " << format_double(adam.weight_decay) << "\n";
    os << "\n[schedule]\n";
    os << "total_steps = " << schedule.total_steps << "\n";
    os << "warmstart_steps = " << schedule.warmstart_steps << "\n";
    os << "mpa_burn_in = " << schedule.mpa_burn_in << "\n";
    os << "val_every = " << schedule.val_every << "\n";
    os << "long_train_multiplier = " << format_double(schedule.long_train_multiplier) << "\n";
    os << "\n[toggles]\n";
    os << "mpa = " << (toggles.mpa ? "true" : "false") << "\n";
    os << "fd = " << (toggles.fd ? "true" : "false") << "\n";
    os << "lt = " << (toggles.lt ? "true" : "false") << "\n";
    os << "ws = " << (toggles.ws ? "true" : "false") << "\n";
    os << "es = " << (toggles.es ? "true" : "false") << "\n";
    os << "strong_init = " << (toggles.strong_init ? "true" : "false") << "\n";
    os << "ubn = " << (toggles.ubn ? "true" : "false") << "\n";
    os << "sampler = " << (toggles.sampler == SamplerKind::Balanced ? "balanced" : "resampled")
       << "\n";
    os << "\n[run]\n";
    os << "seed = " << seed << "\n";
    os << "num_seeds = " << num_seeds << "\n";
    os << "mode = " << mode << "\n";
    os << "workers = " << workers << "\n";
    os << "val_fraction = " << format_double(val_fraction) << "\n";
    os << "per_domain_batch = " << per_domain_batch << "\n";
    os << "total_batch = " << total_batch << "\n";
    if (!strong_init_path.empty()) {
        os << "strong_init_path = " << strong_init_path << "\n";
    }
    if (!ablation_rows.empty()) {
        os << "\n[ablation]\n";
        for (const auto& row : ablation_rows) {
            os << "row = " << toggle_row_text(row) << "\n";
        }
    }
    os << "\n[pretrain]\n";
    os << "steps = " << pretrain.steps << "\n";
    os << "lr = " << format_double(pretrain.lr) << "\n";
    os << "noise = " << format_double(pretrain.noise) << "\n";
    os << "aux_classes = " << pretrain.aux_classes << "\n";
    os << "batch_size = " << pretrain.batch_size << "\n";
    os << "out = " << pretrain.out << "\n";
    return os.str();
}

std::string ExperimentConfig::digest() const {
    return binio::crc32_hex(canonical_text());
}

}  // namespace ermpp
