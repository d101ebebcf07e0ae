#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsso/data.hpp"
#include "fedsso/engine.hpp"
#include "fedsso/errors.hpp"
#include "fedsso/model.hpp"

namespace fedsso {

// Experiment configuration file: an INI-style key-value dialect.
//   - '#' or ';' start a comment, blank lines are ignored
//   - '[section]' headers; '[algo]' may repeat, one block per algorithm
//   - 'key = value'; lists are comma-separated
// A top-level 'schema = 1' line is required.

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | libsvm | csv
    int classes = 2;
    int features = 2;
    int samples = 1000;
    double spread = 0.5;
    std::uint64_t seed = 1;
    double split_ratio = 0.75;
    std::string path;  // libsvm / csv
};

struct PartitionSpec {
    int clients = 1;
    int labels_per_client = 0;  // 0 = all labels
    std::uint64_t seed = 1;
    std::string manifest;  // optional override file
};

struct ModelConfig {
    std::string kind = "mclr";  // mclr | quadratic | mlp
    double l2_coeff = 1e-4;
    int hidden = 16;
    // quadratic spectrum
    int dim = 10;
    double eig_min = 0.5;
    double eig_max = 3.0;
    std::uint64_t quad_seed = 1;
};

struct RunSpec {
    std::string id = "exp";
    std::string out = "results";
    std::uint64_t seed = 1;
    int threads = 1;
    int rounds = 200;
    int bytes_per_scalar = 4;
    std::vector<double> thresholds = {0.4, 0.6, 0.8, 0.88, 0.9};
    double ref_threshold = 0.88;
    std::string format = "csv";  // csv | jsonl
};

struct GridSpec {
    bool present = false;
    std::vector<double> alphas;
    std::vector<double> etas;
};

struct ExperimentConfig {
    int schema = 0;
    RunSpec run;
    DatasetSpec dataset;
    PartitionSpec partition;
    ModelConfig model;
    std::vector<AlgoConfig> algos;
    GridSpec grid;
};

namespace cfg_detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Entry {
    std::string section;
    std::string key;
    std::string value;
    int line;
    std::size_t algo_index;  // valid when section == "algo"
};

inline double to_double(const Entry& e) {
    double v;
    if (!detail::parse_double_strict(e.value, v))
        throw ConfigError("line " + std::to_string(e.line) + ": '" + e.key +
                          "' expects a number, got '" + e.value + "'");
    return v;
}

inline long long to_int(const Entry& e) {
    long long v;
    if (!detail::parse_int_strict(e.value, v))
        throw ConfigError("line " + std::to_string(e.line) + ": '" + e.key +
                          "' expects an integer, got '" + e.value + "'");
    return v;
}

inline std::vector<double> to_list(const Entry& e) {
    std::vector<double> out;
    std::stringstream ss(e.value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        double v;
        if (!detail::parse_double_strict(tok, v))
            throw ConfigError("line " + std::to_string(e.line) + ": bad list item '" + tok +
                              "' in '" + e.key + "'");
        out.push_back(v);
    }
    if (out.empty())
        throw ConfigError("line " + std::to_string(e.line) + ": empty list for '" + e.key + "'");
    return out;
}

inline void apply_algo_key(AlgoConfig& a, const Entry& e) {
    const std::string& k = e.key;
    if (k == "name") {
        a.algorithm = algorithm_from_name(e.value);
    } else if (k == "alpha") {
        a.alpha = to_double(e);
    } else if (k == "eta") {
        a.eta = to_double(e);
    } else if (k == "tau") {
        a.tau = static_cast<int>(to_int(e));
    } else if (k == "batch_size") {
        a.batch_size = static_cast<int>(to_int(e));
    } else if (k == "schedule") {
        if (e.value == "constant")
            a.schedule = Schedule::Constant;
        else if (e.value == "theory_convex")
            a.schedule = Schedule::TheoryConvex;
        else if (e.value == "theory_nonconvex")
            a.schedule = Schedule::TheoryNonconvex;
        else
            throw ConfigError("line " + std::to_string(e.line) + ": unknown schedule '" +
                              e.value + "'");
    } else if (k == "lambda") {
        a.lambda_lo = to_double(e);
    } else if (k == "Lambda" || k == "lambda_hi") {
        a.lambda_hi = to_double(e);
    } else if (k == "reset_period") {
        a.reset_period = static_cast<int>(to_int(e));
    } else if (k == "inverse_mode") {
        if (e.value == "spd_solve")
            a.inverse_mode = InverseMode::SpdSolve;
        else if (e.value == "dual_inverse")
            a.inverse_mode = InverseMode::DualInverse;
        else
            throw ConfigError("line " + std::to_string(e.line) + ": unknown inverse_mode '" +
                              e.value + "'");
    } else if (k == "kappa_lo") {
        a.kappa_lo = to_double(e);
    } else if (k == "kappa_hi") {
        a.kappa_hi = to_double(e);
    } else if (k == "mu_prox") {
        a.mu_prox = to_double(e);
    } else if (k == "L") {
        a.smoothness_L = to_double(e);
    } else if (k == "mu") {
        a.smoothness_mu = to_double(e);
    } else if (k == "rounds") {
        a.rounds = static_cast<int>(to_int(e));
    } else {
        throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + k +
                          "' in [algo]");
    }
}

}  // namespace cfg_detail

inline ExperimentConfig parse_config(std::istream& in) {
    using cfg_detail::Entry;
    ExperimentConfig cfg;
    std::vector<Entry> entries;
    std::string line, section;
    int line_no = 0;
    std::size_t algo_count = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfg_detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": unterminated section");
            section = cfg_detail::trim(line.substr(1, line.size() - 2));
            if (section == "algo") ++algo_count;
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        Entry e;
        e.section = section;
        e.key = cfg_detail::trim(line.substr(0, eq));
        e.value = cfg_detail::trim(line.substr(eq + 1));
        e.line = line_no;
        e.algo_index = algo_count == 0 ? 0 : algo_count - 1;
        if (e.key.empty() || e.value.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
        entries.push_back(std::move(e));
    }

    cfg.algos.assign(algo_count, AlgoConfig{});
    std::vector<bool> algo_rounds_set(algo_count, false);

    for (const Entry& e : entries) {
        if (e.section.empty()) {
            if (e.key == "schema")
                cfg.schema = static_cast<int>(cfg_detail::to_int(e));
            else
                throw ConfigError("line " + std::to_string(e.line) + ": key '" + e.key +
                                  "' outside any section");
        } else if (e.section == "run") {
            if (e.key == "id") cfg.run.id = e.value;
            else if (e.key == "out") cfg.run.out = e.value;
            else if (e.key == "seed") cfg.run.seed = static_cast<std::uint64_t>(cfg_detail::to_int(e));
            else if (e.key == "threads") cfg.run.threads = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "rounds") cfg.run.rounds = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "bytes_per_scalar")
                cfg.run.bytes_per_scalar = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "thresholds") cfg.run.thresholds = cfg_detail::to_list(e);
            else if (e.key == "ref_threshold") cfg.run.ref_threshold = cfg_detail::to_double(e);
            else if (e.key == "format") cfg.run.format = e.value;
            else
                throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                  "' in [run]");
        } else if (e.section == "dataset") {
            if (e.key == "kind") cfg.dataset.kind = e.value;
            else if (e.key == "classes") cfg.dataset.classes = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "features") cfg.dataset.features = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "samples") cfg.dataset.samples = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "spread") cfg.dataset.spread = cfg_detail::to_double(e);
            else if (e.key == "seed") cfg.dataset.seed = static_cast<std::uint64_t>(cfg_detail::to_int(e));
            else if (e.key == "split_ratio") cfg.dataset.split_ratio = cfg_detail::to_double(e);
            else if (e.key == "path") cfg.dataset.path = e.value;
            else
                throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                  "' in [dataset]");
        } else if (e.section == "partition") {
            if (e.key == "clients") cfg.partition.clients = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "labels_per_client")
                cfg.partition.labels_per_client = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "seed")
                cfg.partition.seed = static_cast<std::uint64_t>(cfg_detail::to_int(e));
            else if (e.key == "manifest") cfg.partition.manifest = e.value;
            else
                throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                  "' in [partition]");
        } else if (e.section == "model") {
            if (e.key == "kind") cfg.model.kind = e.value;
            else if (e.key == "l2_coeff") cfg.model.l2_coeff = cfg_detail::to_double(e);
            else if (e.key == "hidden") cfg.model.hidden = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "dim") cfg.model.dim = static_cast<int>(cfg_detail::to_int(e));
            else if (e.key == "eig_min") cfg.model.eig_min = cfg_detail::to_double(e);
            else if (e.key == "eig_max") cfg.model.eig_max = cfg_detail::to_double(e);
            else if (e.key == "quad_seed")
                cfg.model.quad_seed = static_cast<std::uint64_t>(cfg_detail::to_int(e));
            else
                throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                  "' in [model]");
        } else if (e.section == "algo") {
            if (e.key == "rounds") algo_rounds_set[e.algo_index] = true;
            cfg_detail::apply_algo_key(cfg.algos[e.algo_index], e);
        } else if (e.section == "grid") {
            cfg.grid.present = true;
            if (e.key == "alpha") cfg.grid.alphas = cfg_detail::to_list(e);
            else if (e.key == "eta") cfg.grid.etas = cfg_detail::to_list(e);
            else
                throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                  "' in [grid]");
        } else {
            throw ConfigError("line " + std::to_string(e.line) + ": unknown section [" +
                              e.section + "]");
        }
    }

    if (cfg.schema != 1) throw ConfigError("missing or unsupported 'schema' (expected 1)");
    if (cfg.algos.empty()) throw ConfigError("config declares no [algo] sections");
    if (cfg.run.format != "csv" && cfg.run.format != "jsonl")
        throw ConfigError("run.format must be csv or jsonl");
    for (std::size_t i = 0; i < cfg.algos.size(); ++i) {
        AlgoConfig& a = cfg.algos[i];
        if (!algo_rounds_set[i]) a.rounds = cfg.run.rounds;
        a.seed = cfg.run.seed;
        a.threads = cfg.run.threads;
        a.bytes_per_scalar = cfg.run.bytes_per_scalar;
        a.validate();
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in);
}

// Materialized experiment inputs.
struct Workbench {
    ModelSpec model;
    FederatedDataset data;
};

inline Workbench build_workbench(const ExperimentConfig& cfg) {
    std::vector<Sample> samples;
    if (cfg.dataset.kind == "synthetic") {
        samples = synth_blobs(cfg.dataset.seed, cfg.dataset.classes, cfg.dataset.features,
                              cfg.dataset.samples, cfg.dataset.spread);
    } else if (cfg.dataset.kind == "libsvm") {
        std::ifstream in(cfg.dataset.path);
        if (!in) throw ConfigError("cannot open libsvm file '" + cfg.dataset.path + "'");
        samples = parse_libsvm(in, cfg.dataset.features);
    } else if (cfg.dataset.kind == "csv") {
        std::ifstream in(cfg.dataset.path);
        if (!in) throw ConfigError("cannot open csv file '" + cfg.dataset.path + "'");
        samples = parse_csv(in);
    } else {
        throw ConfigError("unknown dataset.kind '" + cfg.dataset.kind + "'");
    }

    FederatedDataset data;
    data.num_features = samples.empty() ? cfg.dataset.features
                                        : static_cast<int>(samples.front().features.size());
    data.num_classes = count_classes(samples);

    auto [train, test] = train_test_split(samples, cfg.dataset.split_ratio, cfg.dataset.seed);
    data.test_set = std::move(test);

    if (!cfg.partition.manifest.empty()) {
        std::ifstream in(cfg.partition.manifest);
        if (!in) throw ConfigError("cannot open manifest '" + cfg.partition.manifest + "'");
        PartitionManifest manifest = parse_manifest(in);
        data.train_shards = partition_by_manifest(train, manifest);
    } else {
        const int lpc = cfg.partition.labels_per_client > 0 ? cfg.partition.labels_per_client
                                                            : data.num_classes;
        data.train_shards =
            partition_label_skew(train, cfg.partition.clients, lpc, cfg.partition.seed);
    }

    ModelSpec model = [&] {
        if (cfg.model.kind == "mclr")
            return ModelSpec::mclr(data.num_classes, data.num_features, cfg.model.l2_coeff);
        if (cfg.model.kind == "mlp")
            return ModelSpec::mlp(data.num_features, cfg.model.hidden, data.num_classes);
        if (cfg.model.kind == "quadratic")
            return ModelSpec::quadratic(
                rotated_spectrum_matrix(cfg.model.dim, cfg.model.eig_min, cfg.model.eig_max,
                                        cfg.model.quad_seed),
                std::vector<double>(cfg.model.dim, 0.0));
        throw ConfigError("unknown model.kind '" + cfg.model.kind + "'");
    }();

    return {std::move(model), std::move(data)};
}

}  // namespace fedsso
