// fedsim: experiment driver for the federated optimization laboratory.
//
// Subcommands:
//   run      execute every [algo] block of a config, write per-round records
//   grid     hyper-parameter grid search, select the best cell per algorithm
//   verify   run the built-in verification suite and emit a JSONL report
//   compare  tabulate previously written records files side by side
//
// Exit codes: 0 ok, 1 check/run failure, 2 usage or config error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsso/config.hpp"
#include "fedsso/engine.hpp"
#include "fedsso/metrics.hpp"
#include "fedsso/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOverrides {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string format;
};

fedsso::ExperimentConfig load_with_overrides(const CliOverrides& o) {
    fedsso::ExperimentConfig cfg = fedsso::load_config(o.config_path);
    if (!o.out.empty()) cfg.run.out = o.out;
    if (!o.format.empty()) cfg.run.format = o.format;
    for (auto& a : cfg.algos) {
        if (o.seed) a.seed = *o.seed;
        if (o.threads) a.threads = *o.threads;
    }
    if (o.seed) cfg.run.seed = *o.seed;
    if (o.threads) cfg.run.threads = *o.threads;
    if (cfg.run.format != "csv" && cfg.run.format != "jsonl")
        throw fedsso::ConfigError("--format must be csv or jsonl");
    return cfg;
}

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string records_filename(const fedsso::ExperimentConfig& cfg, const fedsso::AlgoConfig& a,
                             bool grid_cell = false) {
    std::string name = cfg.run.id + "_" + fedsso::algorithm_name(a.algorithm);
    if (grid_cell) {
        name += "_a" + fmt_g(a.alpha);
        if (a.algorithm == fedsso::Algorithm::FedSso) name += "_e" + fmt_g(a.eta);
    }
    name += cfg.run.format == "jsonl" ? ".jsonl" : ".csv";
    return name;
}

void write_records(const fedsso::ExperimentConfig& cfg, const fedsso::AlgoConfig& a,
                   const std::vector<fedsso::RoundRecord>& records, bool grid_cell = false) {
    fs::create_directories(cfg.run.out);
    const auto path = fs::path(cfg.run.out) / records_filename(cfg, a, grid_cell);
    fedsso::emit_records(records, path.string(),
                         cfg.run.format == "jsonl" ? fedsso::RecordFormat::Jsonl
                                                   : fedsso::RecordFormat::Csv);
}

struct SummaryRow {
    std::string algo;
    std::string params;
    bool diverged = false;
    int rounds_run = 0;
    double final_loss = 0.0;
    double final_acc = 0.0;
    std::vector<std::optional<int>> rounds_at;
    long long bytes_per_round = 0;
    std::optional<long long> total_bytes_ref;  // bits_per_round * rounds-to-ref
};

SummaryRow summarize(const fedsso::ExperimentConfig& cfg, const fedsso::AlgoConfig& a,
                     const std::vector<fedsso::RoundRecord>& records, bool diverged,
                     long long d) {
    SummaryRow row;
    row.algo = fedsso::algorithm_name(a.algorithm);
    row.params = "a=" + fmt_g(a.alpha);
    if (a.algorithm == fedsso::Algorithm::FedSso) row.params += ",e=" + fmt_g(a.eta);
    if (a.schedule != fedsso::Schedule::Constant)
        row.params = fedsso::schedule_name(a.schedule);
    row.diverged = diverged;
    row.rounds_run = static_cast<int>(records.size());
    if (!records.empty()) {
        row.final_loss = records.back().train_loss;
        row.final_acc = records.back().test_accuracy;
    }
    const fedsso::CommModel comm{d, a.bytes_per_scalar};
    row.bytes_per_round = fedsso::bits_per_round(a.algorithm, comm);
    for (double t : cfg.run.thresholds)
        row.rounds_at.push_back(fedsso::rounds_to_accuracy(records, t));
    if (auto r = fedsso::rounds_to_accuracy(records, cfg.run.ref_threshold))
        row.total_bytes_ref = row.bytes_per_round * *r;
    return row;
}

void print_summary(const fedsso::ExperimentConfig& cfg, const std::vector<SummaryRow>& rows) {
    std::printf("\n%-10s %-18s %7s %12s %9s", "algo", "params", "rounds", "final_loss",
                "final_acc");
    for (double t : cfg.run.thresholds) std::printf(" %8s", ("@" + fmt_g(t)).c_str());
    std::printf(" %11s %14s\n", "bytes/round",
                ("bytes@" + fmt_g(cfg.run.ref_threshold)).c_str());
    for (const auto& r : rows) {
        std::printf("%-10s %-18s %7d %12.6g %9.4f", r.algo.c_str(), r.params.c_str(),
                    r.rounds_run, r.final_loss, r.final_acc);
        for (const auto& ra : r.rounds_at)
            std::printf(" %8s", ra ? std::to_string(*ra).c_str() : "-");
        std::printf(" %11lld %14s", r.bytes_per_round,
                    r.total_bytes_ref ? std::to_string(*r.total_bytes_ref).c_str() : "-");
        if (r.diverged) std::printf("  [diverged]");
        std::printf("\n");
    }
    std::printf("\n");
}

int cmd_run(const CliOverrides& o) {
    fedsso::ExperimentConfig cfg = load_with_overrides(o);
    fedsso::Workbench wb = fedsso::build_workbench(cfg);
    const long long d = static_cast<long long>(wb.model.dim());
    std::printf("dataset: %zu train shards, %zu test samples, %d features, %d classes, d=%lld\n",
                wb.data.train_shards.size(), wb.data.test_set.size(), wb.data.num_features,
                wb.data.num_classes, d);
    std::vector<SummaryRow> rows;
    for (const auto& a : cfg.algos) {
        fedsso::ExperimentResult res = fedsso::run_experiment(a, wb.model, wb.data);
        write_records(cfg, a, res.records);
        rows.push_back(summarize(cfg, a, res.records, res.diverged, d));
        std::printf("[%s] %d rounds%s -> %s\n", fedsso::algorithm_name(a.algorithm),
                    static_cast<int>(res.records.size()),
                    res.diverged ? " (diverged, stopped early)" : "",
                    (fs::path(cfg.run.out) / records_filename(cfg, a)).string().c_str());
    }
    print_summary(cfg, rows);
    return 0;
}

int cmd_grid(const CliOverrides& o) {
    fedsso::ExperimentConfig cfg = load_with_overrides(o);
    if (!cfg.grid.present || cfg.grid.alphas.empty())
        throw fedsso::ConfigError("grid: config has no [grid] section with alpha values");
    fedsso::Workbench wb = fedsso::build_workbench(cfg);
    const long long d = static_cast<long long>(wb.model.dim());

    json best;
    best["schema"] = 1;
    best["selection_metric"] = "final_train_loss";
    best["algorithms"] = json::object();
    std::vector<SummaryRow> rows;

    for (const auto& base : cfg.algos) {
        std::vector<double> etas = {base.eta};
        if (base.algorithm == fedsso::Algorithm::FedSso && !cfg.grid.etas.empty())
            etas = cfg.grid.etas;
        struct Best {
            double loss = 0.0;
            double alpha = 0.0;
            double eta = 0.0;
            bool found = false;
            std::vector<fedsso::RoundRecord> records;
        } sel;
        int cells = 0;
        for (double alpha : cfg.grid.alphas) {
            for (double eta : etas) {
                fedsso::AlgoConfig a = base;
                a.alpha = alpha;
                a.eta = eta;
                ++cells;
                fedsso::ExperimentResult res = fedsso::run_experiment(a, wb.model, wb.data);
                write_records(cfg, a, res.records, /*grid_cell=*/true);
                if (res.diverged || res.records.empty()) continue;
                const double fl = res.records.back().train_loss;
                // ties: smaller alpha, then smaller eta
                const bool better =
                    !sel.found || fl < sel.loss ||
                    (fl == sel.loss &&
                     (alpha < sel.alpha || (alpha == sel.alpha && eta < sel.eta)));
                if (better) {
                    sel = {fl, alpha, eta, true, std::move(res.records)};
                }
            }
        }
        const char* name = fedsso::algorithm_name(base.algorithm);
        if (!sel.found) {
            best["algorithms"][name] = {{"status", "no-convergent-cell"},
                                        {"cells", cells}};
            std::printf("[%s] %d cells, no convergent cell\n", name, cells);
        } else {
            json j = {{"status", "ok"},
                      {"cells", cells},
                      {"alpha", sel.alpha},
                      {"final_loss", sel.loss}};
            if (base.algorithm == fedsso::Algorithm::FedSso) j["eta"] = sel.eta;
            best["algorithms"][name] = j;
            fedsso::AlgoConfig a = base;
            a.alpha = sel.alpha;
            a.eta = sel.eta;
            rows.push_back(summarize(cfg, a, sel.records, false, d));
            std::printf("[%s] %d cells, best alpha=%s%s final_loss=%.6g\n", name, cells,
                        fmt_g(sel.alpha).c_str(),
                        base.algorithm == fedsso::Algorithm::FedSso
                            ? (" eta=" + fmt_g(sel.eta)).c_str()
                            : "",
                        sel.loss);
        }
    }
    fs::create_directories(cfg.run.out);
    const auto best_path = fs::path(cfg.run.out) / (cfg.run.id + "_best.json");
    std::ofstream out(best_path);
    if (!out) throw fedsso::IoError("cannot write " + best_path.string());
    out << best.dump(2) << '\n';
    if (!rows.empty()) print_summary(cfg, rows);
    std::printf("selection written to %s\n", best_path.string().c_str());
    return 0;
}

int cmd_verify(const std::string& out_dir) {
    auto results = fedsso::run_all_checks();
    fs::create_directories(out_dir);
    const auto report_path = fs::path(out_dir) / "verify_report.jsonl";
    std::ofstream report(report_path);
    bool all_ok = true;
    for (const auto& r : results) {
        all_ok = all_ok && r.passed;
        std::printf("%s  %-28s measured=%-12.6g threshold=%-10.6g %s\n",
                    r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.threshold,
                    r.note.c_str());
        json j = {{"check", r.name},
                  {"status", r.passed ? "pass" : "fail"},
                  {"measured", r.measured},
                  {"threshold", r.threshold}};
        if (!r.note.empty()) j["note"] = r.note;
        report << j.dump() << '\n';
    }
    std::printf("%s (%zu checks) -> %s\n", all_ok ? "ALL PASS" : "FAILURES", results.size(),
                report_path.string().c_str());
    return all_ok ? 0 : 1;
}

int cmd_compare(const CliOverrides& o) {
    fedsso::ExperimentConfig cfg = load_with_overrides(o);
    fedsso::Workbench wb = fedsso::build_workbench(cfg);
    const long long d = static_cast<long long>(wb.model.dim());
    std::vector<SummaryRow> rows;
    for (const auto& a : cfg.algos) {
        const auto path = fs::path(cfg.run.out) / records_filename(cfg, a);
        auto records = fedsso::load_records_csv(path.string());
        rows.push_back(summarize(cfg, a, records, false, d));
    }
    print_summary(cfg, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated optimization laboratory"};
    app.require_subcommand(1);

    CliOverrides o;
    int threads_flag = 0;
    std::uint64_t seed_flag = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("--config", o.config_path, "experiment config file")->required();
        sub->add_option("--out", o.out, "output directory (overrides config)");
        auto* s = sub->add_option("--seed", seed_flag, "seed override");
        s->each([&](const std::string&) { o.seed = seed_flag; });
        auto* t = sub->add_option("--threads", threads_flag, "worker threads per round")
                      ->envname("FEDSIM_THREADS");
        t->each([&](const std::string&) { o.threads = threads_flag; });
        return sub;
    };

    auto* run = add_common(app.add_subcommand("run", "run every configured algorithm"), true);
    run->add_option("--format", o.format, "records format: csv or jsonl");
    auto* grid = add_common(app.add_subcommand("grid", "hyper-parameter grid search"), true);
    auto* verify = app.add_subcommand("verify", "run the verification suite");
    std::string verify_out = "results";
    verify->add_option("--out", verify_out, "report directory");
    auto* compare =
        add_common(app.add_subcommand("compare", "tabulate existing records files"), true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(o);
        if (grid->parsed()) return cmd_grid(o);
        if (verify->parsed()) return cmd_verify(verify_out);
        if (compare->parsed()) return cmd_compare(o);
    } catch (const fedsso::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const fedsso::UnknownAlgorithm& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const fedsso::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
