#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsso/errors.hpp"

namespace fedsso {

enum class Algorithm { FedSgd, FedAvg, Scaffold, FedDane, FedSso, FedNl };

inline const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::FedSgd: return "fedsgd";
        case Algorithm::FedAvg: return "fedavg";
        case Algorithm::Scaffold: return "scaffold";
        case Algorithm::FedDane: return "feddane";
        case Algorithm::FedSso: return "fedsso";
        case Algorithm::FedNl: return "fednl";
    }
    return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
    if (name == "fedsgd") return Algorithm::FedSgd;
    if (name == "fedavg") return Algorithm::FedAvg;
    if (name == "scaffold") return Algorithm::Scaffold;
    if (name == "feddane") return Algorithm::FedDane;
    if (name == "fedsso") return Algorithm::FedSso;
    if (name == "fednl") return Algorithm::FedNl;
    throw UnknownAlgorithm("unknown algorithm '" + name + "'");
}

// Per-round metrics. bytes/messages are the instrumented totals across all
// clients; the per-client view (total / N) matches bits_per_round exactly.
struct RoundRecord {
    int round = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double global_grad_norm = 0.0;
    long long bytes_up = 0;
    long long bytes_down = 0;
    int messages_up = 0;
    int messages_down = 0;
    bool enforcement_triggered = false;
    double wall_ms = 0.0;
};

// Communication accounting convention: 4-byte scalars, and n_c is one model
// up plus one model down (independent of the client count).
struct CommModel {
    long long param_count = 0;
    int bytes_per_scalar = 4;

    long long n_c() const { return 2 * param_count * bytes_per_scalar; }
};

// Bytes exchanged per round under each protocol, as multiples of n_c.
// FedNL is the uncompressed theoretical estimate (full Hessian both ways);
// it is accounted for but never executed.
inline long long bits_per_round(Algorithm algo, const CommModel& comm) {
    if (comm.param_count < 1 || comm.bytes_per_scalar < 1)
        throw InvalidParam("bits_per_round: bad comm model");
    switch (algo) {
        case Algorithm::FedSgd:
        case Algorithm::FedAvg:
        case Algorithm::FedSso:
            return comm.n_c();
        case Algorithm::Scaffold:
        case Algorithm::FedDane:
            return 2 * comm.n_c();
        case Algorithm::FedNl:
            return comm.param_count * comm.n_c();
    }
    throw UnknownAlgorithm("bits_per_round: unhandled algorithm");
}

// (server, client) memory footprints in units of n_m = d.
inline std::pair<long long, long long> memory_estimate(Algorithm algo, long long d) {
    if (d < 1) throw InvalidParam("memory_estimate: d must be >= 1");
    switch (algo) {
        case Algorithm::FedSgd:
        case Algorithm::FedAvg:
            return {d, d};
        case Algorithm::Scaffold:
        case Algorithm::FedDane:
            return {2 * d, 2 * d};
        case Algorithm::FedNl:
            return {2 * d * d + 2 * d, d * d + 2 * d};
        case Algorithm::FedSso:
            return {d * d + 4 * d, d};
    }
    throw UnknownAlgorithm("memory_estimate: unhandled algorithm");
}

// First round whose test accuracy reaches the threshold ('-' in reports when
// absent).
inline std::optional<int> rounds_to_accuracy(const std::vector<RoundRecord>& records,
                                             double threshold) {
    for (const RoundRecord& r : records) {
        if (r.test_accuracy >= threshold) return r.round;
    }
    return std::nullopt;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline constexpr const char* kCsvHeader =
    "round,train_loss,test_accuracy,grad_norm,bytes_up,bytes_down,enforcement,wall_ms";

inline void write_records_csv(const std::vector<RoundRecord>& records, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const RoundRecord& r : records) {
        out << r.round << ',' << detail::fmt_double(r.train_loss) << ','
            << detail::fmt_double(r.test_accuracy) << ','
            << detail::fmt_double(r.global_grad_norm) << ',' << r.bytes_up << ','
            << r.bytes_down << ',' << (r.enforcement_triggered ? 1 : 0) << ','
            << detail::fmt_double(r.wall_ms) << '\n';
    }
}

inline void write_records_jsonl(const std::vector<RoundRecord>& records, std::ostream& out) {
    for (const RoundRecord& r : records) {
        out << "{\"round\":" << r.round << ",\"train_loss\":" << detail::fmt_double(r.train_loss)
            << ",\"test_accuracy\":" << detail::fmt_double(r.test_accuracy)
            << ",\"grad_norm\":" << detail::fmt_double(r.global_grad_norm)
            << ",\"bytes_up\":" << r.bytes_up << ",\"bytes_down\":" << r.bytes_down
            << ",\"messages_up\":" << r.messages_up << ",\"messages_down\":" << r.messages_down
            << ",\"enforcement\":" << (r.enforcement_triggered ? "true" : "false")
            << ",\"wall_ms\":" << detail::fmt_double(r.wall_ms) << "}\n";
    }
}

enum class RecordFormat { Csv, Jsonl };

inline void emit_records(const std::vector<RoundRecord>& records, const std::string& path,
                         RecordFormat format) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    if (format == RecordFormat::Csv)
        write_records_csv(records, out);
    else
        write_records_jsonl(records, out);
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<RoundRecord> parse_records_csv(std::istream& in) {
    std::vector<RoundRecord> out;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing CSV header");
    // tolerate trailing \r from foreign writers
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line != kCsvHeader) throw ParseError(1, "unexpected CSV header '" + line + "'");
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        std::vector<std::string> f;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        if (f.size() != 8) throw ParseError(line_no, "expected 8 fields");
        RoundRecord r;
        try {
            r.round = std::stoi(f[0]);
            r.train_loss = std::stod(f[1]);
            r.test_accuracy = std::stod(f[2]);
            r.global_grad_norm = std::stod(f[3]);
            r.bytes_up = std::stoll(f[4]);
            r.bytes_down = std::stoll(f[5]);
            r.enforcement_triggered = std::stoi(f[6]) != 0;
            r.wall_ms = std::stod(f[7]);
        } catch (...) {
            throw ParseError(line_no, "bad field value");
        }
        out.push_back(r);
    }
    return out;
}

inline std::vector<RoundRecord> load_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse_records_csv(in);
}

}  // namespace fedsso
