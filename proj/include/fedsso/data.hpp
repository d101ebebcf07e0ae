#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedsso/errors.hpp"
#include "fedsso/model.hpp"
#include "fedsso/rng.hpp"

namespace fedsso {

struct FederatedDataset {
    std::vector<ClientShard> train_shards;  // ascending client_id
    std::vector<Sample> test_set;
    int num_features = 0;
    int num_classes = 0;
};

namespace detail {

inline bool parse_int_strict(const std::string& tok, long long& out) {
    if (tok.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stoll(tok, &pos);
    } catch (...) {
        return false;
    }
    return pos == tok.size();
}

inline bool parse_double_strict(const std::string& tok, double& out) {
    if (tok.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stod(tok, &pos);
    } catch (...) {
        return false;
    }
    return pos == tok.size();
}

}  // namespace detail

// Standard sparse "label idx:val" text format, 1-based indices. Unlisted
// features are zero. Binary labels {-1,+1} are remapped to {0,1}.
inline std::vector<Sample> parse_libsvm(std::istream& in, int num_features) {
    if (num_features < 1) throw InvalidParam("parse_libsvm: num_features must be >= 1");
    std::vector<Sample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;      // blank line
        if (tok[0] == '#') continue;     // comment
        double label_raw;
        if (!detail::parse_double_strict(tok, label_raw) ||
            label_raw != std::floor(label_raw))
            throw LabelError("line " + std::to_string(line_no) + ": label '" + tok +
                             "' is not integral");
        long long label = static_cast<long long>(label_raw);
        if (label == -1) label = 0;  // {-1,+1} -> {0,1}
        if (label < 0)
            throw LabelError("line " + std::to_string(line_no) + ": negative label " +
                             std::to_string(label));
        Sample s;
        s.label = static_cast<int>(label);
        s.features.assign(num_features, 0.0);
        while (ls >> tok) {
            if (tok[0] == '#') break;
            auto colon = tok.find(':');
            long long idx;
            double val;
            if (colon == std::string::npos ||
                !detail::parse_int_strict(tok.substr(0, colon), idx) ||
                !detail::parse_double_strict(tok.substr(colon + 1), val))
                throw ParseError(line_no, "bad feature token '" + tok + "'");
            if (idx < 1 || idx > num_features)
                throw IndexOutOfRange("line " + std::to_string(line_no) + ": index " +
                                      std::to_string(idx) + " outside [1, " +
                                      std::to_string(num_features) + "]");
            s.features[idx - 1] = val;
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Writer counterpart of parse_libsvm (zero features are omitted).
inline void emit_libsvm(std::span<const Sample> samples, std::ostream& out) {
    out.precision(17);
    for (const Sample& s : samples) {
        out << s.label;
        for (std::size_t f = 0; f < s.features.size(); ++f) {
            if (s.features[f] != 0.0) out << ' ' << (f + 1) << ':' << s.features[f];
        }
        out << '\n';
    }
}

// Dense "label,f1,f2,..." rows; a non-numeric first field marks a header.
inline std::vector<Sample> parse_csv(std::istream& in) {
    std::vector<Sample> out;
    std::string line;
    int line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur.push_back(c);
            }
        }
        fields.push_back(cur);
        double label_raw;
        if (!detail::parse_double_strict(fields[0], label_raw)) {
            if (out.empty() && width == 0) continue;  // header row
            throw ParseError(line_no, "bad label '" + fields[0] + "'");
        }
        if (label_raw != std::floor(label_raw) || label_raw < 0)
            throw LabelError("line " + std::to_string(line_no) + ": label must be a " +
                             "non-negative integer");
        Sample s;
        s.label = static_cast<int>(label_raw);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            double v;
            if (!detail::parse_double_strict(fields[i], v))
                throw ParseError(line_no, "bad feature '" + fields[i] + "'");
            s.features.push_back(v);
        }
        if (width == 0) width = s.features.size();
        if (s.features.size() != width)
            throw ParseError(line_no, "row has " + std::to_string(s.features.size()) +
                                          " features, expected " + std::to_string(width));
        out.push_back(std::move(s));
    }
    return out;
}

// Gaussian blobs, one unit-norm random center per class, isotropic noise with
// stddev = spread. Class counts are balanced within +-1 (lower labels first).
inline std::vector<Sample> synth_blobs(std::uint64_t seed, int num_classes, int num_features,
                                       int n_total, double spread) {
    if (num_classes < 1 || num_features < 1) throw InvalidParam("synth_blobs: bad shape");
    if (n_total < num_classes) throw InvalidParam("synth_blobs: n_total < num_classes");
    if (!(spread > 0.0)) throw InvalidParam("synth_blobs: spread must be > 0");
    Rng rng = Rng::derive(seed, {0xb10b5u});
    std::vector<std::vector<double>> centers(num_classes);
    for (auto& c : centers) {
        c.resize(num_features);
        double n2 = 0.0;
        do {
            for (double& v : c) v = rng.normal();
            n2 = 0.0;
            for (double v : c) n2 += v * v;
        } while (n2 == 0.0);
        const double inv = 1.0 / std::sqrt(n2);
        for (double& v : c) v *= inv;
    }
    std::vector<Sample> out;
    out.reserve(n_total);
    const int base = n_total / num_classes;
    const int extra = n_total % num_classes;
    for (int c = 0; c < num_classes; ++c) {
        const int count = base + (c < extra ? 1 : 0);
        for (int i = 0; i < count; ++i) {
            Sample s;
            s.label = c;
            s.features.resize(num_features);
            for (int f = 0; f < num_features; ++f)
                s.features[f] = centers[c][f] + spread * rng.normal();
            out.push_back(std::move(s));
        }
    }
    return out;
}

// client -> (label -> count); overrides the random skew so published
// distributions can be replayed exactly.
struct PartitionManifest {
    // kept sorted by client id, then label
    std::map<int, std::map<int, int>> counts;
};

// One line per client: "client <id>: <label>:<count> <label>:<count> ...".
// '#' starts a comment, blank lines are skipped.
inline PartitionManifest parse_manifest(std::istream& in) {
    PartitionManifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        if (word[0] == '#') continue;
        if (word != "client") throw ParseError(line_no, "expected 'client', got '" + word + "'");
        std::string id_tok;
        if (!(ls >> id_tok)) throw ParseError(line_no, "missing client id");
        if (!id_tok.empty() && id_tok.back() == ':') id_tok.pop_back();
        long long cid;
        if (!detail::parse_int_strict(id_tok, cid))
            throw ParseError(line_no, "bad client id '" + id_tok + "'");
        std::string tok;
        while (ls >> tok) {
            if (tok == ":") continue;
            if (tok[0] == '#') break;
            auto colon = tok.find(':');
            long long label, count;
            if (colon == std::string::npos ||
                !detail::parse_int_strict(tok.substr(0, colon), label) ||
                !detail::parse_int_strict(tok.substr(colon + 1), count))
                throw ParseError(line_no, "bad label:count token '" + tok + "'");
            if (label < 0 || count < 1) throw ParseError(line_no, "label/count out of range");
            m.counts[static_cast<int>(cid)][static_cast<int>(label)] +=
                static_cast<int>(count);
        }
    }
    if (m.counts.empty()) throw ParseError(line_no == 0 ? 1 : line_no, "empty manifest");
    return m;
}

namespace detail {

inline void finalize_weights(std::vector<ClientShard>& shards) {
    std::size_t total = 0;
    for (const auto& s : shards) total += s.samples.size();
    for (auto& s : shards) {
        if (s.samples.empty())
            throw InfeasiblePartition("client " + std::to_string(s.client_id) +
                                      " received no samples");
        s.weight = static_cast<double>(s.samples.size()) / static_cast<double>(total);
    }
}

}  // namespace detail

// Deals each client's per-label counts from the label pools in input order.
// Samples not claimed by the manifest are dropped.
inline std::vector<ClientShard> partition_by_manifest(std::span<const Sample> samples,
                                                      const PartitionManifest& manifest) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < samples.size(); ++i) by_label[samples[i].label].push_back(i);
    std::map<int, std::size_t> cursor;
    std::vector<ClientShard> shards;
    for (const auto& [cid, labels] : manifest.counts) {
        ClientShard shard;
        shard.client_id = cid;
        for (const auto& [label, count] : labels) {
            auto it = by_label.find(label);
            const std::size_t have = it == by_label.end() ? 0 : it->second.size();
            std::size_t& pos = cursor[label];
            if (pos + static_cast<std::size_t>(count) > have)
                throw InfeasiblePartition("manifest wants " + std::to_string(count) +
                                          " more samples of label " + std::to_string(label) +
                                          ", only " + std::to_string(have - pos) + " left");
            for (int k = 0; k < count; ++k) shard.samples.push_back(samples[it->second[pos++]]);
        }
        shards.push_back(std::move(shard));
    }
    detail::finalize_weights(shards);
    return shards;
}

// Label-skew partition: each client sees at most labels_per_client distinct
// labels; shard sizes are deliberately uneven. Every sample lands in exactly
// one shard and weights are proportional to shard sizes.
inline std::vector<ClientShard> partition_label_skew(std::span<const Sample> samples,
                                                     int num_clients, int labels_per_client,
                                                     std::uint64_t seed) {
    if (num_clients < 1 || labels_per_client < 1)
        throw InvalidParam("partition_label_skew: bad arguments");
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < samples.size(); ++i) by_label[samples[i].label].push_back(i);
    const int num_labels = static_cast<int>(by_label.size());
    if (num_labels == 0) throw InvalidParam("partition_label_skew: no samples");
    if (static_cast<long long>(num_clients) * labels_per_client < num_labels)
        throw InfeasiblePartition("N*labels_per_client < number of distinct labels");

    Rng rng = Rng::derive(seed, {0x5ca77e4u});
    std::vector<int> labels;
    for (const auto& [label, _] : by_label) labels.push_back(label);

    // Slots: each client appears labels_per_client times. The first pass
    // guarantees every label at least one owner; the rest is random.
    std::vector<int> slots;
    for (int c = 0; c < num_clients; ++c)
        for (int k = 0; k < labels_per_client; ++k) slots.push_back(c);
    rng.shuffle(slots);
    std::vector<int> label_order(labels);
    rng.shuffle(label_order);
    std::map<int, std::vector<int>> owners;  // label -> client list (deduped)
    std::size_t slot = 0;
    for (int label : label_order) owners[label].push_back(slots[slot++]);
    for (; slot < slots.size(); ++slot) {
        const int label = label_order[rng.bounded(label_order.size())];
        auto& os = owners[label];
        if (std::find(os.begin(), os.end(), slots[slot]) == os.end())
            os.push_back(slots[slot]);
    }

    std::vector<ClientShard> shards(num_clients);
    for (int c = 0; c < num_clients; ++c) shards[c].client_id = c;

    for (int label : labels) {
        auto& pool = by_label[label];
        rng.shuffle(pool);
        auto& os = owners[label];
        std::sort(os.begin(), os.end());
        const std::size_t m = os.size();
        // Uneven proportional split, each owner guaranteed at least one
        // sample when the pool allows it.
        std::vector<double> w(m);
        double wsum = 0.0;
        for (auto& x : w) {
            x = 1.0 + static_cast<double>(rng.bounded(3));
            wsum += x;
        }
        std::vector<std::size_t> take(m, 0);
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < m; ++i) {
            take[i] = std::min(pool.size() - assigned,
                               static_cast<std::size_t>(std::floor(
                                   w[i] / wsum * static_cast<double>(pool.size()))));
            if (take[i] == 0 && assigned < pool.size()) take[i] = 1;
            assigned += take[i];
        }
        for (std::size_t i = 0; assigned < pool.size(); i = (i + 1) % m) {
            ++take[i];
            ++assigned;
        }
        std::size_t pos = 0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < take[i]; ++k)
                shards[os[i]].samples.push_back(samples[pool[pos++]]);
    }
    detail::finalize_weights(shards);
    return shards;
}

// Deterministic shuffle-split; |train| = round(ratio * n).
inline std::pair<std::vector<Sample>, std::vector<Sample>> train_test_split(
    std::span<const Sample> samples, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidParam("train_test_split: ratio in (0,1)");
    if (samples.size() < 2) throw TooFewSamples("train_test_split: need at least 2 samples");
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = Rng::derive(seed, {0x59117u});
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(samples.size())));
    std::pair<std::vector<Sample>, std::vector<Sample>> out;
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? out.first : out.second).push_back(samples[idx[i]]);
    return out;
}

inline int count_classes(std::span<const Sample> samples) {
    int c = 0;
    for (const Sample& s : samples) c = std::max(c, s.label + 1);
    return c;
}

}  // namespace fedsso
