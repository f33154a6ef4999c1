// Copyright 2026 The qnc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qnc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "qnc/dynamics.hpp"
#include "qnc/error.hpp"
#include "qnc/parallel.hpp"

namespace qnc::dataset {

using nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'Q', 'N', 'C', 'D'};
constexpr uint16_t kVersion = 1;
constexpr size_t kPrefixBytes = 10;
constexpr size_t kTrailerBytes = 8;
constexpr size_t kRecordHeadBytes = 1 + 2 + 8 + 8;

size_t record_bytes(const TaskSpec &spec) { return kRecordHeadBytes + 4 * (spec.steps + 1) * spec.nodes; }

uint64_t topology_seed_of(uint64_t master, size_t q) { return mix_seed(master ^ stream_tag("topology"), q); }
uint64_t noise_seed_of(uint64_t master, size_t q) { return mix_seed(master ^ stream_tag("noise"), q); }

// Rethrows with the same error category and a location prefix.
[[noreturn]] void rethrow_with_context(const Error &e, const std::string &where) {
    const std::string msg = where + ": " + e.what();
    switch (e.kind()) {
        case ErrorKind::usage:
            throw ValidationError(msg);
        case ErrorKind::data:
            throw DataError(msg);
        case ErrorKind::numerical:
            throw NumericalError(msg);
    }
    throw Error(e.kind(), msg);
}

}  // namespace

std::string_view task_name(Task task) {
    switch (task) {
        case Task::iid:
            return "iid";
        case Task::nm:
            return "nm";
        case Task::vs:
            return "vs";
    }
    return "?";
}

Task parse_task(std::string_view name) {
    if (name == "iid") return Task::iid;
    if (name == "nm") return Task::nm;
    if (name == "vs") return Task::vs;
    throw ValidationError("unknown task '" + std::string(name) + "' (expected iid, nm or vs)");
}

void TaskSpec::validate() const {
    if (!(t_total > 0.0) || !std::isfinite(t_total)) throw ValidationError("t_total must be positive and finite");
    if (steps < 1) throw ValidationError("steps must be at least 1");
    if (nodes < 2 || nodes > std::numeric_limits<uint16_t>::max()) {
        throw ValidationError("nodes must lie in [2, 65535]");
    }
    if (!(edge_prob > 0.0 && edge_prob <= 1.0)) throw ValidationError("edge_prob must lie in (0, 1]");
    if (n_samples < 2 || n_samples % 2 != 0) {
        throw ValidationError("n_samples must be even and at least 2 (classes are balanced), got " +
                              std::to_string(n_samples));
    }
    using noise::NoiseKind;
    switch (task) {
        case Task::iid:
            if (class0.kind() != NoiseKind::iid || class1.kind() != NoiseKind::iid) {
                throw ValidationError("task iid needs two i.i.d. processes");
            }
            if (class0.dist().support() == class1.dist().support() &&
                class0.dist().probs() == class1.dist().probs()) {
                throw ValidationError("task iid needs two distinct laws");
            }
            break;
        case Task::nm:
            if (class0.kind() != NoiseKind::markov || class1.kind() != NoiseKind::markov) {
                throw ValidationError("task nm needs two Markov processes");
            }
            break;
        case Task::vs: {
            if (class0.kind() != NoiseKind::iid || class1.kind() != NoiseKind::markov) {
                throw ValidationError("task vs needs an i.i.d. class 0 and a Markov class 1");
            }
            if (class0.dist().support() != class1.dist().support()) {
                throw ValidationError("task vs classes must share the coupling support");
            }
            if (class1.stickiness()) {
                const auto pi = noise::stationary_distribution(*class1.transition());
                for (size_t j = 0; j < pi.size(); ++j) {
                    if (std::abs(pi[j] - class0.dist().probs()[j]) > 1e-8) {
                        throw ValidationError("task vs chain must have the class-0 law as stationary law");
                    }
                }
            } else if (class0.dist().probs() != class1.dist().probs()) {
                throw ValidationError("task vs chain must start from the class-0 law");
            }
            break;
        }
    }
}

TaskSpec make_task_spec(const PresetOptions &o) {
    TaskSpec spec;
    spec.task = o.task;
    spec.t_total = o.t_total;
    spec.steps = o.steps;
    spec.nodes = o.nodes;
    spec.edge_prob = o.edge_prob;
    spec.n_samples = o.n_samples;
    spec.master_seed = o.master_seed;
    spec.shots = o.shots;

    const auto skewed = noise::skewed_law();
    const auto flat = noise::flat_law();
    RandomStream trng(mix_seed(o.transition_seed, stream_tag("transition")));
    if (o.stickiness && o.task != Task::vs) throw ValidationError("stickiness applies to task vs only");
    switch (o.task) {
        case Task::iid:
            spec.class0 = noise::NoiseProcess(skewed);
            spec.class1 = noise::NoiseProcess(flat);
            break;
        case Task::nm: {
            auto t0 = noise::dirichlet_transition(skewed.size(), trng);
            auto t1 = noise::dirichlet_transition(flat.size(), trng);
            spec.class0 = noise::NoiseProcess(skewed, std::move(t0));
            spec.class1 = noise::NoiseProcess(flat, std::move(t1));
            break;
        }
        case Task::vs:
            spec.class0 = noise::NoiseProcess(skewed);
            if (o.stickiness) {
                spec.class1 = noise::NoiseProcess(skewed, noise::metropolis_chain(skewed, *o.stickiness), o.stickiness);
            } else {
                // Two Dirichlet draws are made for NM; VS takes a third so the
                // matrices differ across tasks under one transition seed.
                noise::dirichlet_transition(skewed.size(), trng);
                noise::dirichlet_transition(skewed.size(), trng);
                spec.class1 = noise::NoiseProcess(skewed, noise::dirichlet_transition(skewed.size(), trng));
            }
            break;
    }
    spec.validate();
    return spec;
}

Sample generate_sample(const TaskSpec &spec, size_t q) {
    Sample s;
    s.label = static_cast<uint8_t>(q % 2);
    s.topology_seed = topology_seed_of(spec.master_seed, q);
    s.noise_seed = noise_seed_of(spec.master_seed, q);

    RandomStream trng(s.topology_seed);
    const auto topology = dynamics::random_topology(spec.nodes, spec.edge_prob, trng);
    s.initial_node = static_cast<uint16_t>(trng.below(spec.nodes) + 1);

    RandomStream nrng(s.noise_seed);
    const auto couplings = noise::sample(spec.process(s.label), spec.steps, nrng);
    const auto seq = dynamics::evolve(topology, couplings, s.initial_node, spec.delta());

    const size_t d = spec.nodes;
    s.populations.resize((spec.steps + 1) * d);
    if (spec.shots == 0) {
        for (size_t k = 0; k <= spec.steps; ++k) {
            for (size_t j = 0; j < d; ++j) {
                double p = seq.populations(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
                if (p < 0.0 && p >= -1e-12) p = 0.0;
                s.populations[k * d + j] = static_cast<float>(p);
            }
        }
        return s;
    }

    // Finite statistics: each time instant is measured `shots` times on a
    // fresh run, so every row is an independent multinomial histogram.
    std::vector<double> cdf(d);
    std::vector<size_t> counts(d);
    for (size_t k = 0; k <= spec.steps; ++k) {
        double acc = 0.0;
        for (size_t j = 0; j < d; ++j) {
            acc += std::max(0.0, seq.populations(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
            cdf[j] = acc;
        }
        std::fill(counts.begin(), counts.end(), 0);
        for (size_t shot = 0; shot < spec.shots; ++shot) {
            const double u = nrng.uniform() * acc;
            size_t j = static_cast<size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            counts[std::min(j, d - 1)]++;
        }
        for (size_t j = 0; j < d; ++j) {
            s.populations[k * d + j] = static_cast<float>(static_cast<double>(counts[j]) / static_cast<double>(spec.shots));
        }
    }
    return s;
}

Dataset generate(const TaskSpec &spec, unsigned threads) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.samples.resize(spec.n_samples);
    parallel_for(spec.n_samples, threads, [&](size_t q) {
        try {
            ds.samples[q] = generate_sample(spec, q);
        } catch (const Error &e) {
            rethrow_with_context(e, "sample " + std::to_string(q));
        }
    });
    return ds;
}

std::string_view split_name(SplitPart part) {
    switch (part) {
        case SplitPart::train:
            return "train";
        case SplitPart::validation:
            return "validation";
        case SplitPart::test:
            return "test";
    }
    return "?";
}

SplitPart parse_split(std::string_view name) {
    if (name == "train") return SplitPart::train;
    if (name == "validation" || name == "val") return SplitPart::validation;
    if (name == "test") return SplitPart::test;
    throw ValidationError("unknown split '" + std::string(name) + "' (expected train, validation or test)");
}

std::array<std::vector<size_t>, 3> split_indices(const Dataset &ds, SplitFractions f) {
    for (double x : {f.train, f.validation, f.test}) {
        if (!(x > 0.0) || !std::isfinite(x)) throw ValidationError("split fractions must all be positive");
    }
    if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) {
        throw ValidationError("split fractions must sum to 1");
    }
    std::array<std::vector<size_t>, 2> by_label;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const uint8_t label = ds.samples[i].label;
        if (label > 1) throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(label));
        by_label[label].push_back(i);
    }
    if (by_label[0].size() != by_label[1].size()) throw DataError("dataset is not balanced");

    const size_t n = ds.samples.size();
    auto even_floor = [n](double frac) {
        auto m = static_cast<size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
        return m - m % 2;
    };
    const size_t n_val = even_floor(f.validation);
    const size_t n_test = even_floor(f.test);
    if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
        throw ValidationError("split of " + std::to_string(n) + " samples leaves an empty part");
    }

    RandomStream rng(mix_seed(ds.spec.master_seed, stream_tag("split")));
    std::array<std::vector<size_t>, 3> parts;
    for (auto &members : by_label) {
        for (size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
        const size_t v = n_val / 2;
        const size_t t = n_test / 2;
        parts[1].insert(parts[1].end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(v));
        parts[2].insert(parts[2].end(), members.begin() + static_cast<std::ptrdiff_t>(v),
                        members.begin() + static_cast<std::ptrdiff_t>(v + t));
        parts[0].insert(parts[0].end(), members.begin() + static_cast<std::ptrdiff_t>(v + t), members.end());
    }
    for (auto &p : parts) std::sort(p.begin(), p.end());
    return parts;
}

Dataset subset(const Dataset &ds, std::span<const size_t> indices) {
    Dataset out;
    out.spec = ds.spec;
    out.generator_version = ds.generator_version;
    out.samples.reserve(indices.size());
    for (size_t i : indices) {
        if (i >= ds.samples.size()) throw ValidationError("subset index out of range");
        out.samples.push_back(ds.samples[i]);
    }
    out.spec.n_samples = out.samples.size();
    return out;
}

std::array<Dataset, 3> split(const Dataset &ds, SplitFractions fractions) {
    const auto parts = split_indices(ds, fractions);
    return {subset(ds, parts[0]), subset(ds, parts[1]), subset(ds, parts[2])};
}

uint64_t crc64_xz(std::span<const unsigned char> bytes) {
    boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

namespace {

ordered_json process_json(const noise::NoiseProcess &p) {
    ordered_json j;
    j["support"] = p.dist().support();
    j["probs"] = p.dist().weights();
    if (p.transition()) {
        const auto &m = p.transition()->entries();
        ordered_json rows = ordered_json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            std::vector<double> row(static_cast<size_t>(m.cols()));
            for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<size_t>(c)] = m(r, c);
            rows.push_back(row);
        }
        j["transition"] = rows;
    } else {
        j["transition"] = nullptr;
    }
    j["stickiness"] = p.stickiness() ? ordered_json(*p.stickiness()) : ordered_json(nullptr);
    return j;
}

noise::NoiseProcess process_from_json(const ordered_json &j) {
    auto dist = noise::DiscreteDistribution::from_weights(j.at("support").get<std::vector<double>>(),
                                                           j.at("probs").get<std::vector<double>>());
    const auto &t = j.at("transition");
    if (t.is_null()) return noise::NoiseProcess(std::move(dist));
    const auto rows = t.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw ValidationError("transition matrix must be square");
        for (size_t c = 0; c < rows.size(); ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    std::optional<double> stickiness;
    if (j.contains("stickiness") && !j.at("stickiness").is_null()) stickiness = j.at("stickiness").get<double>();
    return noise::NoiseProcess(std::move(dist), noise::TransitionMatrix(std::move(m)), stickiness);
}

ordered_json header_object(const Dataset &ds) {
    const TaskSpec &s = ds.spec;
    ordered_json j;
    j["task"] = task_name(s.task);
    j["t_total"] = s.t_total;
    j["steps"] = s.steps;
    j["nodes"] = s.nodes;
    j["edge_prob"] = s.edge_prob;
    j["n_samples"] = s.n_samples;
    j["master_seed"] = s.master_seed;
    j["class0"] = process_json(s.class0);
    j["class1"] = process_json(s.class1);
    j["storage"] = "f32";
    if (s.shots > 0) j["shots"] = s.shots;
    j["generator_version"] = ds.generator_version;
    return j;
}

}  // namespace

std::string header_json(const Dataset &ds) { return header_object(ds).dump(); }

TaskSpec spec_from_header(std::string_view text, std::string *generator_version) {
    try {
        const auto j = ordered_json::parse(text);
        TaskSpec s;
        s.task = parse_task(j.at("task").get<std::string>());
        s.t_total = j.at("t_total").get<double>();
        s.steps = j.at("steps").get<size_t>();
        s.nodes = j.at("nodes").get<size_t>();
        s.edge_prob = j.at("edge_prob").get<double>();
        s.n_samples = j.at("n_samples").get<size_t>();
        s.master_seed = j.at("master_seed").get<uint64_t>();
        s.class0 = process_from_json(j.at("class0"));
        s.class1 = process_from_json(j.at("class1"));
        if (j.at("storage").get<std::string>() != "f32") throw ValidationError("unsupported storage type");
        s.shots = j.contains("shots") ? j.at("shots").get<size_t>() : 0;
        if (generator_version) *generator_version = j.at("generator_version").get<std::string>();
        s.validate();
        return s;
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(FormatFault::bad_header, std::string("malformed dataset header: ") + e.what());
    } catch (const ValidationError &e) {
        throw FormatError(FormatFault::bad_header, std::string("invalid dataset header: ") + e.what());
    } catch (const NumericalError &e) {
        throw FormatError(FormatFault::bad_header, std::string("invalid dataset header: ") + e.what());
    }
}

void write_qncd(const Dataset &ds, std::ostream &sink) {
    const TaskSpec &spec = ds.spec;
    if (ds.samples.size() != spec.n_samples) {
        throw ValidationError("dataset holds " + std::to_string(ds.samples.size()) + " samples but its spec says " +
                              std::to_string(spec.n_samples));
    }
    const std::string header = header_json(ds);
    const size_t width = (spec.steps + 1) * spec.nodes;

    detail::ByteWriter w;
    w.reserve(kPrefixBytes + header.size() + spec.n_samples * record_bytes(spec) + kTrailerBytes);
    w.put_bytes(std::string_view(kMagic, 4));
    w.put<uint16_t>(kVersion);
    w.put<uint32_t>(static_cast<uint32_t>(header.size()));
    w.put_bytes(header);
    for (const Sample &s : ds.samples) {
        if (s.populations.size() != width) throw ValidationError("sample populations have the wrong shape");
        w.put<uint8_t>(s.label);
        w.put<uint16_t>(s.initial_node);
        w.put<uint64_t>(s.topology_seed);
        w.put<uint64_t>(s.noise_seed);
        for (float p : s.populations) w.put<float>(p);
    }
    w.put<uint64_t>(crc64_xz(w.bytes()));
    sink.write(reinterpret_cast<const char *>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!sink) throw DataError("failed writing dataset stream");
}

Dataset read_qncd(std::istream &source) {
    const std::vector<unsigned char> buf = detail::slurp(source);
    const size_t n = buf.size();

    if (n < 4) {
        if (!std::equal(buf.begin(), buf.end(), kMagic)) throw FormatError(FormatFault::bad_magic, "not a QNCD stream");
        throw FormatError(FormatFault::truncated, "stream ends inside the magic");
    }
    if (!std::equal(buf.begin(), buf.begin() + 4, kMagic)) throw FormatError(FormatFault::bad_magic, "not a QNCD stream");
    if (n < kPrefixBytes) throw FormatError(FormatFault::truncated, "stream ends inside the prefix");

    detail::ByteReader r(buf, 4);
    const auto version = r.get<uint16_t>();
    if (version != kVersion) {
        throw FormatError(FormatFault::version_mismatch,
                          "QNCD version " + std::to_string(version) + " (supported: " + std::to_string(kVersion) + ")");
    }
    const auto header_len = static_cast<size_t>(r.get<uint32_t>());
    if (n < kPrefixBytes + header_len) throw FormatError(FormatFault::truncated, "stream ends inside the header");

    auto crc_ok = [&] {
        if (n < kPrefixBytes + header_len + kTrailerBytes) return false;
        detail::ByteReader tail(buf, n - kTrailerBytes);
        return tail.get<uint64_t>() == crc64_xz(std::span(buf).first(n - kTrailerBytes));
    };

    Dataset ds;
    const std::string_view header(reinterpret_cast<const char *>(buf.data()) + kPrefixBytes, header_len);
    try {
        ds.spec = spec_from_header(header, &ds.generator_version);
    } catch (const FormatError &) {
        // A damaged header is reported as such only when the bytes are intact.
        if (!crc_ok()) throw FormatError(FormatFault::checksum, "checksum mismatch");
        throw;
    }

    const TaskSpec &spec = ds.spec;
    const size_t expected = kPrefixBytes + header_len + spec.n_samples * record_bytes(spec) + kTrailerBytes;
    if (n < expected) {
        throw FormatError(FormatFault::truncated,
                          "stream has " + std::to_string(n) + " bytes, expected " + std::to_string(expected));
    }
    if (n > expected) {
        throw FormatError(FormatFault::trailing_data,
                          std::to_string(n - expected) + " unexpected bytes after the dataset");
    }
    if (!crc_ok()) throw FormatError(FormatFault::checksum, "checksum mismatch");

    r.skip(header_len);
    const size_t width = (spec.steps + 1) * spec.nodes;
    ds.samples.resize(spec.n_samples);
    std::array<size_t, 2> per_label{};
    for (size_t q = 0; q < spec.n_samples; ++q) {
        Sample &s = ds.samples[q];
        s.label = r.get<uint8_t>();
        s.initial_node = r.get<uint16_t>();
        s.topology_seed = r.get<uint64_t>();
        s.noise_seed = r.get<uint64_t>();
        if (s.label > 1) throw DataError("record " + std::to_string(q) + " has label " + std::to_string(s.label));
        if (s.initial_node < 1 || s.initial_node > spec.nodes) {
            throw DataError("record " + std::to_string(q) + " has initial node out of range");
        }
        ++per_label[s.label];
        s.populations.resize(width);
        for (float &p : s.populations) {
            p = r.get<float>();
            if (!std::isfinite(p)) throw DataError("record " + std::to_string(q) + " holds a non-finite population");
        }
    }
    if (per_label[0] != per_label[1]) throw DataError("dataset is not balanced");
    return ds;
}

void write_qncd_file(const Dataset &ds, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    write_qncd(ds, out);
    out.close();
    if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Dataset read_qncd_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
    try {
        return read_qncd(in);
    } catch (const FormatError &e) {
        throw FormatError(e.fault(), path.string() + ": " + e.what());
    }
}

std::string_view feature_mode_name(FeatureMode mode) { return mode == FeatureMode::final_step ? "final" : "full"; }

FeatureMode parse_feature_mode(std::string_view name) {
    if (name == "final") return FeatureMode::final_step;
    if (name == "full") return FeatureMode::full;
    throw ValidationError("unknown feature mode '" + std::string(name) + "' (expected final or full)");
}

FeatureSet feature_view(const Dataset &ds, FeatureMode mode) {
    const size_t d = ds.spec.nodes;
    const size_t rows = ds.spec.steps + 1;
    FeatureSet f;
    f.mode = mode;
    f.width = d;
    f.steps = mode == FeatureMode::full ? rows : 1;
    const size_t first = mode == FeatureMode::full ? 0 : (rows - 1) * d;
    const size_t cols = f.steps * d;
    f.x.resize(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(cols));
    f.labels.resize(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        const Sample &s = ds.samples[i];
        if (s.populations.size() != rows * d) throw DataError("sample populations have the wrong shape");
        for (size_t c = 0; c < cols; ++c) {
            f.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = s.populations[first + c];
        }
        f.labels[i] = s.label;
    }
    return f;
}

}  // namespace qnc::dataset
