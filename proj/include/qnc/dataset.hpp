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

#ifndef QNC_DATASET_HPP
#define QNC_DATASET_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "qnc/noise.hpp"

namespace qnc::dataset {

inline constexpr std::string_view kGeneratorVersion = "qnc-1.0.0";

/// Seed of the transition-matrix draws used by the NM and VS presets when no
/// other seed is requested. Kept separate from the sample seed so the noise
/// classes of a task stay fixed across t_M variants and M sweeps.
inline constexpr uint64_t kDefaultTransitionSeed = 1;

enum class Task { iid, nm, vs };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

struct TaskSpec {
    Task task = Task::iid;
    double t_total = 1.0;
    size_t steps = 15;
    size_t nodes = 40;
    double edge_prob = 0.5;
    noise::NoiseProcess class0{noise::skewed_law()};
    noise::NoiseProcess class1{noise::flat_law()};
    size_t n_samples = 20000;
    uint64_t master_seed = 0;
    /// Measurement shots per time instant; 0 keeps exact populations.
    size_t shots = 0;

    const noise::NoiseProcess &process(int label) const { return label == 0 ? class0 : class1; }
    double delta() const { return t_total / static_cast<double>(steps); }

    /// Throws ValidationError on any violated invariant.
    void validate() const;

    bool operator==(const TaskSpec &) const = default;
};

/// Knobs of the named experiment presets.
struct PresetOptions {
    Task task = Task::iid;
    double t_total = 1.0;
    size_t steps = 15;
    size_t nodes = 40;
    double edge_prob = 0.5;
    size_t n_samples = 20000;
    uint64_t master_seed = 0;
    uint64_t transition_seed = kDefaultTransitionSeed;
    /// VS only: build the coloured class with metropolis_chain so both classes
    /// share the same marginal law.
    std::optional<double> stickiness;
    size_t shots = 0;
};

/// IID: skewed vs flat law, both i.i.d. NM: the same two laws as initial
/// distributions of Dirichlet-drawn chains. VS: the skewed law i.i.d. vs a
/// chain started from the skewed law.
TaskSpec make_task_spec(const PresetOptions &options);

struct Sample {
    uint8_t label = 0;
    uint16_t initial_node = 1;  // 1-based
    uint64_t topology_seed = 0;
    uint64_t noise_seed = 0;
    /// (M+1) x d populations, time-major, as stored (32-bit).
    std::vector<float> populations;

    std::span<const float> row(size_t k, size_t nodes) const {
        return std::span<const float>(populations).subspan(k * nodes, nodes);
    }

    bool operator==(const Sample &) const = default;
};

struct Dataset {
    TaskSpec spec;
    std::vector<Sample> samples;
    std::string generator_version{kGeneratorVersion};

    size_t size() const noexcept { return samples.size(); }
    bool operator==(const Dataset &) const = default;
};

/// Sample q of a spec, a pure function of (spec, q).
Sample generate_sample(const TaskSpec &spec, size_t q);

/// All samples, in index order. Parallel over samples with `threads`
/// workers (0 = default thread count); output does not depend on it.
Dataset generate(const TaskSpec &spec, unsigned threads = 0);

struct SplitFractions {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

enum class SplitPart { train = 0, validation = 1, test = 2 };

std::string_view split_name(SplitPart part);
SplitPart parse_split(std::string_view name);

/// Stratified split with a shuffle seeded from the master seed. Validation
/// and test sizes are floor(f n) rounded down to even; train takes the rest.
std::array<std::vector<size_t>, 3> split_indices(const Dataset &ds, SplitFractions fractions = {});
std::array<Dataset, 3> split(const Dataset &ds, SplitFractions fractions = {});

/// Subset in the order given by `indices`.
Dataset subset(const Dataset &ds, std::span<const size_t> indices);

/// Bit-exact QNCD encoding (little-endian; JSON header; CRC-64/XZ trailer).
void write_qncd(const Dataset &ds, std::ostream &sink);
Dataset read_qncd(std::istream &source);
void write_qncd_file(const Dataset &ds, const std::filesystem::path &path);
Dataset read_qncd_file(const std::filesystem::path &path);

/// The JSON header text a dataset serializes with.
std::string header_json(const Dataset &ds);

/// Rebuild a spec from a QNCD header.
TaskSpec spec_from_header(std::string_view json, std::string *generator_version = nullptr);

/// CRC-64/XZ.
uint64_t crc64_xz(std::span<const unsigned char> bytes);

enum class FeatureMode { final_step, full };

std::string_view feature_mode_name(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view name);

/// Dense model inputs. For `full`, row i is the flattened (M+1) x d sequence
/// (time-major); recurrent models read it as `steps` vectors of `width`.
struct FeatureSet {
    Eigen::MatrixXd x;  // n x (steps * width)
    std::vector<int> labels;
    size_t steps = 1;
    size_t width = 0;
    FeatureMode mode = FeatureMode::final_step;

    size_t size() const noexcept { return labels.size(); }
};

FeatureSet feature_view(const Dataset &ds, FeatureMode mode);

}  // namespace qnc::dataset

#endif
