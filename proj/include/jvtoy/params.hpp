// Copyright 2026 The jvtoy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "jvtoy/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace jvtoy {

enum class Init { Normal, Zeros, Ones };

// Named parameter tensors. Initial values depend only on (name, shape, seed).
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor add(const std::string &name, Shape shape, Init init = Init::Normal);
    Tensor get(const std::string &name) const;
    bool contains(const std::string &name) const { return params_.count(name) != 0; }

    const std::map<std::string, Tensor> &entries() const { return params_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t parameter_count() const;

    void zero_grad();
    // Independent deep copy; the copy's leaves keep their requires_grad flags.
    ParameterStore clone() const;
    void set_requires_grad(bool on);
    // Replaces a value buffer; used by checkpoint loading.
    void assign(const std::string &name, const Tensor &value);

private:
    std::uint64_t seed_;
    std::map<std::string, Tensor> params_;
};

// Truncated normal (std 0.02, cut at two standard deviations).
std::vector<double> init_values(const std::string &name, std::size_t count, std::uint64_t seed);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// "JVK1" manifest (name, shape, byte offset, count) plus a flat little-endian
// float32 blob: <base>.manifest and <base>.bin.
void save_tensors(const std::filesystem::path &base, const std::vector<NamedTensor> &tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path &base);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Applies one update from the current .grad buffers. Matrices get
    // decoupled weight decay; vectors (biases, norms) do not.
    void step(ParameterStore &params, double lr);
    std::int64_t steps_taken() const { return t_; }

    std::vector<NamedTensor> state() const;
    void load_state(const std::vector<NamedTensor> &state);

private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

void save_checkpoint(const std::filesystem::path &base, const ParameterStore &params, const AdamW *opt = nullptr);
void load_checkpoint(const std::filesystem::path &base, ParameterStore &params, AdamW *opt = nullptr);

double global_grad_norm(const ParameterStore &params);
void clip_grad_norm(ParameterStore &params, double max_norm);

struct GradCheckEntry {
    std::string name;
    std::size_t numel = 0;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    double tolerance = 0.0;
    std::vector<GradCheckEntry> entries;
    double worst_rel_err = 0.0;
    bool pass = false;
};

// Compares tape gradients with central differences, all in float64. The
// relative error of a parameter tensor is max|analytic - numeric| divided by
// the larger of the two gradient max-norms. Throws if two evaluations differ.
GradCheckReport grad_check(const std::function<Tensor(const ParameterStore &)> &model_fn, ParameterStore &params,
                           double tolerance, double step = 1e-3);

} // namespace jvtoy
