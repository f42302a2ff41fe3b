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

#include "jvtoy/params.hpp"

#include "jvtoy/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace jvtoy {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr const char *kFormatTag = "JVK1";

void round_state(std::vector<double> &v) {
    if (float64_mode()) {
        return;
    }
    for (double &x : v) {
        x = static_cast<double>(static_cast<float>(x));
    }
}

} // namespace

std::vector<double> init_values(const std::string &name, std::size_t count, std::uint64_t seed) {
    Rng rng(mix_seed(seed, fnv1a(name)));
    std::vector<double> out(count);
    for (double &v : out) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = 0.02 * z;
    }
    return out;
}

Tensor ParameterStore::add(const std::string &name, Shape shape, Init init) {
    if (contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    const auto n = shape_numel(shape);
    std::vector<double> values;
    switch (init) {
    case Init::Normal:
        values = init_values(name, n, seed_);
        break;
    case Init::Zeros:
        values.assign(n, 0.0);
        break;
    case Init::Ones:
        values.assign(n, 1.0);
        break;
    }
    auto t = Tensor::from(std::move(shape), std::move(values), true);
    params_.emplace(name, t);
    return t;
}

Tensor ParameterStore::get(const std::string &name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return it->second;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto &[_, t] : params_) {
        n += t.numel();
    }
    return n;
}

void ParameterStore::zero_grad() {
    for (auto &[_, t] : params_) {
        const_cast<Tensor &>(t).zero_grad();
    }
}

ParameterStore ParameterStore::clone() const {
    ParameterStore out(seed_);
    for (const auto &[name, t] : params_) {
        out.params_.emplace(name, t.clone());
    }
    return out;
}

void ParameterStore::set_requires_grad(bool on) {
    for (auto &[_, t] : params_) {
        t.set_requires_grad(on);
    }
}

void ParameterStore::assign(const std::string &name, const Tensor &value) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    if (it->second.shape() != value.shape()) {
        throw ShapeError("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", checkpoint has " +
                         shape_str(value.shape()));
    }
    auto dst = it->second.mutable_data();
    std::copy(value.data().begin(), value.data().end(), dst.begin());
}

void save_tensors(const std::filesystem::path &base, const std::vector<NamedTensor> &tensors) {
    if (base.has_parent_path()) {
        std::filesystem::create_directories(base.parent_path());
    }
    std::ofstream manifest(base.string() + ".manifest");
    std::ofstream blob(base.string() + ".bin", std::ios::binary);
    if (!manifest || !blob) {
        throw std::runtime_error("cannot write checkpoint at " + base.string());
    }
    manifest << kFormatTag << '\n';
    std::uint64_t offset = 0;
    for (const auto &[name, t] : tensors) {
        if (name.find_first_of("\t\n") != std::string::npos) {
            throw std::invalid_argument("tensor name contains a tab or newline: " + name);
        }
        std::string dims;
        for (std::size_t i = 0; i < t.shape().size(); ++i) {
            dims += (i ? "," : "") + std::to_string(t.shape()[i]);
        }
        manifest << name << '\t' << (dims.empty() ? "-" : dims) << '\t' << offset << '\t' << t.numel() << '\n';
        for (double v : t.data()) {
            const float f = static_cast<float>(v);
            blob.write(reinterpret_cast<const char *>(&f), sizeof(float));
        }
        offset += t.numel() * sizeof(float);
    }
    if (!manifest || !blob) {
        throw std::runtime_error("short write on checkpoint " + base.string());
    }
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path &base) {
    std::ifstream manifest(base.string() + ".manifest");
    std::ifstream blob(base.string() + ".bin", std::ios::binary);
    if (!manifest || !blob) {
        throw std::runtime_error("cannot open checkpoint at " + base.string());
    }
    std::string line;
    if (!std::getline(manifest, line) || line != kFormatTag) {
        throw std::runtime_error("checkpoint " + base.string() + " is missing the " + kFormatTag + " format tag");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    std::vector<NamedTensor> out;
    while (std::getline(manifest, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::string name, dims;
        std::uint64_t offset = 0, count = 0;
        if (!std::getline(fields, name, '\t') || !std::getline(fields, dims, '\t') || !(fields >> offset >> count)) {
            throw std::runtime_error("malformed manifest line: " + line);
        }
        Shape shape;
        if (dims != "-") {
            std::istringstream ds(dims);
            std::string d;
            while (std::getline(ds, d, ',')) {
                shape.push_back(std::stoull(d));
            }
        }
        if (shape_numel(shape) != count || offset + count * sizeof(float) > bytes.size()) {
            throw std::runtime_error("manifest entry " + name + " is inconsistent with the blob");
        }
        std::vector<double> values(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            float f;
            std::memcpy(&f, bytes.data() + offset + i * sizeof(float), sizeof(float));
            values[i] = f;
        }
        out.push_back({name, Tensor::from(std::move(shape), std::move(values))});
    }
    return out;
}

void AdamW::step(ParameterStore &params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto &[name, t] : params.entries()) {
        if (!t.requires_grad() || !t.has_grad()) {
            continue;
        }
        Tensor p = t;
        auto g = p.grad();
        auto &m = m_[name];
        auto &v = v_[name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        const double decay = p.dim() >= 2 ? cfg_.weight_decay : 0.0;
        std::vector<double> values(p.data().begin(), p.data().end());
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        }
        round_state(m);
        round_state(v);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * values[i]);
        }
        round_state(values);
        std::copy(values.begin(), values.end(), p.mutable_data().begin());
    }
}

std::vector<NamedTensor> AdamW::state() const {
    std::vector<NamedTensor> out;
    out.push_back({"adamw.t", Tensor::scalar(static_cast<double>(t_))});
    for (const auto &[name, m] : m_) {
        out.push_back({"adamw.m/" + name, Tensor::from({m.size()}, m)});
        out.push_back({"adamw.v/" + name, Tensor::from({m.size()}, v_.at(name))});
    }
    return out;
}

void AdamW::load_state(const std::vector<NamedTensor> &state) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const auto &[name, t] : state) {
        std::vector<double> values(t.data().begin(), t.data().end());
        if (name == "adamw.t") {
            t_ = static_cast<std::int64_t>(t.item());
        } else if (name.rfind("adamw.m/", 0) == 0) {
            m_[name.substr(8)] = std::move(values);
        } else if (name.rfind("adamw.v/", 0) == 0) {
            v_[name.substr(8)] = std::move(values);
        }
    }
}

void save_checkpoint(const std::filesystem::path &base, const ParameterStore &params, const AdamW *opt) {
    std::vector<NamedTensor> all;
    for (const auto &[name, t] : params.entries()) {
        all.push_back({name, t});
    }
    if (opt) {
        for (auto &e : opt->state()) {
            all.push_back(std::move(e));
        }
    }
    save_tensors(base, all);
}

void load_checkpoint(const std::filesystem::path &base, ParameterStore &params, AdamW *opt) {
    auto all = load_tensors(base);
    std::vector<NamedTensor> opt_state;
    std::size_t loaded = 0;
    for (const auto &e : all) {
        if (e.name.rfind("adamw.", 0) == 0) {
            opt_state.push_back(e);
        } else {
            params.assign(e.name, e.tensor);
            ++loaded;
        }
    }
    if (loaded != params.entries().size()) {
        throw std::runtime_error("checkpoint " + base.string() + " holds " + std::to_string(loaded) +
                                 " parameters, model expects " + std::to_string(params.entries().size()));
    }
    if (opt) {
        opt->load_state(opt_state);
    }
}

double global_grad_norm(const ParameterStore &params) {
    double acc = 0.0;
    for (const auto &[_, t] : params.entries()) {
        for (double g : t.grad()) {
            acc += g * g;
        }
    }
    return std::sqrt(acc);
}

void clip_grad_norm(ParameterStore &params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm <= max_norm || norm == 0.0) {
        return;
    }
    const double s = max_norm / norm;
    for (const auto &[_, t] : params.entries()) {
        if (!t.has_grad()) {
            continue;
        }
        auto &g = t.node()->grad;
        for (double &x : g) {
            x *= s;
        }
    }
}

GradCheckReport grad_check(const std::function<Tensor(const ParameterStore &)> &model_fn, ParameterStore &params,
                           double tolerance, double step) {
    Float64Scope f64;
    GradCheckReport report;
    report.tolerance = tolerance;

    // Values are float32-representable; float64 evaluation only removes rounding.
    const double first = model_fn(params).item();
    const double second = model_fn(params).item();
    if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second)) {
        throw std::runtime_error("grad_check: model_fn is not deterministic");
    }

    params.zero_grad();
    backward(model_fn(params));

    report.pass = true;
    for (const auto &[name, t] : params.entries()) {
        if (!t.requires_grad()) {
            continue;
        }
        Tensor p = t;
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.mutable_data();
        GradCheckEntry entry;
        entry.name = name;
        entry.numel = values.size();
        double max_a = 0.0, max_n = 0.0;
        {
            NoGradScope no_grad;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double orig = values[i];
                values[i] = orig + step;
                const double up = model_fn(params).item();
                values[i] = orig - step;
                const double down = model_fn(params).item();
                values[i] = orig;
                const double numeric = (up - down) / (2.0 * step);
                entry.max_abs_err = std::max(entry.max_abs_err, std::abs(analytic[i] - numeric));
                max_a = std::max(max_a, std::abs(analytic[i]));
                max_n = std::max(max_n, std::abs(numeric));
            }
        }
        const double denom = std::max({max_a, max_n, 1e-12});
        entry.max_rel_err = entry.max_abs_err / denom;
        entry.pass = entry.max_rel_err < tolerance;
        report.pass = report.pass && entry.pass;
        report.worst_rel_err = std::max(report.worst_rel_err, entry.max_rel_err);
        report.entries.push_back(entry);
    }
    params.zero_grad();
    return report;
}

} // namespace jvtoy
