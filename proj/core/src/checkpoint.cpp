/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "byte_stream.hpp"

namespace tgan {

namespace {

constexpr char kMagic[8] = {'T', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};

void write_tensor(detail::ByteWriter& w, const Tensor& t) {
    const Shape s = t.shape();
    for (int v : {s.n, s.c, s.h, s.w}) {
        w.pod<std::int32_t>(v);
    }
    w.raw(t.ptr(), t.size() * sizeof(double));
}

Tensor read_tensor(detail::ByteReader& r) {
    Shape s;
    s.n = r.pod<std::int32_t>();
    s.c = r.pod<std::int32_t>();
    s.h = r.pod<std::int32_t>();
    s.w = r.pod<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
        throw CheckpointError("checkpoint tensor has a negative extent");
    }
    const std::size_t bytes = s.size() * sizeof(double);
    if (bytes / sizeof(double) != s.size() || bytes > r.remaining()) {
        throw CheckpointError("checkpoint is truncated");
    }
    std::vector<double> data(s.size());
    r.raw(data.data(), bytes);
    return Tensor(s, std::move(data));
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::encode() const {
    detail::ByteWriter w;
    w.raw(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(version);
    w.str(config_json);
    w.pod<std::int64_t>(iteration);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(groups.size()));
    for (const auto& g : groups) {
        w.str(g.name);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(g.tensors.size()));
        for (const auto& [name, t] : g.tensors) {
            w.str(name);
            write_tensor(w, t);
        }
    }
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(optimizers.size()));
    for (const auto& o : optimizers) {
        w.str(o.name);
        w.pod<std::int64_t>(o.steps);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(o.slots.size()));
        for (const auto& s : o.slots) {
            write_tensor(w, s.m);
            write_tensor(w, s.v);
        }
    }
    w.str(feature_descriptor);
    w.pod<std::uint64_t>(feature_digest);
    return w.take();
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    if (!r.matches(kMagic, sizeof kMagic)) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    r.skip(sizeof kMagic);
    Checkpoint c;
    try {
        c.version = r.pod<std::uint32_t>();
        if (c.version != kCheckpointVersion) {
            throw CheckpointError("checkpoint version " + std::to_string(c.version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
        }
        c.config_json = r.str();
        c.iteration = r.pod<std::int64_t>();
        const auto n_groups = r.pod<std::uint32_t>();
        for (std::uint32_t g = 0; g < n_groups; ++g) {
            TensorGroup group;
            group.name = r.str();
            const auto n = r.pod<std::uint32_t>();
            for (std::uint32_t i = 0; i < n; ++i) {
                std::string name = r.str();
                group.tensors.emplace_back(std::move(name), read_tensor(r));
            }
            c.groups.push_back(std::move(group));
        }
        const auto n_opt = r.pod<std::uint32_t>();
        for (std::uint32_t k = 0; k < n_opt; ++k) {
            OptimizerState o;
            o.name = r.str();
            o.steps = r.pod<std::int64_t>();
            const auto n = r.pod<std::uint32_t>();
            for (std::uint32_t i = 0; i < n; ++i) {
                nn::Adam::Slot s;
                s.m = read_tensor(r);
                s.v = read_tensor(r);
                o.slots.push_back(std::move(s));
            }
            c.optimizers.push_back(std::move(o));
        }
        c.feature_descriptor = r.str();
        c.feature_digest = r.pod<std::uint64_t>();
    } catch (const detail::TruncatedInput& e) {
        throw CheckpointError(e.what());
    }
    if (!r.done()) {
        throw CheckpointError("checkpoint has trailing bytes");
    }
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto bytes = encode();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            throw CheckpointError("cannot write checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

const TensorGroup& Checkpoint::group(std::string_view name) const {
    for (const auto& g : groups) {
        if (g.name == name) {
            return g;
        }
    }
    throw CheckpointError("checkpoint has no parameter group '" + std::string(name) + "'");
}

const OptimizerState* Checkpoint::optimizer(std::string_view name) const {
    for (const auto& o : optimizers) {
        if (o.name == name) {
            return &o;
        }
    }
    return nullptr;
}

TensorGroup export_params(std::string name, const nn::ParamList& params) {
    TensorGroup g{std::move(name), {}};
    g.tensors.reserve(params.size());
    for (const auto& p : params) {
        g.tensors.emplace_back(p.name, p.var.value());
    }
    return g;
}

void import_params(const TensorGroup& group, const nn::ParamList& params) {
    if (group.tensors.size() != params.size()) {
        throw CheckpointError("group '" + group.name + "' holds " + std::to_string(group.tensors.size()) +
                              " tensors, the model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = group.tensors[i];
        if (name != params[i].name || t.shape() != params[i].var.shape()) {
            throw CheckpointError("group '" + group.name + "': " + name + " " + t.shape().str() +
                                  " does not match model parameter " + params[i].name + " " +
                                  params[i].var.shape().str());
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        ag::Var v = params[i].var;
        v.mutable_value() = group.tensors[i].second;
    }
}

OptimizerState export_optimizer(std::string name, const nn::Adam& opt) {
    return {std::move(name), opt.steps(), opt.slots()};
}

void import_optimizer(const OptimizerState& state, nn::Adam& opt) {
    try {
        opt.restore(state.steps, state.slots);
    } catch (const ShapeError& e) {
        throw CheckpointError("optimizer '" + state.name + "': " + e.what());
    }
}

}  // namespace tgan
