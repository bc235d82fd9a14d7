/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/nets.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "tgan/errors.hpp"

namespace tgan::nets {

namespace {

constexpr double kLeak = 0.2;

ag::Var block_forward(const nn::Conv2d& conv, const nn::InstanceNorm& norm, const ag::Var& x) {
    return ag::relu(norm(conv(x)));
}

/// Color channels as (a * valid, b * valid, valid): the out-of-range sentinel
/// becomes an explicit indicator instead of a huge input value.
constexpr int kDecodedChannels = GeneratorConfig::input_channels + 1;

ag::Var decode_color_hints(const ag::Var& input) {
    const Shape s = input.shape();
    Tensor valid(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        const double* a = input.value().plane(n, 3);
        const double* b = input.value().plane(n, 4);
        double* v = valid.plane(n, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) {
            v[i] = (a[i] < -1.5 || b[i] < -1.5) ? 0.0 : 1.0;
        }
    }
    return ag::concat_channels({ag::slice_channels(input, 0, 3),
                                ag::mul_plane_mask(ag::slice_channels(input, 3, 2), valid),
                                ag::Var::constant(valid)});
}

void freeze(const nn::Conv2d& conv) {
    ag::Var w = conv.weight();
    w.set_requires_grad(false);
    if (conv.bias().defined()) {
        ag::Var b = conv.bias();
        b.set_requires_grad(false);
    }
}

void require_input(const ag::Var& x, int channels, const char* what) {
    if (x.shape().c != channels) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                         x.shape().str());
    }
}

}  // namespace

// ---- generator -----------------------------------------------------------

void GeneratorConfig::validate() const {
    if (base_width <= 0 || n_down <= 0 || n_res < 0) {
        throw ConfigError("generator: base_width and n_down must be positive, n_res non-negative");
    }
    if (n_down != n_up) {
        throw ConfigError("generator: n_down (" + std::to_string(n_down) + ") must equal n_up (" +
                          std::to_string(n_up) + ")");
    }
    if (resolution < 0 || resolution % (1 << n_down) != 0) {
        throw ConfigError("generator: resolution " + std::to_string(resolution) + " is not a multiple of " +
                          std::to_string(1 << n_down));
    }
}

Generator::Generator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int w = cfg_.base_width;
    head_ = {nn::Conv2d(kDecodedChannels, w, 7, {1, 3}, rng, false), nn::InstanceNorm(w)};
    for (int i = 0; i < cfg_.n_down; ++i) {
        const int in = w << i;
        down_.push_back({nn::Conv2d(in, in * 2, 3, {2, 1}, rng, false), nn::InstanceNorm(in * 2)});
    }
    const int core = w << cfg_.n_down;
    for (int r = 0; r < cfg_.n_res; ++r) {
        res_.push_back({{nn::Conv2d(core, core, 3, {1, 1}, rng, false), nn::InstanceNorm(core)},
                        {nn::Conv2d(core, core, 3, {1, 1}, rng, false), nn::InstanceNorm(core)}});
    }
    for (int i = 0; i < cfg_.n_up; ++i) {
        const int in = w << (cfg_.n_down - i);
        const int out = in / 2;
        const int skip = cfg_.skip_connections ? out : 0;
        up_.push_back({nn::Conv2d(in + skip, out, 3, {1, 1}, rng, false), nn::InstanceNorm(out)});
    }
    tail_ = nn::Conv2d(w, GeneratorConfig::output_channels, 7, {1, 3}, rng, true);
}

ag::Var Generator::forward(const ag::Var& input) const {
    const Shape s = input.shape();
    require_input(input, GeneratorConfig::input_channels, "generator");
    const int step = 1 << cfg_.n_down;
    if (cfg_.resolution != 0 && (s.h != cfg_.resolution || s.w != cfg_.resolution)) {
        throw ShapeError("generator: configured for " + std::to_string(cfg_.resolution) + "px input, got " +
                         s.str());
    }
    if (s.h % step != 0 || s.w % step != 0) {
        throw ShapeError("generator: input extent " + s.str() + " is not a multiple of " + std::to_string(step));
    }

    std::vector<ag::Var> skips;
    ag::Var h = block_forward(head_.conv, head_.norm, decode_color_hints(input));
    skips.push_back(h);
    for (const auto& b : down_) {
        h = block_forward(b.conv, b.norm, h);
        skips.push_back(h);
    }
    for (const auto& r : res_) {
        const ag::Var inner = block_forward(r.first.conv, r.first.norm, h);
        h = h + r.second.norm(r.second.conv(inner));
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
        h = ag::upsample_nearest2x(h);
        if (cfg_.skip_connections) {
            h = ag::concat_channels({h, skips[skips.size() - 2 - i]});
        }
        h = block_forward(up_[i].conv, up_[i].norm, h);
    }
    const ag::Var raw = tail_(h);
    const ag::Var lightness = ag::add_scalar(ag::scale(ag::tanh(ag::slice_channels(raw, 0, 1)), 0.5), 0.5);
    const ag::Var chroma = ag::tanh(ag::slice_channels(raw, 1, 2));
    return ag::concat_channels({lightness, chroma});
}

nn::ParamList Generator::parameters() const {
    nn::ParamList out;
    head_.conv.collect("head.conv", out);
    head_.norm.collect("head.norm", out);
    for (std::size_t i = 0; i < down_.size(); ++i) {
        const std::string p = "down" + std::to_string(i);
        down_[i].conv.collect(p + ".conv", out);
        down_[i].norm.collect(p + ".norm", out);
    }
    for (std::size_t i = 0; i < res_.size(); ++i) {
        const std::string p = "res" + std::to_string(i);
        res_[i].first.conv.collect(p + ".conv1", out);
        res_[i].first.norm.collect(p + ".norm1", out);
        res_[i].second.conv.collect(p + ".conv2", out);
        res_[i].second.norm.collect(p + ".norm2", out);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
        const std::string p = "up" + std::to_string(i);
        up_[i].conv.collect(p + ".conv", out);
        up_[i].norm.collect(p + ".norm", out);
    }
    tail_.collect("tail", out);
    return out;
}

// ---- global discriminator ------------------------------------------------

void DiscriminatorConfig::validate() const {
    if (width <= 0 || blocks <= 0) {
        throw ConfigError("discriminator: width and blocks must be positive");
    }
}

Discriminator::Discriminator(DiscriminatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    int in = cfg_.conditional ? 2 : 1;
    for (int i = 0; i < cfg_.blocks; ++i) {
        const int out = cfg_.width << std::min(i, 3);
        convs_.emplace_back(in, out, 4, ag::ConvSpec{2, 1}, rng, true);
        norms_.push_back(i == 0 ? std::nullopt : std::optional<nn::InstanceNorm>(nn::InstanceNorm(out)));
        in = out;
    }
    score_ = nn::Conv2d(in, 1, 3, {1, 1}, rng, true);
}

ag::Var Discriminator::forward(const ag::Var& lightness, const ag::Var* sketch) const {
    require_input(lightness, 1, "discriminator");
    ag::Var h = lightness;
    if (cfg_.conditional) {
        if (sketch == nullptr) {
            throw ConfigError("conditional discriminator needs the sketch channel");
        }
        if (sketch->shape() != lightness.shape()) {
            throw ShapeError("discriminator: sketch " + sketch->shape().str() + " vs lightness " +
                             lightness.shape().str());
        }
        h = ag::concat_channels({lightness, *sketch});
    }
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = convs_[i](h);
        if (norms_[i]) {
            h = (*norms_[i])(h);
        }
        h = ag::leaky_relu(h, kLeak);
    }
    return score_(h);
}

int Discriminator::grid_extent(int input) const {
    int e = input;
    for (const auto& c : convs_) {
        e = ag::conv_out_extent(e, c.kernel(), c.spec().stride, c.spec().pad);
    }
    return ag::conv_out_extent(e, score_.kernel(), score_.spec().stride, score_.spec().pad);
}

nn::ParamList Discriminator::parameters() const {
    nn::ParamList out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        convs_[i].collect(p + ".conv", out);
        if (norms_[i]) {
            norms_[i]->collect(p + ".norm", out);
        }
    }
    score_.collect("score", out);
    return out;
}

// ---- local texture discriminator ----------------------------------------

void LocalDiscriminatorConfig::validate() const {
    if (width <= 0 || blocks <= 0) {
        throw ConfigError("local discriminator: width and blocks must be positive");
    }
}

LocalDiscriminator::LocalDiscriminator(LocalDiscriminatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    int in = 2;
    for (int i = 0; i < cfg_.blocks; ++i) {
        const int out = cfg_.width << std::min(i, 3);
        convs_.emplace_back(in, out, 4, ag::ConvSpec{2, 1}, rng, true);
        norms_.push_back(std::nullopt);
        in = out;
    }
    hidden_ = nn::Conv2d(2 * in, in, 1, {1, 0}, rng, true);
    score_ = nn::Conv2d(in, 1, 1, {1, 0}, rng, true);
}

ag::Var LocalDiscriminator::forward(const ag::Var& patch_g, const ag::Var& patch_t) const {
    require_input(patch_g, 1, "local discriminator");
    if (patch_g.shape() != patch_t.shape()) {
        throw ShapeError("local discriminator: patch sizes differ " + patch_g.shape().str() + " vs " +
                         patch_t.shape().str());
    }
    ag::Var h = ag::concat_channels({patch_g, patch_t});
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = convs_[i](h);
        if (norms_[i]) {
            h = (*norms_[i])(h);
        }
        h = ag::leaky_relu(h, kLeak);
    }
    const ag::Var pooled = ag::concat_channels({ag::global_avg_pool(h), ag::global_avg_pool(ag::square(h))});
    h = ag::leaky_relu(hidden_(pooled), kLeak);
    return score_(h);
}

nn::ParamList LocalDiscriminator::parameters() const {
    nn::ParamList out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        convs_[i].collect(p + ".conv", out);
        if (norms_[i]) {
            norms_[i]->collect(p + ".norm", out);
        }
    }
    hidden_.collect("hidden", out);
    score_.collect("score", out);
    return out;
}

// ---- feature extractors --------------------------------------------------

Tap parse_tap(std::string_view name) {
    if (name == "mid" || name == "relu3_2") {
        return Tap::mid;
    }
    if (name == "deep" || name == "relu4_2") {
        return Tap::deep;
    }
    throw ConfigError("unknown feature tap '" + std::string(name) + "' (expected mid or deep)");
}

std::string_view to_string(Tap t) { return t == Tap::mid ? "mid" : "deep"; }

const ag::Var& FeatureTaps::at(Tap t) const {
    const auto& slot = t == Tap::mid ? mid : deep;
    if (!slot) {
        throw ConfigError("feature tap '" + std::string(to_string(t)) + "' was not extracted");
    }
    return *slot;
}

namespace {

bool wants(std::span<const Tap> taps, Tap t) { return std::find(taps.begin(), taps.end(), t) != taps.end(); }

void require_gray3(const ag::Var& x) { require_input(x, 3, "feature extractor"); }

}  // namespace

TinyFeatureExtractor::TinyFeatureExtractor(std::uint64_t seed, std::array<int, 3> widths) : seed_(seed) {
    std::mt19937_64 rng(seed);
    const ag::ConvSpec same{1, 1, true};
    const ag::ConvSpec half{2, 1, true};
    convs_[0] = nn::Conv2d(3, widths[0], 3, same, rng, true);
    convs_[1] = nn::Conv2d(widths[0], widths[1], 3, half, rng, true);
    convs_[2] = nn::Conv2d(widths[1], widths[2], 3, half, rng, true);
    for (const auto& c : convs_) {
        freeze(c);
    }
}

FeatureTaps TinyFeatureExtractor::extract(const ag::Var& gray3, std::span<const Tap> taps) const {
    require_gray3(gray3);
    FeatureTaps out;
    ag::Var h = ag::relu(convs_[0](gray3));
    h = ag::relu(convs_[1](h));
    if (wants(taps, Tap::mid)) {
        out.mid = h;
    }
    if (wants(taps, Tap::deep)) {
        out.deep = ag::relu(convs_[2](h));
    }
    return out;
}

int TinyFeatureExtractor::channels(Tap t) const {
    return t == Tap::mid ? convs_[1].out_channels() : convs_[2].out_channels();
}

nn::ParamList TinyFeatureExtractor::parameters() const {
    nn::ParamList out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].collect("conv" + std::to_string(i), out);
    }
    return out;
}

std::string TinyFeatureExtractor::descriptor() const { return "tiny:" + std::to_string(seed_); }

namespace {

constexpr std::array<int, Vgg19FeatureExtractor::kLayers> kVggWidths = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512};
constexpr std::array<const char*, Vgg19FeatureExtractor::kLayers> kVggNames = {
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4", "conv4_1", "conv4_2"};
constexpr char kVggMagic[8] = {'T', 'G', 'V', 'G', 'G', '1', '9', '\0'};
constexpr std::uint32_t kVggVersion = 1;
constexpr int kMidLayer = 5;
constexpr int kDeepLayer = 9;

bool pool_after(int layer) { return layer == 1 || layer == 3 || layer == 7; }

template <typename T>
void put(std::vector<char>& out, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out.insert(out.end(), raw, raw + sizeof(T));
}

struct Reader {
    const std::vector<char>& bytes;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size()) {
            throw ConfigError("VGG weights file is truncated");
        }
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
};

}  // namespace

std::unique_ptr<Vgg19FeatureExtractor> Vgg19FeatureExtractor::random(std::uint64_t seed) {
    std::unique_ptr<Vgg19FeatureExtractor> fe(new Vgg19FeatureExtractor());
    std::mt19937_64 rng(seed);
    int in = 3;
    for (int i = 0; i < kLayers; ++i) {
        fe->convs_[i] = nn::Conv2d(in, kVggWidths[i], 3, {1, 1}, rng, true);
        freeze(fe->convs_[i]);
        in = kVggWidths[i];
    }
    fe->source_ = "vgg19:random:" + std::to_string(seed);
    return fe;
}

std::unique_ptr<Vgg19FeatureExtractor> Vgg19FeatureExtractor::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open VGG weights file " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{bytes};
    char magic[8];
    for (char& c : magic) {
        c = r.get<char>();
    }
    if (std::memcmp(magic, kVggMagic, sizeof magic) != 0) {
        throw ConfigError(path.string() + " is not a VGG weights file");
    }
    if (const auto v = r.get<std::uint32_t>(); v != kVggVersion) {
        throw ConfigError("VGG weights version " + std::to_string(v) + " is not supported");
    }
    auto fe = random(0);
    int in_ch = 3;
    for (int i = 0; i < kLayers; ++i) {
        const auto cout = r.get<std::uint32_t>();
        const auto cin = r.get<std::uint32_t>();
        const auto k = r.get<std::uint32_t>();
        if (static_cast<int>(cout) != kVggWidths[i] || static_cast<int>(cin) != in_ch || k != 3) {
            throw ConfigError(std::string("VGG weights: unexpected shape for ") + kVggNames[i]);
        }
        ag::Var w = fe->convs_[i].weight();
        for (double& v : w.mutable_value().data()) {
            v = r.get<float>();
        }
        ag::Var b = fe->convs_[i].bias();
        for (double& v : b.mutable_value().data()) {
            v = r.get<float>();
        }
        in_ch = kVggWidths[i];
    }
    if (r.pos != bytes.size()) {
        throw ConfigError("VGG weights file has trailing bytes");
    }
    fe->source_ = "vgg19:" + path.filename().string();
    return fe;
}

void Vgg19FeatureExtractor::save(const std::filesystem::path& path) const {
    std::vector<char> out(kVggMagic, kVggMagic + sizeof kVggMagic);
    put(out, kVggVersion);
    for (const auto& c : convs_) {
        put(out, static_cast<std::uint32_t>(c.out_channels()));
        put(out, static_cast<std::uint32_t>(c.in_channels()));
        put(out, static_cast<std::uint32_t>(c.kernel()));
        for (double v : c.weight().value().data()) {
            put(out, static_cast<float>(v));
        }
        for (double v : c.bias().value().data()) {
            put(out, static_cast<float>(v));
        }
    }
    std::ofstream f(path, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

FeatureTaps Vgg19FeatureExtractor::extract(const ag::Var& gray3, std::span<const Tap> taps) const {
    require_gray3(gray3);
    static constexpr std::array<double, 3> mean = {0.485, 0.456, 0.406};
    static constexpr std::array<double, 3> stdev = {0.229, 0.224, 0.225};
    std::array<double, 3> scale{};
    std::array<double, 3> shift{};
    for (int c = 0; c < 3; ++c) {
        scale[c] = 1.0 / stdev[c];
        shift[c] = -mean[c] / stdev[c];
    }
    const bool need_deep = wants(taps, Tap::deep);
    const int last = need_deep ? kDeepLayer : kMidLayer;
    FeatureTaps out;
    ag::Var h = ag::channel_affine(gray3, scale, shift);
    for (int i = 0; i <= last; ++i) {
        h = ag::relu(convs_[i](h));
        if (i == kMidLayer && wants(taps, Tap::mid)) {
            out.mid = h;
        }
        if (i == kDeepLayer) {
            out.deep = h;
        }
        if (pool_after(i)) {
            h = ag::max_pool2x2(h);
        }
    }
    return out;
}

int Vgg19FeatureExtractor::channels(Tap t) const {
    return t == Tap::mid ? kVggWidths[kMidLayer] : kVggWidths[kDeepLayer];
}

nn::ParamList Vgg19FeatureExtractor::parameters() const {
    nn::ParamList out;
    for (int i = 0; i < kLayers; ++i) {
        convs_[i].collect(kVggNames[i], out);
    }
    return out;
}

std::string Vgg19FeatureExtractor::descriptor() const { return source_; }

std::shared_ptr<const FeatureExtractor> make_feature_extractor(const FeatureSpec& spec) {
    if (spec.kind == "tiny") {
        return std::make_shared<TinyFeatureExtractor>(spec.seed);
    }
    if (spec.kind == "vgg19") {
        if (spec.weights.empty()) {
            throw ConfigError("features.kind = vgg19 needs features.weights");
        }
        return Vgg19FeatureExtractor::load(spec.weights);
    }
    throw ConfigError("unknown feature extractor kind '" + spec.kind + "' (expected tiny or vgg19)");
}

}  // namespace tgan::nets
