/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tgan/codec.hpp"
#include "tgan/errors.hpp"

namespace tgan::train {

// ---- enums ---------------------------------------------------------------

Stage parse_stage(std::string_view s) {
    if (s == "pretrain") {
        return Stage::pretrain;
    }
    if (s == "finetune") {
        return Stage::finetune;
    }
    throw ConfigError("unknown stage '" + std::string(s) + "' (expected pretrain or finetune)");
}

std::string_view to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

Mixing parse_mixing(std::string_view s) {
    if (s == "alternate") {
        return Mixing::alternate;
    }
    if (s == "bernoulli") {
        return Mixing::bernoulli;
    }
    throw ConfigError("unknown mixing '" + std::string(s) + "' (expected alternate or bernoulli)");
}

std::string_view to_string(Mixing m) { return m == Mixing::alternate ? "alternate" : "bernoulli"; }

// ---- config --------------------------------------------------------------

namespace {

using nlohmann::json;

/// Strict reader over one JSON object: remembers consumed keys so leftovers
/// can be reported as unknown.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(label() + " must be an object");
        }
    }

    template <typename T>
    void read(const char* key, T& out) {
        const json* v = take(key);
        if (v == nullptr) {
            return;
        }
        if constexpr (std::is_same_v<T, bool>) {
            require(v->is_boolean(), key, "a boolean");
            out = v->get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            require(v->is_number_integer(), key, "an integer");
            if constexpr (std::is_unsigned_v<T>) {
                require(v->is_number_unsigned(), key, "a non-negative integer");
            }
            out = v->get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            require(v->is_number(), key, "a number");
            out = v->get<T>();
        } else {
            require(v->is_string(), key, "a string");
            out = v->get<std::string>();
        }
    }

    void read_path(const char* key, std::filesystem::path& out) {
        std::string s = out.string();
        read(key, s);
        out = s;
    }

    template <typename E, typename Parse>
    void read_enum(const char* key, E& out, Parse parse) {
        const json* v = take(key);
        if (v == nullptr) {
            return;
        }
        require(v->is_string(), key, "a string");
        out = parse(v->get<std::string>());
    }

    /// Nested object, or nullptr when absent.
    const json* object(const char* key) { return take(key); }

    [[nodiscard]] std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) {
                throw ConfigError("unknown config key '" + child(k.c_str()) + "'");
            }
        }
    }

private:
    const json* take(const char* key) {
        const auto it = j_.find(key);
        if (it == j_.end()) {
            return nullptr;
        }
        seen_.insert(key);
        return &*it;
    }

    void require(bool ok, const char* key, const char* what) const {
        if (!ok) {
            throw ConfigError("config key '" + child(key) + "' must be " + what);
        }
    }

    [[nodiscard]] std::string label() const { return path_.empty() ? "config" : "config key '" + path_ + "'"; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename F>
void with_object(Fields& parent, const char* key, F&& f) {
    if (const json* sub = parent.object(key)) {
        Fields fields(*sub, parent.child(key));
        f(fields);
        fields.finish();
    }
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    Fields f(j, "");
    f.read_enum("stage", c.stage, parse_stage);
    f.read("resolution", c.resolution);
    f.read("batch_size", c.batch_size);
    f.read("iterations", c.iterations);
    with_object(f, "learning_rates", [&](Fields& s) {
        s.read("g", c.learning_rates.g);
        s.read("d_global", c.learning_rates.d_global);
        s.read("d_local", c.learning_rates.d_local);
    });
    with_object(f, "weights", [&](Fields& s) {
        s.read("adv", c.weights.adv);
        s.read("style", c.weights.style);
        s.read("pixel", c.weights.pixel);
        s.read("color", c.weights.color);
        s.read("local_style", c.weights.local_style);
        s.read("local_pixel", c.weights.local_pixel);
        s.read("local_adv", c.weights.local_adv);
    });
    f.read("seed", c.seed);
    f.read("checkpoint_every", c.checkpoint_every);
    f.read_enum("mixing", c.mixing, parse_mixing);
    with_object(f, "data", [&](Fields& s) {
        s.read_path("train_dir", c.data.train_dir);
        s.read_path("texture_dir", c.data.texture_dir);
    });
    f.read_path("out_dir", c.out_dir);
    with_object(f, "model", [&](Fields& s) {
        s.read("base_width", c.model.base_width);
        s.read("n_down", c.model.n_down);
        s.read("n_res", c.model.n_res);
        s.read("skip_connections", c.model.skip_connections);
        s.read("disc_width", c.model.disc_width);
        s.read("disc_blocks", c.model.disc_blocks);
        s.read("disc_conditional", c.model.disc_conditional);
        s.read("local_disc_width", c.model.local_disc_width);
        s.read("local_disc_blocks", c.model.local_disc_blocks);
    });
    with_object(f, "features", [&](Fields& s) {
        s.read("kind", c.features.kind);
        s.read("seed", c.features.seed);
        s.read_path("weights", c.features.weights);
    });
    with_object(f, "local", [&](Fields& s) {
        s.read("patch_size", c.local.patch_size);
        s.read("n_patches", c.local.n_patches);
    });
    with_object(f, "ablation", [&](Fields& s) {
        s.read("style", c.ablation.style);
        s.read("adversarial", c.ablation.adversarial);
        s.read("local_texture", c.ablation.local_texture);
    });
    with_object(f, "finetune", [&](Fields& s) { s.read("update_global_disc", c.finetune.update_global_disc); });
    f.read_enum("style_reference", c.style_reference, losses::parse_style_reference);
    f.finish();
    c.validate();
    return c;
}

json TrainConfig::to_json() const {
    json j;
    j["stage"] = std::string(to_string(stage));
    j["resolution"] = resolution;
    j["batch_size"] = batch_size;
    j["iterations"] = iterations;
    j["learning_rates"] = {{"g", learning_rates.g}, {"d_global", learning_rates.d_global},
                           {"d_local", learning_rates.d_local}};
    j["weights"] = {{"adv", weights.adv},     {"style", weights.style},
                    {"pixel", weights.pixel}, {"color", weights.color},
                    {"local_style", weights.local_style}, {"local_pixel", weights.local_pixel},
                    {"local_adv", weights.local_adv}};
    j["seed"] = seed;
    j["checkpoint_every"] = checkpoint_every;
    j["mixing"] = std::string(to_string(mixing));
    j["data"] = {{"train_dir", data.train_dir.string()}, {"texture_dir", data.texture_dir.string()}};
    j["out_dir"] = out_dir.string();
    j["model"] = {{"base_width", model.base_width},
                  {"n_down", model.n_down},
                  {"n_res", model.n_res},
                  {"skip_connections", model.skip_connections},
                  {"disc_width", model.disc_width},
                  {"disc_blocks", model.disc_blocks},
                  {"disc_conditional", model.disc_conditional},
                  {"local_disc_width", model.local_disc_width},
                  {"local_disc_blocks", model.local_disc_blocks}};
    j["features"] = {{"kind", features.kind}, {"seed", features.seed}, {"weights", features.weights.string()}};
    j["local"] = {{"patch_size", local.patch_size}, {"n_patches", local.n_patches}};
    j["ablation"] = {{"style", ablation.style},
                     {"adversarial", ablation.adversarial},
                     {"local_texture", ablation.local_texture}};
    j["finetune"] = {{"update_global_disc", finetune.update_global_disc}};
    j["style_reference"] = std::string(losses::to_string(style_reference));
    return j;
}

void TrainConfig::validate() const {
    generator_config(*this).validate();
    if (resolution <= 0) {
        throw ConfigError("resolution must be positive");
    }
    if (batch_size <= 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (stage == Stage::finetune && batch_size < 2) {
        throw ConfigError("finetune needs batch_size >= 2 to form different-texture pairs");
    }
    if (iterations < 0 || checkpoint_every < 0) {
        throw ConfigError("iterations and checkpoint_every must be non-negative");
    }
    for (double lr : {learning_rates.g, learning_rates.d_global, learning_rates.d_local}) {
        if (!std::isfinite(lr) || lr < 0.0) {
            throw ConfigError("learning rates must be finite and non-negative");
        }
    }
    weights.validate();
    if (local.n_patches <= 0 || local.patch_size < 0 || patch_size() > resolution) {
        throw ConfigError("local.n_patches must be positive and local.patch_size within the resolution");
    }
    nets::DiscriminatorConfig{model.disc_width, model.disc_blocks, model.disc_conditional}.validate();
    nets::LocalDiscriminatorConfig{model.local_disc_width, model.local_disc_blocks}.validate();
}

int TrainConfig::patch_size() const {
    return local.patch_size > 0 ? local.patch_size : losses::default_patch_size(resolution);
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return TrainConfig::from_json(j);
}

bool is_ground_truth_iteration(Mixing mixing, std::uint64_t seed, std::int64_t iteration) {
    if (mixing == Mixing::alternate) {
        return iteration % 2 == 0;
    }
    const std::uint64_t h = codec::derive_seed(codec::derive_seed(seed, "mixing"), static_cast<std::uint64_t>(iteration));
    return (h >> 63) == 0;
}

// ---- model ---------------------------------------------------------------

nets::GeneratorConfig generator_config(const TrainConfig& cfg) {
    nets::GeneratorConfig g;
    g.resolution = cfg.resolution;
    g.base_width = cfg.model.base_width;
    g.n_down = cfg.model.n_down;
    g.n_up = cfg.model.n_down;
    g.n_res = cfg.model.n_res;
    g.skip_connections = cfg.model.skip_connections;
    return g;
}

Model build_model(const TrainConfig& cfg) {
    Model m;
    m.g = std::make_unique<nets::Generator>(generator_config(cfg), codec::derive_seed(cfg.seed, "generator"));
    m.d = std::make_unique<nets::Discriminator>(
        nets::DiscriminatorConfig{cfg.model.disc_width, cfg.model.disc_blocks, cfg.model.disc_conditional},
        codec::derive_seed(cfg.seed, "discriminator"));
    m.d_txt = std::make_unique<nets::LocalDiscriminator>(
        nets::LocalDiscriminatorConfig{cfg.model.local_disc_width, cfg.model.local_disc_blocks},
        codec::derive_seed(cfg.seed, "local-discriminator"));
    m.features = nets::make_feature_extractor(cfg.features);
    return m;
}

std::unique_ptr<nets::Generator> load_generator(const Checkpoint& ckpt, TrainConfig* config_out) {
    TrainConfig cfg;
    try {
        cfg = TrainConfig::from_json(nlohmann::json::parse(ckpt.config_json));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config echo is unreadable: ") + e.what());
    }
    auto g = std::make_unique<nets::Generator>(generator_config(cfg), 0);
    import_params(ckpt.group("g"), g->parameters());
    if (config_out != nullptr) {
        *config_out = cfg;
    }
    return g;
}

// ---- discriminator updates -----------------------------------------------

double pair_accuracy(const Tensor& pos_scores, const Tensor& neg_scores) {
    std::size_t right = 0;
    for (double v : pos_scores.data()) {
        right += v > 0.5 ? 1 : 0;
    }
    for (double v : neg_scores.data()) {
        right += v < 0.5 ? 1 : 0;
    }
    const std::size_t total = pos_scores.size() + neg_scores.size();
    return total == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(total);
}

double local_disc_update(const nets::LocalDiscriminator& d_txt, nn::Adam& opt, const ag::Var& pos_a,
                         const ag::Var& pos_b, const ag::Var& neg_a, const ag::Var& neg_b) {
    opt.zero_grad();
    const ag::Var pos = d_txt.forward(pos_a, pos_b);
    const ag::Var neg = d_txt.forward(neg_a, neg_b);
    const double acc = pair_accuracy(pos.value(), neg.value());
    losses::lsgan_d_loss(pos, neg).backward();
    opt.step();
    return acc;
}

namespace {

double fraction_above(const Tensor& t, bool above) {
    std::size_t k = 0;
    for (double v : t.data()) {
        k += ((v > 0.5) == above) ? 1 : 0;
    }
    return t.size() == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(t.size());
}

/// Temporarily stops gradient accumulation into a network's parameters.
class Frozen {
public:
    explicit Frozen(nn::ParamList params) : params_(std::move(params)) {
        for (auto& p : params_) {
            p.var.set_requires_grad(false);
        }
    }
    ~Frozen() {
        for (auto& p : params_) {
            p.var.set_requires_grad(true);
        }
    }
    Frozen(const Frozen&) = delete;
    Frozen& operator=(const Frozen&) = delete;

private:
    nn::ParamList params_;
};

Tensor channels(const Tensor& t, int first, int count) {
    return ag::slice_channels(ag::Var::constant(t), first, count).value();
}

LabImage fit_texture(const LabImage& tex, int res) {
    if (tex.height() == res && tex.width() == res) {
        return tex;
    }
    if (tex.height() < res || tex.width() < res) {
        throw ShapeError("texture " + std::to_string(tex.height()) + "x" + std::to_string(tex.width()) +
                         " is smaller than the " + std::to_string(res) + "px network input");
    }
    const int top = (tex.height() - res) / 2;
    const int left = (tex.width() - res) / 2;
    LabImage out(res, res);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            out.L(y, x) = tex.L(top + y, left + x);
            out.a(y, x) = tex.a(top + y, left + x);
            out.b(y, x) = tex.b(top + y, left + x);
        }
    }
    return out;
}

std::vector<std::size_t> pick_indices(std::size_t pool, int count, std::uint64_t seed) {
    if (pool == 0) {
        throw ConfigError("cannot draw a batch from an empty pool");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(count));
    if (pool >= static_cast<std::size_t>(count)) {
        std::vector<std::size_t> all(pool);
        std::iota(all.begin(), all.end(), 0);
        for (int i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool - 1);
            std::swap(all[static_cast<std::size_t>(i)], all[pick(rng)]);
            out.push_back(all[static_cast<std::size_t>(i)]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
        for (int i = 0; i < count; ++i) {
            out.push_back(pick(rng));
        }
    }
    return out;
}

/// Random s x s crop anywhere in a (1,1,H,W) lightness map.
ag::Var random_crop(const ag::Var& img, int s, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ys(0, img.shape().h - s);
    std::uniform_int_distribution<int> xs(0, img.shape().w - s);
    const int y = ys(rng);
    const int x = xs(rng);
    return ag::crop(img, y, x, s, s);
}

std::uint64_t iteration_seed(std::uint64_t seed, std::string_view tag, std::int64_t it) {
    return codec::derive_seed(codec::derive_seed(seed, tag), static_cast<std::uint64_t>(it));
}

}  // namespace

nlohmann::json StepRecord::to_json() const {
    return {{"iteration", iteration}, {"kind", kind},           {"losses", report.to_json()},
            {"d_real_acc", d_real_acc}, {"d_fake_acc", d_fake_acc}, {"dtxt_acc", dtxt_acc},
            {"wall_ms", wall_ms}};
}

// ---- trainer -------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, std::shared_ptr<const datagen::Dataset> data,
                 std::shared_ptr<const std::vector<datagen::TextureExample>> textures)
    : cfg_(std::move(cfg)), data_(std::move(data)), textures_(std::move(textures)), model_(build_model(cfg_)) {
    cfg_.validate();
    if (!data_ || data_->examples.empty()) {
        throw ConfigError("training needs at least one example");
    }
    if (data_->resolution != cfg_.resolution) {
        throw ConfigError("dataset resolution " + std::to_string(data_->resolution) + " differs from config " +
                          std::to_string(cfg_.resolution));
    }
    if (cfg_.stage == Stage::finetune && (!textures_ || textures_->empty())) {
        throw ConfigError("finetune needs a non-empty texture pool");
    }
    nn::AdamConfig a;
    a.lr = cfg_.learning_rates.g;
    opt_g_ = nn::Adam(model_.g->parameters(), a);
    a.lr = cfg_.learning_rates.d_global;
    opt_d_ = nn::Adam(model_.d->parameters(), a);
    a.lr = cfg_.learning_rates.d_local;
    opt_local_ = nn::Adam(model_.d_txt->parameters(), a);
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t iteration) const {
    return pick_indices(data_->examples.size(), cfg_.batch_size, iteration_seed(cfg_.seed, "batch", iteration));
}

std::vector<std::size_t> Trainer::texture_indices(std::int64_t iteration) const {
    if (!textures_) {
        return {};
    }
    return pick_indices(textures_->size(), cfg_.batch_size, iteration_seed(cfg_.seed, "textures", iteration));
}

StepRecord Trainer::step() {
    const auto idx = batch_indices(iteration_);
    std::vector<const datagen::TrainingExample*> batch;
    for (std::size_t i : idx) {
        batch.push_back(&data_->examples[i]);
    }
    if (cfg_.stage == Stage::pretrain || is_ground_truth_iteration(cfg_.mixing, cfg_.seed, iteration_)) {
        return pretrain_step(batch);
    }
    std::vector<const datagen::TextureExample*> tex;
    for (std::size_t i : texture_indices(iteration_)) {
        tex.push_back(&(*textures_)[i]);
    }
    return finetune_step(batch, tex);
}

datagen::InputStack Trainer::texture_input(const datagen::TrainingExample& ex, const datagen::TextureExample& texture,
                                           std::uint64_t seed) const {
    const int res = cfg_.resolution;
    const LabImage tex = fit_texture(texture.texture, res);
    datagen::InputStack in = ex.input;
    std::fill(in.tex_intensity.values.begin(), in.tex_intensity.values.end(), 0.0f);
    std::fill(in.tex_mask.values.begin(), in.tex_mask.values.end(), std::uint8_t{0});
    const auto placement = datagen::sample_patch_placement(ex.mask, seed, datagen::placement_defaults(res));
    const Rect& r = placement.rect;
    for (int y = r.y; y < r.y + r.h; ++y) {
        for (int x = r.x; x < r.x + r.w; ++x) {
            in.tex_intensity(y, x) = std::clamp(tex.L(y, x) / 100.0f, 0.0f, 1.0f);
            in.tex_mask(y, x) = 1;
        }
    }
    return in;
}

namespace {

struct GlobalDiscResult {
    double real_acc = 0;
    double fake_acc = 0;
};

GlobalDiscResult update_global_disc(const nets::Discriminator& d, nn::Adam& opt, const Tensor& real_L,
                                    const ag::Var& fake_L, const Tensor& sketch) {
    opt.zero_grad();
    const ag::Var sk = ag::Var::constant(sketch);
    const ag::Var* cond = d.config().conditional ? &sk : nullptr;
    const ag::Var rs = d.forward(ag::Var::constant(real_L), cond);
    const ag::Var fs = d.forward(fake_L, cond);
    losses::lsgan_d_loss(rs, fs).backward();
    opt.step();
    return {fraction_above(rs.value(), true), fraction_above(fs.value(), false)};
}

}  // namespace

StepRecord Trainer::pretrain_step(std::span<const datagen::TrainingExample* const> batch) {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.iteration = iteration_;
    rec.kind = "gt";

    std::vector<datagen::InputStack> inputs;
    std::vector<LabImage> targets;
    std::vector<Rect> rects;
    for (const auto* ex : batch) {
        inputs.push_back(ex->input);
        targets.push_back(ex->target);
        rects.push_back(ex->texture_placements.empty() ? Rect{0, 0, cfg_.resolution, cfg_.resolution}
                                                       : ex->texture_placements.front().rect);
    }
    const Tensor x = datagen::input_tensor(inputs);
    losses::PretrainTargets t;
    t.target = datagen::lab_tensor(targets);
    t.sketch = channels(x, 0, 1);
    t.style_reference = cfg_.style_reference;
    t.style_rects = std::move(rects);

    const ag::Var out = model_.g->forward(ag::Var::constant(x));
    if (!cfg_.ablation.adversarial) {
        const auto acc = update_global_disc(*model_.d, opt_d_, channels(t.target, 0, 1),
                                            ag::slice_channels(out, 0, 1).detach(), t.sketch);
        rec.d_real_acc = acc.real_acc;
        rec.d_fake_acc = acc.fake_acc;
    }

    opt_g_.zero_grad();
    {
        const Frozen frozen_d(model_.d->parameters());
        const losses::Critics critics{*model_.features, model_.d.get(), model_.d_txt.get()};
        const auto obj = losses::pretrain_objective(out, t, critics, cfg_.weights, cfg_.ablation);
        rec.report = obj.report;
        check_finite(rec, batch, {});
        obj.total.backward();
    }
    opt_g_.step();
    ++iteration_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

StepRecord Trainer::finetune_step(std::span<const datagen::TrainingExample* const> batch,
                                  std::span<const datagen::TextureExample* const> textures) {
    const auto t0 = std::chrono::steady_clock::now();
    if (batch.size() != textures.size() || batch.size() < 2) {
        throw ConfigError("finetune step needs matching example and texture batches of at least 2");
    }
    StepRecord rec;
    rec.iteration = iteration_;
    rec.kind = "texture";
    const int res = cfg_.resolution;
    const int n = static_cast<int>(batch.size());

    std::vector<datagen::InputStack> inputs;
    std::vector<LabImage> targets;
    std::vector<LabImage> tex_images;
    losses::FinetuneTargets ft;
    const std::uint64_t paste_seed = iteration_seed(cfg_.seed, "paste", iteration_);
    for (int k = 0; k < n; ++k) {
        const auto& ex = *batch[static_cast<std::size_t>(k)];
        const auto& tex = *textures[static_cast<std::size_t>(k)];
        inputs.push_back(texture_input(ex, tex, codec::derive_seed(paste_seed, static_cast<std::uint64_t>(k))));
        targets.push_back(ex.target);
        tex_images.push_back(fit_texture(tex.texture, res));
        ft.masks.push_back(ex.mask);
    }
    const Tensor x = datagen::input_tensor(inputs);
    ft.gt_lightness = channels(datagen::lab_tensor(targets), 0, 1);
    ft.texture = datagen::lab_tensor(tex_images);
    ft.mask = datagen::mask_tensor(ft.masks);
    ft.sketch = channels(x, 0, 1);
    ft.local = {cfg_.patch_size(), cfg_.local.n_patches};
    ft.seed = iteration_seed(cfg_.seed, "local", iteration_);

    const ag::Var out = model_.g->forward(ag::Var::constant(x));
    if (cfg_.finetune.update_global_disc && !cfg_.ablation.adversarial) {
        const auto acc = update_global_disc(*model_.d, opt_d_, ft.gt_lightness,
                                            ag::slice_channels(out, 0, 1).detach(), ft.sketch);
        rec.d_real_acc = acc.real_acc;
        rec.d_fake_acc = acc.fake_acc;
    }

    ag::Var patch_g;
    ag::Var patch_t;
    opt_g_.zero_grad();
    {
        const Frozen frozen_d(model_.d->parameters());
        const Frozen frozen_local(model_.d_txt->parameters());
        const losses::Critics critics{*model_.features, model_.d.get(), model_.d_txt.get()};
        const auto obj = losses::finetune_objective(out, ft, critics, cfg_.weights, cfg_.ablation);
        rec.report = obj.report;
        check_finite(rec, batch, textures);
        obj.total.backward();
        patch_g = obj.local.patch_g.detach();
        patch_t = obj.local.patch_t;
    }
    opt_g_.step();

    if (!cfg_.ablation.adversarial && !cfg_.ablation.local_texture) {
        // Same-texture positives pair each co-located texture crop with another
        // crop of that texture; negatives borrow the next entry's texture.
        std::mt19937_64 rng(iteration_seed(cfg_.seed, "pairs", iteration_));
        const int s = cfg_.patch_size();
        const int m = cfg_.local.n_patches;
        const ag::Var tex_L = ag::Var::constant(channels(ft.texture, 0, 1));
        std::vector<ag::Var> same;
        std::vector<ag::Var> other;
        for (int k = 0; k < n; ++k) {
            const ag::Var own = ag::slice_batch(tex_L, k, 1);
            const ag::Var next = ag::slice_batch(tex_L, (k + 1) % n, 1);
            for (int i = 0; i < m; ++i) {
                same.push_back(random_crop(own, s, rng));
                other.push_back(random_crop(next, s, rng));
            }
        }
        const ag::Var same_b = ag::concat_batch(same);
        const ag::Var other_b = ag::concat_batch(other);
        rec.dtxt_acc = local_disc_update(*model_.d_txt, opt_local_, patch_t, same_b,
                                         ag::concat_batch({patch_g, patch_t}), ag::concat_batch({other_b, other_b}));
    }
    ++iteration_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

void Trainer::check_finite(const StepRecord& rec, std::span<const datagen::TrainingExample* const> batch,
                           std::span<const datagen::TextureExample* const> textures) const {
    if (rec.report.finite()) {
        return;
    }
    nlohmann::json dump = rec.to_json();
    std::vector<std::string> ids;
    for (const auto* ex : batch) {
        ids.push_back(ex->source_id);
    }
    dump["examples"] = ids;
    ids.clear();
    for (const auto* t : textures) {
        ids.push_back(t->source_id);
    }
    dump["textures"] = ids;
    std::string where = "(no out_dir)";
    if (!cfg_.out_dir.empty()) {
        std::filesystem::create_directories(cfg_.out_dir);
        const auto path = cfg_.out_dir / ("nonfinite-" + std::to_string(rec.iteration) + ".json");
        std::ofstream(path) << dump.dump(2) << '\n';
        where = path.string();
    }
    throw TrainingError("non-finite loss at iteration " + std::to_string(rec.iteration) + " on batch " +
                        dump["examples"].dump() + "; diagnostic dump written to " + where);
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config_json = cfg_.to_json().dump();
    c.iteration = iteration_;
    c.groups.push_back(export_params("g", model_.g->parameters()));
    c.groups.push_back(export_params("d", model_.d->parameters()));
    c.groups.push_back(export_params("d_txt", model_.d_txt->parameters()));
    c.optimizers.push_back(export_optimizer("g", opt_g_));
    c.optimizers.push_back(export_optimizer("d", opt_d_));
    c.optimizers.push_back(export_optimizer("d_txt", opt_local_));
    c.feature_descriptor = model_.features->descriptor();
    c.feature_digest = model_.features->digest();
    return c;
}

void Trainer::restore(const Checkpoint& ckpt, bool weights_only) {
    if (ckpt.feature_digest != model_.features->digest()) {
        throw CheckpointError("checkpoint was trained against feature network '" + ckpt.feature_descriptor +
                              "', which differs from the configured '" + model_.features->descriptor() + "'");
    }
    import_params(ckpt.group("g"), model_.g->parameters());
    import_params(ckpt.group("d"), model_.d->parameters());
    import_params(ckpt.group("d_txt"), model_.d_txt->parameters());
    if (weights_only) {
        return;
    }
    const std::array<std::pair<const char*, nn::Adam*>, 3> opts = {
        {{"g", &opt_g_}, {"d", &opt_d_}, {"d_txt", &opt_local_}}};
    for (const auto& [name, opt] : opts) {
        const OptimizerState* s = ckpt.optimizer(name);
        if (s == nullptr) {
            throw CheckpointError(std::string("checkpoint lacks optimizer state '") + name + "'");
        }
        import_optimizer(*s, *opt);
    }
    iteration_ = ckpt.iteration;
}

// ---- run -----------------------------------------------------------------

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t iteration) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt-%08lld.tgck", static_cast<long long>(iteration));
    return out_dir / name;
}

namespace {

std::shared_ptr<const std::vector<datagen::TextureExample>> texture_pool(const TrainConfig& cfg,
                                                                         const datagen::Dataset& data) {
    std::vector<datagen::TextureExample> pool;
    const auto& dir = cfg.data.texture_dir;
    if (dir.empty()) {
        pool = data.textures;
    } else if (std::filesystem::exists(dir / "manifest.json")) {
        pool = datagen::load_dataset(dir).textures;
    } else {
        datagen::TextureIngestConfig ic;
        ic.resolution = cfg.resolution;
        ic.seed = codec::derive_seed(cfg.seed, "texture-ingest");
        pool = datagen::ingest_texture_dir(dir, ic);
    }
    return std::make_shared<const std::vector<datagen::TextureExample>>(std::move(pool));
}

/// Keeps only records before `iteration`; returns how many survived.
std::size_t truncate_metrics(const std::filesystem::path& path, std::int64_t iteration) {
    std::vector<std::string> kept;
    if (std::ifstream in(path); in) {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("iteration")) {
                break;
            }
            if (j["iteration"].get<std::int64_t>() >= iteration) {
                break;
            }
            kept.push_back(line);
        }
    }
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : kept) {
        out << l << '\n';
    }
    return kept.size();
}

void require_same_run(const TrainConfig& current, const Checkpoint& ckpt) {
    auto a = current.to_json();
    auto b = nlohmann::json::parse(ckpt.config_json);
    a.erase("iterations");
    b.erase("iterations");
    if (a != b) {
        throw ConfigError("--resume checkpoint was written by a different config (only 'iterations' may change)");
    }
}

}  // namespace

std::filesystem::path run(const TrainConfig& cfg, const RunOptions& options) {
    cfg.validate();
    if (cfg.data.train_dir.empty()) {
        throw ConfigError("data.train_dir is required");
    }
    auto data = std::make_shared<const datagen::Dataset>(datagen::load_dataset(cfg.data.train_dir));
    std::shared_ptr<const std::vector<datagen::TextureExample>> pool;
    if (cfg.stage == Stage::finetune) {
        pool = texture_pool(cfg, *data);
    }
    Trainer trainer(cfg, data, pool);

    std::filesystem::create_directories(cfg.out_dir);
    const auto metrics_path = cfg.out_dir / "metrics.jsonl";
    if (options.resume) {
        const auto ckpt = Checkpoint::load(*options.resume);
        require_same_run(cfg, ckpt);
        trainer.restore(ckpt, false);
        truncate_metrics(metrics_path, ckpt.iteration);
        spdlog::info("resumed from {} at iteration {}", options.resume->string(), ckpt.iteration);
    } else {
        if (options.init) {
            trainer.restore(Checkpoint::load(*options.init), true);
            spdlog::info("initialized weights from {}", options.init->string());
        } else if (cfg.stage == Stage::finetune) {
            throw ConfigError("finetune needs a stage-1 checkpoint (--init) or --resume");
        }
        std::ofstream(metrics_path, std::ios::trunc);
    }

    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) {
        throw std::runtime_error("cannot open metrics file " + metrics_path.string());
    }
    std::filesystem::path last;
    std::int64_t last_saved = -1;
    auto save = [&]() {
        last = checkpoint_path(cfg.out_dir, trainer.iteration());
        trainer.checkpoint().save(last);
        last_saved = trainer.iteration();
    };
    while (trainer.iteration() < cfg.iterations) {
        const StepRecord rec = trainer.step();
        metrics << rec.to_json().dump() << '\n';
        metrics.flush();
        if (options.on_step) {
            options.on_step(rec);
        }
        if (cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0) {
            save();
        }
    }
    if (last_saved != trainer.iteration()) {
        save();
    }
    return last;
}

}  // namespace tgan::train
