/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tgan/archive.hpp"
#include "tgan/checkpoint.hpp"
#include "tgan/datagen.hpp"
#include "tgan/losses.hpp"
#include "tgan/nets.hpp"
#include "tgan/nn.hpp"

namespace tgan::train {

/// A loss went NaN/inf. The message names the iteration and batch sources.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Stage { pretrain, finetune };
enum class Mixing { alternate, bernoulli };

Stage parse_stage(std::string_view s);
std::string_view to_string(Stage s);
Mixing parse_mixing(std::string_view s);
std::string_view to_string(Mixing m);

struct LearningRates {
    double g = 2e-4;
    double d_global = 2e-4;
    double d_local = 2e-4;
};

struct ModelConfig {
    int base_width = 16;
    int n_down = 3;
    int n_res = 5;
    bool skip_connections = true;
    int disc_width = 16;
    int disc_blocks = 4;
    bool disc_conditional = false;
    int local_disc_width = 16;
    int local_disc_blocks = 3;
};

struct DataConfig {
    /// Output directory of `tgan datagen`.
    std::filesystem::path train_dir;
    /// Either a datagen output or a directory of texture images; empty means
    /// the textures stored alongside the training examples.
    std::filesystem::path texture_dir;
};

struct LocalSettings {
    /// 0 selects the resolution default.
    int patch_size = 0;
    int n_patches = 1;
};

struct FinetuneSettings {
    bool update_global_disc = true;
};

struct TrainConfig {
    Stage stage = Stage::pretrain;
    int resolution = 128;
    int batch_size = 8;
    std::int64_t iterations = 1000;
    LearningRates learning_rates{};
    losses::LossWeights weights{};
    std::uint64_t seed = 0;
    /// 0 writes only the final checkpoint.
    std::int64_t checkpoint_every = 0;
    Mixing mixing = Mixing::alternate;
    DataConfig data{};
    std::filesystem::path out_dir = "runs/default";
    ModelConfig model{};
    nets::FeatureSpec features{};
    LocalSettings local{};
    losses::Ablation ablation{};
    FinetuneSettings finetune{};
    losses::StyleReference style_reference = losses::StyleReference::ground_truth;

    /// Strict parse: unknown keys and wrong types are ConfigErrors; missing keys keep defaults.
    static TrainConfig from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;
    void validate() const;

    [[nodiscard]] int patch_size() const;
};

TrainConfig load_config(const std::filesystem::path& path);

/// Ground-truth iteration test for finetuning. alternate: even iterations;
/// bernoulli: a stateless coin with p = 0.5 keyed on (seed, iteration).
bool is_ground_truth_iteration(Mixing mixing, std::uint64_t seed, std::int64_t iteration);

/// Generator, both discriminators and the frozen feature network.
struct Model {
    std::unique_ptr<nets::Generator> g;
    std::unique_ptr<nets::Discriminator> d;
    std::unique_ptr<nets::LocalDiscriminator> d_txt;
    std::shared_ptr<const nets::FeatureExtractor> features;
};

nets::GeneratorConfig generator_config(const TrainConfig& cfg);
Model build_model(const TrainConfig& cfg);

/// Generator rebuilt from a checkpoint's config echo and parameters.
std::unique_ptr<nets::Generator> load_generator(const Checkpoint& ckpt, TrainConfig* config_out = nullptr);

/// One D_txt least-squares update on same-texture pairs (target 1) and
/// different-texture pairs (target 0). Returns the pair accuracy before the update.
double local_disc_update(const nets::LocalDiscriminator& d_txt, nn::Adam& opt, const ag::Var& pos_a,
                         const ag::Var& pos_b, const ag::Var& neg_a, const ag::Var& neg_b);

/// Fraction of scores on the right side of 0.5.
double pair_accuracy(const Tensor& pos_scores, const Tensor& neg_scores);

struct StepRecord {
    std::int64_t iteration = 0;
    /// "gt" or "texture".
    std::string kind;
    losses::LossReport report;
    double d_real_acc = 0;
    double d_fake_acc = 0;
    /// Only meaningful on texture iterations.
    double dtxt_acc = 0;
    double wall_ms = 0;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Owns the model and optimizers; every random choice is a pure function of
/// (seed, iteration), so a restored state continues the exact same stream.
class Trainer {
public:
    Trainer(TrainConfig cfg, std::shared_ptr<const datagen::Dataset> data,
            std::shared_ptr<const std::vector<datagen::TextureExample>> textures = nullptr);

    /// Runs the next iteration and advances the counter.
    StepRecord step();

    /// Explicit steps on caller-chosen batches (also advance the counter).
    StepRecord pretrain_step(std::span<const datagen::TrainingExample* const> batch);
    StepRecord finetune_step(std::span<const datagen::TrainingExample* const> batch,
                             std::span<const datagen::TextureExample* const> textures);

    [[nodiscard]] std::int64_t iteration() const { return iteration_; }
    [[nodiscard]] const TrainConfig& config() const { return cfg_; }
    [[nodiscard]] const Model& model() const { return model_; }

    [[nodiscard]] Checkpoint checkpoint() const;
    /// Restores parameters and, unless `weights_only`, optimizer moments and the counter.
    void restore(const Checkpoint& ckpt, bool weights_only);

    /// Batch indices used at `iteration`.
    [[nodiscard]] std::vector<std::size_t> batch_indices(std::int64_t iteration) const;
    [[nodiscard]] std::vector<std::size_t> texture_indices(std::int64_t iteration) const;

    /// Generator input for a texture iteration: the example's stack with its
    /// texture channels replaced by the co-located lightness of `texture`
    /// under a sampled foreground placement.
    [[nodiscard]] datagen::InputStack texture_input(const datagen::TrainingExample& ex,
                                                    const datagen::TextureExample& texture,
                                                    std::uint64_t seed) const;

private:
    void check_finite(const StepRecord& rec, std::span<const datagen::TrainingExample* const> batch,
                      std::span<const datagen::TextureExample* const> textures) const;

    TrainConfig cfg_;
    std::shared_ptr<const datagen::Dataset> data_;
    std::shared_ptr<const std::vector<datagen::TextureExample>> textures_;
    Model model_;
    nn::Adam opt_g_;
    nn::Adam opt_d_;
    nn::Adam opt_local_;
    std::int64_t iteration_ = 0;
};

struct RunOptions {
    std::optional<std::filesystem::path> resume;
    /// Stage-1 checkpoint whose weights seed a finetune run.
    std::optional<std::filesystem::path> init;
    std::function<void(const StepRecord&)> on_step;
};

/// Trains per config, writing <out_dir>/metrics.jsonl and checkpoints
/// <out_dir>/ckpt-NNNNNNNN.tgck. Returns the final checkpoint path.
std::filesystem::path run(const TrainConfig& cfg, const RunOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t iteration);

}  // namespace tgan::train
