/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/archive.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>

#include "byte_stream.hpp"
#include "tgan/codec.hpp"
#include "tgan/image_io.hpp"

namespace tgan::datagen {

namespace {

constexpr char kMagic[8] = {'T', 'G', 'S', 'H', 'A', 'R', 'D', '1'};
constexpr std::uint32_t kExampleKind = 1;
constexpr std::uint32_t kTextureKind = 2;

using Writer = detail::ByteWriter;

class Reader : public detail::ByteReader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : detail::ByteReader(b, "shard") {}
    void expect_magic() {
        if (!matches(kMagic, sizeof(kMagic))) {
            throw std::runtime_error("not a tgan shard (bad magic)");
        }
        skip(sizeof(kMagic));
    }
};

void write_placement(Writer& w, const PatchPlacement& p) {
    w.pod<std::int32_t>(p.rect.x);
    w.pod<std::int32_t>(p.rect.y);
    w.pod<std::int32_t>(p.rect.w);
    w.pod<std::int32_t>(p.rect.h);
    w.pod<double>(p.overlap);
}

PatchPlacement read_placement(Reader& r) {
    PatchPlacement p;
    p.rect.x = r.pod<std::int32_t>();
    p.rect.y = r.pod<std::int32_t>();
    p.rect.w = r.pod<std::int32_t>();
    p.rect.h = r.pod<std::int32_t>();
    p.overlap = r.pod<double>();
    return p;
}

void write_lab(Writer& w, const LabImage& img) {
    w.plane(img.L);
    w.plane(img.a);
    w.plane(img.b);
}

LabImage read_lab(Reader& r, int h, int w) {
    LabImage img;
    img.L = r.plane<float>(h, w);
    img.a = r.plane<float>(h, w);
    img.b = r.plane<float>(h, w);
    return img;
}

void header(Writer& w, std::uint32_t kind, std::size_t count) {
    w.raw(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(1);
    w.pod<std::uint32_t>(kind);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(count));
}

std::uint32_t read_header(Reader& r, std::uint32_t kind) {
    r.expect_magic();
    if (r.pod<std::uint32_t>() != 1) {
        throw std::runtime_error("unsupported shard version");
    }
    if (r.pod<std::uint32_t>() != kind) {
        throw std::runtime_error("shard holds a different record kind");
    }
    return r.pod<std::uint32_t>();
}

}  // namespace

std::vector<std::uint8_t> encode_example_shard(std::span<const TrainingExample> examples) {
    Writer w;
    header(w, kExampleKind, examples.size());
    for (const auto& ex : examples) {
        w.str(ex.source_id);
        w.pod<std::int32_t>(ex.input.height());
        w.pod<std::int32_t>(ex.input.width());
        w.plane(ex.input.sketch);
        w.plane(ex.input.tex_intensity);
        w.plane(ex.input.tex_mask);
        w.plane(ex.input.color_a);
        w.plane(ex.input.color_b);
        write_lab(w, ex.target);
        w.plane(ex.mask.mask);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(ex.texture_placements.size()));
        for (const auto& p : ex.texture_placements) {
            write_placement(w, p);
        }
        w.pod<std::uint8_t>(ex.color_placement ? 1 : 0);
        if (ex.color_placement) {
            write_placement(w, *ex.color_placement);
        }
    }
    return w.take();
}

std::vector<TrainingExample> decode_example_shard(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto count = read_header(r, kExampleKind);
    std::vector<TrainingExample> out(count);
    for (auto& ex : out) {
        ex.source_id = r.str();
        const int h = r.pod<std::int32_t>();
        const int w = r.pod<std::int32_t>();
        ex.input.sketch = r.plane<std::uint8_t>(h, w);
        ex.input.tex_intensity = r.plane<float>(h, w);
        ex.input.tex_mask = r.plane<std::uint8_t>(h, w);
        ex.input.color_a = r.plane<float>(h, w);
        ex.input.color_b = r.plane<float>(h, w);
        ex.target = read_lab(r, h, w);
        ex.mask.mask = r.plane<std::uint8_t>(h, w);
        const auto np = r.pod<std::uint32_t>();
        for (std::uint32_t i = 0; i < np; ++i) {
            ex.texture_placements.push_back(read_placement(r));
        }
        if (r.pod<std::uint8_t>()) {
            ex.color_placement = read_placement(r);
        }
    }
    if (!r.done()) {
        throw std::runtime_error("trailing bytes in example shard");
    }
    return out;
}

std::vector<std::uint8_t> encode_texture_shard(std::span<const TextureExample> textures) {
    Writer w;
    header(w, kTextureKind, textures.size());
    for (const auto& t : textures) {
        w.str(t.source_id);
        w.pod<std::int32_t>(t.texture.height());
        w.pod<std::int32_t>(t.texture.width());
        write_lab(w, t.texture);
    }
    return w.take();
}

std::vector<TextureExample> decode_texture_shard(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const auto count = read_header(r, kTextureKind);
    std::vector<TextureExample> out(count);
    for (auto& t : out) {
        t.source_id = r.str();
        const int h = r.pod<std::int32_t>();
        const int w = r.pod<std::int32_t>();
        t.texture = read_lab(r, h, w);
    }
    if (!r.done()) {
        throw std::runtime_error("trailing bytes in texture shard");
    }
    return out;
}

namespace {

namespace fs = std::filesystem;

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) {
        return files;
    }
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) {
            continue;
        }
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

std::string shard_name(const char* prefix, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s-%05zu.tgs", prefix, index);
    return buf;
}

template <typename T, typename Encode>
void write_shards(const fs::path& out, const char* prefix, const std::vector<T>& items, std::size_t shard_size,
                  Encode encode, std::vector<ShardInfo>& infos) {
    for (std::size_t start = 0, index = 0; start < items.size(); start += shard_size, ++index) {
        const std::size_t n = std::min(shard_size, items.size() - start);
        const auto bytes = encode(std::span<const T>(items.data() + start, n));
        const std::string name = shard_name(prefix, index);
        io::write_file(out / name, bytes);
        infos.push_back({name, n, codec::sha256_hex(bytes)});
    }
}

}  // namespace

DatagenSummary run_datagen(const DatagenJob& job) {
    const fs::path photos = job.root / "photos";
    const auto files = list_images(photos);
    if (files.empty()) {
        throw ConfigError("no photos found in " + photos.string());
    }
    if (job.shard_size == 0) {
        throw ConfigError("shard size must be positive");
    }
    fs::create_directories(job.out);

    ExampleConfig cfg;
    cfg.resolution = job.resolution;
    cfg.sketch = job.sketch;
    cfg.mask_mode = job.mask_mode;
    cfg.max_patches = job.patches;
    cfg.placement = placement_defaults(job.resolution);

    DatagenSummary summary;
    std::vector<TrainingExample> examples;
    for (const auto& f : files) {
        const std::string id = f.filename().string();
        try {
            const RgbImage photo = io::read_image(f);
            ExampleExtras extras;
            BinaryMap provided;
            if (job.mask_mode == MaskMode::provided) {
                provided = io::mask_from_image(io::read_image(job.root / "masks" / (f.stem().string() + ".png")));
                extras.provided_mask = &provided;
            }
            examples.push_back(make_training_example(photo, codec::derive_seed(job.seed, id), cfg, id, extras));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            spdlog::warn("rejecting {}: {}", id, e.what());
            ++summary.rejected;
        }
    }
    summary.examples = examples.size();
    write_shards(job.out, "examples", examples, job.shard_size, encode_example_shard, summary.shards);

    const fs::path texture_dir = job.root / "textures";
    if (fs::is_directory(texture_dir) && !list_images(texture_dir).empty()) {
        TextureIngestConfig tc{job.resolution, job.texture_crops, job.seed};
        const auto textures = ingest_texture_dir(texture_dir, tc);
        summary.textures = textures.size();
        write_shards(job.out, "textures", textures, job.shard_size, encode_texture_shard, summary.shards);
    }

    nlohmann::json manifest;
    manifest["format"] = "tgan-dataset";
    manifest["version"] = 1;
    manifest["counts"] = {{"examples", summary.examples}, {"rejected", summary.rejected}, {"textures", summary.textures}};
    manifest["config"] = {{"root", job.root.string()},
                          {"resolution", job.resolution},
                          {"sketch", std::string(to_string(job.sketch))},
                          {"mask_mode", std::string(to_string(job.mask_mode))},
                          {"patches", job.patches},
                          {"seed", job.seed},
                          {"texture_crops", job.texture_crops},
                          {"shard_size", job.shard_size}};
    auto& shards = manifest["shards"] = nlohmann::json::array();
    for (const auto& s : summary.shards) {
        shards.push_back({{"file", s.file}, {"count", s.count}, {"sha256", s.sha256}});
    }
    std::ofstream(job.out / "manifest.json") << manifest.dump(2) << '\n';
    return summary;
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw ConfigError("missing manifest.json in " + dir.string());
    }
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.value("format", "") != "tgan-dataset") {
        throw ConfigError(dir.string() + "/manifest.json is not a tgan dataset manifest");
    }
    Dataset ds;
    ds.resolution = manifest.at("config").at("resolution").get<int>();
    for (const auto& s : manifest.at("shards")) {
        const std::string file = s.at("file").get<std::string>();
        const auto bytes = io::read_file(dir / file);
        if (codec::sha256_hex(bytes) != s.at("sha256").get<std::string>()) {
            throw std::runtime_error("checksum mismatch for shard " + (dir / file).string());
        }
        if (file.rfind("examples-", 0) == 0) {
            auto items = decode_example_shard(bytes);
            std::move(items.begin(), items.end(), std::back_inserter(ds.examples));
        } else if (file.rfind("textures-", 0) == 0) {
            auto items = decode_texture_shard(bytes);
            std::move(items.begin(), items.end(), std::back_inserter(ds.textures));
        }
    }
    return ds;
}

}  // namespace tgan::datagen
