#include "resmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/resample.hpp"
#include "resmatch/util.hpp"

namespace resmatch {

using ordered_json = nlohmann::ordered_json;

bool Normalization::identity() const {
    for (float m : mean)
        if (m != 0.0f) return false;
    for (float s : stddev)
        if (s != 1.0f) return false;
    return true;
}

Normalization Normalization::identity_for(int channels) {
    Normalization n;
    n.mean.assign(static_cast<std::size_t>(channels), 0.0f);
    n.stddev.assign(static_cast<std::size_t>(channels), 1.0f);
    return n;
}

std::vector<int> LabeledDataset::class_indices(int cls) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cls) out.push_back(static_cast<int>(i));
    return out;
}

std::string LabeledDataset::digest() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto span = images.f32();
    h = fnv1a64(span.data(), span.size() * sizeof(float), h);
    h = fnv1a64(labels.data(), labels.size() * sizeof(int), h);
    return "fnv1a64:" + hex64(h);
}

Normalization compute_normalization(const Tensor& images) {
    const int c = images.dim(1);
    const int64_t per_channel = images.numel() / c;
    Normalization norm;
    norm.mean.assign(static_cast<std::size_t>(c), 0.0f);
    norm.stddev.assign(static_cast<std::size_t>(c), 1.0f);
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0, sumsq = 0.0;
        for (int n = 0; n < images.dim(0); ++n)
            for (int h = 0; h < images.dim(2); ++h)
                for (int w = 0; w < images.dim(3); ++w) {
                    const double v = images.at4(n, ch, h, w);
                    sum += v;
                    sumsq += v * v;
                }
        const double mean = sum / static_cast<double>(per_channel);
        const double var = std::max(sumsq / static_cast<double>(per_channel) - mean * mean, 1e-8);
        norm.mean[static_cast<std::size_t>(ch)] = static_cast<float>(mean);
        norm.stddev[static_cast<std::size_t>(ch)] = static_cast<float>(std::sqrt(var));
    }
    return norm;
}

void apply_normalization(Tensor& images, const Normalization& norm) {
    const int c = images.dim(1);
    if (static_cast<int>(norm.mean.size()) != c)
        throw ShapeError("normalization record has " + std::to_string(norm.mean.size()) +
                         " channels, images have " + std::to_string(c));
    auto data = images.f32();
    const int64_t hw = static_cast<int64_t>(images.dim(2)) * images.dim(3);
    for (int n = 0; n < images.dim(0); ++n)
        for (int ch = 0; ch < c; ++ch) {
            float* p = data.data() + (static_cast<int64_t>(n) * c + ch) * hw;
            const float m = norm.mean[static_cast<std::size_t>(ch)];
            const float s = norm.stddev[static_cast<std::size_t>(ch)];
            for (int64_t i = 0; i < hw; ++i) p[i] = (p[i] - m) / s;
        }
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

struct Palette {
    float r_lo, r_hi, g_lo, g_hi, b_lo, b_hi;
};

// Warm, cool, green, yellow. Classes are shape x palette.
constexpr Palette kPalettes[4] = {
    {0.75f, 1.00f, 0.10f, 0.45f, 0.05f, 0.30f},
    {0.05f, 0.30f, 0.10f, 0.45f, 0.75f, 1.00f},
    {0.05f, 0.30f, 0.70f, 1.00f, 0.10f, 0.40f},
    {0.70f, 1.00f, 0.65f, 0.95f, 0.00f, 0.25f},
};

constexpr int kShapeKinds = 4;  // disk, square, triangle, cross

float shape_sdf(int kind, float u, float v, float r) {
    switch (kind) {
        case 0:  // disk
            return std::sqrt(u * u + v * v) - r;
        case 1:  // square
            return std::max(std::fabs(u), std::fabs(v)) - 0.80f * r;
        case 2: {  // triangle: intersection of three half-planes
            const float h = 0.62f * r;
            float d = -std::numeric_limits<float>::infinity();
            for (int i = 0; i < 3; ++i) {
                const float ang = 2.0f * std::numbers::pi_v<float> * static_cast<float>(i) / 3.0f;
                const float nx = std::cos(ang), ny = std::sin(ang);
                d = std::max(d, nx * u + ny * v - h);
            }
            return d;
        }
        default: {  // cross: union of two bars
            const float bar1 = std::max(std::fabs(u) - r, std::fabs(v) - 0.32f * r);
            const float bar2 = std::max(std::fabs(v) - r, std::fabs(u) - 0.32f * r);
            return std::min(bar1, bar2);
        }
    }
}

void draw_sample(Tensor& images, int row, int cls, int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    auto uni = [&](float lo, float hi) { return lo + (hi - lo) * unit(rng); };

    const int shape = cls % kShapeKinds;
    const Palette& pal = kPalettes[(cls / kShapeKinds) % 4];
    const float fs = static_cast<float>(size);

    // Background: tinted gradient.
    const float base = uni(0.15f, 0.45f);
    float bg[3] = {base + uni(-0.05f, 0.05f), base + uni(-0.05f, 0.05f), base + uni(-0.05f, 0.05f)};
    const float gdir = uni(0.0f, 2.0f * std::numbers::pi_v<float>);
    const float gamp = uni(0.0f, 0.15f);
    const float gx = std::cos(gdir), gy = std::sin(gdir);

    std::vector<float> pix(static_cast<std::size_t>(3) * size * size);
    for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w) {
            const float t = gamp * ((gx * (w / fs - 0.5f)) + (gy * (h / fs - 0.5f)));
            for (int c = 0; c < 3; ++c)
                pix[static_cast<std::size_t>((c * size + h) * size + w)] =
                    std::clamp(bg[c] + t, 0.0f, 1.0f);
        }

    // Clutter dots in muted colors.
    const int dots = 6 + static_cast<int>(unit(rng) * 7.0f);
    for (int d = 0; d < dots; ++d) {
        const float cx = uni(0.0f, fs), cy = uni(0.0f, fs);
        const float rad = uni(1.0f, 2.5f);
        float col[3] = {uni(0.2f, 0.6f), uni(0.2f, 0.6f), uni(0.2f, 0.6f)};
        const int lo_h = std::max(0, static_cast<int>(cy - rad - 1));
        const int hi_h = std::min(size - 1, static_cast<int>(cy + rad + 1));
        const int lo_w = std::max(0, static_cast<int>(cx - rad - 1));
        const int hi_w = std::min(size - 1, static_cast<int>(cx + rad + 1));
        for (int h = lo_h; h <= hi_h; ++h)
            for (int w = lo_w; w <= hi_w; ++w) {
                const float du = w + 0.5f - cx, dv = h + 0.5f - cy;
                const float cov = std::clamp(0.5f - (std::sqrt(du * du + dv * dv) - rad), 0.0f, 1.0f);
                if (cov <= 0.0f) continue;
                for (int c = 0; c < 3; ++c) {
                    auto& p = pix[static_cast<std::size_t>((c * size + h) * size + w)];
                    p = p * (1.0f - cov) + col[c] * cov;
                }
            }
    }

    // The class shape: jittered position/size/rotation, palette color.
    const float margin = 0.30f * fs;
    const float cx = uni(margin, fs - margin), cy = uni(margin, fs - margin);
    const float radius = uni(0.22f * fs, 0.36f * fs);
    const float theta = uni(0.0f, 2.0f * std::numbers::pi_v<float>);
    const float ct = std::cos(theta), st = std::sin(theta);
    float col[3] = {uni(pal.r_lo, pal.r_hi), uni(pal.g_lo, pal.g_hi), uni(pal.b_lo, pal.b_hi)};
    for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w) {
            const float px = w + 0.5f - cx, py = h + 0.5f - cy;
            const float u = ct * px + st * py, v = -st * px + ct * py;
            const float cov = std::clamp(0.5f - shape_sdf(shape, u, v, radius), 0.0f, 1.0f);
            if (cov <= 0.0f) continue;
            for (int c = 0; c < 3; ++c) {
                auto& p = pix[static_cast<std::size_t>((c * size + h) * size + w)];
                p = p * (1.0f - cov) + col[c] * cov;
            }
        }

    // Pixel noise.
    std::normal_distribution<float> noise(0.0f, 0.02f);
    for (auto& p : pix) p = std::clamp(p + noise(rng), 0.0f, 1.0f);

    for (std::size_t i = 0; i < pix.size(); ++i)
        images.set(static_cast<int64_t>(row) * 3 * size * size + static_cast<int64_t>(i), pix[i]);
}

}  // namespace

DatasetPair gen_synthetic(uint64_t seed, const SyntheticSpec& spec) {
    if (spec.size < 16) throw ConfigError("synthetic size must be >= 16");
    if (spec.num_classes < 1 || spec.num_classes > kShapeKinds * 4)
        throw ConfigError("synthetic num_classes must be in [1," +
                          std::to_string(kShapeKinds * 4) + "]");
    if (spec.per_class < 5) throw ConfigError("synthetic per_class must be >= 5");

    const int train_per_class = spec.per_class - spec.per_class / 5;
    const int test_per_class = spec.per_class - train_per_class;
    const int n_train = train_per_class * spec.num_classes;
    const int n_test = test_per_class * spec.num_classes;

    DatasetPair out;
    out.train.images = Tensor::zeros({n_train, 3, spec.size, spec.size});
    out.test.images = Tensor::zeros({n_test, 3, spec.size, spec.size});
    out.train.labels.resize(static_cast<std::size_t>(n_train));
    out.test.labels.resize(static_cast<std::size_t>(n_test));

    int tr = 0, te = 0;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        // Seed-stable split: shuffle this class's sample ids, first 80% train.
        std::vector<int> order(static_cast<std::size_t>(spec.per_class));
        for (int i = 0; i < spec.per_class; ++i) order[static_cast<std::size_t>(i)] = i;
        auto split_rng = make_rng(seed, static_cast<uint64_t>(cls), 0xA11CEull);
        std::shuffle(order.begin(), order.end(), split_rng);

        std::vector<bool> is_train(static_cast<std::size_t>(spec.per_class), false);
        for (int i = 0; i < train_per_class; ++i) is_train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

        for (int i = 0; i < spec.per_class; ++i) {
            auto rng = make_rng(seed, static_cast<uint64_t>(cls), static_cast<uint64_t>(i));
            if (is_train[static_cast<std::size_t>(i)]) {
                draw_sample(out.train.images, tr, cls, spec.size, rng);
                out.train.labels[static_cast<std::size_t>(tr)] = cls;
                ++tr;
            } else {
                draw_sample(out.test.images, te, cls, spec.size, rng);
                out.test.labels[static_cast<std::size_t>(te)] = cls;
                ++te;
            }
        }
    }

    std::ostringstream id;
    id << "shapes:seed=" << seed << ":classes=" << spec.num_classes
       << ":per_class=" << spec.per_class << ":size=" << spec.size;

    const Normalization norm = compute_normalization(out.train.images);
    apply_normalization(out.train.images, norm);
    apply_normalization(out.test.images, norm);
    for (auto* ds : {&out.train, &out.test}) {
        ds->num_classes = spec.num_classes;
        ds->norm = norm;
        ds->source_id = id.str();
    }
    out.train.split = "train";
    out.test.split = "test";
    return out;
}

// ---------------------------------------------------------------------------
// CIFAR

CifarRaw load_cifar_file(const std::filesystem::path& path, CifarVariant variant) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    const std::size_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
    const std::size_t record = label_bytes + 3072;
    const int num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
    if (bytes.size() % record != 0) {
        const std::size_t complete = bytes.size() / record;
        throw FormatError("CIFAR file " + path.string() + " is not a multiple of the record size " +
                              std::to_string(record),
                          complete * record);
    }
    const int n = static_cast<int>(bytes.size() / record);
    CifarRaw raw;
    raw.images = Tensor::zeros({n, 3, 32, 32});
    raw.labels.resize(static_cast<std::size_t>(n));
    auto data = raw.images.f32();
    for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * record;
        // cifar100 records carry (coarse, fine); the fine label is used.
        const unsigned char label = bytes[base + label_bytes - 1];
        if (label >= num_classes)
            throw FormatError("CIFAR label " + std::to_string(label) + " out of range", base);
        raw.labels[static_cast<std::size_t>(i)] = label;
        const unsigned char* px = bytes.data() + base + label_bytes;
        float* dst = data.data() + static_cast<int64_t>(i) * 3072;
        for (int j = 0; j < 3072; ++j) dst[j] = static_cast<float>(px[j]) / 255.0f;
    }
    return raw;
}

namespace {

LabeledDataset assemble_cifar(std::vector<CifarRaw> parts, CifarVariant variant,
                              const std::string& id, const std::string& split,
                              const std::optional<Normalization>& norm_in) {
    int total = 0;
    for (const auto& p : parts) total += p.images.dim(0);
    LabeledDataset ds;
    ds.images = Tensor::zeros({total, 3, 32, 32});
    ds.labels.reserve(static_cast<std::size_t>(total));
    auto dst = ds.images.f32();
    int64_t off = 0;
    for (const auto& p : parts) {
        auto src = p.images.f32();
        std::memcpy(dst.data() + off, src.data(), src.size() * sizeof(float));
        off += static_cast<int64_t>(src.size());
        ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
    }
    ds.num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
    ds.split = split;
    ds.source_id = id;
    ds.norm = norm_in ? *norm_in : compute_normalization(ds.images);
    apply_normalization(ds.images, ds.norm);
    return ds;
}

}  // namespace

LabeledDataset load_cifar(const std::filesystem::path& path, CifarVariant variant) {
    std::vector<CifarRaw> parts;
    parts.push_back(load_cifar_file(path, variant));
    const std::string id = (variant == CifarVariant::cifar10 ? "cifar10:" : "cifar100:") +
                           path.filename().string();
    return assemble_cifar(std::move(parts), variant, id, "train", std::nullopt);
}

DatasetPair load_cifar(const std::vector<std::filesystem::path>& train_files,
                       const std::vector<std::filesystem::path>& test_files,
                       CifarVariant variant) {
    if (train_files.empty()) throw DataError("CIFAR ingestion needs at least one train file");
    std::vector<CifarRaw> train_parts, test_parts;
    std::string id = variant == CifarVariant::cifar10 ? "cifar10" : "cifar100";
    for (const auto& f : train_files) {
        train_parts.push_back(load_cifar_file(f, variant));
        id += ":" + f.filename().string();
    }
    for (const auto& f : test_files) test_parts.push_back(load_cifar_file(f, variant));

    DatasetPair out;
    out.train = assemble_cifar(std::move(train_parts), variant, id, "train", std::nullopt);
    if (!test_parts.empty())
        out.test = assemble_cifar(std::move(test_parts), variant, id, "test", out.train.norm);
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory

namespace {

ordered_json norm_to_json(const Normalization& n) {
    return ordered_json{{"mean", n.mean}, {"std", n.stddev}};
}

Normalization norm_from_json(const ordered_json& j) {
    Normalization n;
    n.mean = j.at("mean").get<std::vector<float>>();
    n.stddev = j.at("std").get<std::vector<float>>();
    return n;
}

}  // namespace

void save_dataset(const DatasetPair& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["format"] = "resmatch-dataset";
    manifest["version"] = 1;
    manifest["source_id"] = data.train.source_id;
    manifest["num_classes"] = data.train.num_classes;
    manifest["normalization"] = norm_to_json(data.train.norm);
    for (const auto* ds : {&data.train, &data.test}) {
        if (!ds->size()) continue;
        const std::string name = ds->split;
        save_fdrt(ds->images, dir / (name + ".images.fdrt"));
        manifest["splits"][name] = ordered_json{{"images", name + ".images.fdrt"},
                                                {"labels", ds->labels}};
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write dataset manifest: " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

DatasetPair load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open dataset manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(in);
    if (manifest.value("format", "") != "resmatch-dataset")
        throw FormatError("not a dataset manifest: " + (dir / "manifest.json").string(), 0);
    DatasetPair out;
    const Normalization norm = norm_from_json(manifest.at("normalization"));
    for (auto& [name, entry] : manifest.at("splits").items()) {
        LabeledDataset ds;
        ds.images = load_fdrt(dir / entry.at("images").get<std::string>());
        ds.labels = entry.at("labels").get<std::vector<int>>();
        ds.num_classes = manifest.at("num_classes").get<int>();
        ds.split = name;
        ds.norm = norm;
        ds.source_id = manifest.value("source_id", "");
        if (ds.images.dim(0) != static_cast<int>(ds.labels.size()))
            throw FormatError("dataset split '" + name + "' image/label count mismatch", 0);
        for (int l : ds.labels)
            if (l < 0 || l >= ds.num_classes)
                throw FormatError("dataset split '" + name + "' has label out of range", 0);
        if (name == "train")
            out.train = std::move(ds);
        else if (name == "test")
            out.test = std::move(ds);
        else
            throw FormatError("unknown dataset split '" + name + "'", 0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PPM

void export_ppm(const Tensor& image, const Normalization& norm,
                const std::filesystem::path& path) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("export_ppm: expected [3,H,W], got " + image.shape_string());
    const int h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write PPM file: " + path.string());
    out << "P6\n" << w << " " << h << "\n255\n";
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < hw; ++i) {
        for (int c = 0; c < 3; ++c) {
            float v = image.at(static_cast<int64_t>(c) * hw + i);
            v = v * norm.stddev[static_cast<std::size_t>(c)] + norm.mean[static_cast<std::size_t>(c)];
            v = std::clamp(v, 0.0f, 1.0f);
            out.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0f))));
        }
    }
    if (!out) throw IoError("short write to PPM file: " + path.string());
}

Tensor load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open PPM file: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw FormatError("not a binary PPM file: " + path.string(), 0);
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (w < 1 || h < 1 || maxval != 255)
        throw FormatError("unsupported PPM header in " + path.string(),
                          static_cast<std::size_t>(in.tellg()));
    in.get();  // single whitespace after header
    std::vector<char> bytes(static_cast<std::size_t>(3) * w * h);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError("truncated PPM payload in " + path.string(),
                          static_cast<std::size_t>(in.gcount()));
    Tensor img = Tensor::zeros({3, h, w});
    auto data = img.f32();
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            data[static_cast<std::size_t>(c * hw + i)] =
                static_cast<float>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i * 3 + c)])) /
                255.0f;
    return img;
}

// ---------------------------------------------------------------------------
// Augmentation

Tensor take_sample(const Tensor& images, int index) {
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor out = Tensor::zeros({c, h, w});
    const int64_t count = static_cast<int64_t>(c) * h * w;
    auto src = images.f32();
    std::memcpy(out.f32().data(), src.data() + static_cast<int64_t>(index) * count,
                static_cast<std::size_t>(count) * sizeof(float));
    return out;
}

void put_sample(Tensor& batch, int row, const Tensor& image) {
    const int64_t count = image.numel();
    std::memcpy(batch.f32().data() + static_cast<int64_t>(row) * count, image.f32().data(),
                static_cast<std::size_t>(count) * sizeof(float));
}

Tensor random_crop_pad(const Tensor& image, int pad, std::mt19937_64& rng) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::uniform_int_distribution<int> dh(0, 2 * pad), dw(0, 2 * pad);
    const int oh = dh(rng), ow = dw(rng);
    Tensor out = Tensor::zeros({c, h, w});
    auto dst = out.f32();
    auto src = image.f32();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i) {
            const int si = i + oh - pad;
            if (si < 0 || si >= h) continue;
            for (int j = 0; j < w; ++j) {
                const int sj = j + ow - pad;
                if (sj < 0 || sj >= w) continue;
                dst[static_cast<std::size_t>((ch * h + i) * w + j)] =
                    src[static_cast<std::size_t>((ch * h + si) * w + sj)];
            }
        }
    return out;
}

Tensor random_resized_crop(const Tensor& image, float min_scale, std::mt19937_64& rng) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    const float side_lo = std::sqrt(std::clamp(min_scale, 0.05f, 1.0f));
    const float frac = side_lo + (1.0f - side_lo) * unit(rng);
    const int ch_ = std::max(1, static_cast<int>(std::lround(frac * h)));
    const int cw_ = std::max(1, static_cast<int>(std::lround(frac * w)));
    std::uniform_int_distribution<int> dy(0, h - ch_), dx(0, w - cw_);
    const int y0 = dy(rng), x0 = dx(rng);
    Tensor crop = Tensor::zeros({1, c, ch_, cw_});
    auto dst = crop.f32();
    auto src = image.f32();
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < ch_; ++i)
            std::memcpy(dst.data() + (static_cast<int64_t>(ci) * ch_ + i) * cw_,
                        src.data() + (static_cast<int64_t>(ci) * h + y0 + i) * w + x0,
                        static_cast<std::size_t>(cw_) * sizeof(float));
    Tensor resized = resample(crop, h, w);
    return resized.reshaped({c, h, w});
}

Tensor hflip(const Tensor& image) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out = Tensor::zeros({c, h, w});
    auto dst = out.f32();
    auto src = image.f32();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                dst[static_cast<std::size_t>((ch * h + i) * w + j)] =
                    src[static_cast<std::size_t>((ch * h + i) * w + (w - 1 - j))];
    return out;
}

}  // namespace resmatch
