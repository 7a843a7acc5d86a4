#include "auxq/data.hpp"

#include "auxq/errors.hpp"
#include "auxq/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace auxq {

namespace fs = std::filesystem;

Dataset Dataset::head(std::size_t n) const
{
    Dataset d = *this;
    if (n >= size()) return d;
    d.labels.resize(n);
    d.images.resize(n * sample_size());
    if (!d.latents.empty()) d.latents.resize(n);
    return d;
}

DatasetStats dataset_stats(const Dataset& d)
{
    DatasetStats s;
    s.count = d.size();
    s.class_histogram.assign(d.num_classes, 0);
    for (int y : d.labels) ++s.class_histogram.at(static_cast<std::size_t>(y));
    if (!d.images.empty()) {
        auto [lo, hi] = std::minmax_element(d.images.begin(), d.images.end());
        s.min_pixel = *lo;
        s.max_pixel = *hi;
    }
    return s;
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at)
{
    return std::uint32_t{b[at]} << 24 | std::uint32_t{b[at + 1]} << 16 | std::uint32_t{b[at + 2]} << 8 | b[at + 3];
}

std::string hex(std::uint32_t v)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

}  // namespace

Dataset load_idx(const fs::path& images, const fs::path& labels, std::size_t num_classes)
{
    const auto img = read_file(images);
    const auto lab = read_file(labels);
    if (img.size() < 16) throw FormatError("idx: '" + images.string() + "' is too short for an image header");
    if (lab.size() < 8) throw FormatError("idx: '" + labels.string() + "' is too short for a label header");
    if (be32(img, 0) != 0x803)
        throw FormatError("idx: '" + images.string() + "' has magic " + hex(be32(img, 0)) + ", expected 0x00000803");
    if (be32(lab, 0) != 0x801)
        throw FormatError("idx: '" + labels.string() + "' has magic " + hex(be32(lab, 0)) + ", expected 0x00000801");

    const std::size_t count = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    const std::size_t label_count = be32(lab, 4);
    if (count != label_count)
        throw FormatError("idx: " + std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
    if (img.size() != 16 + count * rows * cols)
        throw FormatError("idx: '" + images.string() + "' holds " + std::to_string(img.size() - 16) +
                          " pixel bytes, header promises " + std::to_string(count * rows * cols));
    if (lab.size() != 8 + count)
        throw FormatError("idx: '" + labels.string() + "' holds " + std::to_string(lab.size() - 8) +
                          " label bytes, header promises " + std::to_string(count));

    Dataset d;
    d.channels = 1;
    d.height = rows;
    d.width = cols;
    d.num_classes = num_classes;
    std::vector<std::string> bad;
    for (std::size_t i = 0; i < count; ++i)
        if (lab[8 + i] >= num_classes && bad.size() < 5)
            bad.push_back("label[" + std::to_string(i) + "] = " + std::to_string(lab[8 + i]) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    if (!bad.empty()) throw ValidationError(std::move(bad));
    d.labels.assign(lab.begin() + 8, lab.end());
    d.images.resize(count * rows * cols);
    for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
    return d;
}

Dataset load_cifar10_binary(std::span<const fs::path> files)
{
    constexpr std::size_t record = 3073;
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.num_classes = 10;
    for (const auto& f : files) {
        const auto bytes = read_file(f);
        if (bytes.empty()) throw FormatError("cifar10: '" + f.string() + "' is empty");
        if (bytes.size() % record != 0)
            throw FormatError("cifar10: '" + f.string() + "' has " + std::to_string(bytes.size()) +
                              " bytes, not a multiple of 3073");
        const std::size_t n = bytes.size() / record;
        for (std::size_t r = 0; r < n; ++r) {
            const auto* rec = bytes.data() + r * record;
            if (rec[0] >= 10)
                throw ValidationError({"cifar10: record " + std::to_string(r) + " of '" + f.string() + "' has label " +
                                       std::to_string(rec[0])});
            d.labels.push_back(rec[0]);
            for (std::size_t i = 1; i < record; ++i) d.images.push_back(static_cast<float>(rec[i]) / 255.0f);
        }
    }
    if (d.size() == 0) throw FormatError("cifar10: no records");
    return d;
}

std::string_view to_string(SynthKind kind)
{
    return kind == SynthKind::Blobs ? "blobs" : "spirals";
}

SynthKind parse_synth_kind(std::string_view text)
{
    if (text == "blobs") return SynthKind::Blobs;
    if (text == "spirals") return SynthKind::Spirals;
    throw UsageError("unknown synthetic kind '" + std::string(text) + "' (expected blobs or spirals)");
}

Dataset synth_generate(SynthKind kind, std::size_t n, std::size_t classes, std::uint64_t seed)
{
    if (classes < 2) throw UsageError("synth: classes must be at least 2");
    if (n < classes) throw UsageError("synth: n must be at least the class count");

    constexpr double pi = std::numbers::pi;
    auto rng = make_stream(seed, kind == SynthKind::Blobs ? "synth_blobs" : "synth_spirals");
    Dataset d;
    d.channels = 1;
    d.height = 8;
    d.width = 8;
    d.num_classes = classes;
    d.labels.resize(n);
    d.latents.resize(n);

    // Disks of radius 0.3 * (closest center gap) sit well inside their Voronoi cells.
    const double ring = 2.0;
    const double gap = 2.0 * ring * std::sin(pi / static_cast<double>(classes));
    const double disk = 0.3 * gap;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        d.labels[i] = static_cast<int>(c);
        const double phase = 2.0 * pi * static_cast<double>(c) / static_cast<double>(classes);
        if (kind == SynthKind::Blobs) {
            const double r = disk * std::sqrt(uniform01(rng));
            const double a = 2.0 * pi * uniform01(rng);
            d.latents[i] = {ring * std::cos(phase) + r * std::cos(a), ring * std::sin(phase) + r * std::sin(a)};
        } else {
            const double t = 0.05 + 0.95 * uniform01(rng);
            const double a = phase + 3.0 * pi * t;
            d.latents[i] = {ring * t * std::cos(a) + 0.05 * standard_normal(rng),
                            ring * t * std::sin(a) + 0.05 * standard_normal(rng)};
        }
    }

    double reach = 0;
    for (const auto& z : d.latents) reach = std::max(reach, std::hypot(z[0], z[1]));
    reach = std::max(reach, 1e-9);

    // Each pixel is 0.5 + 0.5 * (a_j . z) / reach with |a_j| <= 1, so it stays in [0, 1].
    auto render = make_stream(seed, "synth_render");
    const std::size_t pixels = d.sample_size();
    std::vector<std::array<double, 2>> proj(pixels);
    for (auto& a : proj) {
        const double ang = 2.0 * pi * uniform01(render);
        const double len = 0.5 + 0.5 * uniform01(render);
        a = {len * std::cos(ang), len * std::sin(ang)};
    }
    d.images.resize(n * pixels);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < pixels; ++j) {
            const double dot = proj[j][0] * d.latents[i][0] + proj[j][1] * d.latents[i][1];
            d.images[i * pixels + j] = static_cast<float>(0.5 + 0.5 * dot / reach);
        }
    return d;
}

Normalization Normalization::fit(const Dataset& d)
{
    Normalization n;
    const std::size_t plane = d.height * d.width;
    n.mean.assign(d.channels, 0.0);
    n.stddev.assign(d.channels, 0.0);
    if (d.size() == 0) throw UsageError("normalization: empty dataset");
    for (std::size_t c = 0; c < d.channels; ++c) {
        double s = 0, ss = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const float* p = d.images.data() + i * d.sample_size() + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                s += p[j];
                ss += static_cast<double>(p[j]) * p[j];
            }
        }
        const double cnt = static_cast<double>(d.size() * plane);
        n.mean[c] = s / cnt;
        n.stddev[c] = std::sqrt(std::max(ss / cnt - n.mean[c] * n.mean[c], 0.0));
        if (n.stddev[c] < 1e-6) n.stddev[c] = 1.0;
    }
    return n;
}

std::string_view to_string(Augment a)
{
    switch (a) {
    case Augment::None: return "none";
    case Augment::Flip: return "flip";
    case Augment::CropFlip: return "crop_flip";
    }
    return "?";
}

Augment parse_augment(std::string_view text)
{
    if (text == "none") return Augment::None;
    if (text == "flip") return Augment::Flip;
    if (text == "crop_flip") return Augment::CropFlip;
    throw UsageError("unknown augmentation '" + std::string(text) + "' (expected none, flip or crop_flip)");
}

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n)
{
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (i < 0) i = -i;
    if (i >= m) i = 2 * m - 2 - i;
    return static_cast<std::size_t>(i);
}

}  // namespace

template <typename T>
Batch<T> make_batch(const Dataset& d, std::span<const std::size_t> indices, const Normalization& norm,
                    Augment augment, std::mt19937_64* rng, std::size_t padding)
{
    if (augment != Augment::None && rng == nullptr) throw UsageError("make_batch: augmentation needs a random stream");
    if (augment == Augment::CropFlip && (padding >= d.height || padding >= d.width))
        throw UsageError("make_batch: crop padding " + std::to_string(padding) + " too large for " +
                         std::to_string(d.height) + "x" + std::to_string(d.width) + " images");
    if (!norm.identity() && norm.mean.size() != d.channels)
        throw ShapeError("make_batch: normalization has " + std::to_string(norm.mean.size()) + " channels, data has " +
                         std::to_string(d.channels));

    const std::size_t C = d.channels, H = d.height, W = d.width;
    Batch<T> b;
    b.x = Tensor<T>(Shape{indices.size(), C, H, W});
    b.labels.reserve(indices.size());
    auto out = b.x.data();
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const auto src = d.image(indices[n]);
        b.labels.push_back(d.labels[indices[n]]);
        std::ptrdiff_t oy = 0, ox = 0;
        bool flip = false;
        if (augment == Augment::CropFlip) {
            oy = static_cast<std::ptrdiff_t>(uniform_index(*rng, 2 * padding + 1)) - static_cast<std::ptrdiff_t>(padding);
            ox = static_cast<std::ptrdiff_t>(uniform_index(*rng, 2 * padding + 1)) - static_cast<std::ptrdiff_t>(padding);
        }
        if (augment != Augment::None) flip = uniform_index(*rng, 2) == 1;
        for (std::size_t c = 0; c < C; ++c) {
            const double mean = norm.identity() ? 0.0 : norm.mean[c];
            const double sd = norm.identity() ? 1.0 : norm.stddev[c];
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + oy, H);
                    std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x) + ox, W);
                    if (flip) sx = W - 1 - sx;
                    const double v = src[(c * H + sy) * W + sx];
                    out[((n * C + c) * H + y) * W + x] = static_cast<T>((v - mean) / sd);
                }
        }
    }
    return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng)
{
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    return idx;
}

std::string_view to_string(SourceKind kind)
{
    switch (kind) {
    case SourceKind::Idx: return "idx";
    case SourceKind::Cifar10: return "cifar10";
    case SourceKind::Synthetic: return "synthetic";
    }
    return "?";
}

SourceKind parse_source_kind(std::string_view text)
{
    if (text == "idx") return SourceKind::Idx;
    if (text == "cifar10") return SourceKind::Cifar10;
    if (text == "synthetic") return SourceKind::Synthetic;
    throw UsageError("unknown dataset source '" + std::string(text) + "' (expected idx, cifar10 or synthetic)");
}

std::vector<std::string> DatasetSpec::validate() const
{
    std::vector<std::string> errs;
    switch (source) {
    case SourceKind::Idx:
        if (train_images.empty() || train_labels.empty() || test_images.empty() || test_labels.empty())
            errs.push_back("dataset: idx source needs train_images, train_labels, test_images and test_labels");
        if (num_classes < 2) errs.push_back("dataset: num_classes must be at least 2");
        break;
    case SourceKind::Cifar10:
        if (train_files.empty() || test_files.empty())
            errs.push_back("dataset: cifar10 source needs train_files and test_files");
        break;
    case SourceKind::Synthetic:
        if (num_classes < 2) errs.push_back("dataset: num_classes must be at least 2");
        if (synth_train < num_classes) errs.push_back("dataset: synthetic train size below class count");
        if (synth_test == 0) errs.push_back("dataset: synthetic test size must be positive");
        break;
    }
    return errs;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

Dataset slice(const Dataset& d, std::size_t from, std::size_t to)
{
    Dataset out = d;
    const std::size_t s = d.sample_size();
    out.labels.assign(d.labels.begin() + from, d.labels.begin() + to);
    out.images.assign(d.images.begin() + from * s, d.images.begin() + to * s);
    if (!d.latents.empty()) out.latents.assign(d.latents.begin() + from, d.latents.begin() + to);
    return out;
}

}  // namespace

DataSplits load_dataset(const DatasetSpec& spec, const fs::path& base)
{
    if (auto errs = spec.validate(); !errs.empty()) throw ValidationError(std::move(errs));
    DataSplits s;
    switch (spec.source) {
    case SourceKind::Idx:
        s.train = load_idx(resolve(base, spec.train_images), resolve(base, spec.train_labels), spec.num_classes);
        s.test = load_idx(resolve(base, spec.test_images), resolve(base, spec.test_labels), spec.num_classes);
        break;
    case SourceKind::Cifar10: {
        std::vector<fs::path> train, test;
        for (const auto& f : spec.train_files) train.push_back(resolve(base, f));
        for (const auto& f : spec.test_files) test.push_back(resolve(base, f));
        s.train = load_cifar10_binary(train);
        s.test = load_cifar10_binary(test);
        break;
    }
    case SourceKind::Synthetic: {
        const auto all = synth_generate(spec.synth_kind, spec.synth_train + spec.synth_test, spec.num_classes,
                                        spec.synth_seed);
        s.train = slice(all, 0, spec.synth_train);
        s.test = slice(all, spec.synth_train, all.size());
        break;
    }
    }
    if (spec.train_limit > 0) s.train = s.train.head(spec.train_limit);
    if (spec.test_limit > 0) s.test = s.test.head(spec.test_limit);
    if (s.train.size() == 0 || s.test.size() == 0) throw UsageError("dataset: a split is empty");
    if (s.train.channels != s.test.channels || s.train.height != s.test.height || s.train.width != s.test.width)
        throw FormatError("dataset: train and test images differ in shape");
    if (spec.normalize) s.norm = Normalization::fit(s.train);
    s.augment = spec.augment;
    s.crop_padding = spec.crop_padding;
    return s;
}

template Batch<float> make_batch(const Dataset&, std::span<const std::size_t>, const Normalization&, Augment,
                                 std::mt19937_64*, std::size_t);
template Batch<double> make_batch(const Dataset&, std::span<const std::size_t>, const Normalization&, Augment,
                                  std::mt19937_64*, std::size_t);

}  // namespace auxq
