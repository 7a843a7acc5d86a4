#pragma once

#include "auxq/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace auxq {

// Images are stored channel-major in [0, 1], one float per pixel.
struct Dataset {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = 0;
    std::vector<float> images;
    std::vector<int> labels;
    // Generating 2D points, synthetic sets only.
    std::vector<std::array<double, 2>> latents;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t sample_size() const noexcept { return channels * height * width; }
    std::span<const float> image(std::size_t i) const
    {
        return {images.data() + i * sample_size(), sample_size()};
    }
    // First n samples (or all of them).
    Dataset head(std::size_t n) const;
};

struct DatasetStats {
    std::size_t count = 0;
    std::vector<std::size_t> class_histogram;
    float min_pixel = 0;
    float max_pixel = 0;

    friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

DatasetStats dataset_stats(const Dataset& d);

// Big-endian IDX: images magic 0x00000803 (u8, count x rows x cols), labels
// 0x00000801 (u8, count). Labels must lie in [0, num_classes).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t num_classes = 10);

// Records of 1 label byte + 3072 channel-major pixel bytes (3x32x32).
Dataset load_cifar10_binary(std::span<const std::filesystem::path> files);

enum class SynthKind { Blobs, Spirals };
std::string_view to_string(SynthKind kind);
SynthKind parse_synth_kind(std::string_view text);

// 2D points rendered linearly into 1x8x8 images. Blobs are bounded disks
// around well-separated centers, so they are linearly separable; spirals
// interleave and are not.
Dataset synth_generate(SynthKind kind, std::size_t n, std::size_t classes, std::uint64_t seed);

struct Normalization {
    std::vector<double> mean;  // per channel; empty means identity
    std::vector<double> stddev;

    bool identity() const noexcept { return mean.empty(); }
    static Normalization fit(const Dataset& d);
};

enum class Augment { None, Flip, CropFlip };
std::string_view to_string(Augment a);
Augment parse_augment(std::string_view text);

template <typename T>
struct Batch {
    Tensor<T> x;
    std::vector<int> labels;
};

// Gathers `indices` into a normalized batch. Augmentation draws from `rng`
// and is applied before normalization; CropFlip reflect-pads by `padding`.
template <typename T>
Batch<T> make_batch(const Dataset& d, std::span<const std::size_t> indices, const Normalization& norm,
                    Augment augment = Augment::None, std::mt19937_64* rng = nullptr, std::size_t padding = 4);

// Fisher-Yates over [0, n) with the portable index draw.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

enum class SourceKind { Idx, Cifar10, Synthetic };
std::string_view to_string(SourceKind kind);
SourceKind parse_source_kind(std::string_view text);

struct DatasetSpec {
    SourceKind source = SourceKind::Synthetic;
    std::string label;  // free text, e.g. "MNIST 5k subset"
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t num_classes = 10;
    // cifar10
    std::vector<std::string> train_files, test_files;
    // synthetic: train and test come from one draw, split by position
    SynthKind synth_kind = SynthKind::Blobs;
    std::size_t synth_train = 512;
    std::size_t synth_test = 256;
    std::uint64_t synth_seed = 1;
    // 0 keeps everything
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;
    // per-channel mean/std fitted on the train split
    bool normalize = true;
    Augment augment = Augment::None;
    std::size_t crop_padding = 4;

    std::vector<std::string> validate() const;
};

struct DataSplits {
    Dataset train;
    Dataset test;
    Normalization norm;
    Augment augment = Augment::None;  // train split only
    std::size_t crop_padding = 4;
};

// Relative paths resolve against `base`.
DataSplits load_dataset(const DatasetSpec& spec, const std::filesystem::path& base = {});

}  // namespace auxq
