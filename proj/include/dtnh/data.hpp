#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dtnh/dataset.hpp"
#include "dtnh/errors.hpp"
#include "dtnh/tensor.hpp"

namespace dtnh {

// ---------------------------------------------------------------------------
// CSV datasets: first column integer label, remaining columns doubles,
// no header.
// ---------------------------------------------------------------------------

inline Dataset load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_csv: cannot open " + path);
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t n_features = 0;
    int max_label = -1;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<double> row;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t pos = 0;
                row.push_back(std::stod(field, &pos));
                if (pos != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw DataError("load_csv: " + path + " line " +
                                std::to_string(line_no) + ": bad field '" + field +
                                "'");
            }
        }
        if (row.size() < 2)
            throw DataError("load_csv: " + path + " line " + std::to_string(line_no) +
                            ": need a label and at least one feature");
        if (n_features == 0) n_features = row.size() - 1;
        if (row.size() - 1 != n_features)
            throw DataError("load_csv: " + path + " line " + std::to_string(line_no) +
                            ": expected " + std::to_string(n_features + 1) +
                            " fields, got " + std::to_string(row.size()));
        const double lab = row[0];
        if (lab != std::floor(lab) || lab < 0)
            throw DataError("load_csv: " + path + " line " + std::to_string(line_no) +
                            ": label must be a nonnegative integer");
        labels.push_back(static_cast<int>(lab));
        max_label = std::max(max_label, labels.back());
        values.insert(values.end(), row.begin() + 1, row.end());
    }
    if (labels.empty()) throw DataError("load_csv: " + path + " is empty");
    Dataset ds;
    ds.inputs = Tensor({labels.size(), n_features}, std::move(values));
    ds.labels = std::move(labels);
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("save_csv: cannot open " + path);
    os.precision(17);
    const std::size_t stride = ds.sample_stride();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << ds.labels[i];
        for (std::size_t k = 0; k < stride; ++k)
            os << ',' << ds.inputs.data[i * stride + k];
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// IDX datasets: big-endian magic 0x00000803 (images) / 0x00000801 (labels),
// dimension sizes, raw unsigned bytes. Pixel bytes are scaled to [0,1].
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint32_t read_be32(std::istream& is, const std::string& path,
                               const char* field) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4)
        throw DataError("load_idx: " + path + ": truncated while reading " + field +
                        " at byte offset " + std::to_string(is.tellg()));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}
}  // namespace detail

inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError("load_idx: cannot open " + images_path);
    if (detail::read_be32(img, images_path, "magic") != 0x00000803u)
        throw DataError("load_idx: " + images_path +
                        ": bad image magic (expected 0x00000803)");
    const std::uint32_t n = detail::read_be32(img, images_path, "count");
    const std::uint32_t rows = detail::read_be32(img, images_path, "rows");
    const std::uint32_t cols = detail::read_be32(img, images_path, "cols");
    std::vector<unsigned char> pixels(std::size_t(n) * rows * cols);
    img.read(reinterpret_cast<char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
    if (img.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw DataError("load_idx: " + images_path + ": payload shorter than " +
                        std::to_string(pixels.size()) + " bytes declared by header");

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError("load_idx: cannot open " + labels_path);
    if (detail::read_be32(lab, labels_path, "magic") != 0x00000801u)
        throw DataError("load_idx: " + labels_path +
                        ": bad label magic (expected 0x00000801)");
    const std::uint32_t nl = detail::read_be32(lab, labels_path, "count");
    if (nl != n)
        throw DataError("load_idx: image count " + std::to_string(n) +
                        " != label count " + std::to_string(nl));
    std::vector<unsigned char> raw_labels(n);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), n);
    if (lab.gcount() != static_cast<std::streamsize>(n))
        throw DataError("load_idx: " + labels_path + ": truncated label payload");

    Dataset ds;
    ds.inputs = Tensor::zeros({n, rows, cols});
    for (std::size_t i = 0; i < pixels.size(); ++i)
        ds.inputs.data[i] = pixels[i] / 255.0;
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    int max_label = *std::max_element(ds.labels.begin(), ds.labels.end());
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

// ---------------------------------------------------------------------------
// Zero-mean normalization. Channel layout by rank of the inputs tensor:
// (N,F) -> per feature; (N,H,W) -> one channel; (N,C,H,W) -> per channel C.
// Statistics come from the training set and are reused on test.
// ---------------------------------------------------------------------------

struct NormStats {
    std::vector<double> channel_means;
};

namespace detail {
// (channel count, elements per channel per sample)
inline std::pair<std::size_t, std::size_t> channel_layout(const Tensor& inputs) {
    switch (inputs.rank()) {
        case 2: return {inputs.shape[1], 1};
        case 3: return {1, inputs.shape[1] * inputs.shape[2]};
        case 4: return {inputs.shape[1], inputs.shape[2] * inputs.shape[3]};
        default:
            throw DimensionError("normalization: unsupported input rank " +
                                 std::to_string(inputs.rank()));
    }
}
}  // namespace detail

inline NormStats compute_norm_stats(const Dataset& train) {
    auto [channels, per] = detail::channel_layout(train.inputs);
    NormStats st;
    st.channel_means.assign(channels, 0.0);
    const std::size_t n = train.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t k = 0; k < per; ++k)
                st.channel_means[c] +=
                    train.inputs.data[(i * channels + c) * per + k];
    for (double& m : st.channel_means) m /= static_cast<double>(n * per);
    return st;
}

inline void apply_norm_stats(Dataset& ds, const NormStats& st) {
    auto [channels, per] = detail::channel_layout(ds.inputs);
    if (channels != st.channel_means.size())
        throw DimensionError("normalization: channel count mismatch");
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t k = 0; k < per; ++k)
                ds.inputs.data[(i * channels + c) * per + k] -= st.channel_means[c];
}

// ---------------------------------------------------------------------------
// Synthetic source/target pairs. `related` applies a small rotation to the
// target's class structure; `hostile` permutes the labels and rotates hard,
// so a good source model is actively wrong on the target.
// ---------------------------------------------------------------------------

enum class TaskFamily : std::uint8_t { GaussianBlobs, TwoRings };
enum class ShiftKind : std::uint8_t { Related, Hostile };

inline TaskFamily parse_task_family(const std::string& s) {
    if (s == "gaussian-blobs") return TaskFamily::GaussianBlobs;
    if (s == "two-rings") return TaskFamily::TwoRings;
    throw ConfigError("unknown task family: " + s);
}

inline ShiftKind parse_shift_kind(const std::string& s) {
    if (s == "related") return ShiftKind::Related;
    if (s == "hostile") return ShiftKind::Hostile;
    throw ConfigError("unknown shift kind: " + s);
}

struct SyntheticPair {
    Dataset source_train, source_test, target_train, target_test;
};

namespace detail {

inline Dataset gen_blobs(std::size_t n, std::size_t classes, double rotation_rad,
                         const std::vector<int>& label_map, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 0.55);
    Dataset ds;
    ds.inputs = Tensor::zeros({n, 2});
    ds.labels.resize(n);
    ds.num_classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % classes);
        const double theta =
            2.0 * M_PI * c / static_cast<double>(classes) + rotation_rad;
        ds.inputs.data[2 * i] = 2.0 * std::cos(theta) + noise(rng);
        ds.inputs.data[2 * i + 1] = 2.0 * std::sin(theta) + noise(rng);
        ds.labels[i] = label_map[c];
    }
    return ds;
}

inline Dataset gen_rings(std::size_t n, double rotation_rad,
                         const std::vector<int>& label_map, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 0.18);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    Dataset ds;
    ds.inputs = Tensor::zeros({n, 2});
    ds.labels.resize(n);
    ds.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        const double r = (c == 0 ? 1.0 : 2.0) + noise(rng);
        const double theta = angle(rng) + rotation_rad;
        ds.inputs.data[2 * i] = r * std::cos(theta);
        ds.inputs.data[2 * i + 1] = r * std::sin(theta);
        ds.labels[i] = label_map[c];
    }
    return ds;
}

}  // namespace detail

inline SyntheticPair gen_synthetic(TaskFamily family, ShiftKind shift,
                                   std::uint64_t seed, std::size_t n_train = 240,
                                   std::size_t n_test = 240) {
    std::mt19937_64 rng(seed ^ 0x5de7a1d5u);
    const std::size_t classes = family == TaskFamily::GaussianBlobs ? 3 : 2;
    std::vector<int> identity(classes);
    for (std::size_t c = 0; c < classes; ++c) identity[c] = static_cast<int>(c);

    // Target shift: small rotation for related; label permutation (cyclic
    // shift) plus a large rotation for hostile. The hostile rotation stays
    // well clear of the inter-class spacing so it cannot cancel against the
    // permutation.
    const double rot =
        shift == ShiftKind::Related ? 15.0 * M_PI / 180.0 : 40.0 * M_PI / 180.0;
    std::vector<int> target_map = identity;
    if (shift == ShiftKind::Hostile)
        for (std::size_t c = 0; c < classes; ++c)
            target_map[c] = static_cast<int>((c + 1) % classes);

    SyntheticPair p;
    if (family == TaskFamily::GaussianBlobs) {
        p.source_train = detail::gen_blobs(n_train, classes, 0.0, identity, rng);
        p.source_test = detail::gen_blobs(n_test, classes, 0.0, identity, rng);
        p.target_train = detail::gen_blobs(n_train, classes, rot, target_map, rng);
        p.target_test = detail::gen_blobs(n_test, classes, rot, target_map, rng);
    } else {
        p.source_train = detail::gen_rings(n_train, 0.0, identity, rng);
        p.source_test = detail::gen_rings(n_test, 0.0, identity, rng);
        p.target_train = detail::gen_rings(n_train, rot, target_map, rng);
        p.target_test = detail::gen_rings(n_test, rot, target_map, rng);
    }
    return p;
}

/// Keep at most `cap` samples of each class, in dataset order. cap=0 disables.
inline Dataset per_class_cap(const Dataset& ds, std::size_t cap) {
    if (cap == 0) return ds;
    std::vector<std::size_t> counts(ds.num_classes, 0);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto c = static_cast<std::size_t>(ds.labels[i]);
        if (counts[c] < cap) {
            ++counts[c];
            keep.push_back(i);
        }
    }
    MiniBatch mb = ds.gather(keep);
    Dataset out;
    out.inputs = std::move(mb.inputs);
    out.labels = std::move(mb.labels);
    out.num_classes = ds.num_classes;
    return out;
}

}  // namespace dtnh
