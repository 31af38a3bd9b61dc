#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "dtnh/errors.hpp"
#include "dtnh/net.hpp"
#include "dtnh/tensor.hpp"

namespace dtnh {

/// In-memory labeled dataset: inputs with leading extent N, labels of length N.
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }

    std::vector<std::size_t> sample_shape() const {
        return {inputs.shape.begin() + 1, inputs.shape.end()};
    }

    std::size_t sample_stride() const {
        return Tensor::size_of(sample_shape());
    }

    MiniBatch gather(const std::vector<std::size_t>& indices) const {
        const std::size_t stride = sample_stride();
        std::vector<std::size_t> shape{indices.size()};
        auto ss = sample_shape();
        shape.insert(shape.end(), ss.begin(), ss.end());
        Tensor in = Tensor::zeros(shape);
        std::vector<int> lab(indices.size());
        for (std::size_t k = 0; k < indices.size(); ++k) {
            std::copy_n(inputs.data.begin() + indices[k] * stride, stride,
                        in.data.begin() + k * stride);
            lab[k] = labels[indices[k]];
        }
        return MiniBatch{std::move(in), std::move(lab)};
    }
};

/// Shuffled-epoch mini-batch sampler: each epoch is a fresh deterministic
/// permutation of the dataset, consumed without replacement; the final batch
/// of an epoch may be short.
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size,
                 std::uint64_t seed)
        : n_(dataset_size), batch_(batch_size), rng_(seed) {
        if (n_ == 0) throw DataError("sample_batch: empty dataset");
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        reshuffle();
    }

    std::vector<std::size_t> next() {
        if (cursor_ >= n_) {
            ++epoch_;
            cursor_ = 0;
            reshuffle();
        }
        const std::size_t take = std::min(batch_, n_ - cursor_);
        std::vector<std::size_t> idx(order_.begin() + cursor_,
                                     order_.begin() + cursor_ + take);
        cursor_ += take;
        return idx;
    }

    std::size_t epoch() const { return epoch_; }

private:
    void reshuffle() { std::shuffle(order_.begin(), order_.end(), rng_); }

    std::size_t n_, batch_, cursor_ = 0, epoch_ = 0;
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
};

inline MiniBatch sample_batch(const Dataset& ds, BatchSampler& sampler) {
    return ds.gather(sampler.next());
}

}  // namespace dtnh
