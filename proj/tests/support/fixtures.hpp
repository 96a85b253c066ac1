#pragma once

#include <msplab/dataset.hpp>
#include <msplab/model.hpp>

namespace msplab::testing {

/// Wraps a labeled set as an all-Typical stratified dataset, ids = source order.
inline StratifiedDataset as_typical(const LabeledDataset& source) {
    StratifiedDataset ds;
    ds.class_count = source.class_count;
    ds.feature_shape = source.feature_shape;
    for (std::size_t i = 0; i < source.size(); ++i) {
        ds.examples.push_back({i, i, source.features[i], source.labels[i], source.labels[i], Tag::Typical});
    }
    return ds;
}

inline ModelSpec mlp_spec(std::size_t dim, std::size_t classes, std::vector<std::size_t> hidden,
                          std::uint64_t seed = 1) {
    return {MlpArch{std::move(hidden)}, {dim}, classes, seed};
}

}  // namespace msplab::testing
