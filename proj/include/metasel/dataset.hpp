#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "metasel/errors.hpp"
#include "metasel/tensor.hpp"

namespace metasel {

enum class Role { source_train, source_test, target_train, target_test, validation };

inline std::string_view role_name(Role r) {
    switch (r) {
        case Role::source_train: return "source_train";
        case Role::source_test: return "source_test";
        case Role::target_train: return "target_train";
        case Role::target_test: return "target_test";
        case Role::validation: return "validation";
    }
    return "unknown";
}

/// Labeled inputs sharing one shape. Input tensors are shared read-only
/// between datasets derived from one another (subsets, splits).
struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;
    Role role = Role::source_train;
    std::size_t num_classes = 0;

    std::size_t size() const { return inputs.size(); }
    bool empty() const { return inputs.empty(); }
    const Shape& input_shape() const { return inputs.front().shape(); }

    void validate() const {
        if (inputs.size() != labels.size()) {
            throw DataError("dataset has " + std::to_string(inputs.size()) + " inputs but " +
                            std::to_string(labels.size()) + " labels");
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= num_classes) {
                throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                " is out of range for " + std::to_string(num_classes) + " classes");
            }
            if (inputs[i].shape() != inputs.front().shape()) {
                throw DataError("input " + std::to_string(i) + " has shape " + shape_str(inputs[i].shape()) +
                                ", expected " + shape_str(inputs.front().shape()));
            }
        }
    }

    Dataset subset(const std::vector<std::size_t>& indices, Role new_role) const {
        Dataset out;
        out.role = new_role;
        out.num_classes = num_classes;
        out.inputs.reserve(indices.size());
        out.labels.reserve(indices.size());
        for (auto i : indices) {
            out.inputs.push_back(inputs.at(i));
            out.labels.push_back(labels.at(i));
        }
        return out;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (auto l : labels) ++counts[l];
        return counts;
    }
};

}  // namespace metasel
