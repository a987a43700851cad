#pragma once

#include "ma2mi/nn.hpp"
#include "ma2mi/tensor.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace ma2mi::ckpt {

// Single-file archive: JSON metadata block plus named, shaped double arrays.
// Covers model parameters, normalization buffers, optimizer slots, and rng
// state, so training resumes bit-identically.
struct Archive {
    nlohmann::json meta;  // must carry config_hash, epoch, seed, stage
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<double>>>> entries;

    bool has(const std::string& name) const;
    const std::pair<Shape, std::vector<double>>& get(const std::string& name) const;
    void put(const std::string& name, Shape shape, std::vector<double> values);
};

void save_archive(const std::string& path, const Archive& a);
Archive load_archive(const std::string& path);

// parameters and buffers under `prefix.` in the archive
void put_params(Archive& a, const std::string& prefix, const nn::ParamMap& pm);
// copies archive values back into live tensors/buffers; shape mismatch throws
void load_params(const Archive& a, const std::string& prefix, const nn::ParamMap& pm);

void put_adamw(Archive& a, const std::string& prefix, const nn::AdamW& opt);
void load_adamw(const Archive& a, const std::string& prefix, nn::AdamW& opt);

}  // namespace ma2mi::ckpt
