#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cprn/tensor.hpp"

namespace cprn {

enum class Init { Uniform, Zero };

/// Named trainable tensors. Initialization is uniform in +-1/sqrt(fan_in),
/// seeded per (store seed, parameter name) so registration order is irrelevant.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    /// Register a new parameter. fan_in < 0 means "use the first extent".
    const Tensor& create(const std::string& name, std::vector<int> shape,
                         Init init = Init::Uniform, int fan_in = -1);

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    std::vector<std::string> names() const;
    size_t size() const { return params_.size(); }
    long total_elements() const;
    std::uint64_t seed() const { return seed_; }

    /// Overwrite a parameter's values in place (optimizer step, tests).
    void set_data(const std::string& name, const std::vector<real>& values);

    void save(const std::string& path) const;
    /// Fill existing parameters from a checkpoint; names and shapes must match.
    void load(const std::string& path);

private:
    std::map<std::string, Tensor> params_;
    std::uint64_t seed_;
};

/// y = x W + b with W, b looked up as name.w / name.b.
Tensor linear(const Tensor& x, const ParameterStore& store, const std::string& name);

/// Register name.w [c_in x c_out] and name.b [c_out]; bias fan_in is c_in.
void register_linear(ParameterStore& store, const std::string& name, int c_in, int c_out,
                     Init init = Init::Uniform);

}  // namespace cprn
