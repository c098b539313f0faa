#pragma once

#include <string>
#include <vector>

#include "cprn/params.hpp"
#include "cprn/tensor.hpp"

namespace cprn::decoder {

/// How the stage features enter the progressive decoder. Consume feeds every
/// stage feature including the finest; Literal skips the finest and reuses the
/// coarsest twice.
enum class Wiring { Consume, Literal };

Wiring wiring_from_string(const std::string& s);
std::string to_string(Wiring w);

void register_params(ParameterStore& store, const std::string& prefix, int c, int stages);

/// Progressive coarse-to-fine decode. f_list is ordered finest first. Returns
/// the sigmoid score map upsampled to (out_h, out_w).
Tensor decode(const std::vector<Tensor>& f_list, const ParameterStore& store,
              const std::string& prefix, int out_h, int out_w,
              Wiring wiring = Wiring::Consume);

}  // namespace cprn::decoder
