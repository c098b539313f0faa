#include "cprn/decoder.hpp"

namespace cprn::decoder {

Wiring wiring_from_string(const std::string& s) {
    if (s == "consume") return Wiring::Consume;
    if (s == "literal") return Wiring::Literal;
    throw ConfigError("unknown decoder wiring: " + s);
}

std::string to_string(Wiring w) {
    return w == Wiring::Consume ? "consume" : "literal";
}

void register_params(ParameterStore& store, const std::string& prefix, int c, int stages) {
    for (int i = 0; i + 1 < stages; ++i) {
        register_linear(store, prefix + ".l" + std::to_string(i), 2 * c, c);
    }
    register_linear(store, prefix + ".head", c, 1);
}

Tensor decode(const std::vector<Tensor>& f_list, const ParameterStore& store,
              const std::string& prefix, int out_h, int out_w, Wiring wiring) {
    if (f_list.empty()) throw DimError("decode: empty pyramid");
    const int n = static_cast<int>(f_list.size());
    for (int i = 0; i + 1 < n; ++i) {
        if (f_list[static_cast<size_t>(i)].rank() != 3 ||
            f_list[static_cast<size_t>(i)].dim(0) != 2 * f_list[static_cast<size_t>(i + 1)].dim(0) ||
            f_list[static_cast<size_t>(i)].dim(1) != 2 * f_list[static_cast<size_t>(i + 1)].dim(1)) {
            throw DimError("decode: stage extents must double from coarse to fine");
        }
    }

    Tensor y = f_list.back();
    for (int i = n - 2; i >= 0; --i) {
        const std::string name = prefix + ".l" + std::to_string(i);
        const Tensor& fine = f_list[static_cast<size_t>(i)];
        if (wiring == Wiring::Consume) {
            Tensor up = bilinear_resize(y, fine.dim(0), fine.dim(1));
            y = linear(concat_last({up, fine}), store, name);
        } else {
            const Tensor& coarse = f_list[static_cast<size_t>(i + 1)];
            Tensor proj = linear(concat_last({y, coarse}), store, name);
            y = bilinear_resize(proj, 2 * proj.dim(0), 2 * proj.dim(1));
        }
    }

    Tensor score = sigmoid(linear(y, store, prefix + ".head"));  // [h x w x 1]
    Tensor up = bilinear_resize(score, out_h, out_w);
    return reshape(up, {out_h, out_w});
}

}  // namespace cprn::decoder
