#include "cprn/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace cprn {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return true;
}

bool get_u64(std::istream& is, std::uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

bool get_f64(std::istream& is, double& v) {
    std::uint64_t bits;
    if (!get_u64(is, bits)) return false;
    std::memcpy(&v, &bits, 8);
    return true;
}

}  // namespace

const Tensor& ParameterStore::create(const std::string& name, std::vector<int> shape, Init init,
                                     int fan_in) {
    if (params_.count(name)) {
        throw ConfigError("parameter registered twice: " + name);
    }
    const long n = numel_of(shape);
    std::vector<real> data(static_cast<size_t>(n), real(0));
    if (init == Init::Uniform) {
        const int fi = fan_in > 0 ? fan_in : shape.front();
        const real bound = real(1) / std::sqrt(real(fi));
        std::uint64_t stream = seed_ ^ hash_name(name);
        Rng rng(splitmix64(stream));
        for (auto& v : data) v = static_cast<real>(rng.uniform(-bound, bound));
    }
    auto [it, ok] = params_.emplace(name, Tensor::leaf(std::move(shape), std::move(data), true));
    (void)ok;
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw ConfigError("unknown parameter: " + name);
    }
    return it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

long ParameterStore::total_elements() const {
    long n = 0;
    for (const auto& [k, v] : params_) n += v.numel();
    return n;
}

void ParameterStore::set_data(const std::string& name, const std::vector<real>& values) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    if (values.size() != it->second.data().size()) {
        throw DimError("set_data: size mismatch for " + name);
    }
    it->second.node()->value = values;
}

void ParameterStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValueError("cannot open checkpoint for writing: " + path);
    os.write("CPRN", 4);
    put_u32(os, kCheckpointVersion);
    for (const auto& [name, t] : params_) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (int e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
        for (real v : t.data()) put_f64(os, static_cast<double>(v));
    }
    if (!os) throw ValueError("checkpoint write failed: " + path);
}

void ParameterStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValueError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CPRN", 4) != 0) {
        throw ValueError("not a checkpoint file: " + path);
    }
    std::uint32_t version = 0;
    if (!get_u32(is, version) || version != kCheckpointVersion) {
        throw ValueError("unsupported checkpoint version in " + path);
    }
    size_t loaded = 0;
    while (true) {
        std::uint32_t name_len = 0;
        if (!get_u32(is, name_len)) break;  // clean EOF
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw ValueError("truncated checkpoint: " + path);
        std::uint32_t rank = 0;
        if (!get_u32(is, rank)) throw ValueError("truncated checkpoint: " + path);
        std::vector<int> shape(rank);
        for (auto& e : shape) {
            std::uint64_t v = 0;
            if (!get_u64(is, v)) throw ValueError("truncated checkpoint: " + path);
            e = static_cast<int>(v);
        }
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw ConfigError("checkpoint contains unknown parameter: " + name);
        }
        if (it->second.shape() != shape) {
            throw DimError("checkpoint shape mismatch for " + name);
        }
        auto& dst = it->second.node()->value;
        for (auto& v : dst) {
            double d = 0;
            if (!get_f64(is, d)) throw ValueError("truncated checkpoint: " + path);
            v = static_cast<real>(d);
        }
        ++loaded;
    }
    if (loaded != params_.size()) {
        throw ConfigError("checkpoint is missing parameters (" + std::to_string(loaded) + " of " +
                          std::to_string(params_.size()) + ")");
    }
}

Tensor linear(const Tensor& x, const ParameterStore& store, const std::string& name) {
    return linear_op(x, store.get(name + ".w"), store.get(name + ".b"));
}

void register_linear(ParameterStore& store, const std::string& name, int c_in, int c_out,
                     Init init) {
    store.create(name + ".w", {c_in, c_out}, init, c_in);
    store.create(name + ".b", {c_out}, init, c_in);
}

}  // namespace cprn
