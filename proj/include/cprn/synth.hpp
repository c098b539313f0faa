#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cprn/params.hpp"
#include "cprn/tensor.hpp"

namespace cprn::synth {

// Subset thresholds for the hard-case splits.
constexpr double kSmallScaleMaskRatio = 0.03;
constexpr int kComplexTokenLength = 18;  // strictly longer counts as complex

// --- vocabulary -------------------------------------------------------------

const std::vector<std::string>& vocab_words();
int vocab_size();
int token_id(const std::string& word);  // ConfigError if unknown

// --- scenes -----------------------------------------------------------------

enum class ObjShape { Circle = 0, Square = 1, Triangle = 2 };
enum class ObjSize { Small = 0, Large = 1 };

struct SceneObject {
    ObjShape shape;
    int color;  // index into the color tokens
    ObjSize size;
    double cx, cy, radius;
};

struct Scene {
    int h = 0, w = 0;
    std::vector<SceneObject> objects;
    bool overlapping = false;  // placement keeps masks disjoint
};

/// Symbolic expression form used by the generator and its resolver oracle.
struct Constraint {
    int shape = -1;  // -1 = unspecified
    int color = -1;
    int size = -1;
};

enum class Rel { Left, Right, Above, Below };

struct RelClause {
    Rel rel;
    Constraint anchor;
};

struct ExprSpec {
    Constraint head;
    int superlative = -1;  // 0 leftmost, 1 rightmost, 2 topmost, 3 bottommost
    std::vector<RelClause> rels;
};

/// Object indices matching the expression; empty when the expression is
/// invalid (ambiguous anchor, no superlative margin, ...).
std::vector<int> resolve(const Scene& scene, const ExprSpec& spec);

std::vector<std::uint8_t> render_mask(const Scene& scene, int object_index);
/// Quantized RGB image in [0,1], 3 channels interleaved.
std::vector<real> render_image(const Scene& scene, Rng& rng);

// --- dataset ----------------------------------------------------------------

struct Sample {
    int id = 0;
    std::vector<real> image;          // h*w*3
    std::vector<std::uint8_t> truth;  // h*w, 0/1
    std::vector<int> tokens;
    int referent = -1;
    double mask_ratio = 0.0;
    int token_length = 0;
    std::optional<Scene> scene;      // generator-side only
    std::optional<ExprSpec> spec;    // generator-side only
};

struct Dataset {
    int h = 0, w = 0;
    std::vector<Sample> samples;
};

struct GenConfig {
    std::uint64_t seed = 1;
    int count = 100;
    int h = 64, w = 64;
    double small_fraction = 0.15;    // forced small-object referents
    double complex_fraction = 0.10;  // forced long expressions
    int min_objects = 3, max_objects = 5;
};

/// Deterministic in config; every expression resolves uniquely to its referent.
Dataset generate(const GenConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::vector<size_t> small_scale_indices(const Dataset& ds);
std::vector<size_t> complex_language_indices(const Dataset& ds);

// --- image IO ---------------------------------------------------------------

void write_ppm(const std::string& path, const std::vector<real>& rgb, int h, int w);
std::vector<real> read_ppm(const std::string& path, int& h, int& w);
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& mask, int h, int w);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w);

// --- model-facing encoders ---------------------------------------------------

/// Per-cell 8-channel box coordinates: x_min, y_min, x_max, y_max, x_center,
/// y_center, 1/W, 1/H; box coordinates normalized to [-1, 1].
Tensor coord_feature(int h, int w);

void register_encoder(ParameterStore& store, const std::string& prefix, int c, int stages);

/// Strided patch pyramid at strides 4, 8, 16, ... with coordinate channels
/// mixed into each stage output. Returns one fused feature per stage, finest
/// first. image extents must divide by the coarsest stride.
std::vector<Tensor> encode_pyramid(const Tensor& image, const ParameterStore& store,
                                   const std::string& prefix, int stages);

void register_embedding(ParameterStore& store, int d_l);

/// [t_max x d_l] token embedding, zero rows past the expression length.
Tensor embed_expression(const ParameterStore& store, const std::vector<int>& tokens, int t_max);

}  // namespace cprn::synth
