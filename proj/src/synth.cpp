#include "cprn/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cprn::synth {

namespace {

namespace fs = std::filesystem;

constexpr int kNumColors = 4;
constexpr int kNumShapes = 3;
constexpr double kRelMargin = 3.0;  // strict separation for relations and superlatives

// token id layout
constexpr int kColorBase = 0;      // red green blue yellow
constexpr int kShapeBase = 4;      // circle square triangle
constexpr int kSizeBase = 7;       // small large
constexpr int kRelBase = 9;        // left right above below
constexpr int kSupBase = 13;       // leftmost rightmost topmost bottommost
constexpr int kThe = 17, kTo = 18, kOf = 19, kThat = 20, kIs = 21, kAnd = 22;

const std::vector<std::string> kVocab = {
    "red",      "green",    "blue",    "yellow",      // colors
    "circle",   "square",   "triangle",               // shapes
    "small",    "large",                              // sizes
    "left",     "right",    "above",   "below",       // relations
    "leftmost", "rightmost", "topmost", "bottommost", // superlatives
    "the",      "to",       "of",      "that", "is", "and",
};

struct Rgb {
    real r, g, b;
};
const Rgb kColorValues[kNumColors] = {
    {real(0.85), real(0.10), real(0.10)},
    {real(0.10), real(0.75), real(0.15)},
    {real(0.12), real(0.18), real(0.88)},
    {real(0.88), real(0.82), real(0.10)},
};
const Rgb kBackground = {real(0.09), real(0.09), real(0.11)};

bool covers(const SceneObject& o, double x, double y) {
    switch (o.shape) {
        case ObjShape::Circle: {
            const double dx = x - o.cx, dy = y - o.cy;
            return dx * dx + dy * dy <= o.radius * o.radius;
        }
        case ObjShape::Square:
            return std::abs(x - o.cx) <= o.radius && std::abs(y - o.cy) <= o.radius;
        case ObjShape::Triangle: {
            // upward triangle: apex (cx, cy-r), base corners (cx +- r, cy+r)
            const double x0 = o.cx, y0 = o.cy - o.radius;
            const double x1 = o.cx - o.radius, y1 = o.cy + o.radius;
            const double x2 = o.cx + o.radius, y2 = o.cy + o.radius;
            auto side = [&](double ax, double ay, double bx, double by) {
                return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            };
            const double d0 = side(x0, y0, x1, y1);
            const double d1 = side(x1, y1, x2, y2);
            const double d2 = side(x2, y2, x0, y0);
            const bool has_neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
            const bool has_pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
            return !(has_neg && has_pos);
        }
    }
    return false;
}

bool object_satisfies(const SceneObject& o, const Constraint& c) {
    if (c.shape >= 0 && static_cast<int>(o.shape) != c.shape) return false;
    if (c.color >= 0 && o.color != c.color) return false;
    if (c.size >= 0 && static_cast<int>(o.size) != c.size) return false;
    return true;
}

std::vector<int> match_objects(const Scene& scene, const Constraint& c) {
    std::vector<int> out;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        if (object_satisfies(scene.objects[i], c)) out.push_back(static_cast<int>(i));
    }
    return out;
}

bool relation_holds(const SceneObject& head, const SceneObject& anchor, Rel rel) {
    switch (rel) {
        case Rel::Left: return head.cx < anchor.cx - kRelMargin;
        case Rel::Right: return head.cx > anchor.cx + kRelMargin;
        case Rel::Above: return head.cy < anchor.cy - kRelMargin;
        case Rel::Below: return head.cy > anchor.cy + kRelMargin;
    }
    return false;
}

std::vector<int> constraint_tokens(const Constraint& c) {
    std::vector<int> t;
    if (c.size >= 0) t.push_back(kSizeBase + c.size);
    if (c.color >= 0) t.push_back(kColorBase + c.color);
    t.push_back(kShapeBase + c.shape);  // shape is always spoken
    return t;
}

// relation phrase forms; anchor's article is appended by the caller
std::vector<int> rel_tokens(Rel rel, bool verbose) {
    switch (rel) {
        case Rel::Left:
            return verbose ? std::vector<int>{kTo, kThe, kRelBase + 0, kOf}
                           : std::vector<int>{kRelBase + 0, kOf};
        case Rel::Right:
            return verbose ? std::vector<int>{kTo, kThe, kRelBase + 1, kOf}
                           : std::vector<int>{kRelBase + 1, kOf};
        case Rel::Above: return {kRelBase + 2};
        case Rel::Below: return {kRelBase + 3};
    }
    return {};
}

}  // namespace

const std::vector<std::string>& vocab_words() { return kVocab; }
int vocab_size() { return static_cast<int>(kVocab.size()); }

int token_id(const std::string& word) {
    for (size_t i = 0; i < kVocab.size(); ++i) {
        if (kVocab[i] == word) return static_cast<int>(i);
    }
    throw ConfigError("unknown token: " + word);
}

std::vector<int> resolve(const Scene& scene, const ExprSpec& spec) {
    std::vector<int> base = match_objects(scene, spec.head);
    if (spec.superlative >= 0) {
        if (base.empty()) return {};
        int best = -1;
        double best_v = 0;
        double second_v = 0;
        bool first = true;
        for (int idx : base) {
            const auto& o = scene.objects[static_cast<size_t>(idx)];
            double v = 0;
            switch (spec.superlative) {
                case 0: v = -o.cx; break;  // leftmost
                case 1: v = o.cx; break;
                case 2: v = -o.cy; break;  // topmost
                case 3: v = o.cy; break;
                default: return {};
            }
            if (first || v > best_v) {
                second_v = first ? v : best_v;
                best_v = v;
                best = idx;
                first = false;
            } else if (v > second_v || base.size() == 1) {
                second_v = v;
            }
        }
        if (base.size() > 1 && best_v - second_v < kRelMargin) return {};  // no clear extreme
        base = {best};
    }
    for (const auto& clause : spec.rels) {
        std::vector<int> anchors = match_objects(scene, clause.anchor);
        if (anchors.size() != 1) return {};  // anchor must be unique
        const auto& anchor = scene.objects[static_cast<size_t>(anchors[0])];
        std::vector<int> kept;
        for (int idx : base) {
            if (idx == anchors[0]) continue;
            if (relation_holds(scene.objects[static_cast<size_t>(idx)], anchor, clause.rel)) {
                kept.push_back(idx);
            }
        }
        base = kept;
    }
    return base;
}

std::vector<std::uint8_t> render_mask(const Scene& scene, int object_index) {
    const auto& o = scene.objects.at(static_cast<size_t>(object_index));
    std::vector<std::uint8_t> mask(static_cast<size_t>(scene.h) * scene.w, 0);
    for (int i = 0; i < scene.h; ++i) {
        for (int j = 0; j < scene.w; ++j) {
            if (covers(o, j, i)) mask[static_cast<size_t>(i) * scene.w + j] = 1;
        }
    }
    return mask;
}

std::vector<real> render_image(const Scene& scene, Rng& rng) {
    std::vector<real> img(static_cast<size_t>(scene.h) * scene.w * 3);
    for (int i = 0; i < scene.h; ++i) {
        for (int j = 0; j < scene.w; ++j) {
            Rgb px = kBackground;
            for (const auto& o : scene.objects) {
                if (covers(o, j, i)) {
                    px = kColorValues[o.color];
                    break;
                }
            }
            const size_t at = (static_cast<size_t>(i) * scene.w + j) * 3;
            const real noise = static_cast<real>(rng.uniform(-0.02, 0.02));
            // quantize so the on-disk PPM reproduces the in-memory values exactly
            auto q = [](real v) {
                v = std::min(real(1), std::max(real(0), v));
                return real(std::lround(static_cast<double>(v) * 255.0)) / real(255);
            };
            img[at + 0] = q(px.r + noise);
            img[at + 1] = q(px.g + noise);
            img[at + 2] = q(px.b + noise);
        }
    }
    return img;
}

// --- generator ----------------------------------------------------------------

namespace {

double radius_range(ObjShape shape, ObjSize size, Rng& rng) {
    struct Range { double lo, hi; };
    static const Range table[3][2] = {
        // small, large per shape
        {{3.5, 5.8}, {8.0, 15.0}},   // circle
        {{2.8, 4.6}, {7.0, 13.0}},   // square
        {{4.0, 6.5}, {10.0, 17.0}},  // triangle
    };
    const Range r = table[static_cast<int>(shape)][static_cast<int>(size)];
    return rng.uniform(r.lo, r.hi);
}

/// Try to place objects without overlap; returns false when the layout fails.
/// Placement goes largest-first but never reorders the object list itself.
bool place_objects(Scene& scene, Rng& rng) {
    std::vector<size_t> order(scene.objects.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return scene.objects[a].radius > scene.objects[b].radius;
    });
    std::vector<size_t> done;
    for (size_t k : order) {
        auto& o = scene.objects[k];
        bool placed = false;
        for (int attempt = 0; attempt < 80 && !placed; ++attempt) {
            const double lo_x = o.radius + 2.0, hi_x = scene.w - 3.0 - o.radius;
            const double lo_y = o.radius + 2.0, hi_y = scene.h - 3.0 - o.radius;
            if (hi_x <= lo_x || hi_y <= lo_y) return false;
            o.cx = rng.uniform(lo_x, hi_x);
            o.cy = rng.uniform(lo_y, hi_y);
            placed = true;
            for (size_t m : done) {
                const auto& p = scene.objects[m];
                const double dx = o.cx - p.cx, dy = o.cy - p.cy;
                const double min_d = o.radius + p.radius + 3.0;
                if (dx * dx + dy * dy < min_d * min_d) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) return false;
        done.push_back(k);
    }
    return true;
}

Scene make_scene(Rng& rng, const GenConfig& cfg, bool want_small_referent, int& referent_out) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Scene scene;
        scene.h = cfg.h;
        scene.w = cfg.w;
        const int k = rng.range(cfg.min_objects, cfg.max_objects);
        std::vector<SceneObject> objs(static_cast<size_t>(k));
        int large_count = 0;
        for (auto& o : objs) {
            o.shape = static_cast<ObjShape>(rng.below(kNumShapes));
            o.color = static_cast<int>(rng.below(kNumColors));
            const bool large = rng.uniform() < 0.45 && large_count < 2;
            if (large) ++large_count;
            o.size = large ? ObjSize::Large : ObjSize::Small;
        }
        // at least two objects must share a shape category
        bool has_dup = false;
        for (size_t a = 0; a < objs.size() && !has_dup; ++a)
            for (size_t b = a + 1; b < objs.size(); ++b)
                if (objs[a].shape == objs[b].shape) {
                    has_dup = true;
                    break;
                }
        if (!has_dup) {
            objs[1].shape = objs[0].shape;
        }
        int referent = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        // referents are large unless a small-scale sample was requested, so the
        // small split stays close to its configured fraction
        objs[static_cast<size_t>(referent)].size =
            want_small_referent ? ObjSize::Small : ObjSize::Large;
        for (auto& o : objs) o.radius = radius_range(o.shape, o.size, rng);
        if (want_small_referent) {
            // keep the referent near the bottom of the small range so the
            // rendered mask stays under the small-scale ratio threshold
            auto& r = objs[static_cast<size_t>(referent)];
            r.radius = radius_range(r.shape, ObjSize::Small, rng) * 0.85;
        }
        scene.objects = std::move(objs);
        if (!place_objects(scene, rng)) continue;
        referent_out = referent;
        return scene;
    }
    throw ValueError("scene generation failed to place objects");
}

struct BuiltExpr {
    ExprSpec spec;
    std::vector<int> tokens;
};

/// Smallest attribute set that makes `idx` the unique match, if one exists.
std::optional<Constraint> unique_constraint(const Scene& scene, int idx) {
    const auto& o = scene.objects[static_cast<size_t>(idx)];
    const int shape = static_cast<int>(o.shape);
    const Constraint variants[4] = {
        {shape, -1, -1},
        {shape, o.color, -1},
        {shape, -1, static_cast<int>(o.size)},
        {shape, o.color, static_cast<int>(o.size)},
    };
    for (const auto& c : variants) {
        auto m = match_objects(scene, c);
        if (m.size() == 1 && m[0] == idx) return c;
    }
    return std::nullopt;
}

bool resolves_to(const Scene& scene, const ExprSpec& spec, int referent) {
    auto m = resolve(scene, spec);
    return m.size() == 1 && m[0] == referent;
}

std::optional<BuiltExpr> build_simple(const Scene& scene, int referent, Rng& rng) {
    const auto& o = scene.objects[static_cast<size_t>(referent)];
    const int shape = static_cast<int>(o.shape);
    std::vector<Constraint> variants = {
        {shape, -1, -1},
        {shape, o.color, -1},
        {shape, -1, static_cast<int>(o.size)},
        {shape, o.color, static_cast<int>(o.size)},
    };
    // shuffle for variety
    for (size_t i = variants.size(); i > 1; --i) {
        std::swap(variants[i - 1], variants[rng.below(i)]);
    }
    for (const auto& c : variants) {
        ExprSpec spec;
        spec.head = c;
        if (resolves_to(scene, spec, referent)) {
            BuiltExpr built;
            built.spec = spec;
            if (rng.uniform() < 0.3) built.tokens.push_back(kThe);
            auto ct = constraint_tokens(c);
            built.tokens.insert(built.tokens.end(), ct.begin(), ct.end());
            return built;
        }
    }
    return std::nullopt;
}

std::optional<BuiltExpr> build_superlative(const Scene& scene, int referent, Rng& rng) {
    const auto& o = scene.objects[static_cast<size_t>(referent)];
    const int shape = static_cast<int>(o.shape);
    std::vector<int> sups = {0, 1, 2, 3};
    for (size_t i = sups.size(); i > 1; --i) std::swap(sups[i - 1], sups[rng.below(i)]);
    std::vector<Constraint> bases = {{shape, -1, -1}, {shape, o.color, -1}};
    for (int sup : sups) {
        for (const auto& base : bases) {
            ExprSpec spec;
            spec.head = base;
            spec.superlative = sup;
            if (resolves_to(scene, spec, referent)) {
                BuiltExpr built;
                built.spec = spec;
                if (rng.uniform() < 0.3) built.tokens.push_back(kThe);
                built.tokens.push_back(kSupBase + sup);
                if (base.color >= 0) built.tokens.push_back(kColorBase + base.color);
                built.tokens.push_back(kShapeBase + base.shape);
                return built;
            }
        }
    }
    return std::nullopt;
}

std::optional<BuiltExpr> build_relational(const Scene& scene, int referent, Rng& rng) {
    const auto& o = scene.objects[static_cast<size_t>(referent)];
    const int shape = static_cast<int>(o.shape);
    std::vector<int> order(scene.objects.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<Rel> rels = {Rel::Left, Rel::Right, Rel::Above, Rel::Below};
    for (size_t i = rels.size(); i > 1; --i) std::swap(rels[i - 1], rels[rng.below(i)]);

    for (int anchor_idx : order) {
        if (anchor_idx == referent) continue;
        auto anchor_c = unique_constraint(scene, anchor_idx);
        if (!anchor_c) continue;
        const auto& anchor = scene.objects[static_cast<size_t>(anchor_idx)];
        for (Rel rel : rels) {
            if (!relation_holds(o, anchor, rel)) continue;
            ExprSpec spec;
            spec.head = {shape, -1, -1};
            spec.rels.push_back({rel, *anchor_c});
            if (!resolves_to(scene, spec, referent)) {
                spec.head = {shape, o.color, -1};
                if (!resolves_to(scene, spec, referent)) continue;
            }
            BuiltExpr built;
            built.spec = spec;
            auto ht = constraint_tokens(spec.head);
            built.tokens.insert(built.tokens.end(), ht.begin(), ht.end());
            auto rt = rel_tokens(rel, rng.uniform() < 0.5);
            built.tokens.insert(built.tokens.end(), rt.begin(), rt.end());
            built.tokens.push_back(kThe);
            auto at = constraint_tokens(*anchor_c);
            built.tokens.insert(built.tokens.end(), at.begin(), at.end());
            return built;
        }
    }
    return std::nullopt;
}

/// Long two-relation expression with token count tuned past the complex-split
/// threshold (and never past t_max = 20).
std::optional<BuiltExpr> build_complex(const Scene& scene, int referent, Rng& rng) {
    const auto& o = scene.objects[static_cast<size_t>(referent)];
    const int shape = static_cast<int>(o.shape);

    struct Pair {
        int anchor;
        Rel rel;
        Constraint c;
    };
    std::vector<Pair> usable;
    for (size_t a = 0; a < scene.objects.size(); ++a) {
        if (static_cast<int>(a) == referent) continue;
        auto c = unique_constraint(scene, static_cast<int>(a));
        if (!c) continue;
        for (Rel rel : {Rel::Left, Rel::Right, Rel::Above, Rel::Below}) {
            if (relation_holds(o, scene.objects[a], rel)) {
                usable.push_back({static_cast<int>(a), rel, *c});
            }
        }
    }
    if (usable.size() < 2) return std::nullopt;
    for (size_t i = usable.size(); i > 1; --i) std::swap(usable[i - 1], usable[rng.below(i)]);

    for (size_t i = 0; i < usable.size(); ++i) {
        for (size_t j = 0; j < usable.size(); ++j) {
            if (usable[i].anchor == usable[j].anchor) continue;
            ExprSpec spec;
            spec.head = {shape, -1, -1};
            spec.rels.push_back({usable[i].rel, usable[i].c});
            spec.rels.push_back({usable[j].rel, usable[j].c});
            if (!resolves_to(scene, spec, referent)) continue;

            // pad with true attributes until the token count clears the threshold
            struct Slot {
                Constraint* c;
                const SceneObject* obj;
            };
            auto try_lengths = [&](ExprSpec padded) -> std::optional<BuiltExpr> {
                Slot slots[3] = {
                    {&padded.head, &o},
                    {&padded.rels[0].anchor, &scene.objects[static_cast<size_t>(usable[i].anchor)]},
                    {&padded.rels[1].anchor, &scene.objects[static_cast<size_t>(usable[j].anchor)]},
                };
                const bool verbose1 = usable[i].rel == Rel::Left || usable[i].rel == Rel::Right;
                const bool verbose2 = usable[j].rel == Rel::Left || usable[j].rel == Rel::Right;
                for (int pad = 0; pad <= 6; ++pad) {
                    // reset then add `pad` attributes round-robin
                    padded.head = spec.head;
                    padded.rels[0].anchor = spec.rels[0].anchor;
                    padded.rels[1].anchor = spec.rels[1].anchor;
                    int added = 0;
                    for (int round = 0; round < 2 && added < pad; ++round) {
                        for (auto& s : slots) {
                            if (added >= pad) break;
                            if (round == 0 && s.c->color < 0) {
                                s.c->color = s.obj->color;
                                ++added;
                            } else if (round == 1 && s.c->size < 0) {
                                s.c->size = static_cast<int>(s.obj->size);
                                ++added;
                            }
                        }
                    }
                    if (added < pad) break;
                    std::vector<int> tokens;
                    tokens.push_back(kThe);
                    auto ht = constraint_tokens(padded.head);
                    tokens.insert(tokens.end(), ht.begin(), ht.end());
                    tokens.push_back(kThat);
                    tokens.push_back(kIs);
                    auto r1 = rel_tokens(usable[i].rel, verbose1);
                    tokens.insert(tokens.end(), r1.begin(), r1.end());
                    tokens.push_back(kThe);
                    auto a1 = constraint_tokens(padded.rels[0].anchor);
                    tokens.insert(tokens.end(), a1.begin(), a1.end());
                    tokens.push_back(kAnd);
                    auto r2 = rel_tokens(usable[j].rel, verbose2);
                    tokens.insert(tokens.end(), r2.begin(), r2.end());
                    tokens.push_back(kThe);
                    auto a2 = constraint_tokens(padded.rels[1].anchor);
                    tokens.insert(tokens.end(), a2.begin(), a2.end());
                    const int len = static_cast<int>(tokens.size());
                    if (len > kComplexTokenLength && len <= 20 &&
                        resolves_to(scene, padded, referent)) {
                        return BuiltExpr{padded, tokens};
                    }
                }
                return std::nullopt;
            };
            if (auto built = try_lengths(spec)) return built;
        }
    }
    return std::nullopt;
}

}  // namespace

Dataset generate(const GenConfig& cfg) {
    if (cfg.count < 1) throw ConfigError("generate: count must be >= 1");
    if (cfg.h < 32 || cfg.w < 32) throw ConfigError("generate: grid too small");
    Dataset ds;
    ds.h = cfg.h;
    ds.w = cfg.w;
    ds.samples.reserve(static_cast<size_t>(cfg.count));
    Rng root(cfg.seed);

    for (int idx = 0; idx < cfg.count; ++idx) {
        Rng rng = root.fork(static_cast<std::uint64_t>(idx));
        const double roll = rng.uniform();
        const bool want_complex = roll < cfg.complex_fraction;
        const bool want_small = !want_complex && roll < cfg.complex_fraction + cfg.small_fraction;

        Sample sample;
        bool done = false;
        for (int attempt = 0; attempt < 200 && !done; ++attempt) {
            int referent = -1;
            Scene scene = make_scene(rng, cfg, want_small, referent);
            std::optional<BuiltExpr> built;
            if (want_complex) {
                built = build_complex(scene, referent, rng);
            } else {
                const double pick = rng.uniform();
                if (pick < 0.45) {
                    built = build_simple(scene, referent, rng);
                } else if (pick < 0.70) {
                    built = build_superlative(scene, referent, rng);
                } else {
                    built = build_relational(scene, referent, rng);
                }
                if (!built) built = build_simple(scene, referent, rng);
                if (!built) built = build_relational(scene, referent, rng);
                if (!built) built = build_superlative(scene, referent, rng);
            }
            if (!built) continue;

            auto truth = render_mask(scene, referent);
            long area = 0;
            for (auto v : truth) area += v;
            const double ratio = static_cast<double>(area) / (cfg.h * cfg.w);
            if (want_small && ratio >= kSmallScaleMaskRatio) continue;
            if (area == 0) continue;

            sample.id = idx;
            sample.image = render_image(scene, rng);
            sample.truth = std::move(truth);
            sample.tokens = built->tokens;
            sample.referent = referent;
            sample.mask_ratio = ratio;
            sample.token_length = static_cast<int>(built->tokens.size());
            sample.scene = std::move(scene);
            sample.spec = built->spec;
            done = true;
        }
        if (!done) throw ValueError("generate: could not build sample " + std::to_string(idx));
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

std::vector<size_t> small_scale_indices(const Dataset& ds) {
    std::vector<size_t> out;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].mask_ratio < kSmallScaleMaskRatio) out.push_back(i);
    }
    return out;
}

std::vector<size_t> complex_language_indices(const Dataset& ds) {
    std::vector<size_t> out;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].token_length > kComplexTokenLength) out.push_back(i);
    }
    return out;
}

// --- image IO -------------------------------------------------------------------

void write_ppm(const std::string& path, const std::vector<real>& rgb, int h, int w) {
    if (rgb.size() != static_cast<size_t>(h) * w * 3) throw DimError("write_ppm: bad buffer size");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValueError("cannot write " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(rgb.size());
    for (size_t i = 0; i < rgb.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, static_cast<double>(rgb[i])));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

void read_pnm_header(std::ifstream& is, const std::string& magic, int& h, int& w,
                     const std::string& path) {
    std::string tag;
    is >> tag;
    if (tag != magic) throw ValueError(path + ": expected " + magic);
    int maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w < 1 || h < 1 || maxval != 255) throw ValueError(path + ": bad header");
    is.get();  // single whitespace before payload
}

}  // namespace

std::vector<real> read_ppm(const std::string& path, int& h, int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValueError("cannot read " + path);
    read_pnm_header(is, "P6", h, w, path);
    std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * 3);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw ValueError(path + ": truncated payload");
    }
    std::vector<real> out(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) out[i] = real(bytes[i]) / real(255);
    return out;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& mask, int h, int w) {
    if (mask.size() != static_cast<size_t>(h) * w) throw DimError("write_pgm: bad buffer size");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValueError("cannot write " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValueError("cannot read " + path);
    read_pnm_header(is, "P5", h, w, path);
    std::vector<unsigned char> bytes(static_cast<size_t>(h) * w);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw ValueError(path + ": truncated payload");
    }
    std::vector<std::uint8_t> out(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] >= 128 ? 1 : 0;
    return out;
}

// --- dataset IO -------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "img");
    fs::create_directories(fs::path(dir) / "msk");
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw ValueError("cannot write manifest in " + dir);

    nlohmann::json header;
    header["type"] = "header";
    header["version"] = 1;
    header["h"] = ds.h;
    header["w"] = ds.w;
    header["count"] = ds.samples.size();
    header["vocab"] = kVocab;
    manifest << header.dump() << "\n";

    char name[32];
    for (const auto& s : ds.samples) {
        std::snprintf(name, sizeof(name), "%06d", s.id);
        const std::string img_rel = std::string("img/") + name + ".ppm";
        const std::string msk_rel = std::string("msk/") + name + ".pgm";
        write_ppm((fs::path(dir) / img_rel).string(), s.image, ds.h, ds.w);
        write_pgm((fs::path(dir) / msk_rel).string(), s.truth, ds.h, ds.w);
        nlohmann::json j;
        j["type"] = "sample";
        j["id"] = s.id;
        j["tokens"] = s.tokens;
        j["referent"] = s.referent;
        j["mask_ratio"] = s.mask_ratio;
        j["token_length"] = s.token_length;
        j["image"] = img_rel;
        j["mask"] = msk_rel;
        manifest << j.dump() << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw ValueError("no manifest.jsonl in " + dir);
    Dataset ds;
    std::string line;
    bool have_header = false;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        const std::string type = j.value("type", "");
        if (type == "header") {
            if (j.value("version", 0) != 1) throw ValueError("unsupported dataset version");
            ds.h = j.at("h").get<int>();
            ds.w = j.at("w").get<int>();
            const auto vocab = j.at("vocab").get<std::vector<std::string>>();
            if (vocab != kVocab) throw ConfigError("dataset vocabulary does not match this build");
            have_header = true;
        } else if (type == "sample") {
            if (!have_header) throw ValueError("manifest sample before header");
            Sample s;
            s.id = j.at("id").get<int>();
            s.tokens = j.at("tokens").get<std::vector<int>>();
            s.referent = j.at("referent").get<int>();
            s.mask_ratio = j.at("mask_ratio").get<double>();
            s.token_length = j.at("token_length").get<int>();
            int h = 0, w = 0;
            s.image = read_ppm((fs::path(dir) / j.at("image").get<std::string>()).string(), h, w);
            if (h != ds.h || w != ds.w) throw DimError("dataset image extent mismatch");
            s.truth = read_pgm((fs::path(dir) / j.at("mask").get<std::string>()).string(), h, w);
            if (h != ds.h || w != ds.w) throw DimError("dataset mask extent mismatch");
            ds.samples.push_back(std::move(s));
        }
    }
    if (!have_header) throw ValueError("manifest has no header line");
    return ds;
}

// --- model-facing encoders -----------------------------------------------------------

Tensor coord_feature(int h, int w) {
    std::vector<real> data(static_cast<size_t>(h) * w * 8);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            real* p = data.data() + (static_cast<size_t>(i) * w + j) * 8;
            const real x_min = real(2) * real(j) / real(w) - real(1);
            const real x_max = real(2) * real(j + 1) / real(w) - real(1);
            const real y_min = real(2) * real(i) / real(h) - real(1);
            const real y_max = real(2) * real(i + 1) / real(h) - real(1);
            p[0] = x_min;
            p[1] = y_min;
            p[2] = x_max;
            p[3] = y_max;
            p[4] = (x_min + x_max) / real(2);
            p[5] = (y_min + y_max) / real(2);
            p[6] = real(1) / real(w);
            p[7] = real(1) / real(h);
        }
    }
    return Tensor::leaf({h, w, 8}, std::move(data));
}

void register_encoder(ParameterStore& store, const std::string& prefix, int c, int stages) {
    for (int s = 0; s < stages; ++s) {
        const std::string sp = prefix + ".s" + std::to_string(s);
        const int in_c = s == 0 ? 4 * 4 * 3 : 2 * 2 * c;
        register_linear(store, sp + ".patch", in_c, c);
        register_linear(store, sp + ".mix", c, c);
        register_linear(store, sp + ".fuse", c + 8, c);
    }
}

std::vector<Tensor> encode_pyramid(const Tensor& image, const ParameterStore& store,
                                   const std::string& prefix, int stages) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw DimError("encode_pyramid: expects H x W x 3 image");
    }
    if (stages < 1) throw ConfigError("encode_pyramid: need at least one stage");
    const int coarsest = 4 << (stages - 1);
    if (image.dim(0) % coarsest != 0 || image.dim(1) % coarsest != 0) {
        throw DimError("encode_pyramid: image extents must divide by " + std::to_string(coarsest));
    }
    std::vector<Tensor> out;
    Tensor x = image;
    for (int s = 0; s < stages; ++s) {
        const std::string sp = prefix + ".s" + std::to_string(s);
        x = space_to_depth(x, s == 0 ? 4 : 2);
        x = gelu(linear(x, store, sp + ".patch"));
        x = gelu(linear(x, store, sp + ".mix"));
        Tensor coords = coord_feature(x.dim(0), x.dim(1));
        out.push_back(linear(concat_last({x, coords}), store, sp + ".fuse"));
    }
    return out;
}

void register_embedding(ParameterStore& store, int d_l) {
    store.create("embed.table", {vocab_size(), d_l}, Init::Uniform, d_l);
}

Tensor embed_expression(const ParameterStore& store, const std::vector<int>& tokens, int t_max) {
    return embed_rows(store.get("embed.table"), tokens, t_max);
}

}  // namespace cprn::synth
