#include "segdetail/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "segdetail/pnm.hpp"

namespace segdetail {

namespace fs = std::filesystem;
using json = nlohmann::json;

void SceneSpec::validate() const {
    if (num_classes < 2) throw ArgumentError("SceneSpec: num_classes must be >= 2");
    if (height < 4 || width < 4) throw ArgumentError("SceneSpec: canvas too small");
    if (min_shapes < 0 || max_shapes < min_shapes)
        throw ArgumentError("SceneSpec: bad shape count range");
    if (kinds.empty()) throw ArgumentError("SceneSpec: no shape kinds");
    if (!class_colors.empty() && static_cast<int>(class_colors.size()) != num_classes)
        throw ArgumentError("SceneSpec: class_colors size must equal num_classes");
    if (color_jitter < 0 || noise_sigma < 0)
        throw ArgumentError("SceneSpec: negative jitter/noise");
}

void CoarsenSpec::validate() const {
    if (erosion_radius < 0) throw ArgumentError("CoarsenSpec: negative erosion radius");
    if (drop_probability < 0 || drop_probability > 1)
        throw ArgumentError("CoarsenSpec: drop_probability out of [0,1]");
    if (bleed_probability < 0 || bleed_probability > 1)
        throw ArgumentError("CoarsenSpec: bleed_probability out of [0,1]");
}

std::uint32_t derive_seed(std::uint32_t seed, std::uint64_t index) {
    std::uint64_t z = (static_cast<std::uint64_t>(seed) << 32) ^ (index + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return static_cast<std::uint32_t>((z ^ (z >> 31)) & 0xffffffffULL);
}

std::vector<std::array<float, 3>> default_palette(int num_classes) {
    // Non-background classes come in near-twin color pairs (1~2, 3~4, ...):
    // within a pair the means differ by less than the jitter+noise spread, so
    // appearance alone cannot separate them and the coarse mask carries the
    // disambiguating signal.
    std::vector<std::array<float, 3>> palette;
    palette.push_back({0.45f, 0.45f, 0.45f});
    const std::array<std::array<float, 3>, 4> anchors = {{{0.65f, 0.35f, 0.35f},
                                                          {0.35f, 0.65f, 0.35f},
                                                          {0.35f, 0.35f, 0.65f},
                                                          {0.62f, 0.62f, 0.30f}}};
    for (int c = 1; c < num_classes; ++c) {
        std::array<float, 3> col = anchors[((c - 1) / 2) % 4];
        const float twin = ((c - 1) % 2) ? 0.04f : -0.02f;
        const float wrap = 0.08f * static_cast<float>((c - 1) / 8);
        for (auto& x : col) x = std::clamp(x + twin + wrap, 0.05f, 0.95f);
        palette.push_back(col);
    }
    return palette;
}

namespace {

struct Point {
    float x, y;
};

bool point_in_polygon(const std::vector<Point>& poly, float px, float py) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        if ((poly[i].y > py) != (poly[j].y > py)) {
            const float x_cross = poly[j].x + (py - poly[j].y) / (poly[i].y - poly[j].y) *
                                                  (poly[i].x - poly[j].x);
            if (px < x_cross) inside = !inside;
        }
    }
    return inside;
}

}  // namespace

std::pair<Tensor4<float>, LabelMask> generate_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937 rng(spec.seed);
    const int H = spec.height, W = spec.width;
    const auto palette = spec.class_colors.empty() ? default_palette(spec.num_classes)
                                                   : spec.class_colors;

    LabelMask fine(H, W, 0);
    Tensor4<float> image(1, 3, H, W);

    auto jitter_color = [&](int cls) {
        std::array<float, 3> col = palette[cls];
        std::uniform_real_distribution<float> j(-spec.color_jitter, spec.color_jitter);
        for (auto& x : col) x = std::clamp(x + j(rng), 0.f, 1.f);
        return col;
    };

    // Background.
    {
        const auto col = jitter_color(0);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) image.at(0, c, y, x) = col[c];
    }

    std::uniform_int_distribution<int> count_dist(spec.min_shapes, spec.max_shapes);
    const int n_shapes = spec.max_shapes == 0 ? 0 : count_dist(rng);
    std::uniform_int_distribution<int> class_dist(1, spec.num_classes - 1);
    std::uniform_int_distribution<int> kind_dist(0, static_cast<int>(spec.kinds.size()) - 1);
    std::uniform_real_distribution<float> cx_dist(0.f, static_cast<float>(W - 1));
    std::uniform_real_distribution<float> cy_dist(0.f, static_cast<float>(H - 1));
    std::uniform_real_distribution<float> ext_dist(std::min(H, W) / 7.f, std::min(H, W) / 3.f);
    std::uniform_real_distribution<float> unit(0.f, 1.f);

    for (int s = 0; s < n_shapes; ++s) {
        const int cls = spec.num_classes == 2 ? 1 : class_dist(rng);
        const ShapeKind kind = spec.kinds[kind_dist(rng)];
        const float cx = cx_dist(rng), cy = cy_dist(rng);
        const float ex = ext_dist(rng), ey = ext_dist(rng);
        const auto col = jitter_color(cls);

        std::vector<Point> poly;
        float angle = 0.f;
        if (kind == ShapeKind::Polygon) {
            const int verts = 3 + static_cast<int>(unit(rng) * 4.f);
            std::vector<float> angles(verts);
            for (auto& a : angles) a = unit(rng) * 6.2831853f;
            std::sort(angles.begin(), angles.end());
            for (const float a : angles) {
                const float r = (0.5f + 0.5f * unit(rng)) * std::max(ex, ey);
                poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
            }
        } else if (kind == ShapeKind::Rectangle) {
            angle = unit(rng) * 6.2831853f;  // burn one draw so kinds stay iid
        }

        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                bool inside = false;
                const float dx = static_cast<float>(x) - cx;
                const float dy = static_cast<float>(y) - cy;
                switch (kind) {
                    case ShapeKind::Rectangle:
                        inside = std::abs(dx) <= ex && std::abs(dy) <= ey;
                        break;
                    case ShapeKind::Ellipse:
                        inside = (dx * dx) / (ex * ex) + (dy * dy) / (ey * ey) <= 1.f;
                        break;
                    case ShapeKind::Polygon:
                        inside = point_in_polygon(poly, static_cast<float>(x),
                                                  static_cast<float>(y));
                        break;
                }
                if (inside) {
                    fine.at(y, x) = static_cast<std::uint8_t>(cls);
                    for (int c = 0; c < 3; ++c) image.at(0, c, y, x) = col[c];
                }
            }
        (void)angle;
    }

    if (spec.noise_sigma > 0) {
        std::normal_distribution<float> noise(0.f, spec.noise_sigma);
        for (auto& v : image.v) v = std::clamp(v + noise(rng), 0.f, 1.f);
    }
    return {std::move(image), std::move(fine)};
}

LabelMask coarsen(const LabelMask& fine, const CoarsenSpec& spec) {
    spec.validate();
    for (const auto v : fine.v)
        if (v == kIgnoreLabel) throw DataError("coarsen: fine mask contains ignore pixels");

    const int H = fine.h, W = fine.w;

    // Connected components (4-connectivity, same class).
    std::vector<int> region(static_cast<std::size_t>(H) * W, -1);
    int n_regions = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (region[static_cast<std::size_t>(y) * W + x] >= 0) continue;
            const int id = n_regions++;
            const int cls = fine.at(y, x);
            region[static_cast<std::size_t>(y) * W + x] = id;
            queue.push_back({y, x});
            while (!queue.empty()) {
                auto [qy, qx] = queue.front();
                queue.pop_front();
                const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                for (int d = 0; d < 4; ++d) {
                    const int ny = qy + dy[d], nx = qx + dx[d];
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    auto& r = region[static_cast<std::size_t>(ny) * W + nx];
                    if (r < 0 && fine.at(ny, nx) == cls) {
                        r = id;
                        queue.push_back({ny, nx});
                    }
                }
            }
        }

    std::mt19937 rng(spec.seed);
    std::uniform_real_distribution<float> unit(0.f, 1.f);
    std::vector<bool> dropped(n_regions), bleeds(n_regions);
    for (int r = 0; r < n_regions; ++r) {
        dropped[r] = unit(rng) < spec.drop_probability;
        bleeds[r] = unit(rng) < spec.bleed_probability;
    }

    LabelMask coarse(H, W, kIgnoreLabel);
    const int rad = spec.erosion_radius;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int r = region[static_cast<std::size_t>(y) * W + x];
            if (dropped[r]) continue;
            // Erosion with a (2r+1) square element; out-of-canvas counts as
            // same-region so border regions keep their outer band.
            bool keep = true;
            const int cls = fine.at(y, x);
            for (int ny = std::max(0, y - rad); keep && ny <= std::min(H - 1, y + rad); ++ny)
                for (int nx = std::max(0, x - rad); nx <= std::min(W - 1, x + rad); ++nx)
                    if (fine.at(ny, nx) != cls) {
                        keep = false;
                        break;
                    }
            if (keep) coarse.at(y, x) = static_cast<std::uint8_t>(cls);
        }

    // Bleed: mislabel the one-pixel band just outside an affected region.
    if (spec.bleed_probability > 0) {
        const LabelMask base = coarse;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                        const int r = region[static_cast<std::size_t>(ny) * W + nx];
                        if (!bleeds[r] || dropped[r]) continue;
                        if (fine.at(ny, nx) != fine.at(y, x))
                            coarse.at(y, x) = fine.at(ny, nx);
                    }
            }
        (void)base;
    }
    return coarse;
}

CoarseStats coarse_stats(const LabelMask& fine, const LabelMask& coarse) {
    std::size_t labeled = 0, correct = 0;
    for (std::size_t i = 0; i < coarse.v.size(); ++i) {
        if (coarse.v[i] == kIgnoreLabel) continue;
        ++labeled;
        if (coarse.v[i] == fine.v[i]) ++correct;
    }
    CoarseStats s;
    s.coverage = static_cast<double>(labeled) / static_cast<double>(coarse.v.size());
    s.precision = labeled == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(labeled);
    return s;
}

CoarseStats coarse_stats(const Dataset& ds) {
    std::size_t total = 0, labeled = 0, correct = 0;
    for (const auto& t : ds.items) {
        total += t.coarse.v.size();
        for (std::size_t i = 0; i < t.coarse.v.size(); ++i) {
            if (t.coarse.v[i] == kIgnoreLabel) continue;
            ++labeled;
            if (t.coarse.v[i] == t.fine.v[i]) ++correct;
        }
    }
    CoarseStats s;
    s.coverage = total == 0 ? 0.0 : static_cast<double>(labeled) / static_cast<double>(total);
    s.precision = labeled == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(labeled);
    return s;
}

GeomParams sample_geom(int in_h, int in_w, int crop, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> scale_dist(0.5f, 2.0f);
    std::uniform_real_distribution<float> rot_dist(-10.f, 10.f);
    std::uniform_real_distribution<float> unit(0.f, 1.f);

    GeomParams g;
    g.scale = scale_dist(rng);
    g.rot_deg = rot_dist(rng);
    g.flip = unit(rng) < 0.5f;
    const int sw = std::max(1, static_cast<int>(std::lround(in_w * g.scale)));
    const int sh = std::max(1, static_cast<int>(std::lround(in_h * g.scale)));
    auto offset = [&](int scaled) {
        if (scaled <= crop) return (scaled - crop) / 2;  // center, padding past the edge
        std::uniform_int_distribution<int> d(0, scaled - crop);
        return d(rng);
    };
    g.crop_x = offset(sw);
    g.crop_y = offset(sh);
    return g;
}

SampleTriplet apply_geom(const SampleTriplet& t, int crop, const GeomParams& g) {
    if (crop < 1) throw ArgumentError("apply_geom: crop must be >= 1");
    const int H = t.fine.h, W = t.fine.w;
    const int sw = std::max(1, static_cast<int>(std::lround(W * g.scale)));
    const int sh = std::max(1, static_cast<int>(std::lround(H * g.scale)));
    const float theta = g.rot_deg * 3.14159265358979f / 180.f;
    const float ct = std::cos(theta), st = std::sin(theta);
    const float cx = (W - 1) * 0.5f, cy = (H - 1) * 0.5f;

    SampleTriplet out;
    out.image = Tensor4<float>(1, 3, crop, crop);
    out.fine = LabelMask(crop, crop, kIgnoreLabel);
    out.coarse = LabelMask(crop, crop, kIgnoreLabel);

    for (int oy = 0; oy < crop; ++oy)
        for (int ox = 0; ox < crop; ++ox) {
            // crop offset -> unscale -> flip -> inverse rotation
            float u = (static_cast<float>(g.crop_x + ox) + 0.5f) * W / sw - 0.5f;
            float v = (static_cast<float>(g.crop_y + oy) + 0.5f) * H / sh - 0.5f;
            if (g.flip) u = static_cast<float>(W - 1) - u;
            const float du = u - cx, dv = v - cy;
            const float sx = cx + ct * du + st * dv;
            const float sy = cy - st * du + ct * dv;

            // Masks: nearest neighbor, out-of-canvas stays ignore.
            const int nx = static_cast<int>(std::lround(sx));
            const int ny = static_cast<int>(std::lround(sy));
            if (nx >= 0 && nx < W && ny >= 0 && ny < H) {
                out.fine.at(oy, ox) = t.fine.at(ny, nx);
                out.coarse.at(oy, ox) = t.coarse.at(ny, nx);
            }

            // Image: bilinear, out-of-canvas reads 0.
            auto sample = [&](int c, int iy, int ix) -> float {
                if (ix < 0 || ix >= W || iy < 0 || iy >= H) return 0.f;
                return t.image.at(0, c, iy, ix);
            };
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const float fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < 3; ++c) {
                const float top = sample(c, y0, x0) * (1 - fx) + sample(c, y0, x0 + 1) * fx;
                const float bot = sample(c, y0 + 1, x0) * (1 - fx) + sample(c, y0 + 1, x0 + 1) * fx;
                out.image.at(0, c, oy, ox) = top * (1 - fy) + bot * fy;
            }
        }
    return out;
}

void normalize_image(Tensor4<float>& image, const std::array<float, 3>& mean,
                     const std::array<float, 3>& stddev) {
    for (int in = 0; in < image.n; ++in)
        for (int c = 0; c < 3; ++c) {
            const float m = mean[c];
            const float s = stddev[c] > 1e-6f ? stddev[c] : 1.f;
            for (int y = 0; y < image.h; ++y)
                for (int x = 0; x < image.w; ++x)
                    image.at(in, c, y, x) = (image.at(in, c, y, x) - m) / s;
        }
}

SampleTriplet augment(const SampleTriplet& t, int crop, std::uint32_t seed,
                      const std::array<float, 3>& mean,
                      const std::array<float, 3>& stddev) {
    SampleTriplet out = apply_geom(t, crop, sample_geom(t.fine.h, t.fine.w, crop, seed));
    normalize_image(out.image, mean, stddev);
    return out;
}

NormStats compute_norm_stats(const Dataset& ds) {
    NormStats stats;
    if (ds.items.empty()) return stats;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        std::size_t count = 0;
        for (const auto& t : ds.items) {
            for (int y = 0; y < t.image.h; ++y)
                for (int x = 0; x < t.image.w; ++x) {
                    const double v = t.image.at(0, c, y, x);
                    sum += v;
                    sq += v * v;
                    ++count;
                }
        }
        const double m = sum / count;
        stats.mean[c] = static_cast<float>(m);
        stats.stddev[c] = static_cast<float>(std::sqrt(std::max(1e-12, sq / count - m * m)));
    }
    return stats;
}

Dataset generate_dataset(const SceneSpec& scene, const CoarsenSpec& coarsen_spec,
                         int count, std::uint32_t seed) {
    if (count < 0) throw ArgumentError("generate_dataset: negative count");
    scene.validate();
    coarsen_spec.validate();
    Dataset ds;
    ds.num_classes = scene.num_classes;
    ds.scene = scene;
    ds.coarsen_spec = coarsen_spec;
    ds.seed = seed;
    ds.items.reserve(count);
    for (int i = 0; i < count; ++i) {
        SceneSpec s = scene;
        s.seed = derive_seed(seed, static_cast<std::uint64_t>(i) * 2);
        CoarsenSpec c = coarsen_spec;
        c.seed = derive_seed(seed, static_cast<std::uint64_t>(i) * 2 + 1);
        SampleTriplet t;
        auto [img, fine] = generate_scene(s);
        t.image = std::move(img);
        t.fine = std::move(fine);
        t.coarse = coarsen(t.fine, c);
        ds.items.push_back(std::move(t));
    }
    return ds;
}

namespace {

json scene_to_json(const SceneSpec& s) {
    json kinds = json::array();
    for (const auto k : s.kinds)
        kinds.push_back(k == ShapeKind::Rectangle ? "rectangle"
                        : k == ShapeKind::Ellipse ? "ellipse"
                                                  : "polygon");
    json colors = json::array();
    for (const auto& c : s.class_colors) colors.push_back({c[0], c[1], c[2]});
    return {{"num_classes", s.num_classes}, {"height", s.height},     {"width", s.width},
            {"min_shapes", s.min_shapes},   {"max_shapes", s.max_shapes},
            {"kinds", kinds},               {"class_colors", colors},
            {"color_jitter", s.color_jitter}, {"noise_sigma", s.noise_sigma},
            {"seed", s.seed}};
}

SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    s.num_classes = j.at("num_classes");
    s.height = j.at("height");
    s.width = j.at("width");
    s.min_shapes = j.at("min_shapes");
    s.max_shapes = j.at("max_shapes");
    s.kinds.clear();
    for (const auto& k : j.at("kinds")) {
        const std::string name = k;
        s.kinds.push_back(name == "rectangle" ? ShapeKind::Rectangle
                          : name == "ellipse" ? ShapeKind::Ellipse
                                              : ShapeKind::Polygon);
    }
    s.class_colors.clear();
    for (const auto& c : j.at("class_colors"))
        s.class_colors.push_back({c[0], c[1], c[2]});
    s.color_jitter = j.at("color_jitter");
    s.noise_sigma = j.at("noise_sigma");
    s.seed = j.at("seed");
    return s;
}

json coarsen_to_json(const CoarsenSpec& c) {
    return {{"erosion_radius", c.erosion_radius},
            {"drop_probability", c.drop_probability},
            {"bleed_probability", c.bleed_probability},
            {"seed", c.seed}};
}

CoarsenSpec coarsen_from_json(const json& j) {
    CoarsenSpec c;
    c.erosion_radius = j.at("erosion_radius");
    c.drop_probability = j.at("drop_probability");
    c.bleed_probability = j.at("bleed_probability");
    c.seed = j.at("seed");
    return c;
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& ds) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "segdetail-dataset-v1";
    manifest["num_classes"] = ds.num_classes;
    manifest["seed"] = ds.seed;
    manifest["scene"] = scene_to_json(ds.scene);
    manifest["coarsen"] = coarsen_to_json(ds.coarsen_spec);
    json ids = json::array();
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "%06zu", i);
        ids.push_back(id);
        const std::string base = (fs::path(dir) / id).string();
        write_ppm(base + "_img.ppm", ds.items[i].image);
        write_pgm(base + "_fine.pgm", ds.items[i].fine);
        write_pgm(base + "_coarse.pgm", ds.items[i].coarse);
    }
    manifest["ids"] = ids;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("write_dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::string& dir) {
    const fs::path man_path = fs::path(dir) / "manifest.json";
    std::ifstream in(man_path);
    if (!in) throw ParseError(man_path.string() + ": cannot open");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ParseError(man_path.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        if (manifest.at("format") != "segdetail-dataset-v1")
            throw ParseError(man_path.string() + ": unknown format");
        ds.num_classes = manifest.at("num_classes");
        ds.seed = manifest.at("seed");
        ds.scene = scene_from_json(manifest.at("scene"));
        ds.coarsen_spec = coarsen_from_json(manifest.at("coarsen"));
        for (const auto& id_json : manifest.at("ids")) {
            const std::string id = id_json;
            const std::string base = (fs::path(dir) / id).string();
            for (const char* suffix : {"_img.ppm", "_fine.pgm", "_coarse.pgm"})
                if (!fs::exists(base + suffix))
                    throw ParseError(man_path.string() + ": listed file missing: " + base +
                                     suffix);
            SampleTriplet t;
            t.image = read_ppm(base + "_img.ppm");
            t.fine = read_pgm(base + "_fine.pgm");
            t.coarse = read_pgm(base + "_coarse.pgm");
            ds.items.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw ParseError(man_path.string() + ": " + e.what());
    }
    return ds;
}

}  // namespace segdetail
