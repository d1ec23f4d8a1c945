#include "tinydetr/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "tinydetr/errors.hpp"
#include "tinydetr/rng.hpp"

namespace tinydetr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Color {
    unsigned char r, g, b;
};

constexpr Color kSkyTop{82, 96, 120};
constexpr Color kSkyHorizon{140, 148, 160};
constexpr Color kRoad{72, 72, 78};
constexpr Color kLaneMark{210, 200, 90};
constexpr Color kOcclusionBar{18, 18, 22};

constexpr Color kSignalHousing{42, 42, 46};
constexpr Color kSignalRed{228, 64, 52};
constexpr Color kSignalAmber{240, 190, 46};
constexpr Color kSignalGreen{72, 200, 96};
constexpr Color kStopFill{202, 32, 36};
constexpr Color kStopBand{240, 240, 240};
constexpr Color kCarBody{64, 112, 218};
constexpr Color kCarWindow{28, 46, 92};
constexpr Color kTruckBody{232, 132, 44};
constexpr Color kTruckStripe{124, 66, 24};

void put_pixel(Image8& img, std::size_t x, std::size_t y, Color c) {
    const std::size_t i = (y * img.width + x) * 3;
    img.rgb[i] = c.r;
    img.rgb[i + 1] = c.g;
    img.rgb[i + 2] = c.b;
}

// Per-pixel color of a glyph, assuming glyph_covers(...) is already true.
Color glyph_color(std::size_t class_id, std::size_t gw, std::size_t gh, std::size_t x,
                  std::size_t y) {
    switch (class_id) {
        case 0: {  // traffic signal: housing with three lamps
            const double cx = static_cast<double>(gw) / 2.0;
            const double r = 0.32 * static_cast<double>(gw);
            const double centers[3] = {static_cast<double>(gh) / 6.0,
                                       static_cast<double>(gh) / 2.0,
                                       5.0 * static_cast<double>(gh) / 6.0};
            const Color lamps[3] = {kSignalRed, kSignalAmber, kSignalGreen};
            for (int k = 0; k < 3; ++k) {
                const double dx = (static_cast<double>(x) + 0.5) - cx;
                const double dy = (static_cast<double>(y) + 0.5) - centers[k];
                if (dx * dx + dy * dy <= r * r) {
                    return lamps[k];
                }
            }
            return kSignalHousing;
        }
        case 1: {  // stop sign: octagon with a light band
            if (y >= (gh * 42) / 100 && y < (gh * 58) / 100) {
                return kStopBand;
            }
            return kStopFill;
        }
        case 2: {  // car: body with window band
            if (y >= (gh * 15) / 100 && y < (gh * 45) / 100 && x >= (gw * 20) / 100 &&
                x < (gw * 80) / 100) {
                return kCarWindow;
            }
            return kCarBody;
        }
        default: {  // truck: body with a dark stripe
            if (y >= (gh * 62) / 100 && y < (gh * 78) / 100) {
                return kTruckStripe;
            }
            return kTruckBody;
        }
    }
}

double pixel_iou(std::size_t ax0, std::size_t ay0, std::size_t ax1, std::size_t ay1,
                 std::size_t bx0, std::size_t by0, std::size_t bx1, std::size_t by1) {
    const double ix = std::max(0.0, static_cast<double>(std::min(ax1, bx1)) -
                                        static_cast<double>(std::max(ax0, bx0)));
    const double iy = std::max(0.0, static_cast<double>(std::min(ay1, by1)) -
                                        static_cast<double>(std::max(ay0, by0)));
    const double inter = ix * iy;
    const double area_a = static_cast<double>(ax1 - ax0) * static_cast<double>(ay1 - ay0);
    const double area_b = static_cast<double>(bx1 - bx0) * static_cast<double>(by1 - by0);
    return inter / (area_a + area_b - inter);
}

void paint_background(Image8& img) {
    const std::size_t horizon = (img.height * 38) / 100;
    for (std::size_t y = 0; y < img.height; ++y) {
        Color row;
        if (y < horizon) {
            const double t = static_cast<double>(y) / static_cast<double>(horizon);
            row.r = static_cast<unsigned char>(std::lround(kSkyTop.r + t * (kSkyHorizon.r - kSkyTop.r)));
            row.g = static_cast<unsigned char>(std::lround(kSkyTop.g + t * (kSkyHorizon.g - kSkyTop.g)));
            row.b = static_cast<unsigned char>(std::lround(kSkyTop.b + t * (kSkyHorizon.b - kSkyTop.b)));
        } else {
            row = kRoad;
        }
        for (std::size_t x = 0; x < img.width; ++x) {
            put_pixel(img, x, y, row);
        }
    }
    // dashed center line on the road
    const std::size_t cx = img.width / 2;
    for (std::size_t y = horizon + 4; y + 6 < img.height; y += 14) {
        for (std::size_t yy = y; yy < y + 6; ++yy) {
            put_pixel(img, cx - 1, yy, kLaneMark);
            put_pixel(img, cx, yy, kLaneMark);
        }
    }
}

}  // namespace

SceneRecipe SceneRecipe::from_config(KvConfig& config) {
    SceneRecipe r;
    r.seed = config.get_uint("seed", r.seed);
    r.min_objects = static_cast<std::size_t>(config.get_uint("min_objects", r.min_objects));
    r.max_objects = static_cast<std::size_t>(config.get_uint("max_objects", r.max_objects));
    r.illumination = config.get_double("illumination", r.illumination);
    r.noise_sigma = config.get_double("noise_sigma", r.noise_sigma);
    r.occlusion_prob = config.get_double("occlusion_prob", r.occlusion_prob);
    r.min_scale = config.get_double("min_scale", r.min_scale);
    r.max_scale = config.get_double("max_scale", r.max_scale);
    r.width = static_cast<std::size_t>(config.get_uint("width", r.width));
    r.height = static_cast<std::size_t>(config.get_uint("height", r.height));
    r.validate();
    return r;
}

void SceneRecipe::validate() const {
    if (min_objects > max_objects) {
        throw DataError("recipe: min_objects > max_objects");
    }
    if (illumination < 0.1 || illumination > 1.0) {
        throw DataError("recipe: illumination must lie in [0.1, 1.0]");
    }
    if (noise_sigma < 0.0) {
        throw DataError("recipe: noise_sigma must be non-negative");
    }
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0) {
        throw DataError("recipe: occlusion_prob must lie in [0, 1]");
    }
    if (min_scale < 8.0 || min_scale > max_scale) {
        throw DataError("recipe: need 8 <= min_scale <= max_scale");
    }
    if (width < 32 || height < 32) {
        throw DataError("recipe: image dimensions must be at least 32");
    }
    if (max_scale > static_cast<double>(std::min(width, height)) - 8.0) {
        throw DataError("recipe: max_scale leaves no room to place glyphs");
    }
}

std::array<std::size_t, 2> glyph_extent(std::size_t class_id, double size) {
    const auto px = [](double v) { return std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(v))); };
    switch (class_id) {
        case 0: return {px(0.40 * size), px(size)};   // signal: tall narrow
        case 1: return {px(size), px(size)};          // stop: square octagon
        case 2: return {px(size), px(0.50 * size)};   // car: wide
        case 3: return {px(0.72 * size), px(size)};   // truck: tall, large
        default: throw DataError("glyph_extent: unknown class id " + std::to_string(class_id));
    }
}

bool glyph_covers(std::size_t class_id, double size, std::size_t x, std::size_t y) {
    const auto [gw, gh] = glyph_extent(class_id, size);
    if (x >= gw || y >= gh) {
        return false;
    }
    if (class_id == 1) {
        // octagon: square with the four corners cut off
        const std::size_t cut = static_cast<std::size_t>(std::lround(0.29 * static_cast<double>(gw)));
        const std::size_t rx = gw - 1 - x;
        const std::size_t ry = gh - 1 - y;
        return x + y >= cut && rx + y >= cut && x + ry >= cut && rx + ry >= cut;
    }
    return true;  // the other glyphs fill their rectangle
}

ImageSample generate_scene(const SceneRecipe& recipe, std::uint64_t index) {
    recipe.validate();
    Rng rng(derive_seed(recipe.seed, "scene", index));
    const std::size_t w = recipe.width;
    const std::size_t h = recipe.height;

    Image8 img;
    img.width = w;
    img.height = h;
    img.rgb.assign(w * h * 3, 0);
    paint_background(img);

    struct Placed {
        std::size_t class_id;
        double size;
        std::size_t x0, y0, x1, y1;  // pixel corner bounds of the glyph cell
    };
    std::vector<Placed> placed;
    const std::size_t count =
        static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(recipe.min_objects),
                                                 static_cast<std::int64_t>(recipe.max_objects)));
    for (std::size_t obj = 0; obj < count; ++obj) {
        bool ok = false;
        for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
            const std::size_t cls = static_cast<std::size_t>(rng.uniform_int(0, kNumClasses - 1));
            const double size = rng.uniform(recipe.min_scale, recipe.max_scale);
            const auto [gw, gh] = glyph_extent(cls, size);
            if (gw + 4 >= w || gh + 4 >= h) {
                continue;
            }
            const std::size_t x0 = static_cast<std::size_t>(
                rng.uniform_int(2, static_cast<std::int64_t>(w - gw - 2)));
            const std::size_t y0 = static_cast<std::size_t>(
                rng.uniform_int(2, static_cast<std::int64_t>(h - gh - 2)));
            bool crowded = false;
            for (const Placed& p : placed) {
                if (pixel_iou(x0, y0, x0 + gw, y0 + gh, p.x0, p.y0, p.x1, p.y1) > 0.25) {
                    crowded = true;
                    break;
                }
            }
            if (crowded) {
                continue;
            }
            placed.push_back(Placed{cls, size, x0, y0, x0 + gw, y0 + gh});
            ok = true;
        }
        if (!ok) {
            throw DataError("generate_scene: could not place object " + std::to_string(obj + 1) +
                            " of " + std::to_string(count) +
                            " after 60 attempts; the recipe overpacks the scene");
        }
    }

    // rasterize glyphs and record tight mask bounds as ground truth
    ImageSample sample;
    for (const Placed& p : placed) {
        const std::size_t gw = p.x1 - p.x0;
        const std::size_t gh = p.y1 - p.y0;
        std::size_t min_x = gw, min_y = gh, max_x = 0, max_y = 0;
        for (std::size_t y = 0; y < gh; ++y) {
            for (std::size_t x = 0; x < gw; ++x) {
                if (!glyph_covers(p.class_id, p.size, x, y)) {
                    continue;
                }
                put_pixel(img, p.x0 + x, p.y0 + y, glyph_color(p.class_id, gw, gh, x, y));
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
        }
        GroundTruthObject gt;
        gt.class_id = p.class_id;
        gt.box = box_convert({static_cast<double>(p.x0 + min_x), static_cast<double>(p.y0 + min_y),
                              static_cast<double>(p.x0 + max_x + 1),
                              static_cast<double>(p.y0 + max_y + 1)},
                             BoxForm::pixel_corner, BoxForm::norm_center, static_cast<double>(w),
                             static_cast<double>(h));
        sample.objects.push_back(gt);
    }

    // occluding bars, drawn after ground truth is fixed
    for (const Placed& p : placed) {
        if (rng.uniform() >= recipe.occlusion_prob) {
            continue;
        }
        const bool vertical = rng.uniform_int(0, 1) == 1;
        if (vertical) {
            const std::size_t thickness =
                std::max<std::size_t>(2, (p.x1 - p.x0) * 18 / 100);
            const std::size_t bx = static_cast<std::size_t>(rng.uniform_int(
                static_cast<std::int64_t>(p.x0), static_cast<std::int64_t>(p.x1 - 1)));
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = bx; x < std::min(bx + thickness, w); ++x) {
                    put_pixel(img, x, y, kOcclusionBar);
                }
            }
        } else {
            const std::size_t thickness =
                std::max<std::size_t>(2, (p.y1 - p.y0) * 18 / 100);
            const std::size_t by = static_cast<std::size_t>(rng.uniform_int(
                static_cast<std::int64_t>(p.y0), static_cast<std::int64_t>(p.y1 - 1)));
            for (std::size_t y = by; y < std::min(by + thickness, h); ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    put_pixel(img, x, y, kOcclusionBar);
                }
            }
        }
    }

    // illumination, noise, and quantization back onto the 8-bit grid
    if (recipe.illumination != 1.0 || recipe.noise_sigma > 0.0) {
        for (std::size_t i = 0; i < img.rgb.size(); ++i) {
            double v = static_cast<double>(img.rgb[i]) / 255.0 * recipe.illumination;
            if (recipe.noise_sigma > 0.0) {
                v += rng.normal(0.0, recipe.noise_sigma);
            }
            v = std::clamp(v, 0.0, 1.0);
            img.rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }

    char name[16];
    std::snprintf(name, sizeof(name), "%06llu", static_cast<unsigned long long>(index));
    sample.source_id = name;
    sample.image = image_to_tensor(img);
    return sample;
}

void write_dataset(const std::string& dir, std::span<const ImageSample> samples) {
    fs::create_directories(fs::path(dir) / "images");
    json images = json::array();
    json annotations = json::array();
    std::int64_t next_annotation = 1;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ImageSample& s = samples[i];
        const std::size_t h = s.image.shape()[1];
        const std::size_t w = s.image.shape()[2];
        const std::string file_name = "images/" + s.source_id + ".png";
        write_png_rgb8((fs::path(dir) / file_name).string(), tensor_to_image(s.image));
        const std::int64_t image_id = static_cast<std::int64_t>(i) + 1;
        images.push_back({{"id", image_id},
                          {"file_name", file_name},
                          {"width", w},
                          {"height", h}});
        for (const GroundTruthObject& obj : s.objects) {
            const BoxValues bbox = box_convert(obj.box, BoxForm::norm_center, BoxForm::pixel_xywh,
                                               static_cast<double>(w), static_cast<double>(h));
            annotations.push_back({{"id", next_annotation++},
                                   {"image_id", image_id},
                                   {"category_id", obj.class_id},
                                   {"bbox", {bbox[0], bbox[1], bbox[2], bbox[3]}}});
        }
    }
    json categories = json::array();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        categories.push_back({{"id", c}, {"name", kClassNames[c]}});
    }
    const json root = {{"images", images}, {"annotations", annotations},
                       {"categories", categories}};
    std::ofstream os(fs::path(dir) / "annotations.json");
    if (!os) {
        throw DataError("write_dataset: cannot open " + dir + "/annotations.json");
    }
    os << root.dump(1) << "\n";
}

std::vector<SampleDescriptor> load_annotations(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("annotations " + path + ": cannot open");
    }
    json root;
    try {
        is >> root;
    } catch (const json::parse_error& e) {
        throw DataError("annotations " + path + ": malformed JSON: " + e.what());
    }
    if (!root.is_object() || !root.contains("images") || !root["images"].is_array() ||
        !root.contains("annotations") || !root["annotations"].is_array()) {
        throw DataError("annotations " + path + ": expected an object with images[] and "
                        "annotations[]");
    }

    std::vector<SampleDescriptor> samples;
    std::map<std::int64_t, std::size_t> by_id;
    for (const json& im : root["images"]) {
        SampleDescriptor d;
        try {
            d.id = im.at("id").get<std::int64_t>();
            d.file_name = im.at("file_name").get<std::string>();
            d.width = im.at("width").get<std::size_t>();
            d.height = im.at("height").get<std::size_t>();
        } catch (const json::exception& e) {
            throw DataError("annotations " + path + ": bad image entry: " + e.what());
        }
        if (d.width == 0 || d.height == 0) {
            throw DataError("annotations " + path + ": image id " + std::to_string(d.id) +
                            " has zero dimensions");
        }
        if (!by_id.emplace(d.id, samples.size()).second) {
            throw DataError("annotations " + path + ": duplicate image id " +
                            std::to_string(d.id));
        }
        samples.push_back(std::move(d));
    }

    std::set<std::int64_t> annotation_ids;
    for (const json& an : root["annotations"]) {
        std::int64_t aid, image_id, category_id;
        json bbox;
        try {
            aid = an.at("id").get<std::int64_t>();
            image_id = an.at("image_id").get<std::int64_t>();
            category_id = an.at("category_id").get<std::int64_t>();
            bbox = an.at("bbox");
        } catch (const json::exception& e) {
            throw DataError("annotations " + path + ": bad annotation entry: " + e.what());
        }
        if (!annotation_ids.insert(aid).second) {
            throw DataError("annotations " + path + ": duplicate annotation id " +
                            std::to_string(aid));
        }
        const auto owner = by_id.find(image_id);
        if (owner == by_id.end()) {
            throw DataError("annotations " + path + ": annotation " + std::to_string(aid) +
                            " references unknown image_id " + std::to_string(image_id));
        }
        if (!valid_class_id(category_id)) {
            std::string valid;
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                if (c) {
                    valid += ", ";
                }
                valid += std::to_string(c) + "=" + kClassNames[c];
            }
            throw DataError("annotations " + path + ": annotation " + std::to_string(aid) +
                            " has unknown category_id " + std::to_string(category_id) +
                            "; valid ids: " + valid);
        }
        if (!bbox.is_array() || bbox.size() != 4) {
            throw DataError("annotations " + path + ": annotation " + std::to_string(aid) +
                            " bbox must be [x, y, w, h]");
        }
        const double bw = bbox[2].get<double>();
        const double bh = bbox[3].get<double>();
        if (!(bw > 0.0) || !(bh > 0.0)) {
            throw DataError("annotations " + path + ": annotation " + std::to_string(aid) +
                            " has non-positive box dimensions " + std::to_string(bw) + "x" +
                            std::to_string(bh));
        }
        SampleDescriptor& d = samples[owner->second];
        GroundTruthObject obj;
        obj.class_id = static_cast<std::size_t>(category_id);
        try {
            obj.box = box_convert({bbox[0].get<double>(), bbox[1].get<double>(), bw, bh},
                                  BoxForm::pixel_xywh, BoxForm::norm_center,
                                  static_cast<double>(d.width), static_cast<double>(d.height));
        } catch (const std::invalid_argument& e) {
            throw DataError("annotations " + path + ": annotation " + std::to_string(aid) + ": " +
                            e.what());
        }
        if (!(obj.box[2] > 0.0) || !(obj.box[3] > 0.0)) {
            throw DataError("annotations " + path + ": annotation " + std::to_string(aid) +
                            " lies outside its image");
        }
        d.objects.push_back(obj);
    }
    return samples;
}

ImageSample load_sample(const std::string& dataset_dir, const SampleDescriptor& descriptor,
                        std::size_t target_w, std::size_t target_h) {
    const Image8 src = read_png_rgb8((fs::path(dataset_dir) / descriptor.file_name).string());
    if (src.width != descriptor.width || src.height != descriptor.height) {
        throw DataError("sample " + descriptor.file_name + ": PNG is " +
                        std::to_string(src.width) + "x" + std::to_string(src.height) +
                        " but the annotations declare " + std::to_string(descriptor.width) + "x" +
                        std::to_string(descriptor.height));
    }

    ImageSample out;
    out.source_id = fs::path(descriptor.file_name).stem().string();
    if (src.width == target_w && src.height == target_h) {
        out.image = image_to_tensor(src);
        out.objects = descriptor.objects;
        return out;
    }

    out.image = image_to_tensor(letterbox_image(src, target_w, target_h));

    const LetterboxLayout l = letterbox_layout(src.width, src.height, target_w, target_h);
    for (const GroundTruthObject& obj : descriptor.objects) {
        const BoxValues corner =
            box_convert(obj.box, BoxForm::norm_center, BoxForm::pixel_corner,
                        static_cast<double>(src.width), static_cast<double>(src.height));
        GroundTruthObject moved = obj;
        moved.box = box_convert({corner[0] * l.scale_x + static_cast<double>(l.offset_x),
                                 corner[1] * l.scale_y + static_cast<double>(l.offset_y),
                                 corner[2] * l.scale_x + static_cast<double>(l.offset_x),
                                 corner[3] * l.scale_y + static_cast<double>(l.offset_y)},
                                BoxForm::pixel_corner, BoxForm::norm_center,
                                static_cast<double>(target_w), static_cast<double>(target_h));
        out.objects.push_back(moved);
    }
    return out;
}

LetterboxLayout letterbox_layout(std::size_t src_w, std::size_t src_h, std::size_t dst_w,
                                 std::size_t dst_h) {
    if (src_w == 0 || src_h == 0 || dst_w == 0 || dst_h == 0) {
        throw DataError("letterbox dimensions must be positive");
    }
    const double scale = std::min(static_cast<double>(dst_w) / static_cast<double>(src_w),
                                  static_cast<double>(dst_h) / static_cast<double>(src_h));
    LetterboxLayout l;
    l.content_w = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(scale * static_cast<double>(src_w))));
    l.content_h = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(scale * static_cast<double>(src_h))));
    l.offset_x = (dst_w - l.content_w) / 2;
    l.offset_y = (dst_h - l.content_h) / 2;
    l.scale_x = static_cast<double>(l.content_w) / static_cast<double>(src_w);
    l.scale_y = static_cast<double>(l.content_h) / static_cast<double>(src_h);
    return l;
}

Image8 letterbox_image(const Image8& src, std::size_t dst_w, std::size_t dst_h) {
    const LetterboxLayout l = letterbox_layout(src.width, src.height, dst_w, dst_h);
    Image8 dst;
    dst.width = dst_w;
    dst.height = dst_h;
    dst.rgb.assign(dst_w * dst_h * 3, 114);
    for (std::size_t y = 0; y < l.content_h; ++y) {
        const std::size_t sy = std::min(src.height - 1, y * src.height / l.content_h);
        for (std::size_t x = 0; x < l.content_w; ++x) {
            const std::size_t sx = std::min(src.width - 1, x * src.width / l.content_w);
            for (std::size_t c = 0; c < 3; ++c) {
                dst.rgb[((l.offset_y + y) * dst_w + l.offset_x + x) * 3 + c] =
                    src.rgb[(sy * src.width + sx) * 3 + c];
            }
        }
    }
    return dst;
}

std::vector<ImageSample> load_dataset(const std::string& dir, std::size_t target_w,
                                      std::size_t target_h) {
    const auto descriptors = load_annotations((fs::path(dir) / "annotations.json").string());
    std::vector<ImageSample> out;
    out.reserve(descriptors.size());
    for (const SampleDescriptor& d : descriptors) {
        out.push_back(load_sample(dir, d, target_w, target_h));
    }
    return out;
}

std::array<std::size_t, kNumClasses> class_histogram(std::span<const ImageSample> samples) {
    std::array<std::size_t, kNumClasses> counts{};
    for (const ImageSample& s : samples) {
        for (const GroundTruthObject& obj : s.objects) {
            if (obj.class_id < kNumClasses) {
                ++counts[obj.class_id];
            }
        }
    }
    return counts;
}

}  // namespace tinydetr
