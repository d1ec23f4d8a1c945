#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinydetr/config.hpp"
#include "tinydetr/labels.hpp"
#include "tinydetr/png_io.hpp"
#include "tinydetr/tensor.hpp"

namespace tinydetr {

// Challenge axes of the synthetic dashcam scenes: lighting, sensor noise,
// partial occlusion, and object scale. Same recipe + seed + index always
// produces bit-identical samples.
struct SceneRecipe {
    std::uint64_t seed = 0;
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;
    double illumination = 1.0;  // in [0.1, 1.0]
    double noise_sigma = 0.0;
    double occlusion_prob = 0.0;
    double min_scale = 20.0;  // glyph nominal size range, pixels
    double max_scale = 44.0;
    std::size_t width = 128;
    std::size_t height = 128;

    static SceneRecipe from_config(KvConfig& config);
    void validate() const;
};

struct ImageSample {
    Tensor image;  // [3,H,W], values on the k/255 grid
    std::vector<GroundTruthObject> objects;
    std::string source_id;
};

// Deterministic glyph coverage predicate: does the class glyph with nominal
// size `size` paint local pixel (x, y)? Footprints per class: circle-triplet
// signal housing, octagonal stop sign, wide car body, tall truck body.
// Exposed so tests can re-derive bounding boxes by scanning masks.
bool glyph_covers(std::size_t class_id, double size, std::size_t x, std::size_t y);
// Pixel footprint (width, height) of a glyph at nominal size.
std::array<std::size_t, 2> glyph_extent(std::size_t class_id, double size);

// Renders one scene: road backdrop, randomly placed class glyphs, then
// occluding bars, illumination scaling, and additive noise. Ground-truth
// boxes are tight bounds of the rendered glyph masks, recorded before
// occlusion. Streams derive from (recipe.seed, index), so any subset of
// indices can be generated in any order.
ImageSample generate_scene(const SceneRecipe& recipe, std::uint64_t index);

// On-disk dataset: <dir>/annotations.json + <dir>/images/<source_id>.png.
void write_dataset(const std::string& dir, std::span<const ImageSample> samples);

struct SampleDescriptor {
    std::int64_t id = 0;
    std::string file_name;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<GroundTruthObject> objects;  // normalized center form
};

// Parses and validates the annotation schema; does not touch pixel data.
std::vector<SampleDescriptor> load_annotations(const std::string& path);

// Geometry of an aspect-preserving letterbox fit: content size, centering
// offsets, and the per-axis scale factors applied to source pixel coords.
struct LetterboxLayout {
    std::size_t content_w = 0, content_h = 0;
    std::size_t offset_x = 0, offset_y = 0;
    double scale_x = 1.0, scale_y = 1.0;
};
LetterboxLayout letterbox_layout(std::size_t src_w, std::size_t src_h, std::size_t dst_w,
                                 std::size_t dst_h);
// Nearest-neighbor resample onto a gray canvas following letterbox_layout.
Image8 letterbox_image(const Image8& src, std::size_t dst_w, std::size_t dst_h);

// Reads the descriptor's PNG and letterboxes it (aspect-preserving, gray
// padding) to the target size, transforming boxes to match.
ImageSample load_sample(const std::string& dataset_dir, const SampleDescriptor& descriptor,
                        std::size_t target_w, std::size_t target_h);

std::vector<ImageSample> load_dataset(const std::string& dir, std::size_t target_w,
                                      std::size_t target_h);

std::array<std::size_t, kNumClasses> class_histogram(std::span<const ImageSample> samples);

}  // namespace tinydetr
