#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tinydetr {

// Axis-aligned box in corner form (x0,y0,x1,y1); the canonical form for
// geometry. Coordinates may be pixels or normalized units, as long as both
// boxes of a binary operation agree.
struct CornerBox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    bool valid() const { return x1 >= x0 && y1 >= y0; }
    bool operator==(const CornerBox&) const = default;
};

inline double iou(const CornerBox& a, const CornerBox& b) {
    if (!a.valid() || !b.valid()) {
        throw std::invalid_argument("iou: box has negative extent");
    }
    if (a == b) {
        return 1.0;  // covers identical degenerate points
    }
    const double ix0 = std::max(a.x0, b.x0);
    const double iy0 = std::max(a.y0, b.y0);
    const double ix1 = std::min(a.x1, b.x1);
    const double iy1 = std::min(a.y1, b.y1);
    const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return inter / uni;
}

// GIoU = IoU - (hull - union)/hull, in [-1, 1]. A zero-area hull (both boxes
// degenerate at the same point) drops the hull term.
inline double giou(const CornerBox& a, const CornerBox& b) {
    const double i = iou(a, b);
    const double hx0 = std::min(a.x0, b.x0);
    const double hy0 = std::min(a.y0, b.y0);
    const double hx1 = std::max(a.x1, b.x1);
    const double hy1 = std::max(a.y1, b.y1);
    const double hull = (hx1 - hx0) * (hy1 - hy0);
    if (hull <= 0.0) {
        return i;
    }
    const double ix0 = std::max(a.x0, b.x0);
    const double iy0 = std::max(a.y0, b.y0);
    const double ix1 = std::min(a.x1, b.x1);
    const double iy1 = std::min(a.y1, b.y1);
    const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
    const double uni = a.area() + b.area() - inter;
    return i - (hull - uni) / hull;
}

// The three interchange forms. Values are (x0,y0,x1,y1), (x,y,w,h) in pixels,
// or (cx,cy,w,h) in units of the image dimensions.
enum class BoxForm { pixel_corner, pixel_xywh, norm_center };

using BoxValues = std::array<double, 4>;

inline const char* box_form_name(BoxForm form) {
    switch (form) {
        case BoxForm::pixel_corner: return "pixel_corner";
        case BoxForm::pixel_xywh: return "pixel_xywh";
        case BoxForm::norm_center: return "norm_center";
    }
    return "?";
}

// Converts between box forms, validating extents and clamping the result into
// the image (pixel forms) or into [0,1] (normalized form). In-range boxes
// round-trip exactly.
inline BoxValues box_convert(const BoxValues& box, BoxForm from, BoxForm to, double image_w,
                             double image_h) {
    if (image_w <= 0.0 || image_h <= 0.0) {
        throw std::invalid_argument("box_convert: image dimensions must be positive");
    }
    // normalize the input to pixel corner form
    double x0, y0, x1, y1;
    switch (from) {
        case BoxForm::pixel_corner:
            x0 = box[0];
            y0 = box[1];
            x1 = box[2];
            y1 = box[3];
            if (x1 < x0 || y1 < y0) {
                throw std::invalid_argument("box_convert: corner box (" + std::to_string(box[0]) +
                                            "," + std::to_string(box[1]) + "," +
                                            std::to_string(box[2]) + "," + std::to_string(box[3]) +
                                            ") has x1 < x0 or y1 < y0");
            }
            break;
        case BoxForm::pixel_xywh:
        case BoxForm::norm_center: {
            if (box[2] < 0.0 || box[3] < 0.0) {
                throw std::invalid_argument("box_convert: negative box extent (w=" +
                                            std::to_string(box[2]) + ", h=" +
                                            std::to_string(box[3]) + ")");
            }
            if (from == BoxForm::pixel_xywh) {
                x0 = box[0];
                y0 = box[1];
                x1 = box[0] + box[2];
                y1 = box[1] + box[3];
            } else {
                x0 = (box[0] - box[2] / 2.0) * image_w;
                y0 = (box[1] - box[3] / 2.0) * image_h;
                x1 = (box[0] + box[2] / 2.0) * image_w;
                y1 = (box[1] + box[3] / 2.0) * image_h;
            }
            break;
        }
        default: throw std::invalid_argument("box_convert: unknown source form");
    }

    x0 = std::clamp(x0, 0.0, image_w);
    x1 = std::clamp(x1, 0.0, image_w);
    y0 = std::clamp(y0, 0.0, image_h);
    y1 = std::clamp(y1, 0.0, image_h);

    switch (to) {
        case BoxForm::pixel_corner: return {x0, y0, x1, y1};
        case BoxForm::pixel_xywh: return {x0, y0, x1 - x0, y1 - y0};
        case BoxForm::norm_center:
            return {(x0 + x1) / 2.0 / image_w, (y0 + y1) / 2.0 / image_h, (x1 - x0) / image_w,
                    (y1 - y0) / image_h};
    }
    throw std::invalid_argument("box_convert: unknown destination form");
}

// Normalized center form -> normalized corner form (image-independent).
inline CornerBox center_to_corner(const BoxValues& cxcywh) {
    return CornerBox{cxcywh[0] - cxcywh[2] / 2.0, cxcywh[1] - cxcywh[3] / 2.0,
                     cxcywh[0] + cxcywh[2] / 2.0, cxcywh[1] + cxcywh[3] / 2.0};
}

}  // namespace tinydetr
