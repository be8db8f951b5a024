#pragma once

#include <algorithm>

namespace owdet {

// Axis-aligned box in normalized image coordinates, center + size form.
// "Inside the unit square" means every field lies in [0, 1]; corner overhang
// from large boxes is clipped only where pixel access requires it.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
};

struct CornerBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

inline CornerBox to_corners(const Box& b) {
    return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

inline Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

inline double box_area(const Box& b) { return b.w * b.h; }

double iou(const Box& a, const Box& b);

// Generalized IoU in [-1, 1]; equals IoU when the enclosing box matches the
// union region, and goes negative for disjoint boxes.
double giou(const Box& a, const Box& b);

inline bool box_fields_in_unit(const Box& b) {
    return b.cx >= 0 && b.cx <= 1 && b.cy >= 0 && b.cy <= 1 && b.w > 0 && b.w <= 1 && b.h > 0 &&
           b.h <= 1;
}

}  // namespace owdet
