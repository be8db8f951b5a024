#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "owdet/boxes.hpp"

namespace owdet {

// One image with its ground truth. Pixels are row-major H x W x 3 in [0, 1].
struct ImageSample {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<double> pixels;
    std::vector<Box> boxes;                 // normalized cxcywh
    std::vector<std::string> class_names;   // parallel to boxes

    double pixel(std::int64_t y, std::int64_t x, std::int64_t c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
    double& pixel(std::int64_t y, std::int64_t x, std::int64_t c) {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
};

// One predicted box.
struct Detection {
    Box box;
    std::string class_name;
    double score = 0.0;
};

// Ground truth resolved against a class sentence (index into its class list).
struct GroundTruth {
    Box box;
    int class_index = 0;
};

}  // namespace owdet
