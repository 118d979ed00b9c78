#pragma once

#include <cmath>
#include <memory>

#include "ttcap/toy_world.hpp"

namespace ttcap::testing {

// tiny orthonormal world with hand-checkable cosines:
// scene(img0) = {dog}, scene(img1) = {dog, cat}, scene(img2) = {dog, grass, tree}
inline std::shared_ptr<ToyWorld> tiny_world() {
    auto w = std::make_shared<ToyWorld>();
    w->vocabulary = {"a", "on", "dog", "cat", "grass", "tree", "banana"};
    w->object_lexicon = {"dog", "cat", "grass", "tree", "banana"};
    w->embeddings = Eigen::MatrixXd::Identity(7, 7);
    w->scenes["img0"] = {"dog"};
    w->scenes["img1"] = {"dog", "cat"};
    w->scenes["img2"] = {"dog", "grass", "tree"};
    w->distractors["img2"] = {"banana"};
    w->image_size = 32;
    return w;
}

inline double psnr(const ImageInput& a, const ImageInput& b) {
    double mse = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = double(a.pixels[i]) - double(b.pixels[i]);
        mse += d * d;
    }
    mse /= double(a.pixels.size());
    if (mse == 0.0) return 99.0;
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace ttcap::testing
