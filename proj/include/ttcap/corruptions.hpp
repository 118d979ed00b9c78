#pragma once

#include <array>
#include <string>
#include <vector>

#include "ttcap/image.hpp"

namespace ttcap {

enum class CorruptionKind {
    gaussian_noise,
    shot_noise,
    impulse_noise,
    defocus_blur,
    glass_blur,
    motion_blur,
    zoom_blur,
    snow,
    frost,
    fog,
    brightness,
    contrast,
    elastic_transform,
    pixelate,
    jpeg_compression,
};

constexpr int kNumCorruptionKinds = 15;
extern const std::array<CorruptionKind, kNumCorruptionKinds> kAllCorruptionKinds;

std::string corruption_name(CorruptionKind kind);
CorruptionKind corruption_from_name(const std::string& name);
// Column abbreviations used by benchmark tables: brigh, cont, defoc, elast,
// fog, frost, gauss, glass, impul, jpeg, motn, pixel, shot, snow, zoom.
std::string corruption_abbrev(CorruptionKind kind);

// Kinds whose output depends on spec.seed. The rest ignore it.
bool corruption_is_stochastic(CorruptionKind kind);

// kind + severity + seed fully determine a degradation.
struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    int severity = 5;  // 1..5 (0 accepted as an identity, for internal tests)
    long seed = 0;

    void validate() const;
    std::string tag() const;  // e.g. "gaussian_noise_s5"
};

// Same shape out, channels clamped to [0, 255].
ImageInput corrupt(const ImageInput& image, const CorruptionSpec& spec);

struct CorruptionManifestEntry {
    std::string source_id;
    std::string kind;
    int severity = 0;
    long seed = 0;
    std::string file;
    std::string sha256;
    std::string abbrev;
};

// Writes lossless PPM files plus a JSONL manifest into out_dir. Idempotent for
// identical inputs. Returns the manifest entries.
std::vector<CorruptionManifestEntry> corrupt_dataset(const std::vector<ImageInput>& images,
                                                     const std::vector<CorruptionKind>& kinds,
                                                     const std::vector<int>& severities, long seed,
                                                     const std::string& out_dir);

}  // namespace ttcap
