#pragma once

// Synthetic volumes for training, tests and benchmarks.

#include "voxwave/nn.hpp"
#include "voxwave/volume_io.hpp"

#include <vector>

namespace voxwave {

struct SyntheticConfig {
    Dims dims{32, 32, 32};
    int bit_depth = 8;
    int blobs = 6;
    /// Amplitude of the smoothed noise relative to the full range.
    double noise = 0.08;
    /// Smoothing radius of the noise along z and within a slice.
    int smooth_z = 1;
    int smooth_xy = 3;
};

/// Gaussian blobs plus box-smoothed noise with different z and in-plane
/// correlation, scaled to the bit depth's unsigned range.
Volume synthetic_volume(const SyntheticConfig& cfg, nn::Rng& rng);
std::vector<Volume> synthetic_corpus(std::size_t count, const SyntheticConfig& cfg, std::uint64_t seed);

/// One centred isotropic Gaussian of standard deviation `sigma` voxels.
Volume gaussian_blob(Dims dims, int bit_depth, double sigma);

/// Independent uniform samples over the full range of the bit depth.
Volume random_volume(Dims dims, int bit_depth, bool is_signed, nn::Rng& rng);

} // namespace voxwave
