#pragma once

// Multi-level 3-D decomposition built from 1-D lifting schemes.
//
// Each level lifts along z, then y, then x, giving eight bands; the LLL band
// is decomposed again. Band index bits: bit0 = high along z, bit1 = high
// along y, bit2 = high along x, so index 1..7 is the fixed high-band order
// HLL, LHL, HHL, LLH, HLH, LHH, HHH (label character i describes axis i).

#include "voxwave/lifting.hpp"

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace voxwave {

enum class SharingMode : std::uint8_t { share_all = 0, share_xy = 1, share_xz = 2, share_yz = 3, share_none = 4 };
enum class AffineGranularity : std::uint8_t { fine = 0, coarse = 1 };
enum class TransformKind : std::uint8_t { cdf53 = 0, cdf97 = 1, learned = 2 };

std::string to_string(SharingMode m);
std::string to_string(AffineGranularity g);
std::string to_string(TransformKind k);
SharingMode parse_sharing(const std::string& s);
AffineGranularity parse_granularity(const std::string& s);
TransformKind parse_transform_kind(const std::string& s);

/// Which parameter set serves each axis. Levels always share parameters.
struct SharingPolicy {
    SharingMode mode = SharingMode::share_xy;
    bool cross_level = true;

    int set_count() const;
    int set_for_axis(int axis) const;
};

struct TransformConfig {
    TransformKind kind = TransformKind::learned;
    int levels = 3;
    SharingPolicy sharing;
    AffineGranularity granularity = AffineGranularity::fine;
    bool lossless = false;
    int width = 16; // hidden channels of each lifting network
};

/// Trainable scalars of a learned transform with this configuration.
std::size_t parameter_count(const SharingPolicy& policy, AffineGranularity granularity, int width = 16,
                            bool include_affine = true);

struct BandId {
    int level = 1; // 1 = finest
    int index = 0; // 0 = LLL (only at the deepest level), 1..7 high bands
    std::string label() const;
    bool operator==(const BandId&) const = default;
};

/// 7N+1 bands of one block, stored in coding order: deepest LLL first, then
/// each level from deepest to finest in the fixed high-band order.
struct SubbandSet {
    int levels = 0;
    Dims block_dims;
    std::vector<nn::Var> bands;

    static std::size_t band_count(int levels) { return std::size_t(7 * levels + 1); }
    static BandId id_at(int levels, std::size_t position);
    static std::size_t position_of(int levels, BandId id);
    static Dims band_dims(Dims block, int level);

    nn::Var& band(BandId id) { return bands[position_of(levels, id)]; }
    const nn::Var& band(BandId id) const { return bands[position_of(levels, id)]; }
    std::size_t sample_count() const;
};

class Transform {
public:
    Transform() = default;
    static Transform create(const TransformConfig& cfg, nn::Rng& rng);

    const TransformConfig& config() const { return cfg_; }
    LiftContext context(int bit_depth) const;

    const LiftingScheme& scheme_for_axis(int axis) const;
    std::vector<LiftingScheme>& schemes() { return sets_; }
    const std::vector<LiftingScheme>& schemes() const { return sets_; }

    /// One decomposition level: 8 bands indexed as described above.
    std::array<nn::Var, 8> forward_level(const nn::Var& x, const LiftContext& ctx) const;
    nn::Var inverse_level(const std::array<nn::Var, 8>& bands, const LiftContext& ctx) const;

    /// Throws GeometryError when the block is not divisible by 2^levels.
    SubbandSet forward(const nn::Var& block, const LiftContext& ctx) const;
    /// Throws FormatError when a band is missing or mis-sized.
    nn::Var inverse(const SubbandSet& s, const LiftContext& ctx) const;

    /// LLL of `level` rebuilt from the bands of level + 1 (which must all be
    /// present in `s`); level == levels returns the stored LLL.
    nn::Var reconstruct_low(const SubbandSet& s, int level, const LiftContext& ctx) const;

    void append_params(std::vector<nn::NamedParam>& out) const;
    std::size_t trainable_parameter_count() const;

private:
    TransformConfig cfg_;
    std::vector<LiftingScheme> sets_;
};

SubbandSet forward_3d(const Volume& v, const Transform& t);
Volume inverse_3d(const SubbandSet& s, const Transform& t, int bit_depth, bool is_signed);

} // namespace voxwave
