#include "voxwave/codec.hpp"

#include "voxwave/bytes.hpp"
#include "voxwave/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

namespace voxwave {

using nn::Var;

// ---- post-processing -------------------------------------------------------

PostProcessor PostProcessor::create(int width, nn::Rng& rng, int block_count)
{
    PostProcessor p;
    p.head = nn::ConvLayer::create(1, width, 3, nn::Padding::replicate, nn::MaskType::none, rng);
    for (int i = 0; i < block_count; ++i)
        p.blocks.push_back(nn::ResidualBlock::create(width, nn::Padding::replicate, rng));
    p.tail = nn::ConvLayer::create(width, 1, 3, nn::Padding::replicate, nn::MaskType::none, rng);
    p.tail.weight.mutable_value().fill(0.0);
    p.tail.bias.mutable_value().fill(0.0);
    return p;
}

Var PostProcessor::forward(const Var& x, double input_scale) const
{
    if (!enabled())
        return x;
    Var h = nn::conv3d(nn::scale(x, input_scale), head);
    for (const auto& b : blocks)
        h = b.forward(h);
    return nn::add(x, nn::scale(nn::conv3d(h, tail), 1.0 / input_scale));
}

void PostProcessor::append_params(const std::string& prefix, std::vector<nn::NamedParam>& out) const
{
    if (!enabled())
        return;
    head.append_params(prefix + "/head", out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].append_params(prefix + "/block" + std::to_string(i), out);
    tail.append_params(prefix + "/tail", out);
}

std::size_t PostProcessor::parameter_count() const
{
    if (!enabled())
        return 0;
    std::size_t n = head.parameter_count() + tail.parameter_count();
    for (const auto& b : blocks)
        n += b.parameter_count();
    return n;
}

// ---- model -----------------------------------------------------------------

namespace {

constexpr int kConfigFields = 14;
constexpr double kModelFormat = 1.0;

} // namespace

CodecModel CodecModel::create(const CodecConfig& cfg_in, std::uint64_t seed)
{
    CodecConfig cfg = cfg_in;
    QuantConfig{cfg.qs}.validate();
    cfg.qs = nn::to_storage_precision(cfg.qs);
    if (cfg.transform.width < 2)
        throw ConfigError("lifting networks need at least 2 channels");
    nn::Rng rng(seed);
    CodecModel m;
    m.config = cfg;
    m.transform = Transform::create(cfg.transform, rng);
    m.factorized = FactorizedModel::create(cfg.transform.levels);
    if (cfg.entropy == EntropyKind::context) {
        if (cfg.context_width < 1)
            throw ConfigError("context model width must be positive");
        m.context = ContextModel::create(cfg.transform.levels, cfg.context_width, rng);
    }
    if (cfg.post_width > 0 && !cfg.transform.lossless)
        m.post = PostProcessor::create(cfg.post_width, rng);
    m.canonicalize();
    return m;
}

std::vector<nn::NamedParam> CodecModel::params(ModuleGroup group) const
{
    std::vector<nn::NamedParam> out;
    switch (group) {
    case ModuleGroup::transform:
        transform.append_params(out);
        break;
    case ModuleGroup::entropy:
        if (config.entropy == EntropyKind::context)
            context.append_params("entropy/context", out);
        else
            factorized.append_params("entropy/factorized", out);
        break;
    case ModuleGroup::post:
        post.append_params("post", out);
        break;
    }
    return out;
}

std::vector<nn::NamedParam> CodecModel::params() const
{
    std::vector<nn::NamedParam> out;
    for (auto g : {ModuleGroup::transform, ModuleGroup::entropy, ModuleGroup::post}) {
        auto p = params(g);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::size_t CodecModel::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& p : params())
        n += p.var.value().size();
    return n;
}

void CodecModel::canonicalize()
{
    for (auto& p : params()) {
        auto& v = const_cast<Var&>(p.var).mutable_value();
        for (auto& x : v.vec())
            x = nn::to_storage_precision(x);
    }
}

std::vector<NamedTensor> CodecModel::to_tensors() const
{
    const auto& t = config.transform;
    std::vector<double> c = {kModelFormat,
                             double(t.kind),
                             double(t.levels),
                             double(t.sharing.mode),
                             double(t.granularity),
                             t.lossless ? 1.0 : 0.0,
                             double(t.width),
                             double(config.entropy),
                             config.qs,
                             double(config.context_width),
                             double(config.post_width),
                             double(config.block_dims.d),
                             double(config.block_dims.h),
                             double(config.block_dims.w)};
    std::vector<NamedTensor> out;
    out.push_back({"config", nn::Tensor(nn::Shape{kConfigFields, 1, 1, 1}, c)});
    for (const auto& p : params())
        out.push_back({p.name, p.var.value()});
    return out;
}

CodecModel CodecModel::from_tensors(const std::vector<NamedTensor>& tensors)
{
    std::map<std::string, const nn::Tensor*> by_name;
    for (const auto& t : tensors)
        by_name[t.name] = &t.tensor;
    auto it = by_name.find("config");
    if (it == by_name.end() || it->second->size() != kConfigFields)
        throw FormatError("model file has no valid config record");
    const nn::Tensor& c = *it->second;
    if (c[0] != kModelFormat)
        throw FormatError("unsupported model format " + std::to_string(c[0]));
    CodecConfig cfg;
    cfg.transform.kind = TransformKind(int(c[1]));
    cfg.transform.levels = int(c[2]);
    cfg.transform.sharing.mode = SharingMode(int(c[3]));
    cfg.transform.granularity = AffineGranularity(int(c[4]));
    cfg.transform.lossless = c[5] != 0.0;
    cfg.transform.width = int(c[6]);
    cfg.entropy = EntropyKind(int(c[7]));
    cfg.qs = c[8];
    cfg.context_width = int(c[9]);
    cfg.post_width = int(c[10]);
    cfg.block_dims = {int(c[11]), int(c[12]), int(c[13])};

    CodecModel m = create(cfg, 0);
    for (auto& p : m.params()) {
        auto f = by_name.find(p.name);
        if (f == by_name.end())
            throw FormatError("model file lacks tensor '" + p.name + "'");
        if (!(f->second->shape() == p.var.shape()))
            throw FormatError("tensor '" + p.name + "' has shape " + f->second->shape().str() + ", expected " +
                              p.var.shape().str());
        const_cast<Var&>(p.var).mutable_value() = *f->second;
    }
    return m;
}

std::uint64_t CodecModel::hash() const { return fnv1a64(serialize_weights(to_tensors())); }

void CodecModel::save(const std::string& path) const { save_weights(path, to_tensors()); }

CodecModel CodecModel::load(const std::string& path) { return from_tensors(load_weights(path)); }

double context_value_scale(int bit_depth) { return std::ldexp(1.0, 4 - bit_depth); }

// ---- pipelines ---------------------------------------------------------------

namespace {

template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn)
{
    std::size_t workers = std::min<std::size_t>(std::size_t(std::max(jobs, 1)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

void for_each_voxel(const nn::Shape& s, auto&& fn)
{
    for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                fn(z, y, x, (std::size_t(z) * s.h + y) * s.w + x);
}

std::vector<BandRecord> encode_block(const Volume& blk, const CodecModel& m, std::uint32_t block_index,
                                     std::vector<std::uint64_t>* trace)
{
    nn::NoGradGuard ng;
    const LiftContext ctx = m.lift_context(blk.bit_depth);
    SubbandSet coeffs = m.transform.forward(to_var(blk), ctx);
    const double qs = m.effective_qs();
    SubbandSet q = quantize(coeffs, QuantConfig{qs});

    std::vector<BandRecord> records;
    SubbandSet coded{q.levels, q.block_dims, std::vector<Var>(q.bands.size())};
    const double vs = context_value_scale(blk.bit_depth);
    for (std::size_t pos = 0; pos < q.bands.size(); ++pos) {
        const nn::Tensor& band = q.bands[pos].value();
        RangeEncoder enc;
        if (m.config.entropy == EntropyKind::factorized) {
            DiscretePmf pmf = discretize(Cumulative::from_raw(RawView{m.factorized.bands[pos].value().data(), 1}), qs);
            if (trace)
                trace->push_back(pmf.hash());
            for (double v : band.span())
                enc.encode_symbol(pmf, std::llround(v));
        } else {
            nn::Tensor input = m.context.band_input(coded, pos, m.transform, ctx, vs);
            ContextCursor cur = m.context.cursor(input, pos, vs);
            double psi[kCumulativeParams];
            for_each_voxel(band.shape(), [&](int z, int y, int x, std::size_t i) {
                cur.psi_at(z, y, x, psi);
                DiscretePmf pmf = discretize(Cumulative::from_raw(RawView{psi, 1}), qs);
                if (trace)
                    trace->push_back(pmf.hash());
                enc.encode_symbol(pmf, std::llround(band[i]));
                cur.commit(z, y, x, band[i] * qs);
            });
            coded.bands[pos] = Var(dequantize(band, QuantConfig{qs}));
        }
        records.push_back({block_index, std::uint8_t(pos), enc.finish()});
    }
    return records;
}

SubbandSet decode_block(const std::vector<const BandRecord*>& records, const CodecModel& m, Dims block_dims,
                        int bit_depth, std::vector<std::uint64_t>* trace)
{
    nn::NoGradGuard ng;
    const int levels = m.config.transform.levels;
    const LiftContext ctx = m.lift_context(bit_depth);
    const double qs = m.effective_qs();
    const double vs = context_value_scale(bit_depth);
    SubbandSet q{levels, block_dims, std::vector<Var>(SubbandSet::band_count(levels))};
    SubbandSet coded{levels, block_dims, std::vector<Var>(q.bands.size())};
    for (std::size_t pos = 0; pos < q.bands.size(); ++pos) {
        Dims bd = SubbandSet::band_dims(block_dims, SubbandSet::id_at(levels, pos).level);
        nn::Tensor band(nn::Shape{1, bd.d, bd.h, bd.w});
        RangeDecoder dec(records[pos]->payload);
        if (m.config.entropy == EntropyKind::factorized) {
            DiscretePmf pmf = discretize(Cumulative::from_raw(RawView{m.factorized.bands[pos].value().data(), 1}), qs);
            if (trace)
                trace->push_back(pmf.hash());
            for (auto& v : band.vec())
                v = double(dec.decode_symbol(pmf));
        } else {
            nn::Tensor input = m.context.band_input(coded, pos, m.transform, ctx, vs);
            ContextCursor cur = m.context.cursor(input, pos, vs);
            double psi[kCumulativeParams];
            for_each_voxel(band.shape(), [&](int z, int y, int x, std::size_t i) {
                cur.psi_at(z, y, x, psi);
                DiscretePmf pmf = discretize(Cumulative::from_raw(RawView{psi, 1}), qs);
                if (trace)
                    trace->push_back(pmf.hash());
                band[i] = double(dec.decode_symbol(pmf));
                cur.commit(z, y, x, band[i] * qs);
            });
            coded.bands[pos] = Var(dequantize(band, QuantConfig{qs}));
        }
        q.bands[pos] = Var(std::move(band));
    }
    return q;
}

void check_stream_matches_model(const BitstreamHeader& h, const CodecModel& m)
{
    if (h.model_hash != m.hash())
        throw DecodeError("stream was produced with a different model (hash mismatch)");
    const auto& t = m.config.transform;
    if (h.levels != t.levels || h.lossless != t.lossless || h.entropy != m.config.entropy ||
        h.transform_kind != std::uint8_t(t.kind) || h.sharing != std::uint8_t(t.sharing.mode) ||
        h.granularity != std::uint8_t(t.granularity) || h.qs != m.effective_qs())
        throw DecodeError("stream header does not match the model configuration");
    if (h.axis_order != std::array<std::uint8_t, 3>{0, 1, 2} || h.rounding != 0)
        throw DecodeError("unsupported axis order or rounding rule in stream header");
    if (h.bit_depth != 8 && h.bit_depth != 16 && h.bit_depth != 32)
        throw DecodeError("stream declares unsupported bit depth " + std::to_string(h.bit_depth));
    const int unit = 1 << t.levels;
    for (int a = 0; a < 3; ++a)
        if (h.original_dims[a] <= 0 || h.block_dims[a] <= 0 || h.block_dims[a] % unit != 0 ||
            h.block_dims[a] > 4096)
            throw DecodeError("stream declares invalid dimensions " + h.original_dims.str() + " / " +
                              h.block_dims.str());
}

} // namespace

Dims effective_block_dims(Dims volume, Dims configured, int levels)
{
    const int unit = 1 << levels;
    Dims out;
    for (int a = 0; a < 3; ++a)
        out[a] = std::min(configured[a], (volume[a] + unit - 1) / unit * unit);
    return out;
}

std::vector<std::uint8_t> encode_volume(const Volume& v, const CodecModel& model, CodecMode mode,
                                        const CodecOptions& opt)
{
    const bool lossless = model.config.transform.lossless;
    if ((mode == CodecMode::lossless) != lossless)
        throw ConfigError(std::string("model was built for ") + (lossless ? "lossless" : "lossy") +
                          " coding, requested " + (mode == CodecMode::lossless ? "lossless" : "lossy"));
    const Volume src = (!lossless && v.bit_depth == 32) ? normalize_minmax(v) : v;
    const int levels = model.config.transform.levels;
    const Dims bdims = effective_block_dims(src.dims, model.config.block_dims, levels);
    const BlockGrid grid = BlockGrid::for_volume(src.dims, bdims, levels);
    const std::vector<Volume> blocks = tile(src, grid);

    Bitstream bs;
    auto& h = bs.header;
    const auto& t = model.config.transform;
    h.block_dims = bdims;
    h.levels = std::uint8_t(levels);
    h.transform_kind = std::uint8_t(t.kind);
    h.sharing = std::uint8_t(t.sharing.mode);
    h.granularity = std::uint8_t(t.granularity);
    h.lossless = lossless;
    h.qs = model.effective_qs();
    h.entropy = model.config.entropy;
    h.model_hash = model.hash();
    h.original_dims = v.dims;
    h.bit_depth = std::uint8_t(src.bit_depth);
    h.is_signed = src.is_signed;
    if (src.provenance_scale) {
        h.normalized = true;
        h.norm_min = src.provenance_scale->first;
        h.norm_max = src.provenance_scale->second;
    }

    std::vector<std::vector<BandRecord>> per_block(blocks.size());
    std::vector<std::vector<std::uint64_t>> traces(blocks.size());
    parallel_for(blocks.size(), opt.jobs, [&](std::size_t i) {
        per_block[i] = encode_block(blocks[i], model, std::uint32_t(i), opt.pmf_trace ? &traces[i] : nullptr);
    });
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        for (auto& r : per_block[i])
            bs.records.push_back(std::move(r));
        if (opt.pmf_trace)
            opt.pmf_trace->insert(opt.pmf_trace->end(), traces[i].begin(), traces[i].end());
    }
    return write_bitstream(bs);
}

Volume reconstruct_block(const SubbandSet& q, const CodecModel& model, int bit_depth, bool is_signed)
{
    nn::NoGradGuard ng;
    const LiftContext ctx = model.lift_context(bit_depth);
    if (model.config.transform.lossless)
        return to_volume(model.transform.inverse(q, ctx).value(), bit_depth, is_signed);
    SubbandSet y = dequantize(q, QuantConfig{model.effective_qs()});
    Var xhat = model.post.forward(model.transform.inverse(y, ctx), ctx.input_scale);
    Volume out = to_volume(xhat.value(), bit_depth, is_signed);
    const double lo = out.min_value(), hi = out.max_value();
    for (auto& s : out.data)
        s = std::clamp(std::isfinite(s) ? std::round(s) : 0.0, lo, hi);
    return out;
}

Volume decode_volume(std::span<const std::uint8_t> stream, const CodecModel& model, const CodecOptions& opt)
{
    Bitstream bs = read_bitstream(stream);
    const BitstreamHeader& h = bs.header;
    check_stream_matches_model(h, model);
    const int levels = h.levels;
    const Dims coded_dims = h.original_dims;
    BlockGrid grid;
    try {
        grid = BlockGrid::for_volume(coded_dims, h.block_dims, levels);
    } catch (const GeometryError& e) {
        throw DecodeError(e.what());
    }
    const std::size_t nblocks = grid.blocks_per_axis(coded_dims).count();
    const std::size_t nbands = SubbandSet::band_count(levels);
    if (bs.records.size() != nblocks * nbands)
        throw DecodeError("stream has " + std::to_string(bs.records.size()) + " band records, expected " +
                          std::to_string(nblocks * nbands));
    std::vector<std::vector<const BandRecord*>> by_block(nblocks, std::vector<const BandRecord*>(nbands));
    for (std::size_t k = 0; k < bs.records.size(); ++k) {
        const BandRecord& r = bs.records[k];
        if (r.block != k / nbands || r.band != k % nbands)
            throw DecodeError("band record " + std::to_string(k) + " is out of order");
        by_block[r.block][r.band] = &r;
    }

    std::vector<Volume> blocks(nblocks);
    std::vector<std::vector<std::uint64_t>> traces(nblocks);
    parallel_for(nblocks, opt.jobs, [&](std::size_t i) {
        SubbandSet q = decode_block(by_block[i], model, h.block_dims, h.bit_depth, opt.pmf_trace ? &traces[i] : nullptr);
        blocks[i] = reconstruct_block(q, model, h.bit_depth, h.is_signed);
    });
    if (opt.pmf_trace)
        for (auto& t : traces)
            opt.pmf_trace->insert(opt.pmf_trace->end(), t.begin(), t.end());

    Volume out = untile(blocks, grid, coded_dims);
    if (h.normalized) {
        out.provenance_scale = std::make_pair(h.norm_min, h.norm_max);
        out = denormalize(out);
    }
    return out;
}

// ---- metrics ---------------------------------------------------------------

double mse(const Volume& a, const Volume& b)
{
    if (!(a.dims == b.dims))
        throw GeometryError("metrics need equal dims, got " + a.dims.str() + " and " + b.dims.str());
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / double(a.data.size());
}

double psnr(const Volume& a, const Volume& b)
{
    double e = mse(a, b);
    if (e == 0.0)
        return std::numeric_limits<double>::infinity();
    double peak = std::ldexp(1.0, a.bit_depth) - 1.0;
    return 10.0 * std::log10(peak * peak / e);
}

double bits_per_sample(std::size_t stream_bytes, std::size_t samples)
{
    return 8.0 * double(stream_bytes) / double(samples);
}

Metrics metrics(const Volume& x, const Volume& xhat, std::size_t stream_bytes)
{
    Metrics m;
    m.mse = mse(x, xhat);
    m.psnr = psnr(x, xhat);
    m.bpp = bits_per_sample(stream_bytes, x.dims.count());
    return m;
}

} // namespace voxwave
