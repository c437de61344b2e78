#include "cli.hpp"

#include "voxwave/codec.hpp"
#include "voxwave/errors.hpp"
#include "voxwave/synthetic.hpp"
#include "voxwave/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

namespace voxwave::cli {

namespace {

struct Options {
    // inputs and outputs
    std::vector<std::string> inputs;
    std::string output;
    std::string recon;
    std::string stream;
    std::string log;
    std::string dims;
    int bits = 8;
    bool is_signed = false;
    bool raw_out = false;
    // model
    std::string model;
    std::string transform = "learned";
    std::string sharing = "xy";
    std::string granularity = "fine";
    std::string entropy = "factorized";
    std::string block = "64x64x64";
    bool lossless = false;
    int levels = 3;
    int width = 16;
    int context_width = 16;
    int post_width = 16;
    double qs = 1.0;
    std::uint64_t seed = 0;
    int jobs = 1;
    // training
    double lambda = 16.0;
    double lr = 1e-4;
    std::string steps = "2000,2000,6000";
    int crop = 16;
    int batch = 1;
    int synthetic = 0;
    int validation = 4;
    int validate_every = 100;
    // rd-curve / verify
    std::string qs_list = "0.5,1,2,4,8";
    std::string random_dims;
};

Dims parse_dims(const std::string& s)
{
    Dims d;
    char x1 = 0, x2 = 0;
    std::istringstream in(s);
    if (!(in >> d.d >> x1 >> d.h >> x2 >> d.w) || x1 != 'x' || x2 != 'x' || d.d <= 0 || d.h <= 0 || d.w <= 0 ||
        !(in >> std::ws).eof())
        throw UsageError("dimensions must look like DxHxW with positive integers, got '" + s + "'");
    return d;
}

std::vector<double> parse_list(const std::string& s, const char* what)
{
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string("bad ") + what + " list '" + s + "'");
        }
    }
    if (out.empty())
        throw UsageError(std::string("empty ") + what + " list");
    return out;
}

EntropyKind parse_entropy(const std::string& s)
{
    if (s == "factorized")
        return EntropyKind::factorized;
    if (s == "context")
        return EntropyKind::context;
    throw ConfigError("unknown entropy model '" + s + "' (factorized, context)");
}

CodecConfig config_from(const Options& o)
{
    CodecConfig c;
    c.transform.kind = parse_transform_kind(o.transform);
    c.transform.levels = o.levels;
    c.transform.sharing.mode = parse_sharing(o.sharing);
    c.transform.granularity = parse_granularity(o.granularity);
    c.transform.lossless = o.lossless;
    c.transform.width = o.width;
    c.entropy = parse_entropy(o.entropy);
    c.qs = o.qs;
    c.context_width = o.context_width;
    c.post_width = o.post_width;
    c.block_dims = parse_dims(o.block);
    return c;
}

// Everything that can be checked without touching the file system.
void validate(const Options& o, const CLI::App& sub)
{
    CodecConfig c = config_from(o);
    if (o.levels < 1 || o.levels > 6)
        throw UsageError("--levels must be in 1..6");
    if (!(o.qs > 0.0) || !std::isfinite(o.qs))
        throw UsageError("--qs must be positive");
    if (!(o.lambda >= 0.0))
        throw UsageError("--lambda must be nonnegative");
    if (o.width < 2 || o.context_width < 1 || o.post_width < 0)
        throw UsageError("network widths out of range");
    if (o.bits != 8 && o.bits != 16 && o.bits != 32)
        throw UsageError("--bits must be 8, 16 or 32");
    if (o.jobs < 1)
        throw UsageError("--jobs must be at least 1");
    if (c.transform.lossless && c.transform.kind == TransformKind::cdf97)
        throw UsageError("--lossless needs an integer transform (cdf53 or learned)");
    const int unit = 1 << o.levels;
    for (int a = 0; a < 3; ++a)
        if (c.block_dims[a] % unit != 0)
            throw UsageError("--block dims must be multiples of 2^levels");
    if (!o.model.empty())
        for (const char* flag : {"--transform", "--sharing", "--granularity", "--entropy", "--levels", "--width",
                                 "--context-width", "--post-width", "--block"})
            if (sub.get_option_no_throw(flag) && sub.get_option_no_throw(flag)->count() > 0)
                throw UsageError(std::string(flag) + " cannot be combined with --model");
    if (!o.dims.empty())
        parse_dims(o.dims);
    if (!o.random_dims.empty())
        parse_dims(o.random_dims);
    parse_list(o.qs_list, "QS");
    parse_list(o.steps, "step");
}

CodecModel obtain_model(const Options& o)
{
    if (!o.model.empty())
        return CodecModel::load(o.model);
    return CodecModel::create(config_from(o), o.seed);
}

CodecModel with_qs(const CodecModel& m, double qs)
{
    auto tensors = m.to_tensors();
    for (auto& t : tensors)
        if (t.name == "config")
            t.tensor[8] = qs;
    return CodecModel::from_tensors(tensors);
}

Volume read_input(const Options& o, const std::string& path)
{
    if (!o.dims.empty())
        return load_raw(path, parse_dims(o.dims), o.bits, o.is_signed);
    return read_volume(path);
}

void write_output(const Options& o, const Volume& v)
{
    if (o.raw_out)
        save_raw(o.output, v);
    else
        write_volume(o.output, v);
}

std::string format_psnr(double p)
{
    if (std::isinf(p))
        return "inf";
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << p << " dB";
    return s.str();
}

CodecMode mode_of(const CodecModel& m)
{
    return m.config.transform.lossless ? CodecMode::lossless : CodecMode::lossy;
}

// ---- commands --------------------------------------------------------------

int cmd_encode(const Options& o, std::ostream& out)
{
    CodecModel m = obtain_model(o);
    if (o.lossless && !m.config.transform.lossless)
        throw ConfigError("--lossless requested but the model is lossy");
    Volume v = read_input(o, o.inputs.at(0));
    auto bytes = encode_volume(v, m, mode_of(m), CodecOptions{o.jobs});
    write_file(o.output, bytes);
    out << "encoded " << v.dims.str() << " to " << bytes.size() << " bytes ("
        << bits_per_sample(bytes.size(), v.dims.count()) << " bpp)\n";
    return ok;
}

int cmd_decode(const Options& o, std::ostream& out)
{
    CodecModel m = obtain_model(o);
    auto bytes = read_file(o.inputs.at(0));
    Volume v = decode_volume(bytes, m, CodecOptions{o.jobs});
    write_output(o, v);
    out << "decoded " << v.dims.str() << " at " << v.bit_depth << " bits\n";
    return ok;
}

int cmd_eval(const Options& o, std::ostream& out)
{
    Volume a = read_input(o, o.inputs.at(0));
    Volume b = read_input(o, o.recon);
    out << "PSNR: " << format_psnr(psnr(a, b)) << "\n";
    out << "MSE: " << mse(a, b) << "\n";
    if (!o.stream.empty()) {
        auto bytes = read_file(o.stream);
        out << "bpp: " << bits_per_sample(bytes.size(), a.dims.count()) << "\n";
    }
    return ok;
}

int cmd_rd_curve(const Options& o, std::ostream& out)
{
    std::vector<double> points = parse_list(o.qs_list, "QS");
    CodecModel base = obtain_model(o);
    if (base.config.transform.lossless)
        throw ConfigError("rd-curve needs a lossy model");
    Volume v = read_input(o, o.inputs.at(0));
    std::ofstream csv(o.output);
    if (!csv)
        throw IoError("cannot write '" + o.output + "'");
    csv << "qs,bpp,psnr\n";
    for (double qs : points) {
        CodecModel m = with_qs(base, qs);
        auto bytes = encode_volume(v, m, CodecMode::lossy, CodecOptions{o.jobs});
        Volume r = decode_volume(bytes, m, CodecOptions{o.jobs});
        double bpp = bits_per_sample(bytes.size(), v.dims.count());
        double p = psnr(v, r);
        csv << qs << ',' << bpp << ',' << (std::isinf(p) ? std::string("inf") : std::to_string(p)) << '\n';
        out << "QS " << qs << ": " << bpp << " bpp, PSNR " << format_psnr(p) << "\n";
    }
    return ok;
}

int cmd_verify(const Options& o, std::ostream& out)
{
    CodecModel m = obtain_model(o);
    if (o.lossless && !m.config.transform.lossless)
        throw ConfigError("--lossless requested but the model is lossy");
    Volume v;
    if (!o.random_dims.empty()) {
        nn::Rng rng(o.seed);
        v = random_volume(parse_dims(o.random_dims), o.bits, o.is_signed, rng);
    } else {
        v = read_input(o, o.inputs.at(0));
    }
    auto bytes = encode_volume(v, m, mode_of(m), CodecOptions{o.jobs});
    Volume r = decode_volume(bytes, m, CodecOptions{o.jobs});
    double bpp = bits_per_sample(bytes.size(), v.dims.count());
    if (m.config.transform.lossless) {
        if (r.data != v.data) {
            out << "MISMATCH: lossless round trip differs (" << bpp << " bpp)\n";
            return integrity;
        }
        out << "bit-exact (" << bytes.size() << " bytes, " << bpp << " bpp)\n";
        return ok;
    }
    out << "lossy round trip: PSNR " << format_psnr(psnr(v, r)) << ", " << bpp << " bpp\n";
    return ok;
}

int cmd_train(const Options& o, std::ostream& out)
{
    std::vector<double> steps = parse_list(o.steps, "step");
    if (steps.size() != 3)
        throw UsageError("--steps takes three counts: entropy+post, transform, joint");
    TrainConfig tc;
    tc.lambda = o.lambda;
    tc.lr = o.lr;
    tc.stages = default_stages(int(steps[0]), int(steps[1]), int(steps[2]));
    tc.crop = o.crop;
    tc.batch = o.batch;
    tc.seed = o.seed;
    tc.validate_every = o.validate_every;
    tc.log_path = o.log;
    tc.validate();

    CodecModel m = obtain_model(o);
    std::vector<Volume> train_set, val_set;
    if (o.synthetic > 0) {
        SyntheticConfig sc;
        if (!o.dims.empty())
            sc.dims = parse_dims(o.dims);
        sc.bit_depth = o.bits;
        train_set = synthetic_corpus(std::size_t(o.synthetic), sc, o.seed);
        val_set = synthetic_corpus(std::size_t(o.validation), sc, o.seed + 1);
    }
    for (const auto& path : o.inputs)
        train_set.push_back(read_volume(path));
    if (train_set.empty())
        throw UsageError("train needs --input volumes or --synthetic N");

    TrainResult r = train(train_set, val_set, m, tc);
    r.model.save(o.output);

    nlohmann::json echo;
    echo["lambda"] = tc.lambda;
    echo["lr"] = tc.lr;
    echo["steps"] = {int(steps[0]), int(steps[1]), int(steps[2])};
    echo["crop"] = tc.crop;
    echo["batch"] = tc.batch;
    echo["seed"] = tc.seed;
    echo["optimizer"] = {{"name", "adam"}, {"beta1", tc.beta1}, {"beta2", tc.beta2}, {"eps", tc.eps}};
    echo["transform"] = o.model.empty() ? o.transform : "from " + o.model;
    echo["lossless"] = r.model.config.transform.lossless;
    echo["initial_validation_loss"] = r.initial_validation;
    echo["best_validation_loss"] = r.best_validation;
    echo["best_step"] = r.best_step;
    std::ofstream js(o.output + ".json");
    if (!js)
        throw IoError("cannot write '" + o.output + ".json'");
    js << echo.dump(2) << "\n";

    out << "trained " << r.steps << " steps; validation loss " << r.initial_validation << " -> " << r.best_validation
        << " (best at step " << r.best_step << ")\n";
    return ok;
}

void add_model_flags(CLI::App* s, Options& o)
{
    s->add_option("-m,--model", o.model, "Weight file (otherwise a fresh model is built from the flags below)");
    s->add_option("--transform", o.transform, "cdf53, cdf97 or learned");
    s->add_option("--levels", o.levels, "Decomposition levels");
    s->add_option("--sharing", o.sharing, "Parameter sharing: all, xy, xz, yz, none");
    s->add_option("--granularity", o.granularity, "Affine maps: fine or coarse");
    s->add_option("--entropy", o.entropy, "factorized or context");
    s->add_option("--width", o.width, "Lifting network width");
    s->add_option("--context-width", o.context_width, "Context network width");
    s->add_option("--post-width", o.post_width, "Post-processing width (0 disables)");
    s->add_option("--block", o.block, "Block dims DxHxW");
    s->add_flag("--lossless", o.lossless, "Integer transform, no quantization");
    s->add_option("--qs", o.qs, "Quantization step");
    s->add_option("--seed", o.seed, "Seed for model initialization");
    s->add_option("--jobs", o.jobs, "Worker threads for block coding");
}

void add_raw_flags(CLI::App* s, Options& o)
{
    s->add_option("--dims", o.dims, "Read headerless input with dims DxHxW");
    s->add_option("--bits", o.bits, "Bit depth of raw input (8, 16, 32)");
    s->add_flag("--signed", o.is_signed, "Raw samples are signed");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Options o;
    o.jobs = int(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("VOXWAVE_SEED")) {
        try {
            o.seed = std::stoull(env);
        } catch (const std::exception&) {
            err << "error: VOXWAVE_SEED must be an unsigned integer\n";
            return usage;
        }
    }
    const bool env_seed = std::getenv("VOXWAVE_SEED") != nullptr;
    const std::uint64_t seed_override = o.seed;

    CLI::App app{"Volumetric wavelet codec"};
    app.require_subcommand(1);
    app.name(args.empty() ? "voxwave" : args[0]);

    auto* enc = app.add_subcommand("encode", "Compress a volume");
    enc->add_option("-i,--input", o.inputs, "Input volume")->required()->expected(1);
    enc->add_option("-o,--output", o.output, "Output stream")->required();
    add_model_flags(enc, o);
    add_raw_flags(enc, o);

    auto* dec = app.add_subcommand("decode", "Decompress a stream");
    dec->add_option("-i,--input", o.inputs, "Input stream")->required()->expected(1);
    dec->add_option("-o,--output", o.output, "Output volume")->required();
    dec->add_flag("--raw", o.raw_out, "Write headerless samples");
    add_model_flags(dec, o);

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("-i,--input", o.inputs, "Training volumes");
    tr->add_option("-o,--output", o.output, "Output weight file")->required();
    tr->add_option("--synthetic", o.synthetic, "Generate N synthetic training volumes");
    tr->add_option("--validation", o.validation, "Synthetic validation volumes");
    tr->add_option("--lambda", o.lambda, "Rate-distortion tradeoff");
    tr->add_option("--lr", o.lr, "Adam learning rate");
    tr->add_option("--steps", o.steps, "Steps per stage: entropy+post,transform,joint");
    tr->add_option("--crop", o.crop, "Training crop edge");
    tr->add_option("--batch", o.batch, "Crops per step");
    tr->add_option("--validate-every", o.validate_every, "Validation interval in steps");
    tr->add_option("--log", o.log, "CSV training log");
    tr->add_option("--dims", o.dims, "Synthetic volume dims DxHxW");
    tr->add_option("--bits", o.bits, "Synthetic bit depth");
    add_model_flags(tr, o);

    auto* ev = app.add_subcommand("eval", "PSNR and bpp of a reconstruction");
    ev->add_option("-i,--input", o.inputs, "Reference volume")->required()->expected(1);
    ev->add_option("-r,--recon", o.recon, "Reconstructed volume")->required();
    ev->add_option("-s,--stream", o.stream, "Compressed stream, for bpp");
    add_raw_flags(ev, o);

    auto* rd = app.add_subcommand("rd-curve", "Rate-distortion points over several QS values");
    rd->add_option("-i,--input", o.inputs, "Input volume")->required()->expected(1);
    rd->add_option("-o,--output", o.output, "CSV output")->required();
    rd->add_option("--qs-list", o.qs_list, "Comma-separated QS values");
    add_model_flags(rd, o);
    add_raw_flags(rd, o);

    auto* ve = app.add_subcommand("verify", "Encode and decode, then compare");
    ve->add_option("-i,--input", o.inputs, "Input volume")->expected(1);
    ve->add_option("--random", o.random_dims, "Use a random volume of dims DxHxW instead");
    add_model_flags(ve, o);
    add_raw_flags(ve, o);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
        app.parse(rev);
        if (env_seed)
            o.seed = seed_override;
        CLI::App* sub = app.get_subcommands().at(0);
        validate(o, *sub);
        if (sub == ve && o.inputs.empty() && o.random_dims.empty())
            throw UsageError("verify needs --input or --random");
        if (sub == enc)
            return cmd_encode(o, out);
        if (sub == dec)
            return cmd_decode(o, out);
        if (sub == tr)
            return cmd_train(o, out);
        if (sub == ev)
            return cmd_eval(o, out);
        if (sub == rd)
            return cmd_rd_curve(o, out);
        return cmd_verify(o, out);
    } catch (const CLI::Success& e) {
        app.exit(e, out, err);
        return ok;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return usage;
    } catch (const DecodeError& e) {
        err << "error: decode integrity: " << e.what() << "\n";
        return integrity;
    } catch (const DivergenceError& e) {
        err << "error: training diverged: " << e.what() << "\n";
        return divergence;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return io;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return io;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return usage;
    }
}

} // namespace voxwave::cli
