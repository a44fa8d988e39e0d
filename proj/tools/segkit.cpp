// segkit — CPU segmentation engine CLI.
//
// Subcommands: train | eval | bench | params | gen-data | fedsim.
// Every command is deterministic given --seed (bench timings excepted) and
// prints JSON lines to stdout; files go to --out. Exit codes: 0 success,
// 2 missing/unreadable data, 3 non-finite loss, 1 other errors.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segkit/arch.hpp"
#include "segkit/bench.hpp"
#include "segkit/checkpoint.hpp"
#include "segkit/datagen.hpp"
#include "segkit/error.hpp"
#include "segkit/fedsim.hpp"
#include "segkit/loss.hpp"
#include "segkit/network.hpp"
#include "segkit/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct MissingData : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int threads_requested() {
    const char* env = std::getenv("SEGKIT_THREADS");
    if (!env) return 1;
    try {
        return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
        return 1;
    }
}

// The engine is single-threaded; SEGKIT_THREADS is honored by reporting the
// effective count so scripts can assert what they ran with.
int threads_effective() {
    const int req = threads_requested();
    if (req != 1)
        std::cerr << "segkit: SEGKIT_THREADS=" << req
                  << " requested, engine runs single-threaded\n";
    return 1;
}

// Volumes are (S,1,H,W); slices land on the batch axis and become
// independent samples.
template <typename T>
void append_slices(segkit::Dataset<T>& out, const segkit::Tensor4<T>& img,
                   const segkit::Tensor4<T>& msk, const std::string& origin) {
    if (img.shape() != msk.shape())
        throw segkit::ShapeError("data: image/mask shape mismatch in " + origin);
    const std::size_t plane =
        static_cast<std::size_t>(img.c()) * img.h() * img.w();
    for (int s = 0; s < img.n(); ++s) {
        segkit::SamplePair<T> p{segkit::Tensor4<T>(1, img.c(), img.h(), img.w()),
                                segkit::Tensor4<T>(1, img.c(), img.h(), img.w())};
        std::copy(img.data() + s * plane, img.data() + (s + 1) * plane, p.image.data());
        std::copy(msk.data() + s * plane, msk.data() + (s + 1) * plane, p.mask.data());
        out.push_back(std::move(p));
    }
}

std::vector<std::pair<fs::path, fs::path>> list_pairs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw MissingData("data directory not found: " + dir);
    std::vector<fs::path> imgs;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("img_", 0) == 0 && e.path().extension() == ".t4")
            imgs.push_back(e.path());
    }
    std::sort(imgs.begin(), imgs.end());
    std::vector<std::pair<fs::path, fs::path>> pairs;
    for (const fs::path& img : imgs) {
        fs::path msk = img.parent_path() / ("msk_" + img.filename().string().substr(4));
        if (!fs::exists(msk)) throw MissingData("mask missing for " + img.string());
        pairs.emplace_back(img, msk);
    }
    if (pairs.empty()) throw MissingData("no img_*.t4 / msk_*.t4 pairs in " + dir);
    return pairs;
}

template <typename T>
segkit::Dataset<T> load_pairs(const std::string& dir) {
    segkit::Dataset<T> out;
    for (const auto& [img, msk] : list_pairs(dir))
        append_slices(out, segkit::load_volume<T>(img.string()),
                      segkit::load_volume<T>(msk.string()), img.string());
    return out;
}

void emit(const json& j, std::ostream* log = nullptr) {
    std::cout << j.dump() << "\n";
    if (log) *log << j.dump() << "\n";
}

struct CommonOpts {
    std::string arch = "monet";
    std::uint64_t seed = 0;
    std::string precision = "f32";
};

struct TrainOpts : CommonOpts {
    int epochs = 50;
    int batch = 4;
    double lr = 5e-4;
    std::string data;
    std::string out = "run";
    double val_fraction = 0.0;
    bool no_augment = false;
    bool no_scheduler = false;
};

template <typename T>
int run_train(const TrainOpts& o) {
    segkit::Dataset<T> all = load_pairs<T>(o.data);
    segkit::Dataset<T> train_set, val_set;
    const auto n_val =
        static_cast<std::size_t>(o.val_fraction * static_cast<double>(all.size()) + 0.5);
    if (n_val >= all.size()) throw segkit::ArgError("train: validation split leaves no data");
    train_set.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
    val_set.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());

    segkit::ArchSpec spec = segkit::ArchSpec::of(segkit::parse_arch(o.arch));
    segkit::Prng init_rng(o.seed);
    segkit::Network<T> net = segkit::build<T>(spec, init_rng);

    segkit::TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch = o.batch;
    tc.lr = o.lr;
    tc.seed = segkit::Prng::derive_seed(o.seed, 1, 0);  // init and data streams distinct
    tc.augment = !o.no_augment;
    tc.scheduler = !o.no_scheduler;
    segkit::Trainer<T> trainer(net, tc);

    fs::create_directories(o.out);
    std::ofstream log(fs::path(o.out) / "metrics.jsonl");
    if (!log) throw segkit::IoError("cannot write metrics log in " + o.out);

    std::string best_bytes = segkit::save_checkpoint(net);  // epochs=0 emits init as-is
    double best_loss = std::numeric_limits<double>::infinity();
    for (int e = 0; e < o.epochs; ++e) {
        segkit::EpochStats st =
            trainer.run_epoch(train_set, val_set.empty() ? nullptr : &val_set);
        emit(json{{"epoch", st.epoch},
                  {"train_loss", st.train_loss},
                  {"val_loss", st.val_loss},
                  {"val_dice", st.val_dice},
                  {"lr", st.lr},
                  {"lr_reduced", st.lr_reduced}},
             &log);
        if (st.val_loss < best_loss) {
            best_loss = st.val_loss;
            best_bytes = segkit::save_checkpoint(net);
        }
    }
    const fs::path ckpt = fs::path(o.out) / "best.mck";
    {
        std::ofstream f(ckpt, std::ios::binary);
        f.write(best_bytes.data(), static_cast<std::streamsize>(best_bytes.size()));
        if (!f) throw segkit::IoError("cannot write " + ckpt.string());
    }
    emit(json{{"checkpoint", ckpt.string()},
              {"bytes", best_bytes.size()},
              {"best_val_loss", o.epochs > 0 ? json(best_loss) : json(nullptr)}});
    return 0;
}

struct EvalOpts : CommonOpts {
    std::string checkpoint;
    std::string data;
    int batch = 4;
};

template <typename T>
int run_eval(const EvalOpts& o) {
    segkit::ArchSpec spec = segkit::ArchSpec::of(segkit::parse_arch(o.arch));
    segkit::Network<T> net = segkit::load_checkpoint_file<T>(o.checkpoint, spec);

    std::vector<double> dices;
    for (const auto& [imgp, mskp] : list_pairs(o.data)) {
        const segkit::Tensor4<T> img = segkit::load_volume<T>(imgp.string());
        const segkit::Tensor4<T> msk = segkit::load_volume<T>(mskp.string());
        if (img.shape() != msk.shape())
            throw segkit::ShapeError("eval: image/mask shape mismatch for " + imgp.string());
        segkit::Tensor4<T> pred(img.shape());
        const std::size_t plane =
            static_cast<std::size_t>(img.c()) * img.h() * img.w();
        for (int s0 = 0; s0 < img.n(); s0 += o.batch) {
            const int s1 = std::min(img.n(), s0 + o.batch);
            segkit::Tensor4<T> x(s1 - s0, img.c(), img.h(), img.w());
            std::copy(img.data() + s0 * plane, img.data() + s1 * plane, x.data());
            segkit::Tensor4<T> y = net.forward(x, segkit::Mode::infer);
            std::copy(y.data(), y.data() + y.size(), pred.data() + s0 * plane);
        }
        const double d = segkit::dice_metric(pred, msk);
        dices.push_back(d);
        emit(json{{"volume", imgp.filename().string()}, {"dice", d}});
    }
    double mean = 0.0;
    for (double d : dices) mean += d;
    mean /= static_cast<double>(dices.size());
    double var = 0.0;
    for (double d : dices) var += (d - mean) * (d - mean);
    const double std = dices.size() > 1
                           ? std::sqrt(var / static_cast<double>(dices.size() - 1))
                           : 0.0;
    char summary[64];
    std::snprintf(summary, sizeof summary, "%.2f±%.2f", mean, std);
    emit(json{{"mean_dice", mean}, {"std_dice", std}, {"summary", summary}});
    return 0;
}

struct BenchOpts : CommonOpts {
    int slices = 150;
    int size = 256;
    int repeats = 5;
};

template <typename T>
int run_bench(const BenchOpts& o) {
    const int threads = threads_effective();
    segkit::ArchSpec spec = segkit::ArchSpec::of(segkit::parse_arch(o.arch));
    segkit::Prng rng(o.seed);
    segkit::Network<T> net = segkit::build<T>(spec, rng);
    segkit::BenchResult r = segkit::bench_forward(net, o.slices, o.size, o.repeats);
    emit(json{{"arch", o.arch},
              {"slices", r.slices},
              {"size", r.size},
              {"repeats", static_cast<int>(r.seconds.size())},
              {"seconds", r.seconds},
              {"mean_s", r.mean},
              {"std_s", r.stddev},
              {"threads", threads},
              {"threads_requested", threads_requested()}});
    return 0;
}

int run_params(const std::string& arch) {
    segkit::ArchSpec spec = segkit::ArchSpec::of(segkit::parse_arch(arch));
    const segkit::ParamCounts c = segkit::count_params(spec);
    const std::size_t bytes = segkit::payload_size(spec);
    emit(json{{"arch", arch},
              {"trainable", c.trainable},
              {"non_trainable", c.non_trainable},
              {"total", c.total()},
              {"payload_bytes", bytes},
              {"size_in_memory_mb", static_cast<double>(bytes) / 1e6}});
    return 0;
}

struct GenOpts {
    std::string out = "data";
    std::uint64_t seed = 0;
    int size = 64;
    int count = 16;
    int max_blobs = 2;
};

int run_gen_data(const GenOpts& o) {
    segkit::SynthTask task{o.size, o.seed, o.max_blobs};
    const auto samples = segkit::generate<float>(task, o.count);
    fs::create_directories(o.out);
    json manifest{{"seed", o.seed}, {"size", o.size}, {"count", o.count},
                  {"max_blobs", o.max_blobs}, {"pairs", json::array()}};
    for (int i = 0; i < o.count; ++i) {
        char img_name[32], msk_name[32];
        std::snprintf(img_name, sizeof img_name, "img_%04d.t4", i);
        std::snprintf(msk_name, sizeof msk_name, "msk_%04d.t4", i);
        segkit::save_volume((fs::path(o.out) / img_name).string(),
                            samples[static_cast<std::size_t>(i)].image);
        segkit::save_volume((fs::path(o.out) / msk_name).string(),
                            samples[static_cast<std::size_t>(i)].mask);
        manifest["pairs"].push_back({{"image", img_name}, {"mask", msk_name}});
    }
    std::ofstream mf(fs::path(o.out) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw segkit::IoError("cannot write manifest in " + o.out);
    emit(json{{"out", o.out}, {"count", o.count}, {"size", o.size}});
    return 0;
}

struct FedOpts : CommonOpts {
    int nodes = 3;
    int rounds = 5;
    int local_epochs = 1;
    int samples_per_node = 8;
    int size = 64;
    int batch = 4;
    double lr = 5e-4;
    std::string out;
};

template <typename T>
int run_fedsim(const FedOpts& o) {
    segkit::ArchSpec spec = segkit::ArchSpec::of(segkit::parse_arch(o.arch));
    segkit::FedConfig fc;
    fc.nodes = o.nodes;
    fc.rounds = o.rounds;
    fc.local_epochs = o.local_epochs;
    fc.samples_per_node = o.samples_per_node;
    fc.image_size = o.size;
    fc.seed = o.seed;
    fc.data_seed = segkit::Prng::derive_seed(o.seed, 2, 0);
    fc.train_seed = segkit::Prng::derive_seed(o.seed, 3, 0);
    fc.holdout_seed = segkit::Prng::derive_seed(o.seed, 4, 0);
    fc.node_train.batch = o.batch;
    fc.node_train.lr = o.lr;

    segkit::FedSim<T> sim(fc, spec);
    segkit::FedReport rep = sim.simulate();
    json per_round = json::array();
    for (const auto& r : rep.per_round)
        per_round.push_back({{"dice", r.dice}, {"bytes", r.bytes}});
    emit(json{{"rounds", rep.rounds},
              {"nodes", rep.nodes},
              {"total_bytes", rep.total_bytes},
              {"per_round", per_round}});
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        segkit::save_checkpoint_file(sim.global(),
                                     (fs::path(o.out) / "global.mck").string());
    }
    return 0;
}

template <typename F>
int with_precision(const std::string& precision, F&& f) {
    if (precision == "f32") return f(float{});
    if (precision == "f64") return f(double{});
    throw segkit::ArgError("precision must be f32 or f64");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segkit: CPU semantic-segmentation engine"};
    app.require_subcommand(1);

    TrainOpts t;
    CLI::App* train = app.add_subcommand("train", "Train a model on paired .t4 volumes");
    train->set_config("--config", "", "flat key=value config file; flags override");
    train->add_option("--arch", t.arch, "monet|unet16|unet64");
    train->add_option("--seed", t.seed, "master seed");
    train->add_option("--epochs", t.epochs, "training epochs");
    train->add_option("--batch", t.batch, "batch size");
    train->add_option("--lr", t.lr, "initial learning rate");
    train->add_option("--data", t.data, "directory of img_*.t4/msk_*.t4 pairs")->required();
    train->add_option("--out", t.out, "output directory (best.mck, metrics.jsonl)");
    train->add_option("--val-fraction", t.val_fraction,
                      "held-out fraction (0: monitor the training set)");
    train->add_flag("--no-augment", t.no_augment, "disable augmentation");
    train->add_flag("--no-scheduler", t.no_scheduler, "disable plateau LR decay");
    train->add_option("--precision", t.precision, "f32|f64");

    EvalOpts e;
    CLI::App* eval = app.add_subcommand("eval", "Per-volume Dice of a checkpoint");
    eval->set_config("--config");
    eval->add_option("--arch", e.arch, "monet|unet16|unet64");
    eval->add_option("--checkpoint", e.checkpoint, ".mck file")->required();
    eval->add_option("--data", e.data, "directory of img_*.t4/msk_*.t4 pairs")->required();
    eval->add_option("--batch", e.batch, "slices per forward pass");
    eval->add_option("--precision", e.precision, "f32|f64");

    BenchOpts b;
    CLI::App* bench = app.add_subcommand("bench", "CPU inference latency");
    bench->set_config("--config");
    bench->add_option("--arch", b.arch, "monet|unet16|unet64");
    bench->add_option("--seed", b.seed, "weight init seed");
    bench->add_option("--slices", b.slices, "slices per run");
    bench->add_option("--size", b.size, "square input size");
    bench->add_option("--repeats", b.repeats, "timed runs (after 1 warm-up)");
    bench->add_option("--precision", b.precision, "f32|f64");

    std::string params_arch = "monet";
    CLI::App* params = app.add_subcommand("params", "Parameter count and payload size");
    params->add_option("--arch", params_arch, "monet|unet16|unet64");

    GenOpts g;
    CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
    gen->set_config("--config");
    gen->add_option("--out", g.out, "output directory");
    gen->add_option("--seed", g.seed, "dataset seed");
    gen->add_option("--size", g.size, "image side length");
    gen->add_option("--count", g.count, "number of samples");
    gen->add_option("--max-blobs", g.max_blobs, "max targets per image");

    FedOpts f;
    CLI::App* fed = app.add_subcommand("fedsim", "Federated averaging simulation");
    fed->set_config("--config");
    fed->add_option("--arch", f.arch, "monet|unet16|unet64");
    fed->add_option("--seed", f.seed, "master seed");
    fed->add_option("--nodes", f.nodes, "federation size");
    fed->add_option("--rounds", f.rounds, "synchronous rounds");
    fed->add_option("--local-epochs", f.local_epochs, "epochs per node per round");
    fed->add_option("--samples-per-node", f.samples_per_node, "shard size");
    fed->add_option("--size", f.size, "synthetic image side length");
    fed->add_option("--batch", f.batch, "node batch size");
    fed->add_option("--lr", f.lr, "node learning rate");
    fed->add_option("--out", f.out, "write final global.mck here");
    fed->add_option("--precision", f.precision, "f32|f64");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train)
            return with_precision(t.precision, [&](auto p) { return run_train<decltype(p)>(t); });
        if (*eval)
            return with_precision(e.precision, [&](auto p) { return run_eval<decltype(p)>(e); });
        if (*bench)
            return with_precision(b.precision, [&](auto p) { return run_bench<decltype(p)>(b); });
        if (*params) return run_params(params_arch);
        if (*gen) return run_gen_data(g);
        if (*fed)
            return with_precision(f.precision, [&](auto p) { return run_fedsim<decltype(p)>(f); });
    } catch (const MissingData& ex) {
        std::cerr << "segkit: " << ex.what() << "\n";
        return 2;
    } catch (const segkit::NumericError& ex) {
        std::cerr << "segkit: " << ex.what() << "\n";
        return 3;
    } catch (const std::exception& ex) {
        std::cerr << "segkit: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
