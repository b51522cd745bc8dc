// ssmri: phantom generation, training, evaluation, synthesis and CS
// reconstruction from one binary. Exit codes: 0 success, 2 configuration
// error, 3 I/O error, 4 training divergence.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "ssmri/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ssmri;

namespace {

constexpr const char* kVersion = "ssmri 1.0.0";
constexpr int kExitConfig = 2, kExitIo = 3, kExitDiverged = 4;

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f << text;
    }
    fs::rename(tmp, path);
}

json config_as_json(const pipeline::ExperimentConfig& cfg) {
    json j = json::object();
    std::istringstream is(cfg.echo());
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find(" = ");
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int cmd_phantom(int subjects, int size, int coils, double noise, std::uint64_t seed,
                const std::string& out) {
    data::PhantomSpec spec;
    spec.n_subjects = subjects;
    spec.H = spec.W = size;
    spec.n_coils = coils;
    spec.noise_sigma = noise;
    spec.geometry_seed = seed;
    fs::create_directories(out);
    auto manifest = data::generate_phantoms(spec, out);
    std::cout << "wrote " << manifest.entries.size() << " manifest entries to " << out << "\n";
    return 0;
}

struct TrainArgs {
    std::string config_path, out_dir = ".";
    std::string regime, data_dir;
    int r_source = -1, r_target = -1, epochs = -1, threads = -1;
    std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
    pipeline::ExperimentConfig cfg = a.config_path.empty()
                                         ? pipeline::ExperimentConfig{}
                                         : pipeline::parse_config_file(a.config_path);
    if (!a.regime.empty()) cfg.regime = pipeline::parse_regime(a.regime);
    if (a.r_source > 0) cfg.r_source = a.r_source;
    if (a.r_target > 0) cfg.r_target = a.r_target;
    if (a.epochs > 0) cfg.epochs = a.epochs;
    if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
    if (a.threads > 0) cfg.threads = a.threads;
    if (a.seed >= 0) {
        cfg.seed_data = std::uint64_t(a.seed);
        cfg.seed_masks = std::uint64_t(a.seed) + 1;
        cfg.seed_init = std::uint64_t(a.seed) + 2;
        cfg.seed_shuffle = std::uint64_t(a.seed) + 3;
    }
    cfg.validate();
    set_threads(cfg.threads);

    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);
    const std::string ckpt = (out / "checkpoint.ssck").string();
    const std::string curve = (out / "loss_curve.tsv").string();
    const std::string run_manifest = (out / "run_manifest.json").string();

    json rm;
    rm["version"] = kVersion;
    rm["command"] = "train";
    rm["config"] = config_as_json(cfg);
    rm["outputs"] = {{"checkpoint", ckpt}, {"loss_curve", curve}};
    rm["started"] = iso_now();
    write_text_atomic(run_manifest, rm.dump(2) + "\n");

    pipeline::Trainer trainer(cfg);
    trainer.run();
    trainer.save(ckpt);
    pipeline::write_loss_curve(curve, trainer.curve());

    rm["finished"] = iso_now();
    rm["steps"] = trainer.curve().size();
    write_text_atomic(run_manifest, rm.dump(2) + "\n");
    std::cout << "trained " << pipeline::regime_name(cfg.regime) << " for " << cfg.epochs
              << " epochs (" << trainer.curve().size() << " steps); checkpoint at " << ckpt << "\n";
    return 0;
}

pipeline::ExperimentConfig config_from_checkpoint(const models::Checkpoint& ck) {
    return pipeline::parse_config_text(ck.config_echo);
}

models::Generator<float> generator_from_checkpoint(const models::Checkpoint& ck,
                                                   const pipeline::ExperimentConfig& cfg) {
    models::Generator<float> G(cfg.gen, 0);
    models::restore_params(ck, G.params(), "g.");
    return G;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::string& out, std::string method, int threads) {
    auto ck = models::load_checkpoint(ckpt_path);
    auto cfg = config_from_checkpoint(ck);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    set_threads(threads > 0 ? threads : cfg.threads);
    auto G = generator_from_checkpoint(ck, cfg);
    if (method.empty()) method = pipeline::regime_name(cfg.regime);
    auto res = pipeline::evaluate(&G, cfg, split, method, pipeline::default_task_name(cfg));
    pipeline::write_report(out, res.rows);
    for (const auto& r : res.rows)
        std::cout << r.method << "\t" << r.task << "\t" << r.metric << "\t" << r.mean << "\t"
                  << r.std_dev << "\n";
    return 0;
}

int cmd_synth(const std::string& ckpt_path, const std::string& input_dir, std::string subject,
              const std::string& out) {
    auto ck = models::load_checkpoint(ckpt_path);
    auto cfg = config_from_checkpoint(ck);
    cfg.data_dir = input_dir;
    auto G = generator_from_checkpoint(ck, cfg);

    auto manifest = data::load_manifest((fs::path(input_dir) / "manifest.tsv").string());
    if (subject.empty()) {
        auto test_ids = manifest.subject_ids("test");
        if (test_ids.empty()) throw std::runtime_error("synth: dataset has no test subjects");
        subject = test_ids.front();
    }
    auto subj = data::load_subject(input_dir, manifest, subject);
    auto sample = pipeline::prepare_sample(subj, cfg);
    auto mag = pipeline::synthesize(G, sample);
    for (auto& m : mag) m = float(m / sample.target_scale);

    data::Volume v;
    v.dtype = data::Volume::DType::F32;
    v.dims = {std::uint32_t(sample.source_combined.h), std::uint32_t(sample.source_combined.w)};
    v.f = std::move(mag);
    data::save_volume(out, v);
    std::cout << "synthesized " << cfg.target_contrast << " magnitude for " << subject << " -> "
              << out << "\n";
    return 0;
}

int cmd_recon(const std::string& input, const std::string& out, int R, int center,
              std::uint64_t mask_seed, const std::string& preset) {
    auto v = data::load_volume(input);
    if (v.dtype != data::Volume::DType::C64 || v.dims.size() != 2)
        throw std::invalid_argument("recon: input must be a 2-D complex64 k-space volume");
    ks::CImage<float> yk(int(v.dims[0]), int(v.dims[1]));
    yk.v = v.c;
    auto mask = ks::generate_mask(yk.h, yk.w, R, center, center, mask_seed);
    const auto p = preset == "casgan" ? cs::CsParams::casgan() : cs::CsParams::standalone();
    auto res = cs::sparsemri_reconstruct(yk, mask, p);
    if (res.line_search_failed)
        std::cerr << "warning: line search stalled; returning the best iterate\n";

    data::Volume ov;
    ov.dtype = data::Volume::DType::C64;
    ov.dims = v.dims;
    ov.c = std::move(res.image.v);
    data::save_volume(out, ov);
    std::cout << "reconstructed " << input << " at R=" << R << " -> " << out << " (residual "
              << res.data_residual << ")\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised multi-contrast MRI synthesis"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // phantom
    auto* ph = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    int ph_subjects = 20, ph_size = 64, ph_coils = 1;
    double ph_noise = 0.0;
    std::uint64_t ph_seed = 1;
    std::string ph_out;
    ph->add_option("--subjects", ph_subjects, "number of subjects");
    ph->add_option("--size", ph_size, "image edge length");
    ph->add_option("--coils", ph_coils, "number of receive coils");
    ph->add_option("--noise", ph_noise, "k-space noise sigma");
    ph->add_option("--seed", ph_seed, "geometry seed");
    ph->add_option("--out", ph_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a synthesis model");
    TrainArgs ta;
    tr->add_option("--config", ta.config_path, "key = value config file");
    tr->add_option("--regime", ta.regime, "ssgan | fsgan | casgan | supervised_full");
    tr->add_option("--r-source", ta.r_source, "source acceleration R");
    tr->add_option("--r-target", ta.r_target, "target acceleration R");
    tr->add_option("--epochs", ta.epochs, "training epochs");
    tr->add_option("--seed", ta.seed, "base seed (sets data/masks/init/shuffle seeds)");
    tr->add_option("--threads", ta.threads, "worker thread cap");
    tr->add_option("--data", ta.data_dir, "dataset directory");
    tr->add_option("--out", ta.out_dir, "output directory");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_out = "report.tsv", ev_method;
    int ev_threads = -1;
    ev->add_option("--checkpoint", ev_ckpt, "SSCK1 checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory (default: from checkpoint)");
    ev->add_option("--split", ev_split, "train | val | test");
    ev->add_option("--out", ev_out, "report path");
    ev->add_option("--method", ev_method, "method label in the report");
    ev->add_option("--threads", ev_threads, "worker thread cap");

    // synth
    auto* sy = app.add_subcommand("synth", "synthesize the target contrast for one subject");
    std::string sy_ckpt, sy_input, sy_subject, sy_out = "synth.ssmr";
    sy->add_option("--checkpoint", sy_ckpt, "SSCK1 checkpoint")->required();
    sy->add_option("--input", sy_input, "dataset directory")->required();
    sy->add_option("--subject", sy_subject, "subject id (default: first test subject)");
    sy->add_option("--out", sy_out, "output SSMR1 magnitude volume");

    // recon
    auto* rc = app.add_subcommand("recon", "compressed-sensing reconstruction of masked k-space");
    std::string rc_input, rc_out = "recon.ssmr", rc_preset = "standalone";
    int rc_r = 2, rc_center = 10;
    std::uint64_t rc_seed = 0;
    rc->add_option("--input", rc_input, "SSMR1 complex64 masked k-space")->required();
    rc->add_option("--out", rc_out, "output SSMR1 complex64 image");
    rc->add_option("--r", rc_r, "acceleration factor of the mask");
    rc->add_option("--center", rc_center, "calibration block edge");
    rc->add_option("--mask-seed", rc_seed, "mask seed");
    rc->add_option("--preset", rc_preset, "standalone | casgan")
        ->check(CLI::IsMember({"standalone", "casgan"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (*ph) return cmd_phantom(ph_subjects, ph_size, ph_coils, ph_noise, ph_seed, ph_out);
        if (*tr) return cmd_train(ta);
        if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out, ev_method, ev_threads);
        if (*sy) return cmd_synth(sy_ckpt, sy_input, sy_subject, sy_out);
        if (*rc) return cmd_recon(rc_input, rc_out, rc_r, rc_center, rc_seed, rc_preset);
    } catch (const pipeline::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return 0;
}
