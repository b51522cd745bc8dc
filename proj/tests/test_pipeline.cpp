#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ssmri/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ssmri;
using pipeline::ExperimentConfig;
using pipeline::Regime;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ssmri-pipe-" + std::to_string(std::uintptr_t(this)) + "-" +
                std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Shared small phantom dataset: 6 single-coil subjects at 32x32 (4 train,
// 1 val, 1 test). Generated once; generation is bitwise deterministic.
const std::string& dataset_dir() {
    static TempDir dir;
    static bool made = false;
    static std::string p;
    if (!made) {
        data::PhantomSpec spec;
        spec.n_subjects = 6;
        spec.H = spec.W = 32;
        spec.n_coils = 1;
        data::generate_phantoms(spec, dir.path.string());
        p = dir.path.string();
        made = true;
    }
    return p;
}

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.data_dir = dataset_dir();
    cfg.epochs = 4;
    cfg.decay_start_epoch = 2;
    cfg.gen.base_width = 8;
    cfg.gen.n_resblocks = 1;
    cfg.disc.base_width = 8;
    cfg.disc.n_layers = 3;
    return cfg;
}

std::vector<float> flat_params(const std::vector<models::NamedParam<float>>& params) {
    std::vector<float> all;
    for (const auto& np : params) all.insert(all.end(), np.p->value.begin(), np.p->value.end());
    return all;
}

// Runs n optimization steps and returns the loss curve; used for the
// regime-reduction equivalences, which must hold bitwise.
std::vector<pipeline::CurveRow> trace_steps(const ExperimentConfig& cfg, int n_epochs,
                                            std::vector<float>* params_out = nullptr) {
    pipeline::Trainer t(cfg);
    t.run_epochs(n_epochs);
    if (params_out) *params_out = flat_params(t.generator().params());
    return t.curve();
}

bool same_trace(const std::vector<pipeline::CurveRow>& a, const std::vector<pipeline::CurveRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].step != b[i].step || a[i].l_i != b[i].l_i || a[i].l_k != b[i].l_k ||
            a[i].l_a != b[i].l_a || a[i].lr != b[i].lr)
            return false;
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("lr schedule: flat then linear decay, pinned values") {
    ExperimentConfig cfg;
    cfg.epochs = 100;
    cfg.decay_start_epoch = 50;
    cfg.lr0 = 2e-4;
    CHECK(pipeline::lr_schedule(0, cfg) == 2e-4);
    CHECK(pipeline::lr_schedule(10, cfg) == 2e-4);
    CHECK(pipeline::lr_schedule(49, cfg) == 2e-4);
    CHECK(pipeline::lr_schedule(75, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(pipeline::lr_schedule(99, cfg) == doctest::Approx(4e-6).epsilon(1e-12));
    CHECK_THROWS_AS(pipeline::lr_schedule(-1, cfg), std::invalid_argument);
    CHECK_THROWS_AS(pipeline::lr_schedule(100, cfg), std::invalid_argument);
    cfg.decay_start_epoch = 100; // no decay window at all
    CHECK(pipeline::lr_schedule(99, cfg) == 2e-4);
}

TEST_CASE("config parsing") {
    SUBCASE("echo round-trips through the parser") {
        ExperimentConfig cfg = small_config();
        cfg.regime = Regime::ssgan;
        cfg.r_source = 3;
        cfg.weights.lambda_k = 1234.5;
        cfg.seed_masks = 99;
        auto back = pipeline::parse_config_text(cfg.echo());
        CHECK(back.echo() == cfg.echo());
    }
    SUBCASE("comments, blank lines and whitespace are tolerated") {
        auto cfg = pipeline::parse_config_text(
            "# experiment\n\n  r_source = 4  # inline comment\nepochs=7\ndecay_start_epoch = 3\n");
        CHECK(cfg.r_source == 4);
        CHECK(cfg.epochs == 7);
    }
    SUBCASE("unknown keys are hard errors") {
        CHECK_THROWS_WITH_AS(pipeline::parse_config_text("r_sourc = 4\n"),
                             doctest::Contains("unknown config key 'r_sourc'"),
                             std::invalid_argument);
    }
    SUBCASE("malformed values and lines are rejected") {
        CHECK_THROWS_AS(pipeline::parse_config_text("epochs = soon\n"), std::invalid_argument);
        CHECK_THROWS_AS(pipeline::parse_config_text("just a line\n"), std::invalid_argument);
    }
    SUBCASE("fsgan with an undersampled target is invalid") {
        CHECK_THROWS_WITH_AS(pipeline::parse_config_text("regime = fsgan\nr_target = 2\n"),
                             doctest::Contains("fsgan requires r_target = 1"),
                             std::invalid_argument);
    }
    SUBCASE("supervised_full must be fully sampled on both sides") {
        CHECK_THROWS_AS(pipeline::parse_config_text("regime = supervised_full\nr_source = 2\nr_target = 1\n"),
                        std::invalid_argument);
    }
    SUBCASE("batch_size is pinned to 1") {
        CHECK_THROWS_AS(pipeline::parse_config_text("batch_size = 2\n"), std::invalid_argument);
    }
}

TEST_CASE("sample preparation is deterministic and normalized") {
    ExperimentConfig cfg = small_config();
    cfg.r_target = 2; // undersampled target so the mask seed matters
    auto manifest = data::load_manifest((fs::path(cfg.data_dir) / "manifest.tsv").string());
    auto subj = data::load_subject(cfg.data_dir, manifest, "subj0");
    auto a = pipeline::prepare_sample(subj, cfg);
    auto b = pipeline::prepare_sample(subj, cfg);
    CHECK(a.source_combined.v == b.source_combined.v);
    CHECK(a.target_masked.v == b.target_masked.v);
    CHECK(a.omega.m == b.omega.m);
    CHECK(a.target_scale == b.target_scale);
    // normalization: the 99th percentile of the combined magnitude is 1
    std::vector<float> mag(a.target_masked.v.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(a.target_masked.v[i]);
    CHECK(data::percentile(mag, 0.99) == doctest::Approx(1.0).epsilon(1e-5));
    // single-coil sensitivities are the unit map
    for (auto& z : a.sens_target.v) {
        CHECK(z.real() == 1.0f);
        CHECK(z.imag() == 0.0f);
    }
    // a different mask seed changes the sampling pattern
    auto cfg2 = cfg;
    cfg2.seed_masks += 1;
    auto c = pipeline::prepare_sample(subj, cfg2);
    CHECK(c.omega.m != a.omega.m);
}

TEST_CASE("single-sample overfit: generator loss decreases without adversary") {
    ExperimentConfig cfg = small_config();
    cfg.weights.lambda_a = 0; // no discriminator involved at all
    pipeline::Trainer t(cfg);
    const auto& sample = t.sample_for(t.train_subjects()[0]);
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) losses.push_back(t.step(sample, 2e-4).l_total);
    INFO("first ", losses.front(), " last ", losses.back());
    CHECK(losses.back() < losses.front());
    CHECK(losses.back() < 0.5 * losses.front());
    // without the adversarial term the L_a column is identically zero
    for (double v : losses) CHECK(std::isfinite(v));
    for (const auto& row : t.curve()) CHECK(row.l_a == 0.0);
}

TEST_CASE("one optimization step changes both networks") {
    ExperimentConfig cfg = small_config();
    pipeline::Trainer t(cfg);
    auto g0 = flat_params(t.generator().params());
    t.run_epochs(1);
    auto g1 = flat_params(t.generator().params());
    CHECK(g0 != g1);
    CHECK(t.curve().size() == t.train_subjects().size());
    for (const auto& row : t.curve()) CHECK(row.l_a != 0.0); // adversary active
}

TEST_CASE("regime reductions hold bitwise over 2 epochs") {
    ExperimentConfig base = small_config();
    base.epochs = 2;

    SUBCASE("ssGAN with a fully sampled target equals fsGAN") {
        auto a = base, b = base;
        a.regime = Regime::ssgan;
        a.r_target = 1;
        b.regime = Regime::fsgan;
        b.r_target = 1;
        std::vector<float> pa, pb;
        auto ta = trace_steps(a, 2, &pa);
        auto tb = trace_steps(b, 2, &pb);
        CHECK(same_trace(ta, tb));
        CHECK(pa == pb);
    }
    SUBCASE("fsGAN with a fully sampled source equals the supervised baseline") {
        auto a = base, b = base;
        a.regime = Regime::fsgan;
        a.r_source = a.r_target = 1;
        b.regime = Regime::supervised_full;
        b.r_source = b.r_target = 1;
        std::vector<float> pa, pb;
        auto ta = trace_steps(a, 2, &pa);
        auto tb = trace_steps(b, 2, &pb);
        CHECK(same_trace(ta, tb));
        CHECK(pa == pb);
    }
    SUBCASE("CasGAN at R=1 everywhere equals the supervised baseline") {
        auto a = base, b = base;
        a.regime = Regime::casgan;
        a.r_source = a.r_target = 1;
        b.regime = Regime::supervised_full;
        b.r_source = b.r_target = 1;
        std::vector<float> pa, pb;
        auto ta = trace_steps(a, 2, &pa);
        auto tb = trace_steps(b, 2, &pb);
        CHECK(same_trace(ta, tb));
        CHECK(pa == pb);
    }
}

TEST_CASE("checkpoint save and resume reproduce the straight run bitwise") {
    TempDir tmp;
    ExperimentConfig cfg = small_config();
    cfg.epochs = 4;

    pipeline::Trainer straight(cfg);
    straight.run();
    auto p_straight = flat_params(straight.generator().params());

    pipeline::Trainer first(cfg);
    first.run_epochs(2);
    const auto ckpt = (tmp.path / "mid.ssck").string();
    first.save(ckpt);

    pipeline::Trainer second(cfg);
    second.resume(ckpt);
    CHECK(second.epoch() == 2);
    second.run();
    CHECK(flat_params(second.generator().params()) == p_straight);

    // the curve of the resumed half matches the tail of the straight run
    const auto& full = straight.curve();
    const auto& tail = second.curve();
    REQUIRE(full.size() == 2 * tail.size());
    for (std::size_t i = 0; i < tail.size(); ++i) {
        CHECK(tail[i].step == full[tail.size() + i].step);
        CHECK(tail[i].l_i == full[tail.size() + i].l_i);
        CHECK(tail[i].l_k == full[tail.size() + i].l_k);
        CHECK(tail[i].l_a == full[tail.size() + i].l_a);
    }

    SUBCASE("resuming under a different configuration is refused") {
        auto other = cfg;
        other.weights.lambda_k += 1;
        pipeline::Trainer t(other);
        CHECK_THROWS_WITH_AS(t.resume(ckpt), doctest::Contains("different configuration"),
                             std::runtime_error);
    }
}

TEST_CASE("divergence raises a dedicated error") {
    ExperimentConfig cfg = small_config();
    cfg.weights.lambda_a = 0;
    pipeline::Trainer t(cfg);
    auto sample = t.sample_for(t.train_subjects()[0]);
    sample.source_combined.v[5] = {std::numeric_limits<float>::quiet_NaN(), 0.0f};
    CHECK_THROWS_AS(t.step(sample, 2e-4), pipeline::DivergenceError);
}

TEST_CASE("evaluation") {
    ExperimentConfig cfg = small_config();

    SUBCASE("copy-source baseline produces three finite metric rows") {
        auto res = pipeline::evaluate(nullptr, cfg, "test", "copy_source",
                                      pipeline::default_task_name(cfg));
        REQUIRE(res.rows.size() == 3);
        CHECK(res.rows[0].metric == "psnr");
        CHECK(res.rows[1].metric == "ssim");
        CHECK(res.rows[2].metric == "mse100");
        for (const auto& r : res.rows) {
            CHECK(std::isfinite(r.mean));
            CHECK(std::isfinite(r.std_dev));
        }
        // the two contrasts differ on purpose, so copying cannot be perfect
        CHECK(res.rows[0].mean < 40.0);
        CHECK(res.per_subject_psnr.size() == 1); // one test subject
    }
    SUBCASE("evaluation is deterministic") {
        models::Generator<float> G(cfg.gen, 7);
        auto a = pipeline::evaluate(&G, cfg, "val", "m", "t");
        auto b = pipeline::evaluate(&G, cfg, "val", "m", "t");
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].mean == b.rows[i].mean);
            CHECK(a.rows[i].std_dev == b.rows[i].std_dev);
        }
    }
    SUBCASE("an empty split is an error") {
        CHECK_THROWS_AS(pipeline::evaluate(nullptr, cfg, "nope", "m", "t"), std::runtime_error);
    }
    SUBCASE("report files use the pinned five-column format") {
        TempDir tmp;
        std::vector<pipeline::ReportRow> rows{{"ssGAN-2", "T1->T2_Rs2_Rt1", "psnr", 31.25, 0.5},
                                              {"ssGAN-2", "T1->T2_Rs2_Rt1", "ssim", 95.125, 1.0}};
        const auto path = (tmp.path / "report.tsv").string();
        pipeline::write_report(path, rows);
        CHECK(slurp(path) ==
              "method\ttask\tmetric\tmean\tstd\n"
              "ssGAN-2\tT1->T2_Rs2_Rt1\tpsnr\t31.2500\t0.5000\n"
              "ssGAN-2\tT1->T2_Rs2_Rt1\tssim\t95.1250\t1.0000\n");
    }
    SUBCASE("loss curves use the pinned column layout") {
        TempDir tmp;
        std::vector<pipeline::CurveRow> curve{{0, 0.5, 1.25, 0.75, 2e-4}};
        const auto path = (tmp.path / "curve.tsv").string();
        pipeline::write_loss_curve(path, curve);
        CHECK(slurp(path) ==
              "step\tL_i\tL_k\tL_a\tlr\n"
              "0\t0.500000\t1.250000\t0.750000\t0.0002\n");
    }
}

TEST_CASE("casgan stage 1 uses the content-addressed cache") {
    ExperimentConfig cfg = small_config();
    cfg.regime = Regime::casgan;
    cfg.r_source = 2;
    cfg.r_target = 2;

    pipeline::Trainer cold(cfg);
    CHECK(cold.cs_cache_hits() == 0); // first run computes everything
    pipeline::Trainer warm(cfg);
    CHECK(warm.cs_cache_hits() == int(2 * warm.train_subjects().size()));
    // cached and fresh reconstructions feed identical samples
    const auto& id = cold.train_subjects()[0];
    CHECK(cold.sample_for(id).source_combined.v == warm.sample_for(id).source_combined.v);
    // changing a reconstruction parameter misses the cache
    auto cfg2 = cfg;
    cfg2.cs_params.n_iters += 1;
    pipeline::Trainer other(cfg2);
    CHECK(other.cs_cache_hits() == 0);
}
