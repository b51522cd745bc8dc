#include "ssmri/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssmri/metrics.hpp"
#include "ssmri/rng.hpp"

namespace fs = std::filesystem;

namespace ssmri::pipeline {

namespace {

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long x = 0;
    try {
        x = std::stol(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
    return x;
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad number for '" + key + "': " + v);
    return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad seed for '" + key + "': " + v);
    return x;
}

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::vector<ad::NodePtr<float>> node_list(const std::vector<models::NamedParam<float>>& params) {
    std::vector<ad::NodePtr<float>> out;
    out.reserve(params.size());
    for (const auto& np : params) out.push_back(np.p);
    return out;
}

void zero_param_grads(const std::vector<models::NamedParam<float>>& params) {
    for (const auto& np : params) np.p->zero_grad();
}

ks::SensMaps<float> unit_sens(int h, int w) {
    ks::SensMaps<float> s(1, h, w);
    for (auto& z : s.v) z = {1.0f, 0.0f};
    s.kind = ks::SensKind::Estimated;
    return s;
}

ks::SensMaps<float> estimate_sens(const ks::CoilStack<float>& masked_k,
                                  const ExperimentConfig& cfg) {
    // the centered calibration block is fully sampled under every mask, so
    // calibration only ever sees acquired data
    if (masked_k.coils == 1) return unit_sens(masked_k.h, masked_k.w);
    const int edge = data::calib_edge(masked_k.coils);
    auto sens = ks::estimate_sensitivities_espirit(masked_k, edge, edge, cfg.espirit_kernel,
                                                   cfg.espirit_kernel, cfg.espirit_sv_threshold,
                                                   cfg.espirit_eig_threshold);
    sens.kind = ks::SensKind::Estimated;
    return sens;
}

// Content-addressed stage-1 cache: the key hashes the acquired data, the mask
// and every reconstruction parameter, so any change recomputes.
std::uint64_t cs_cache_key(const ks::CImage<float>& yk, const ks::SamplingMask& mask,
                           const cs::CsParams& p) {
    std::uint64_t h = fnv1a64(yk.v.data(), yk.v.size() * sizeof(yk.v[0]));
    h = fnv1a64(mask.m.data(), mask.m.size(), h);
    const double fields[] = {double(p.n_iters),   p.lambda_tv, p.lambda_wav,
                             double(p.wavelet_levels), p.mu,   p.ls_alpha,
                             p.ls_beta,           double(p.max_backtracks)};
    return fnv1a64(fields, sizeof(fields), h);
}

ks::CImage<float> cs_recon_cached(const ks::CImage<float>& yk, const ks::SamplingMask& mask,
                                  const cs::CsParams& p, const std::string& data_dir,
                                  int* cache_hits) {
    const fs::path dir = fs::path(data_dir) / "cs_cache";
    char name[32];
    std::snprintf(name, sizeof(name), "%016llx.ssmr",
                  static_cast<unsigned long long>(cs_cache_key(yk, mask, p)));
    const fs::path file = dir / name;
    if (fs::exists(file)) {
        auto v = data::load_volume(file.string());
        if (v.dtype == data::Volume::DType::C64 && v.dims.size() == 2 &&
            int(v.dims[0]) == yk.h && int(v.dims[1]) == yk.w) {
            if (cache_hits) ++*cache_hits;
            ks::CImage<float> img(yk.h, yk.w);
            img.v = v.c;
            return img;
        }
    }
    auto res = cs::sparsemri_reconstruct(yk, mask, p);
    fs::create_directories(dir);
    data::Volume v;
    v.dtype = data::Volume::DType::C64;
    v.dims = {std::uint32_t(yk.h), std::uint32_t(yk.w)};
    v.c = res.image.v;
    data::save_volume(file.string(), v);
    return res.image;
}

ks::CImage<float> coil0(const ks::CoilStack<float>& s) {
    ks::CImage<float> img(s.h, s.w);
    std::copy_n(s.coil(0), img.v.size(), img.v.begin());
    return img;
}

std::vector<float> node_magnitude(const ad::NodePtr<float>& y) {
    const std::int64_t hw = y->shape[2] * y->shape[3];
    std::vector<float> m(static_cast<std::size_t>(hw));
    const float* re = y->value.data();
    const float* im = y->value.data() + hw;
    for (std::int64_t i = 0; i < hw; ++i) m[size_t(i)] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
    return m;
}

std::vector<float> image_magnitude(const ks::CImage<float>& img) {
    std::vector<float> m(img.v.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(img.v[i]);
    return m;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double acc = 0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return {mean, std::sqrt(acc / double(xs.size() - 1))};
}

} // namespace

Regime parse_regime(const std::string& name) {
    if (name == "ssgan") return Regime::ssgan;
    if (name == "fsgan") return Regime::fsgan;
    if (name == "casgan") return Regime::casgan;
    if (name == "supervised_full") return Regime::supervised_full;
    throw std::invalid_argument("unknown regime '" + name + "'");
}

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::ssgan: return "ssgan";
        case Regime::fsgan: return "fsgan";
        case Regime::casgan: return "casgan";
        case Regime::supervised_full: return "supervised_full";
    }
    throw std::logic_error("bad regime value");
}

void ExperimentConfig::validate() const {
    if (r_source < 1 || r_target < 1)
        throw std::invalid_argument("config: acceleration factors must be >= 1");
    if (regime == Regime::fsgan && r_target != 1)
        throw std::invalid_argument("config: regime fsgan requires r_target = 1");
    if (regime == Regime::supervised_full && (r_source != 1 || r_target != 1))
        throw std::invalid_argument("config: regime supervised_full requires R = 1 on both sides");
    if (n_subjects < 0) throw std::invalid_argument("config: n_subjects must be >= 0");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (batch_size != 1) throw std::invalid_argument("config: batch_size must be 1");
    if (lr0 <= 0) throw std::invalid_argument("config: lr0 must be > 0");
    if (decay_start_epoch < 0 || decay_start_epoch > epochs)
        throw std::invalid_argument("config: decay_start_epoch must be in [0, epochs]");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (source_contrast.empty() || target_contrast.empty())
        throw std::invalid_argument("config: contrast names must be non-empty");
    if (espirit_kernel < 2) throw std::invalid_argument("config: espirit_kernel must be >= 2");
    weights.validate();
    gen.validate();
    disc.validate();
    cs_params.validate();
}

void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "regime") cfg.regime = parse_regime(value);
    else if (key == "r_source") cfg.r_source = int(parse_int(key, value));
    else if (key == "r_target") cfg.r_target = int(parse_int(key, value));
    else if (key == "n_subjects") cfg.n_subjects = int(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = int(parse_int(key, value));
    else if (key == "batch_size") cfg.batch_size = int(parse_int(key, value));
    else if (key == "lr0") cfg.lr0 = parse_double(key, value);
    else if (key == "decay_start_epoch") cfg.decay_start_epoch = int(parse_int(key, value));
    else if (key == "lambda_i") cfg.weights.lambda_i = parse_double(key, value);
    else if (key == "lambda_k") cfg.weights.lambda_k = parse_double(key, value);
    else if (key == "lambda_a") cfg.weights.lambda_a = parse_double(key, value);
    else if (key == "beta") cfg.weights.beta = parse_double(key, value);
    else if (key == "seed_data") cfg.seed_data = parse_u64(key, value);
    else if (key == "seed_masks") cfg.seed_masks = parse_u64(key, value);
    else if (key == "seed_init") cfg.seed_init = parse_u64(key, value);
    else if (key == "seed_shuffle") cfg.seed_shuffle = parse_u64(key, value);
    else if (key == "threads") cfg.threads = int(parse_int(key, value));
    else if (key == "gen_base_width") cfg.gen.base_width = int(parse_int(key, value));
    else if (key == "gen_n_resblocks") cfg.gen.n_resblocks = int(parse_int(key, value));
    else if (key == "gen_n_down") cfg.gen.n_down = int(parse_int(key, value));
    else if (key == "disc_base_width") cfg.disc.base_width = int(parse_int(key, value));
    else if (key == "disc_n_layers") cfg.disc.n_layers = int(parse_int(key, value));
    else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "source_contrast") cfg.source_contrast = value;
    else if (key == "target_contrast") cfg.target_contrast = value;
    else if (key == "cs_n_iters") cfg.cs_params.n_iters = int(parse_int(key, value));
    else if (key == "cs_lambda_tv") cfg.cs_params.lambda_tv = parse_double(key, value);
    else if (key == "cs_lambda_wav") cfg.cs_params.lambda_wav = parse_double(key, value);
    else if (key == "cs_wavelet_levels") cfg.cs_params.wavelet_levels = int(parse_int(key, value));
    else if (key == "espirit_kernel") cfg.espirit_kernel = int(parse_int(key, value));
    else if (key == "espirit_sv_threshold") cfg.espirit_sv_threshold = parse_double(key, value);
    else if (key == "espirit_eig_threshold") cfg.espirit_eig_threshold = parse_double(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string ExperimentConfig::echo() const {
    std::ostringstream os;
    os << "regime = " << regime_name(regime) << "\n"
       << "r_source = " << r_source << "\n"
       << "r_target = " << r_target << "\n"
       << "n_subjects = " << n_subjects << "\n"
       << "epochs = " << epochs << "\n"
       << "batch_size = " << batch_size << "\n"
       << "lr0 = " << fmt_double(lr0) << "\n"
       << "decay_start_epoch = " << decay_start_epoch << "\n"
       << "lambda_i = " << fmt_double(weights.lambda_i) << "\n"
       << "lambda_k = " << fmt_double(weights.lambda_k) << "\n"
       << "lambda_a = " << fmt_double(weights.lambda_a) << "\n"
       << "beta = " << fmt_double(weights.beta) << "\n"
       << "seed_data = " << seed_data << "\n"
       << "seed_masks = " << seed_masks << "\n"
       << "seed_init = " << seed_init << "\n"
       << "seed_shuffle = " << seed_shuffle << "\n"
       << "threads = " << threads << "\n"
       << "gen_base_width = " << gen.base_width << "\n"
       << "gen_n_resblocks = " << gen.n_resblocks << "\n"
       << "gen_n_down = " << gen.n_down << "\n"
       << "disc_base_width = " << disc.base_width << "\n"
       << "disc_n_layers = " << disc.n_layers << "\n"
       << "data_dir = " << data_dir << "\n"
       << "source_contrast = " << source_contrast << "\n"
       << "target_contrast = " << target_contrast << "\n"
       << "cs_n_iters = " << cs_params.n_iters << "\n"
       << "cs_lambda_tv = " << fmt_double(cs_params.lambda_tv) << "\n"
       << "cs_lambda_wav = " << fmt_double(cs_params.lambda_wav) << "\n"
       << "cs_wavelet_levels = " << cs_params.wavelet_levels << "\n"
       << "espirit_kernel = " << espirit_kernel << "\n"
       << "espirit_sv_threshold = " << fmt_double(espirit_sv_threshold) << "\n"
       << "espirit_eig_threshold = " << fmt_double(espirit_eig_threshold) << "\n";
    return os.str();
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_config_text(os.str());
}

double lr_schedule(int epoch, const ExperimentConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw std::invalid_argument("lr_schedule: epoch " + std::to_string(epoch) +
                                    " outside [0, " + std::to_string(cfg.epochs) + ")");
    if (epoch < cfg.decay_start_epoch || cfg.decay_start_epoch == cfg.epochs) return cfg.lr0;
    return cfg.lr0 * double(cfg.epochs - epoch) / double(cfg.epochs - cfg.decay_start_epoch);
}

void write_loss_curve(const std::string& path, const std::vector<CurveRow>& curve) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write loss curve " + path);
    f << "step\tL_i\tL_k\tL_a\tlr\n";
    char buf[160];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof(buf), "%ld\t%.6f\t%.6f\t%.6f\t%.8g\n", r.step, r.l_i, r.l_k,
                      r.l_a, r.lr);
        f << buf;
    }
}

void write_report(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write report " + path);
    f << "method\ttask\tmetric\tmean\tstd\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s\t%s\t%s\t%.4f\t%.4f\n", r.method.c_str(),
                      r.task.c_str(), r.metric.c_str(), r.mean, r.std_dev);
        f << buf;
    }
}

std::string default_task_name(const ExperimentConfig& cfg) {
    return cfg.source_contrast + "->" + cfg.target_contrast + "_Rs" + std::to_string(cfg.r_source) +
           "_Rt" + std::to_string(cfg.r_target);
}

TrainSample prepare_sample(const data::Subject& subj, const ExperimentConfig& cfg,
                           int* cs_cache_hits) {
    const std::uint64_t sid = fnv1a64(subj.id);
    const std::uint64_t seed_src = rng::hash64(cfg.seed_masks, sid * 2);
    const std::uint64_t seed_tgt = rng::hash64(cfg.seed_masks, sid * 2 + 1);

    auto [src_k, lambda] = data::simulate_acquisition(subj, cfg.source_contrast, cfg.r_source, seed_src);
    auto [tgt_k, omega] = data::simulate_acquisition(subj, cfg.target_contrast, cfg.r_target, seed_tgt);

    ks::CoilStack<float> src_img, tgt_img;
    if (cfg.regime == Regime::casgan) {
        if (src_k.coils != 1)
            throw std::invalid_argument("casgan: the cascade is defined for single-coil data, got " +
                                        std::to_string(src_k.coils) + " coils");
        // stage 1: CS-reconstruct both volumes; stage 2 then trains supervised
        // on the pairs, so the training target mask is fully sampled
        auto rs = cs_recon_cached(coil0(src_k), lambda, cfg.cs_params, cfg.data_dir, cs_cache_hits);
        auto rt = cs_recon_cached(coil0(tgt_k), omega, cfg.cs_params, cfg.data_dir, cs_cache_hits);
        src_img = ks::CoilStack<float>(1, rs.h, rs.w);
        std::copy(rs.v.begin(), rs.v.end(), src_img.v.begin());
        tgt_img = ks::CoilStack<float>(1, rt.h, rt.w);
        std::copy(rt.v.begin(), rt.v.end(), tgt_img.v.begin());
        omega = ks::generate_mask(tgt_k.h, tgt_k.w, 1, data::calib_edge(1), data::calib_edge(1), 0);
    } else {
        src_img = ks::ifft2c(src_k);
        tgt_img = ks::ifft2c(tgt_k);
    }

    TrainSample s;
    s.subject_id = subj.id;
    s.omega = omega;
    s.source_scale = data::normalize(src_img).scale;
    s.target_scale = data::normalize(tgt_img).scale;
    auto sens_src = estimate_sens(src_k, cfg);
    s.sens_target = estimate_sens(tgt_k, cfg);
    s.source_combined = ks::coil_combine(src_img, sens_src);
    s.target_masked = std::move(tgt_img);
    return s;
}

Trainer::Trainer(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.data_dir.empty()) throw std::invalid_argument("config: data_dir must be set to train");
    prepare_dataset();
    G_ = std::make_unique<models::Generator<float>>(cfg_.gen, rng::hash64(cfg_.seed_init, 0));
    D_ = std::make_unique<models::Discriminator<float>>(cfg_.disc, rng::hash64(cfg_.seed_init, 1));
    adam_g_.init(node_list(G_->params()));
    adam_d_.init(node_list(D_->params()));
}

void Trainer::prepare_dataset() {
    manifest_ = data::load_manifest((fs::path(cfg_.data_dir) / "manifest.tsv").string());
    train_ids_ = manifest_.subject_ids("train");
    if (cfg_.n_subjects > 0 && int(train_ids_.size()) > cfg_.n_subjects)
        train_ids_.resize(std::size_t(cfg_.n_subjects));
    if (train_ids_.empty()) throw std::runtime_error("dataset has no training subjects");
    for (const auto& id : train_ids_) {
        auto subj = data::load_subject(cfg_.data_dir, manifest_, id);
        samples_.emplace(id, prepare_sample(subj, cfg_, &cs_cache_hits_));
    }
}

const TrainSample& Trainer::sample_for(const std::string& subject_id) const {
    auto it = samples_.find(subject_id);
    if (it == samples_.end()) throw std::invalid_argument("no prepared sample for " + subject_id);
    return it->second;
}

losses::LossReport Trainer::step(const TrainSample& sample, double lr) {
    using ad::NodePtr;
    const bool adversarial = cfg_.weights.lambda_a > 0;
    const int n_coils = sample.target_masked.coils;
    const float lrf = float(lr);

    ad::Tape<float> tg;
    auto x = losses::image_to_node<float>(sample.source_combined);
    auto yhat = G_->forward(tg, x);
    auto fake = losses::project_to_masked_coils(tg, yhat, sample.sens_target, sample.omega);
    auto acquired = losses::stack_to_node<float>(sample.target_masked);

    losses::LossReport rep;

    if (adversarial) {
        // discriminator first, on the current generator's detached output
        ad::Tape<float> td;
        auto fake_det = ad::detach(fake);
        NodePtr<float> d_loss;
        for (int c = 0; c < n_coils; ++c) {
            auto dr = D_->forward(td, ad::select_coil(td, acquired, c));
            auto df = D_->forward(td, ad::select_coil(td, fake_det, c));
            auto lc = losses::lsgan_disc_loss(td, dr, df);
            d_loss = d_loss ? ad::add(td, d_loss, lc) : lc;
        }
        d_loss = ad::scalar_mul(td, d_loss, 1.0f / float(n_coils));
        rep.l_a_disc = d_loss->value[0];
        if (!std::isfinite(rep.l_a_disc))
            throw DivergenceError("non-finite discriminator loss at step " + std::to_string(step_));
        zero_param_grads(D_->params());
        td.backward(d_loss);
        try {
            ad::adam_step(node_list(D_->params()), adam_d_, lrf);
        } catch (const std::runtime_error& e) {
            // a finite loss can still have non-finite gradients
            throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step_));
        }
    }

    auto l_i = losses::selective_image_loss(tg, fake, acquired);
    auto l_k = losses::selective_kspace_loss(tg, fake, acquired, float(cfg_.weights.beta));
    NodePtr<float> l_a;
    if (adversarial) {
        // the generator plays against the just-updated discriminator
        for (int c = 0; c < n_coils; ++c) {
            auto lc = losses::lsgan_gen_loss(tg, D_->forward(tg, ad::select_coil(tg, fake, c)));
            l_a = l_a ? ad::add(tg, l_a, lc) : lc;
        }
        l_a = ad::scalar_mul(tg, l_a, 1.0f / float(n_coils));
    } else {
        l_a = ad::make_full<float>(ad::Shape{1}, 0.0f);
    }
    auto total = losses::total_generator_loss(tg, cfg_.weights, l_i, l_k, l_a);

    rep.l_i = l_i->value[0];
    rep.l_k = l_k->value[0];
    rep.l_a_gen = l_a->value[0];
    rep.l_total = total->value[0];
    if (!std::isfinite(rep.l_total))
        throw DivergenceError("non-finite generator loss at step " + std::to_string(step_));

    zero_param_grads(G_->params());
    zero_param_grads(D_->params()); // adversarial gradients into D are discarded
    tg.backward(total);
    try {
        ad::adam_step(node_list(G_->params()), adam_g_, lrf);
    } catch (const std::runtime_error& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step_));
    }
    return rep;
}

void Trainer::run_epochs(int n) {
    const int stop = std::min(cfg_.epochs, epoch_ + n);
    for (; epoch_ < stop; ++epoch_) {
        const double lr = lr_schedule(epoch_, cfg_);
        // stateless per-epoch shuffle so that resumed runs see the same order
        std::vector<std::size_t> order(train_ids_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream rs(rng::hash64(cfg_.seed_shuffle, std::uint64_t(epoch_)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(rs.next_below(i))]);
        for (std::size_t i : order) {
            auto rep = step(samples_.at(train_ids_[i]), lr);
            curve_.push_back({step_, rep.l_i, rep.l_k, rep.l_a_gen, lr});
            ++step_;
        }
    }
}

void Trainer::run() { run_epochs(cfg_.epochs - epoch_); }

void Trainer::save(const std::string& checkpoint_path) const {
    models::Checkpoint ck;
    ck.config_echo = cfg_.echo();
    models::append_params(ck, G_->params(), "g.");
    models::append_params(ck, D_->params(), "d.");
    auto put_moments = [&ck](const ad::AdamState<float>& st,
                             const std::vector<models::NamedParam<float>>& params,
                             const std::string& prefix) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            ck.tensors.push_back({prefix + params[i].name + ".m",
                                  ad::Shape{std::int64_t(st.m[i].size())},
                                  std::vector<float>(st.m[i].begin(), st.m[i].end())});
            ck.tensors.push_back({prefix + params[i].name + ".v",
                                  ad::Shape{std::int64_t(st.v[i].size())},
                                  std::vector<float>(st.v[i].begin(), st.v[i].end())});
        }
        ck.tensors.push_back({prefix + "t", ad::Shape{1}, {float(st.t)}});
    };
    put_moments(adam_g_, G_->params(), "opt.g.");
    put_moments(adam_d_, D_->params(), "opt.d.");
    ck.tensors.push_back({"trainer.epoch", ad::Shape{1}, {float(epoch_)}});
    ck.tensors.push_back({"trainer.step", ad::Shape{1}, {float(step_)}});
    models::save_checkpoint(checkpoint_path, ck);
}

void Trainer::resume(const std::string& checkpoint_path) {
    auto ck = models::load_checkpoint(checkpoint_path);
    if (ck.config_echo != cfg_.echo())
        throw std::runtime_error("resume: checkpoint was written under a different configuration");
    models::restore_params(ck, G_->params(), "g.");
    models::restore_params(ck, D_->params(), "d.");
    auto get = [&ck](const std::string& name) -> const models::CheckpointTensor& {
        const auto* t = ck.find(name);
        if (!t) throw std::runtime_error("resume: checkpoint misses tensor " + name);
        return *t;
    };
    auto take_moments = [&](ad::AdamState<float>& st,
                            const std::vector<models::NamedParam<float>>& params,
                            const std::string& prefix) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& m = get(prefix + params[i].name + ".m");
            const auto& v = get(prefix + params[i].name + ".v");
            if (m.data.size() != st.m[i].size() || v.data.size() != st.v[i].size())
                throw std::runtime_error("resume: moment size mismatch for " + params[i].name);
            st.m[i].assign(m.data.begin(), m.data.end());
            st.v[i].assign(v.data.begin(), v.data.end());
        }
        st.t = std::int64_t(get(prefix + "t").data.at(0));
    };
    take_moments(adam_g_, G_->params(), "opt.g.");
    take_moments(adam_d_, D_->params(), "opt.d.");
    epoch_ = int(get("trainer.epoch").data.at(0));
    step_ = long(get("trainer.step").data.at(0));
}

std::vector<float> synthesize(models::Generator<float>& G, const TrainSample& sample) {
    ad::Tape<float> tape;
    auto x = losses::image_to_node<float>(sample.source_combined);
    return node_magnitude(G.forward(tape, x));
}

EvalResult evaluate(models::Generator<float>* G, const ExperimentConfig& cfg,
                    const std::string& split, const std::string& method, const std::string& task) {
    if (cfg.data_dir.empty()) throw std::invalid_argument("evaluate: data_dir must be set");
    auto manifest = data::load_manifest((fs::path(cfg.data_dir) / "manifest.tsv").string());
    auto ids = manifest.subject_ids(split);
    if (ids.empty()) throw std::runtime_error("evaluate: split '" + split + "' has no subjects");

    EvalResult out;
    std::vector<double> psnrs, ssims, mses;
    for (const auto& id : ids) {
        auto subj = data::load_subject(cfg.data_dir, manifest, id);
        auto it = subj.kspace.find(cfg.target_contrast);
        if (it == subj.kspace.end())
            throw std::runtime_error("evaluate: subject " + id + " misses the fully-sampled " +
                                     cfg.target_contrast + " reference");
        auto sample = prepare_sample(subj, cfg);
        // synthesized magnitudes are mapped back to acquisition units before
        // any metric is computed
        std::vector<float> pred = G ? synthesize(*G, sample)
                                    : image_magnitude(sample.source_combined);
        for (auto& p : pred) p = float(p / sample.target_scale);
        const auto ref_img = ks::rss_combine(ks::ifft2c(it->second));
        std::vector<float> ref(ref_img.v.size());
        for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = ref_img.v[i].real();
        auto rep = metrics::evaluate_pair(ref, pred, ref_img.h, ref_img.w);
        psnrs.push_back(rep.psnr);
        ssims.push_back(rep.ssim);
        mses.push_back(rep.mse100);
        out.per_subject_psnr[id] = rep.psnr;
    }
    auto push = [&](const std::string& metric, const std::vector<double>& xs) {
        auto [m, s] = mean_std(xs);
        out.rows.push_back({method, task, metric, m, s});
    };
    push("psnr", psnrs);
    push("ssim", ssims);
    push("mse100", mses);
    return out;
}

std::unique_ptr<Trainer> run_casgan(const ExperimentConfig& cfg) {
    if (cfg.regime != Regime::casgan)
        throw std::invalid_argument("run_casgan: config regime must be casgan");
    auto trainer = std::make_unique<Trainer>(cfg);
    trainer->run();
    return trainer;
}

} // namespace ssmri::pipeline
