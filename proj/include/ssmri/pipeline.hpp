#pragma once

// Training regimes (ssGAN / fsGAN / CasGAN / fully-sampled supervised),
// the optimizer schedule, evaluation and experiment orchestration.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssmri/csrecon.hpp"
#include "ssmri/data.hpp"
#include "ssmri/losses.hpp"
#include "ssmri/models.hpp"

namespace ssmri::pipeline {

enum class Regime { ssgan, fsgan, casgan, supervised_full };

Regime parse_regime(const std::string& name);
std::string regime_name(Regime r);

// Non-finite losses abort the run; the CLI maps this to its own exit code.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    Regime regime = Regime::ssgan;
    int r_source = 2;
    int r_target = 1;
    int n_subjects = 0; // cap on training subjects; 0 = use the whole train split
    int epochs = 30;
    int batch_size = 1;
    double lr0 = 2e-4;
    int decay_start_epoch = 15;
    losses::LossWeights weights;
    std::uint64_t seed_data = 1, seed_masks = 2, seed_init = 3, seed_shuffle = 4;
    int threads = 1;
    models::GeneratorConfig gen = models::GeneratorConfig::desk();
    models::DiscriminatorConfig disc = models::DiscriminatorConfig::desk();
    std::string data_dir; // directory containing manifest.tsv
    std::string source_contrast = "T1";
    std::string target_contrast = "T2";
    cs::CsParams cs_params = cs::CsParams::casgan(); // CasGAN stage 1
    // ESPIRiT calibration settings shared by all regimes
    int espirit_kernel = 4;
    double espirit_sv_threshold = 0.02;
    double espirit_eig_threshold = 0.8;

    void validate() const;
    std::string echo() const; // flat key=value lines, the config-file format
};

// Flat `key = value` config handling. Unknown keys are hard errors.
void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// lr = lr0 before decay_start, then linear decay to 0 at `epochs`.
double lr_schedule(int epoch, const ExperimentConfig& cfg);

struct CurveRow {
    long step = 0;
    double l_i = 0, l_k = 0, l_a = 0, lr = 0;
};

void write_loss_curve(const std::string& path, const std::vector<CurveRow>& curve);

// One fully prepared training example: everything the optimization step needs,
// already normalized and with sensitivities estimated from calibration data.
struct TrainSample {
    std::string subject_id;
    ks::CImage<float> source_combined;   // generator input (normalized units)
    ks::CoilStack<float> target_masked;  // Y^m_Omega, image domain, normalized
    ks::SamplingMask omega;              // target sampling mask
    ks::SensMaps<float> sens_target;     // estimated from the Omega calibration block
    double source_scale = 1.0, target_scale = 1.0;
};

struct ReportRow {
    std::string method, task, metric;
    double mean = 0, std_dev = 0;
};

void write_report(const std::string& path, const std::vector<ReportRow>& rows);

struct EvalResult {
    std::vector<ReportRow> rows;                  // psnr / ssim / mse100
    std::map<std::string, double> per_subject_psnr;
};

class Trainer {
  public:
    explicit Trainer(const ExperimentConfig& cfg);

    // one optimization step (D then G) on a prepared sample
    losses::LossReport step(const TrainSample& sample, double lr);

    void run();               // remaining epochs up to cfg.epochs
    void run_epochs(int n);   // at most n more epochs (for resume tests)

    void save(const std::string& checkpoint_path) const;
    void resume(const std::string& checkpoint_path);

    const std::vector<CurveRow>& curve() const { return curve_; }
    int epoch() const { return epoch_; }
    models::Generator<float>& generator() { return *G_; }
    const ExperimentConfig& config() const { return cfg_; }
    const std::vector<std::string>& train_subjects() const { return train_ids_; }
    const TrainSample& sample_for(const std::string& subject_id) const;
    int cs_cache_hits() const { return cs_cache_hits_; }

  private:
    void prepare_dataset();

    ExperimentConfig cfg_;
    data::DatasetManifest manifest_;
    std::vector<std::string> train_ids_;
    std::map<std::string, TrainSample> samples_;
    std::unique_ptr<models::Generator<float>> G_;
    std::unique_ptr<models::Discriminator<float>> D_;
    ad::AdamState<float> adam_g_, adam_d_;
    int epoch_ = 0;
    long step_ = 0;
    std::vector<CurveRow> curve_;
    int cs_cache_hits_ = 0;
};

// Builds the generator input and target data for one subject under cfg.
// `stage1` substitutes CS reconstructions for the zero-filled images
// (CasGAN); hit/miss statistics are reported through the optional counter.
TrainSample prepare_sample(const data::Subject& subj, const ExperimentConfig& cfg,
                           int* cs_cache_hits = nullptr);

// |G(x)| for one prepared sample, in the sample's normalized units.
std::vector<float> synthesize(models::Generator<float>& G, const TrainSample& sample);

// Evaluates a trained generator (or the copy-source baseline when G is null)
// against the Fourier reconstructions of the fully sampled targets.
EvalResult evaluate(models::Generator<float>* G, const ExperimentConfig& cfg,
                    const std::string& split, const std::string& method, const std::string& task);

std::string default_task_name(const ExperimentConfig& cfg);

// CasGAN: stage 1 CS-reconstructs all volumes (content-addressed cache in
// data_dir/cs_cache), stage 2 trains the supervised model on the pairs.
// Implemented as a Trainer with regime=casgan; this helper just runs it.
std::unique_ptr<Trainer> run_casgan(const ExperimentConfig& cfg);

} // namespace ssmri::pipeline
