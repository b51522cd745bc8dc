#pragma once

// Synthetic multi-contrast phantom datasets: generation, SSMR1 volume files,
// the TSV dataset manifest, acquisition simulation and normalization.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssmri/kspace.hpp"

namespace ssmri::data {

struct PhantomSpec {
    int n_subjects = 20;
    int H = 64, W = 64;
    int n_coils = 1;
    std::string contrast_a = "T1";
    std::string contrast_b = "T2";
    std::uint64_t geometry_seed = 1;
    double noise_sigma = 0.0; // additive complex Gaussian std per k-space sample
    // default mask parameters recorded in the manifest (regimes may resample
    // with other R via simulate_acquisition)
    int mask_R_a = 1, mask_R_b = 1;
    // -1: mirror the 64/10/20 train/val/test proportions
    int n_val = -1, n_test = -1;

    void validate() const;
    int val_count() const;
    int test_count() const;
};

struct MaskParams {
    int R = 1;
    int center = 10; // square calibration block edge
    std::uint64_t seed = 0;
};

// One manifest row. Sensitivity maps ride along as the pseudo-contrast
// "sens" with zeroed mask columns.
struct ManifestEntry {
    std::string subject_id;
    std::string split; // train | val | test
    std::string contrast;
    std::string path; // relative to the manifest directory
    MaskParams mask;
};

struct DatasetManifest {
    int version = 1;
    std::vector<ManifestEntry> entries;

    std::vector<std::string> subject_ids(const std::string& split = {}) const;
    void validate() const; // split disjointness, well-formed rows
};

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path); // checks referenced files exist

// ---- SSMR1 volumes ----
// magic 53 53 4D 52 31 00; u8 dtype (0 = float32, 1 = complex64 interleaved);
// u8 rank; rank x u32 dims; row-major payload; little-endian throughout.

struct Volume {
    enum class DType : std::uint8_t { F32 = 0, C64 = 1 };
    DType dtype = DType::F32;
    std::vector<std::uint32_t> dims;
    std::vector<float> f;                  // F32 payload
    std::vector<std::complex<float>> c;    // C64 payload
};

void save_volume(const std::string& path, const Volume& v);
Volume load_volume(const std::string& path);

Volume to_volume(const ks::CoilStack<float>& s);
ks::CoilStack<float> to_coil_stack(const Volume& v);
Volume to_volume_sens(const ks::SensMaps<float>& s);
ks::SensMaps<float> to_sens(const Volume& v);

// ---- in-memory subject ----

struct Subject {
    std::string id;
    std::string split;
    std::map<std::string, ks::CoilStack<float>> kspace; // contrast -> full k-space
    std::map<std::string, MaskParams> masks;
    ks::SensMaps<float> sens; // simulation ground truth
};

Subject load_subject(const std::string& manifest_dir, const DatasetManifest& m,
                     const std::string& subject_id);

// ---- generation & simulation ----

// Writes one SSMR1 file per subject and contrast (plus sensitivities) into
// out_dir along with manifest.tsv, and returns the manifest. Bitwise
// reproducible from the spec.
DatasetManifest generate_phantoms(const PhantomSpec& spec, const std::string& out_dir);

// Tissue label map for a subject (0 = background, 1..4 anatomy), a pure
// function of (geometry_seed, subject index). Exposed for tests.
std::vector<std::uint8_t> phantom_labels(const PhantomSpec& spec, int subject_index);

// Calibration block edge per the acquisition presets.
inline int calib_edge(int n_coils) { return n_coils == 1 ? 10 : 16; }

std::pair<ks::CoilStack<float>, ks::SamplingMask>
simulate_acquisition(const Subject& subj, const std::string& contrast, int R,
                     std::uint64_t mask_seed);

// ---- normalization ----

struct NormalizeResult {
    double scale = 1.0; // multiply by this to normalize
};

// Scales the stack in place so the 99th percentile of the coil-combined
// (root-sum-of-squares) magnitude becomes 1. Throws on an all-zero volume.
NormalizeResult normalize(ks::CoilStack<float>& image_stack);

double percentile(const std::vector<float>& values, double q); // q in [0,1]

} // namespace ssmri::data
