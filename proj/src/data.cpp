#include "ssmri/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ssmri/rng.hpp"

namespace fs = std::filesystem;

namespace ssmri::data {

namespace {

constexpr unsigned char kMagic[6] = {0x53, 0x53, 0x4D, 0x52, 0x31, 0x00};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_or_throw(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated SSMR1 file while reading " + what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

} // namespace

// ---- PhantomSpec ----

void PhantomSpec::validate() const {
    if (H < 32 || W < 32) throw std::invalid_argument("PhantomSpec: H and W must be >= 32");
    if (n_coils < 1) throw std::invalid_argument("PhantomSpec: n_coils must be >= 1");
    if (n_subjects < 3) throw std::invalid_argument("PhantomSpec: need at least 3 subjects");
    if (noise_sigma < 0) throw std::invalid_argument("PhantomSpec: noise_sigma must be >= 0");
    if (mask_R_a < 1 || mask_R_b < 1) throw std::invalid_argument("PhantomSpec: mask R must be >= 1");
    if (val_count() + test_count() >= n_subjects)
        throw std::invalid_argument("PhantomSpec: no training subjects left after val/test split");
}

int PhantomSpec::val_count() const {
    if (n_val >= 0) return n_val;
    return std::max(1, static_cast<int>(std::lround(n_subjects * 10.0 / 94.0)));
}

int PhantomSpec::test_count() const {
    if (n_test >= 0) return n_test;
    return std::max(1, static_cast<int>(std::lround(n_subjects * 20.0 / 94.0)));
}

// ---- manifest ----

std::vector<std::string> DatasetManifest::subject_ids(const std::string& split) const {
    std::vector<std::string> ids;
    for (const auto& e : entries) {
        if (e.contrast == "sens") continue;
        if (!split.empty() && e.split != split) continue;
        if (std::find(ids.begin(), ids.end(), e.subject_id) == ids.end()) ids.push_back(e.subject_id);
    }
    return ids;
}

void DatasetManifest::validate() const {
    std::map<std::string, std::string> split_of;
    for (const auto& e : entries) {
        if (e.split != "train" && e.split != "val" && e.split != "test")
            throw std::runtime_error("manifest: unknown split '" + e.split + "' for subject " +
                                     e.subject_id);
        auto it = split_of.find(e.subject_id);
        if (it == split_of.end())
            split_of[e.subject_id] = e.split;
        else if (it->second != e.split)
            throw std::runtime_error("manifest: subject " + e.subject_id +
                                     " appears in splits " + it->second + " and " + e.split);
    }
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    m.validate();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest: " + path);
    os << "#ssmri-manifest v" << m.version << "\n";
    for (const auto& e : m.entries)
        os << e.subject_id << '\t' << e.split << '\t' << e.contrast << '\t' << e.path << '\t'
           << e.mask.R << '\t' << e.mask.center << '\t' << e.mask.seed << '\n';
    if (!os) throw std::runtime_error("write failure on manifest: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    const fs::path dir = fs::path(path).parent_path();
    DatasetManifest m;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first && line.rfind("#ssmri-manifest", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string r, c, s;
        if (!std::getline(ls, e.subject_id, '\t') || !std::getline(ls, e.split, '\t') ||
            !std::getline(ls, e.contrast, '\t') || !std::getline(ls, e.path, '\t') ||
            !std::getline(ls, r, '\t') || !std::getline(ls, c, '\t') || !std::getline(ls, s, '\t'))
            throw std::runtime_error(path + ": malformed manifest line: " + line);
        e.mask.R = std::stoi(r);
        e.mask.center = std::stoi(c);
        e.mask.seed = std::stoull(s);
        if (!fs::exists(dir / e.path))
            throw std::runtime_error(path + ": referenced file missing: " + e.path);
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

// ---- SSMR1 volumes ----

void save_volume(const std::string& path, const Volume& v) {
    std::uint64_t n = 1;
    for (auto d : v.dims) n *= d;
    const std::size_t have = v.dtype == Volume::DType::F32 ? v.f.size() : v.c.size();
    if (have != n) throw std::invalid_argument("save_volume: dims/payload mismatch for " + path);
    if (v.dims.size() > 255) throw std::invalid_argument("save_volume: rank overflow");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write volume: " + path);
    os.write(reinterpret_cast<const char*>(kMagic), 6);
    const unsigned char dtype = static_cast<unsigned char>(v.dtype);
    const unsigned char rank = static_cast<unsigned char>(v.dims.size());
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (auto d : v.dims) write_u32(os, d);
    static_assert(sizeof(float) == 4 && sizeof(std::complex<float>) == 8);
    if (v.dtype == Volume::DType::F32)
        os.write(reinterpret_cast<const char*>(v.f.data()), static_cast<std::streamsize>(n * 4));
    else
        os.write(reinterpret_cast<const char*>(v.c.data()), static_cast<std::streamsize>(n * 8));
    if (!os) throw std::runtime_error("write failure on volume: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open volume: " + path);
    unsigned char magic[6];
    if (!is.read(reinterpret_cast<char*>(magic), 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw std::runtime_error(path + ": bad magic, not an SSMR1 file");
    unsigned char dtype, rank;
    if (!is.read(reinterpret_cast<char*>(&dtype), 1) || !is.read(reinterpret_cast<char*>(&rank), 1))
        throw std::runtime_error(path + ": truncated SSMR1 file while reading header");
    if (dtype > 1) throw std::runtime_error(path + ": unknown dtype code " + std::to_string(dtype));
    Volume v;
    v.dtype = static_cast<Volume::DType>(dtype);
    std::uint64_t n = 1;
    for (int d = 0; d < rank; ++d) {
        v.dims.push_back(read_u32_or_throw(is, path, "dims"));
        n *= v.dims.back();
        if (n > (std::uint64_t(1) << 40))
            throw std::runtime_error(path + ": dimension overflow");
    }
    const std::uint64_t bytes = n * (v.dtype == Volume::DType::F32 ? 4 : 8);
    if (v.dtype == Volume::DType::F32)
        v.f.resize(n);
    else
        v.c.resize(n);
    char* dst = v.dtype == Volume::DType::F32 ? reinterpret_cast<char*>(v.f.data())
                                              : reinterpret_cast<char*>(v.c.data());
    is.read(dst, static_cast<std::streamsize>(bytes));
    if (static_cast<std::uint64_t>(is.gcount()) != bytes)
        throw std::runtime_error(path + ": truncated SSMR1 file, payload short by " +
                                 std::to_string(bytes - is.gcount()) + " bytes");
    return v;
}

Volume to_volume(const ks::CoilStack<float>& s) {
    Volume v;
    v.dtype = Volume::DType::C64;
    v.dims = {static_cast<std::uint32_t>(s.coils), static_cast<std::uint32_t>(s.h),
              static_cast<std::uint32_t>(s.w)};
    v.c = s.v;
    return v;
}

ks::CoilStack<float> to_coil_stack(const Volume& v) {
    if (v.dtype != Volume::DType::C64 || v.dims.size() != 3)
        throw std::runtime_error("expected a rank-3 complex64 volume");
    ks::CoilStack<float> s(static_cast<int>(v.dims[0]), static_cast<int>(v.dims[1]),
                           static_cast<int>(v.dims[2]));
    s.v = v.c;
    return s;
}

Volume to_volume_sens(const ks::SensMaps<float>& s) {
    Volume v;
    v.dtype = Volume::DType::C64;
    v.dims = {static_cast<std::uint32_t>(s.coils), static_cast<std::uint32_t>(s.h),
              static_cast<std::uint32_t>(s.w)};
    v.c = s.v;
    return v;
}

ks::SensMaps<float> to_sens(const Volume& v) {
    if (v.dtype != Volume::DType::C64 || v.dims.size() != 3)
        throw std::runtime_error("expected a rank-3 complex64 volume");
    ks::SensMaps<float> s(static_cast<int>(v.dims[0]), static_cast<int>(v.dims[1]),
                          static_cast<int>(v.dims[2]));
    s.v = v.c;
    s.kind = ks::SensKind::TrueSimulated;
    return s;
}

// ---- phantom generation ----

std::vector<std::uint8_t> phantom_labels(const PhantomSpec& spec, int subject_index) {
    const int H = spec.H, W = spec.W;
    rng::Stream rs(rng::hash64(spec.geometry_seed, 1000 + subject_index));
    std::vector<std::uint8_t> lab(static_cast<std::size_t>(H) * W, 0);

    const double cy = H / 2.0 + (rs.next_uniform01() - 0.5) * 0.06 * H;
    const double cx = W / 2.0 + (rs.next_uniform01() - 0.5) * 0.06 * W;
    const double ay = (0.40 + 0.04 * rs.next_uniform01()) * H;
    const double ax = (0.36 + 0.04 * rs.next_uniform01()) * W;
    const double by = 0.68 * ay, bx = 0.68 * ax;
    const double th = (rs.next_uniform01() - 0.5) * 0.5;
    const double ct = std::cos(th), st = std::sin(th);

    auto inside = [&](double y, double x, double ry, double rx) {
        const double u = (y - cy) * ct + (x - cx) * st;
        const double v = -(y - cy) * st + (x - cx) * ct;
        return (u * u) / (ry * ry) + (v * v) / (rx * rx) < 1.0;
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (inside(y, x, ay, ax)) lab[y * W + x] = 1;
            if (inside(y, x, by, bx)) lab[y * W + x] = 2;
        }
    // blobs for tissues 3 and 4, placed inside the inner ellipse
    const int n_blobs = 4 + static_cast<int>(rs.next_below(3));
    for (int b = 0; b < n_blobs; ++b) {
        const double r = (0.035 + 0.045 * rs.next_uniform01()) * std::min(H, W);
        double py = 0, px = 0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            py = cy + (rs.next_uniform01() - 0.5) * 1.2 * by;
            px = cx + (rs.next_uniform01() - 0.5) * 1.2 * bx;
            if (inside(py, px, by - r, bx - r)) break;
        }
        const std::uint8_t tissue = static_cast<std::uint8_t>(3 + b % 2);
        for (int y = std::max(0, int(py - r - 1)); y < std::min(H, int(py + r + 2)); ++y)
            for (int x = std::max(0, int(px - r - 1)); x < std::min(W, int(px + r + 2)); ++x)
                if (std::hypot(y - py, x - px) < r && lab[y * W + x] >= 2) lab[y * W + x] = tissue;
    }
    return lab;
}

namespace {

// Distinct per-contrast tissue lookup tables: the source->target mapping is a
// nontrivial intensity permutation.
const double kLutA[5] = {0.0, 0.30, 0.65, 1.00, 0.45};
const double kLutB[5] = {0.0, 0.85, 0.40, 0.25, 0.95};

ks::CImage<float> render_contrast(const PhantomSpec& spec, const std::vector<std::uint8_t>& lab,
                                  const double* lut, rng::Stream& rs_jitter,
                                  const std::vector<double>& shade,
                                  const std::vector<double>& phase) {
    const int H = spec.H, W = spec.W;
    double jlut[5];
    for (int t = 0; t < 5; ++t)
        jlut[t] = t == 0 ? 0.0 : std::max(0.05, lut[t] + (rs_jitter.next_uniform01() - 0.5) * 0.06);
    ks::CImage<float> img(H, W);
    for (int i = 0; i < H * W; ++i) {
        const double m = jlut[lab[i]] * shade[i];
        img.v[i] = std::polar(static_cast<float>(m), static_cast<float>(phase[i]));
    }
    return img;
}

ks::SensMaps<float> make_sensitivities(const PhantomSpec& spec,
                                       const std::vector<std::uint8_t>& lab, rng::Stream& rs) {
    const int H = spec.H, W = spec.W, C = spec.n_coils;
    ks::SensMaps<float> s(C, H, W);
    if (C == 1) {
        std::fill(s.v.begin(), s.v.end(), std::complex<float>(1.0f, 0.0f));
        return s;
    }
    const double sigma = 0.55 * std::max(H, W);
    for (int c = 0; c < C; ++c) {
        const double ang = 2.0 * 3.14159265358979323846 * c / C + 0.3 * rs.next_uniform01();
        const double py = H / 2.0 + 0.62 * H * std::sin(ang);
        const double px = W / 2.0 + 0.62 * W * std::cos(ang);
        const double p0 = (rs.next_uniform01() - 0.5) * 2.0;
        const double p1 = (rs.next_uniform01() - 0.5) * 1.2;
        const double p2 = (rs.next_uniform01() - 0.5) * 1.2;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double d2 = (y - py) * (y - py) + (x - px) * (x - px);
                const double mag = std::exp(-d2 / (2 * sigma * sigma));
                const double u = 2.0 * y / H - 1.0, v = 2.0 * x / W - 1.0;
                s.at(c, y, x) = std::polar(static_cast<float>(mag),
                                           static_cast<float>(p0 + p1 * u + p2 * v));
            }
    }
    // scale so the root-sum-of-squares is ~1 over the object support
    double acc = 0;
    int n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!lab[y * W + x]) continue;
            double r2 = 0;
            for (int c = 0; c < C; ++c) r2 += std::norm(s.at(c, y, x));
            acc += std::sqrt(r2);
            ++n;
        }
    const float inv = static_cast<float>(n ? n / acc : 1.0);
    for (auto& z : s.v) z *= inv;
    return s;
}

} // namespace

DatasetManifest generate_phantoms(const PhantomSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(out_dir);
    DatasetManifest manifest;
    const int n_test = spec.test_count(), n_val = spec.val_count();

    for (int si = 0; si < spec.n_subjects; ++si) {
        const std::string id = "subj" + std::to_string(si);
        // trailing subjects become val then test so small datasets keep a
        // nonempty train split at the front
        std::string split = "train";
        if (si >= spec.n_subjects - n_test)
            split = "test";
        else if (si >= spec.n_subjects - n_test - n_val)
            split = "val";

        auto lab = phantom_labels(spec, si);
        rng::Stream rs(rng::hash64(spec.geometry_seed, 2000 + si));

        // smooth shading and phase shared by both contrasts
        const int H = spec.H, W = spec.W;
        std::vector<double> shade(static_cast<std::size_t>(H) * W), phase(shade.size());
        {
            const double a1 = (rs.next_uniform01() - 0.5), a2 = (rs.next_uniform01() - 0.5);
            const double a3 = (rs.next_uniform01() - 0.5), a4 = (rs.next_uniform01() - 0.5);
            const double p1 = (rs.next_uniform01() - 0.5), p2 = (rs.next_uniform01() - 0.5);
            const double p3 = (rs.next_uniform01() - 0.5);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double u = 2.0 * y / H - 1.0, v = 2.0 * x / W - 1.0;
                    shade[y * W + x] =
                        1.0 + 0.15 * (a1 * u + a2 * v + a3 * u * v + a4 * (u * u - v * v));
                    phase[y * W + x] = p1 * u + p2 * v + p3 * u * v;
                }
        }
        auto sens = make_sensitivities(spec, lab, rs);

        auto emit = [&](const std::string& contrast, const double* lut, int R) {
            auto img = render_contrast(spec, lab, lut, rs, shade, phase);
            auto k = ks::fft2c(ks::coil_project(img, sens));
            if (spec.noise_sigma > 0) {
                rng::Stream nrs(rng::hash64(spec.geometry_seed,
                                            3000 + 2 * static_cast<std::uint64_t>(si) +
                                                (contrast == spec.contrast_b)));
                for (auto& z : k.v)
                    z += std::complex<float>(
                        static_cast<float>(spec.noise_sigma * nrs.next_normal()),
                        static_cast<float>(spec.noise_sigma * nrs.next_normal()));
            }
            const std::string fname = id + "_" + contrast + ".ssmr";
            save_volume((fs::path(out_dir) / fname).string(), to_volume(k));
            ManifestEntry e;
            e.subject_id = id;
            e.split = split;
            e.contrast = contrast;
            e.path = fname;
            e.mask.R = R;
            e.mask.center = calib_edge(spec.n_coils);
            e.mask.seed = rng::hash64(spec.geometry_seed,
                                      4000 + 2 * static_cast<std::uint64_t>(si) +
                                          (contrast == spec.contrast_b));
            manifest.entries.push_back(std::move(e));
        };
        emit(spec.contrast_a, kLutA, spec.mask_R_a);
        emit(spec.contrast_b, kLutB, spec.mask_R_b);

        const std::string sname = id + "_sens.ssmr";
        save_volume((fs::path(out_dir) / sname).string(), to_volume_sens(sens));
        ManifestEntry se;
        se.subject_id = id;
        se.split = split;
        se.contrast = "sens";
        se.path = sname;
        se.mask = {0, 0, 0};
        manifest.entries.push_back(std::move(se));
    }
    save_manifest((fs::path(out_dir) / "manifest.tsv").string(), manifest);
    return manifest;
}

Subject load_subject(const std::string& manifest_dir, const DatasetManifest& m,
                     const std::string& subject_id) {
    Subject s;
    s.id = subject_id;
    for (const auto& e : m.entries) {
        if (e.subject_id != subject_id) continue;
        s.split = e.split;
        const std::string full = (fs::path(manifest_dir) / e.path).string();
        if (e.contrast == "sens") {
            s.sens = to_sens(load_volume(full));
        } else {
            s.kspace[e.contrast] = to_coil_stack(load_volume(full));
            s.masks[e.contrast] = e.mask;
        }
    }
    if (s.kspace.empty()) throw std::runtime_error("subject not in manifest: " + subject_id);
    return s;
}

std::pair<ks::CoilStack<float>, ks::SamplingMask>
simulate_acquisition(const Subject& subj, const std::string& contrast, int R,
                     std::uint64_t mask_seed) {
    auto it = subj.kspace.find(contrast);
    if (it == subj.kspace.end())
        throw std::invalid_argument("subject " + subj.id + " has no contrast " + contrast);
    const auto& k = it->second;
    const int edge = calib_edge(k.coils);
    auto mask = ks::generate_mask(k.h, k.w, R, edge, edge, mask_seed);
    return {ks::apply_mask(k, mask), mask};
}

// ---- normalization ----

double percentile(const std::vector<float>& values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    std::vector<float> v = values;
    const std::size_t idx = static_cast<std::size_t>(std::llround(q * (v.size() - 1)));
    std::nth_element(v.begin(), v.begin() + idx, v.end());
    return v[idx];
}

NormalizeResult normalize(ks::CoilStack<float>& image_stack) {
    auto rss = ks::rss_combine(image_stack);
    std::vector<float> mag(rss.v.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(rss.v[i]);
    const double p99 = percentile(mag, 0.99);
    if (p99 <= 0) throw std::invalid_argument("normalize: all-zero volume");
    NormalizeResult r;
    r.scale = 1.0 / p99;
    const float s = static_cast<float>(r.scale);
    for (auto& z : image_stack.v) z *= s;
    return r;
}

} // namespace ssmri::data
