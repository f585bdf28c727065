#include "voxdec/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>

namespace voxdec {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// FFTW's planner is not thread-safe; executions on private buffers are.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftPlan {
    std::size_t n = 0;
    double* real = nullptr;
    fftw_complex* freq = nullptr;
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;

    explicit FftPlan(std::size_t n_) : n(n_) {
        real = fftw_alloc_real(n);
        freq = fftw_alloc_complex(n / 2 + 1);
        std::lock_guard<std::mutex> lock(planner_mutex());
        fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), real, freq, FFTW_ESTIMATE);
        bwd = fftw_plan_dft_c2r_1d(static_cast<int>(n), freq, real, FFTW_ESTIMATE);
    }
    ~FftPlan() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
        fftw_free(real);
        fftw_free(freq);
    }
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;
};

FftPlan& plan_for(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<FftPlan>(n);
    return *slot;
}

// Even reflection about the end samples (no edge repetition).
Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
    if (n == 1) return 0;
    const Eigen::Index period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

std::size_t fir_length(double transition_hz, double fs_hz, std::size_t max_len) {
    // Hamming window: ~3.3 / normalized transition width
    std::size_t n = static_cast<std::size_t>(std::ceil(3.3 * fs_hz / transition_hz));
    if (n % 2 == 0) ++n;
    if (max_len >= 3) {
        std::size_t cap = max_len;
        if (cap % 2 == 0) --cap;
        n = std::min(n, cap);
    }
    return n;
}

std::vector<double> windowed_sinc(double cutoff_hz, double fs_hz, std::size_t n) {
    const double fc = cutoff_hz / fs_hz;  // cycles per sample
    const auto half = static_cast<std::ptrdiff_t>(n / 2);
    std::vector<double> k(n);
    double sum = 0.0;
    for (std::ptrdiff_t i = -half; i <= half; ++i) {
        const double x = static_cast<double>(i);
        double v = (i == 0) ? 2.0 * fc : std::sin(2.0 * kPi * fc * x) / (kPi * x);
        const double w = 0.54 + 0.46 * std::cos(kPi * x / static_cast<double>(half == 0 ? 1 : half));
        v *= w;
        k[static_cast<std::size_t>(i + half)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;  // unit DC gain
    return k;
}

}  // namespace

void FilterSpec::validate(double fs_hz) const {
    const double nyq = fs_hz / 2.0;
    if (highpass_hz && *highpass_hz <= 0.0) throw ConfigError("highpass_hz must be positive");
    if (lowpass_hz && *lowpass_hz <= 0.0) throw ConfigError("lowpass_hz must be positive");
    if (highpass_hz && lowpass_hz && !(*highpass_hz < *lowpass_hz))
        throw ConfigError("highpass_hz must be below lowpass_hz");
    if (lowpass_hz && *lowpass_hz >= nyq)
        throw ConfigError("lowpass_hz must be below the Nyquist frequency");
    if (highpass_hz && *highpass_hz >= nyq)
        throw ConfigError("highpass_hz must be below the Nyquist frequency");
    if (notch_hz && *notch_hz >= nyq) throw ConfigError("notch_hz must be below the Nyquist frequency");
}

std::vector<double> design_lowpass_fir(double cutoff_hz, double fs_hz, double transition_hz,
                                       std::size_t max_len) {
    if (cutoff_hz <= 0.0 || cutoff_hz >= fs_hz / 2.0) throw ConfigError("lowpass cutoff out of range");
    return windowed_sinc(cutoff_hz, fs_hz, fir_length(transition_hz, fs_hz, max_len));
}

std::vector<double> design_highpass_fir(double cutoff_hz, double fs_hz, double transition_hz,
                                        std::size_t max_len) {
    if (cutoff_hz <= 0.0 || cutoff_hz >= fs_hz / 2.0) throw ConfigError("highpass cutoff out of range");
    auto k = windowed_sinc(cutoff_hz, fs_hz, fir_length(transition_hz, fs_hz, max_len));
    for (auto& v : k) v = -v;
    k[k.size() / 2] += 1.0;  // spectral inversion
    return k;
}

std::vector<double> design_notch_fir(double freq_hz, double fs_hz) {
    // stop band freq +/- 2 Hz, transition 3 Hz: <= 1 dB at freq +/- 5 Hz
    const double half_bw = 2.0;
    const double transition = 3.0;
    if (freq_hz - half_bw - transition / 2.0 <= 0.0) throw ConfigError("notch frequency too low");
    if (freq_hz + half_bw >= fs_hz / 2.0) throw ConfigError("notch frequency too close to Nyquist");
    const std::size_t n = fir_length(transition, fs_hz, 0);
    auto lp = windowed_sinc(freq_hz - half_bw, fs_hz, n);
    const auto hp_lp = windowed_sinc(freq_hz + half_bw, fs_hz, n);
    for (std::size_t i = 0; i < n; ++i) lp[i] -= hp_lp[i];
    lp[n / 2] += 1.0;
    return lp;
}

Eigen::MatrixXd filter_rows_zero_phase(const Eigen::MatrixXd& data, const std::vector<double>& kernel) {
    const Eigen::Index len = data.cols();
    const auto n = static_cast<Eigen::Index>(kernel.size());
    if (len == 0 || kernel.empty()) return data;
    const Eigen::Index pad = n;
    const Eigen::Index padded = len + 2 * pad;
    const std::size_t m = next_pow2(static_cast<std::size_t>(padded + 2 * n));
    FftPlan& plan = plan_for(m);

    // kernel spectrum, squared (forward + backward pass of a symmetric FIR)
    std::memset(plan.real, 0, m * sizeof(double));
    std::memcpy(plan.real, kernel.data(), kernel.size() * sizeof(double));
    fftw_execute(plan.fwd);
    const std::size_t nf = m / 2 + 1;
    std::vector<std::complex<double>> k2(nf);
    for (std::size_t i = 0; i < nf; ++i) {
        const std::complex<double> k(plan.freq[i][0], plan.freq[i][1]);
        k2[i] = k * k;
    }

    Eigen::MatrixXd out(data.rows(), len);
    const Eigen::Index delay = n - 1;  // two passes, (n-1)/2 each
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        std::memset(plan.real, 0, m * sizeof(double));
        for (Eigen::Index i = 0; i < padded; ++i)
            plan.real[i] = data(r, reflect_index(i - pad, len));
        fftw_execute(plan.fwd);
        for (std::size_t i = 0; i < nf; ++i) {
            const std::complex<double> x(plan.freq[i][0], plan.freq[i][1]);
            const std::complex<double> y = x * k2[i] / static_cast<double>(m);
            plan.freq[i][0] = y.real();
            plan.freq[i][1] = y.imag();
        }
        fftw_execute(plan.bwd);
        for (Eigen::Index i = 0; i < len; ++i) out(r, i) = plan.real[pad + delay + i];
    }
    return out;
}

SensorRecording bandpass_filter(const SensorRecording& rec, const FilterSpec& spec) {
    spec.validate(rec.sampling_rate_hz);
    SensorRecording out = rec;
    const auto cap = static_cast<std::size_t>(2 * rec.n_samples() + 1);
    if (spec.lowpass_hz) {
        const double transition = 0.25 * *spec.lowpass_hz;
        out.data = filter_rows_zero_phase(out.data,
                                          design_lowpass_fir(*spec.lowpass_hz, rec.sampling_rate_hz, transition, cap));
    }
    if (spec.highpass_hz) {
        const double transition = std::max(0.25 * *spec.highpass_hz, 0.05);
        out.data = filter_rows_zero_phase(out.data,
                                          design_highpass_fir(*spec.highpass_hz, rec.sampling_rate_hz, transition, cap));
    }
    return out;
}

SensorRecording notch_filter(const SensorRecording& rec, double freq_hz) {
    if (freq_hz >= rec.sampling_rate_hz / 2.0) throw ConfigError("notch frequency must be below Nyquist");
    SensorRecording out = rec;
    out.data = filter_rows_zero_phase(out.data, design_notch_fir(freq_hz, rec.sampling_rate_hz));
    return out;
}

SensorRecording resample(const SensorRecording& rec, double target_hz) {
    if (target_hz <= 0.0) throw ConfigError("target rate must be positive");
    if (target_hz > rec.sampling_rate_hz * (1.0 + 1e-12))
        throw ConfigError("target rate exceeds the current sampling rate");
    if (std::abs(target_hz - rec.sampling_rate_hz) < 1e-12) return rec;

    // anti-aliasing guard: passband up to ~0.4 * target, stopband at target / 2
    const double cutoff = 0.45 * target_hz;
    const double transition = 0.1 * target_hz;
    SensorRecording out = rec;
    const Eigen::MatrixXd guarded =
        filter_rows_zero_phase(rec.data, design_lowpass_fir(cutoff, rec.sampling_rate_hz, transition,
                                                            static_cast<std::size_t>(2 * rec.n_samples() + 1)));

    const double ratio = rec.sampling_rate_hz / target_hz;
    const auto in_len = static_cast<Eigen::Index>(rec.n_samples());
    const auto out_len = static_cast<Eigen::Index>(std::llround(static_cast<double>(in_len) * target_hz / rec.sampling_rate_hz));
    out.data.resize(rec.n_channels(), out_len);

    // Hann-windowed sinc interpolation; exact sample positions are copied.
    constexpr int kHalf = 16;
    for (Eigen::Index i = 0; i < out_len; ++i) {
        const double p = static_cast<double>(i) * ratio;
        const auto nearest = static_cast<Eigen::Index>(std::llround(p));
        if (std::abs(p - static_cast<double>(nearest)) < 1e-9) {
            const Eigen::Index j = std::clamp<Eigen::Index>(nearest, 0, in_len - 1);
            out.data.col(i) = guarded.col(j);
            continue;
        }
        const auto lo = static_cast<Eigen::Index>(std::floor(p)) - (kHalf - 1);
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(rec.n_channels());
        double wsum = 0.0;
        for (Eigen::Index j = lo; j < lo + 2 * kHalf; ++j) {
            const double x = p - static_cast<double>(j);
            const double w = std::sin(kPi * x) / (kPi * x) *
                             (0.5 + 0.5 * std::cos(kPi * x / kHalf));
            wsum += w;
            acc += w * guarded.col(reflect_index(j, in_len));
        }
        out.data.col(i) = acc / wsum;
    }

    // stimulus labels by majority vote over each output sample's input window
    out.stimulus.sampling_rate_hz = target_hz;
    out.stimulus.labels.assign(static_cast<std::size_t>(out_len), 0);
    for (Eigen::Index i = 0; i < out_len; ++i) {
        const double p = static_cast<double>(i) * ratio;
        const auto lo = static_cast<Eigen::Index>(std::ceil(p - ratio / 2.0));
        const auto hi = static_cast<Eigen::Index>(std::ceil(p + ratio / 2.0));  // exclusive
        double acc = 0.0;
        Eigen::Index cnt = 0;
        for (Eigen::Index j = std::max<Eigen::Index>(lo, 0); j < std::min(hi, in_len); ++j) {
            acc += rec.stimulus.labels[static_cast<std::size_t>(j)];
            ++cnt;
        }
        out.stimulus.labels[static_cast<std::size_t>(i)] = (cnt > 0 && acc / static_cast<double>(cnt) >= 0.5) ? 1 : 0;
    }
    out.stimulus.onsets = StimulusTrack::onsets_from_labels(out.stimulus.labels);
    out.sampling_rate_hz = target_hz;
    return out;
}

Standardized standardize(const Eigen::MatrixXd& data) {
    if (data.cols() < 2) throw InputError("standardize needs at least 2 samples");
    Standardized s;
    s.mean = data.rowwise().mean();
    Eigen::MatrixXd centered = data.colwise() - s.mean;
    s.std = (centered.array().square().rowwise().mean()).sqrt();
    for (Eigen::Index r = 0; r < s.std.size(); ++r)
        if (s.std(r) < 1e-12) s.std(r) = 1.0;  // dead channels map to zeros
    s.data = centered.array().colwise() / s.std.array();
    return s;
}

Eigen::MatrixXd epoch_average(const SensorRecording& rec, double pre_s, double post_s) {
    const auto pre = static_cast<Eigen::Index>(std::llround(pre_s * rec.sampling_rate_hz));
    const auto post = static_cast<Eigen::Index>(std::llround(post_s * rec.sampling_rate_hz));
    const Eigen::Index win = pre + post;
    if (win <= 0) throw ConfigError("epoch window is empty");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(rec.n_channels(), win);
    Eigen::Index used = 0;
    for (std::size_t on : rec.stimulus.onsets) {
        const auto start = static_cast<Eigen::Index>(on) - pre;
        if (start < 0 || start + win > static_cast<Eigen::Index>(rec.n_samples())) continue;
        acc += rec.data.middleCols(start, win);
        ++used;
    }
    if (used == 0) throw InputError("no onset has a full window inside the recording");
    return acc / static_cast<double>(used);
}

void validate_stage_order(const std::vector<Stage>& stages) {
    int last = -1;
    for (Stage s : stages) {
        const int idx = static_cast<int>(s);
        if (idx <= last) throw ConfigError("preprocessing stages out of order: expected bandpass -> notch -> resample -> standardize");
        last = idx;
    }
}

PreprocResult preprocess(const SensorRecording& rec, const PreprocConfig& cfg) {
    std::vector<Stage> stages;
    if (cfg.highpass_hz || cfg.lowpass_hz) stages.push_back(Stage::bandpass);
    if (cfg.notch) stages.push_back(Stage::notch);
    if (cfg.downsample_hz) stages.push_back(Stage::resample);
    stages.push_back(Stage::standardize);
    validate_stage_order(stages);

    SensorRecording work = rec;
    if (cfg.highpass_hz || cfg.lowpass_hz) {
        FilterSpec spec;
        spec.highpass_hz = cfg.highpass_hz;
        spec.lowpass_hz = cfg.lowpass_hz;
        work = bandpass_filter(work, spec);
    }
    if (cfg.notch) work = notch_filter(work, cfg.notch_hz);
    if (cfg.downsample_hz) work = resample(work, *cfg.downsample_hz);

    PreprocResult out;
    Standardized s = standardize(work.data);
    work.data = std::move(s.data);
    out.rec = std::move(work);
    out.mean = std::move(s.mean);
    out.std = std::move(s.std);
    return out;
}

}  // namespace voxdec
