#include "marecg/dsp/filters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace marecg::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSqrt2 = 1.41421356237309504880;
}

Biquad butter_lowpass(double cutoff_hz, double fs) {
    if (cutoff_hz <= 0 || cutoff_hz >= fs / 2) throw std::invalid_argument("lowpass cutoff out of range");
    double k = std::tan(kPi * cutoff_hz / fs);
    double norm = 1.0 / (1.0 + kSqrt2 * k + k * k);
    Biquad q;
    q.b0 = k * k * norm;
    q.b1 = 2.0 * q.b0;
    q.b2 = q.b0;
    q.a1 = 2.0 * (k * k - 1.0) * norm;
    q.a2 = (1.0 - kSqrt2 * k + k * k) * norm;
    return q;
}

Biquad butter_highpass(double cutoff_hz, double fs) {
    if (cutoff_hz <= 0 || cutoff_hz >= fs / 2) throw std::invalid_argument("highpass cutoff out of range");
    double k = std::tan(kPi * cutoff_hz / fs);
    double norm = 1.0 / (1.0 + kSqrt2 * k + k * k);
    Biquad q;
    q.b0 = norm;
    q.b1 = -2.0 * norm;
    q.b2 = norm;
    q.a1 = 2.0 * (k * k - 1.0) * norm;
    q.a2 = (1.0 - kSqrt2 * k + k * k) * norm;
    return q;
}

std::vector<double> filter_biquad(const Biquad& bq, const std::vector<double>& x) {
    std::vector<double> y(x.size());
    double z1 = 0, z2 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double out = bq.b0 * x[i] + z1;
        z1 = bq.b1 * x[i] - bq.a1 * out + z2;
        z2 = bq.b2 * x[i] - bq.a2 * out;
        y[i] = out;
    }
    return y;
}

std::vector<double> filtfilt_biquad(const Biquad& bq, const std::vector<double>& x) {
    if (x.empty()) return {};
    std::size_t pad = std::min<std::size_t>(x.size() - 1, 3 * 20);
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * pad);
    // Odd reflection around the endpoints damps startup transients.
    for (std::size_t i = pad; i > 0; --i) ext.push_back(2 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 2; i <= pad + 1; ++i) ext.push_back(2 * x[x.size() - 1] - x[x.size() - i]);

    std::vector<double> f = filter_biquad(bq, ext);
    std::reverse(f.begin(), f.end());
    f = filter_biquad(bq, f);
    std::reverse(f.begin(), f.end());
    return std::vector<double>(f.begin() + static_cast<long>(pad),
                               f.begin() + static_cast<long>(pad + x.size()));
}

std::vector<double> fir_lowpass_zero_phase(const std::vector<double>& x, double cutoff_hz, double fs,
                                           std::size_t taps) {
    if (taps % 2 == 0) ++taps;
    double fc = cutoff_hz / fs;  // cycles per sample
    std::size_t mid = taps / 2;
    std::vector<double> h(taps);
    double sum = 0;
    for (std::size_t i = 0; i < taps; ++i) {
        double m = static_cast<double>(i) - static_cast<double>(mid);
        double sinc = m == 0 ? 2 * fc : std::sin(2 * kPi * fc * m) / (kPi * m);
        double w = 0.54 - 0.46 * std::cos(2 * kPi * static_cast<double>(i) / (taps - 1));
        h[i] = sinc * w;
        sum += h[i];
    }
    for (double& c : h) c /= sum;  // unit DC gain

    std::vector<double> y(x.size(), 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
        double acc = 0;
        for (std::size_t i = 0; i < taps; ++i) {
            long j = static_cast<long>(n) + static_cast<long>(i) - static_cast<long>(mid);
            if (j < 0 || j >= static_cast<long>(x.size())) continue;  // zero padding
            acc += h[i] * x[static_cast<std::size_t>(j)];
        }
        y[n] = acc;
    }
    return y;
}

std::vector<double> moving_average_centered(const std::vector<double>& x, std::size_t window) {
    if (window % 2 == 0) ++window;
    std::size_t half = window / 2;
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
        double acc = 0;
        std::size_t lo = n >= half ? n - half : 0;
        std::size_t hi = std::min(x.size() - 1, n + half);
        for (std::size_t j = lo; j <= hi; ++j) acc += x[j];
        y[n] = acc / static_cast<double>(window);
    }
    return y;
}

}  // namespace marecg::dsp
