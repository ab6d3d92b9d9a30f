#pragma once

#include <cstddef>
#include <vector>

namespace marecg::dsp {

// Second-order IIR section, direct form II transposed.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;  // a0 normalized to 1
};

Biquad butter_lowpass(double cutoff_hz, double fs);
Biquad butter_highpass(double cutoff_hz, double fs);

std::vector<double> filter_biquad(const Biquad& bq, const std::vector<double>& x);

// Forward-backward application with reflected edge padding; zero phase, so
// peak timing survives the filter.
std::vector<double> filtfilt_biquad(const Biquad& bq, const std::vector<double>& x);

// Linear-phase FIR low-pass (windowed sinc, Hamming), applied centered so the
// net delay is zero. cutoff is in Hz at sampling rate fs; taps must be odd.
std::vector<double> fir_lowpass_zero_phase(const std::vector<double>& x, double cutoff_hz, double fs,
                                           std::size_t taps = 63);

// Centered moving average over `window` samples (window forced odd).
std::vector<double> moving_average_centered(const std::vector<double>& x, std::size_t window);

}  // namespace marecg::dsp
