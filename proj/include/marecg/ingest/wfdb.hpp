#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace marecg::ingest {

class wfdb_error : public std::runtime_error {
public:
    wfdb_error(std::string msg, int line = 0)
        : std::runtime_error(line ? msg + " (line " + std::to_string(line) + ")" : msg), line_no(line) {}
    int line_no;
};

struct SignalDesc {
    std::string file;
    int format = 16;
    double gain = 1000.0;      // ADC units per millivolt
    double baseline = 0.0;     // ADC value at 0 mV
    std::string units = "mV";
    std::string description;
};

// WFDB-subset header: `name nsig fs nsamp`, one line per signal, and comment
// lines. Diagnostic codes come from any comment matching `# Dx: c1,c2,...`
// (case and whitespace tolerant); a missing Dx line is legal.
struct HeaderInfo {
    std::string id;
    int nsig = 0;
    double fs = 0;
    std::size_t nsamp = 0;
    std::vector<SignalDesc> signals;
    std::vector<std::int64_t> dx_codes;
};

HeaderInfo parse_header(const std::string& text);  // throws wfdb_error with line number
std::string write_header(const HeaderInfo& h);     // canonical form, parse(write(h)) == h

// Format 16: little-endian signed 16-bit samples interleaved across signals.
// value_mv = (raw - baseline) / gain per lead.
std::vector<std::vector<float>> load_signal16(const std::vector<std::uint8_t>& bytes,
                                              const HeaderInfo& h);
std::vector<std::uint8_t> write_signal16(const std::vector<std::vector<float>>& sig,
                                         const HeaderInfo& h);

}  // namespace marecg::ingest
