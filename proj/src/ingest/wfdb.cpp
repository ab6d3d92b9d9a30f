#include "marecg/ingest/wfdb.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace marecg::ingest {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// `gain(baseline)/units` with optional baseline and units.
void parse_gain_field(const std::string& field, SignalDesc& d, int lineno) {
    std::string g = field, units;
    auto slash = g.find('/');
    if (slash != std::string::npos) {
        units = g.substr(slash + 1);
        g = g.substr(0, slash);
    }
    double baseline = 0;
    auto paren = g.find('(');
    if (paren != std::string::npos) {
        auto close = g.find(')', paren);
        if (close == std::string::npos) throw wfdb_error("unterminated baseline", lineno);
        try {
            baseline = std::stod(g.substr(paren + 1, close - paren - 1));
        } catch (const std::exception&) {
            throw wfdb_error("bad baseline in '" + field + "'", lineno);
        }
        g = g.substr(0, paren);
    }
    try {
        std::size_t used = 0;
        d.gain = std::stod(g, &used);
        if (used != g.size()) throw std::invalid_argument(g);
    } catch (const std::exception&) {
        throw wfdb_error("bad gain in '" + field + "'", lineno);
    }
    if (d.gain == 0) throw wfdb_error("zero gain", lineno);
    d.baseline = baseline;
    if (!units.empty()) d.units = units;
}

bool parse_dx_comment(const std::string& comment, std::vector<std::int64_t>& codes, int lineno) {
    // comment excludes the leading '#'
    std::string body = trim(comment);
    std::string low = lower(body);
    if (low.rfind("dx", 0) != 0) return false;
    std::size_t pos = 2;
    while (pos < body.size() && std::isspace(static_cast<unsigned char>(body[pos]))) ++pos;
    if (pos >= body.size() || body[pos] != ':') return false;
    ++pos;
    std::string list = body.substr(pos);
    std::istringstream ls(list);
    std::string tok;
    while (std::getline(ls, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            std::size_t used = 0;
            codes.push_back(std::stoll(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw wfdb_error("bad Dx code '" + tok + "'", lineno);
        }
    }
    return true;
}

}  // namespace

HeaderInfo parse_header(const std::string& text) {
    HeaderInfo h;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    bool got_first = false;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            parse_dx_comment(t.substr(1), h.dx_codes, lineno);
            continue;
        }
        std::istringstream ls(t);
        if (!got_first) {
            if (!(ls >> h.id >> h.nsig >> h.fs >> h.nsamp))
                throw wfdb_error("malformed record line", lineno);
            if (h.nsig <= 0) throw wfdb_error("non-positive signal count", lineno);
            got_first = true;
            continue;
        }
        if (static_cast<int>(h.signals.size()) >= h.nsig)
            throw wfdb_error("more signal lines than declared", lineno);
        SignalDesc d;
        std::string gain_field;
        if (!(ls >> d.file >> d.format >> gain_field))
            throw wfdb_error("malformed signal line", lineno);
        if (d.format != 16) throw wfdb_error("unsupported format " + std::to_string(d.format), lineno);
        parse_gain_field(gain_field, d, lineno);
        // Optional trailing fields; the last token run is the description.
        std::string rest;
        std::getline(ls, rest);
        rest = trim(rest);
        if (!rest.empty()) {
            // Skip the numeric WFDB fields (adc resolution etc.) if present.
            std::istringstream rs(rest);
            std::vector<std::string> toks;
            std::string tok;
            while (rs >> tok) toks.push_back(tok);
            std::size_t i = 0;
            while (i < toks.size()) {
                char* end = nullptr;
                std::strtod(toks[i].c_str(), &end);
                if (end && *end == '\0') ++i;
                else break;
            }
            std::string desc;
            for (; i < toks.size(); ++i) {
                if (!desc.empty()) desc += ' ';
                desc += toks[i];
            }
            d.description = desc;
        }
        h.signals.push_back(std::move(d));
    }
    if (!got_first) throw wfdb_error("empty header");
    if (static_cast<int>(h.signals.size()) != h.nsig)
        throw wfdb_error("declared " + std::to_string(h.nsig) + " signals, found " +
                         std::to_string(h.signals.size()));
    return h;
}

std::string write_header(const HeaderInfo& h) {
    std::ostringstream os;
    os << h.id << ' ' << h.nsig << ' ' << h.fs << ' ' << h.nsamp << '\n';
    for (const auto& d : h.signals) {
        os << d.file << ' ' << d.format << ' ' << d.gain << '(' << d.baseline << ")/" << d.units
           << " 16 0 0 0 0 " << d.description << '\n';
    }
    if (!h.dx_codes.empty()) {
        os << "#Dx:";
        for (std::size_t i = 0; i < h.dx_codes.size(); ++i) os << (i ? "," : " ") << h.dx_codes[i];
        os << '\n';
    }
    return os.str();
}

std::vector<std::vector<float>> load_signal16(const std::vector<std::uint8_t>& bytes,
                                              const HeaderInfo& h) {
    std::size_t nsig = static_cast<std::size_t>(h.nsig);
    if (bytes.size() % (2 * nsig) != 0)
        throw wfdb_error("signal byte length " + std::to_string(bytes.size()) +
                         " not divisible by 2*nsig");
    std::size_t nsamp = bytes.size() / (2 * nsig);
    if (h.nsamp != 0 && nsamp != h.nsamp)
        throw wfdb_error("signal length " + std::to_string(nsamp) + " does not match header nsamp " +
                         std::to_string(h.nsamp));
    std::vector<std::vector<float>> out(nsig, std::vector<float>(nsamp));
    for (std::size_t k = 0; k < nsamp; ++k) {
        for (std::size_t c = 0; c < nsig; ++c) {
            std::size_t off = 2 * (k * nsig + c);
            std::int16_t raw = static_cast<std::int16_t>(
                static_cast<std::uint16_t>(bytes[off]) |
                (static_cast<std::uint16_t>(bytes[off + 1]) << 8));
            const auto& d = h.signals[c];
            out[c][k] = static_cast<float>((static_cast<double>(raw) - d.baseline) / d.gain);
        }
    }
    return out;
}

std::vector<std::uint8_t> write_signal16(const std::vector<std::vector<float>>& sig,
                                         const HeaderInfo& h) {
    std::size_t nsig = sig.size();
    std::size_t nsamp = nsig ? sig[0].size() : 0;
    std::vector<std::uint8_t> bytes(2 * nsig * nsamp);
    for (std::size_t k = 0; k < nsamp; ++k) {
        for (std::size_t c = 0; c < nsig; ++c) {
            const auto& d = h.signals[c];
            double raw = std::round(static_cast<double>(sig[c][k]) * d.gain + d.baseline);
            raw = std::min(32767.0, std::max(-32768.0, raw));
            std::int16_t r = static_cast<std::int16_t>(raw);
            std::size_t off = 2 * (k * nsig + c);
            bytes[off] = static_cast<std::uint8_t>(static_cast<std::uint16_t>(r) & 0xff);
            bytes[off + 1] = static_cast<std::uint8_t>(static_cast<std::uint16_t>(r) >> 8);
        }
    }
    return bytes;
}

}  // namespace marecg::ingest
