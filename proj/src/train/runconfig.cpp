#include "marecg/train/runconfig.hpp"

#include <sstream>

namespace marecg::train {

namespace {

// Every tunable of the pipeline with its documented default.
const std::map<std::string, std::string>& default_values() {
    static const std::map<std::string, std::string> d = {
        // run
        {"ablation", "C3"},
        {"seed", "1"},
        {"micro_batch", "8"},
        {"accumulation", "4"},
        {"epochs", "100"},
        {"max_steps", "0"},  // 0 = run by epochs
        // window presets: 4700 -> T=187; the documented alternative 3500 -> T=139
        {"window_len", "4700"},
        {"leads", "12"},
        {"target_fs", "500"},
        {"patch_len", "50"},
        {"patch_stride", "25"},
        // model
        {"d_model", "768"},
        {"heads", "12"},
        {"enc_blocks", "12"},
        {"dec_blocks", "4"},
        {"mlp_ratio", "4"},
        {"mask_ratio", "0.5"},
        {"t_pred", "0"},  // 0 = ceil(T/4)
        {"recon_weight", "1"},
        {"mask_weight", "1"},
        {"pool_queries", "4"},
        {"pool_eta", "0.1"},
        {"init_std", "0.02"},
        // optimizer / schedule
        {"peak_lr", "1e-4"},
        {"floor_lr", "1e-6"},
        {"warmup_epochs", "10"},
        {"schedule_epochs", "100"},
        {"weight_decay", "0.05"},
        {"beta1", "0.9"},
        {"beta2", "0.999"},
        {"clip_norm", "1"},
        {"ema_momentum", "0.996"},
        // loss weights
        {"lambda_jepa", "0.15"},
        {"lambda_view", "0.1"},
        {"lambda_gscl", "1"},
        {"lambda_mpct", "0.3"},
        {"lambda_rhythm", "0.2"},
        {"lambda_pos", "0.1"},
        {"alpha_alt", "1"},
        {"alpha_rate", "1"},
        {"alpha_mrr", "0.5"},
        {"alpha_cv", "0.5"},
        {"ramp_epochs", "5"},
        // GSCL / prototypes
        {"gscl_tau", "0.1"},
        {"gscl_sigma", "1"},
        {"proto_embed_dim", "192"},
        {"proto_concept_dim", "48"},
        {"proto_dropout", "0.1"},
        // aux stack
        {"view_tau", "0.07"},
        {"view_dim", "256"},
        {"lead_mask_prob", "0.25"},
        {"latent_dropout", "0.1"},
        {"jepa_hidden", "256"},
        {"mpct_variants", "3"},
        {"mpct_text_dim", "384"},
        {"mpct_table_seed", "1234"},
        {"mpct_tau", "0.07"},
        {"opa_tau", "0.1"},
        {"beta_ica", "0.3"},
        {"beta_bca", "0.3"},
        {"beta_opa", "0.2"},
        // MSPS heads
        {"msps_hidden", "256"},
        {"msps_dropout", "0.1"},
        {"k_seq", "8"},
        {"delta_r", "50"},
        {"theta_brady", "60"},
        {"theta_tachy", "100"},
        {"theta_alt", "0.15"},
        {"nu_alt", "2"},
        // ingest quality screen
        {"quality_amp_bound", "25"},
        {"quality_sat_run", "50"},
        {"quality_zero_frac", "0.9"},
        // probe
        {"probe_l2", "1e-4"},
        {"probe_tol", "1e-6"},
    };
    return d;
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown configuration key: " + key);
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown configuration key: " + key);
    return it->second;
}

double RunConfig::get_f(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error("bad numeric value for " + key + ": '" + v + "'");
    }
}

std::int64_t RunConfig::get_i(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        std::int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error("bad integer value for " + key + ": '" + v + "'");
    }
}

std::uint64_t RunConfig::get_u(const std::string& key) const {
    std::int64_t x = get_i(key);
    if (x < 0) throw config_error("negative value for " + key);
    return static_cast<std::uint64_t>(x);
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("missing '=' on line " + std::to_string(lineno));
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        try {
            cfg.set(key, value);
        } catch (const config_error& e) {
            throw config_error(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
        }
    }
    return cfg;
}

std::string RunConfig::dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    return os.str();
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : dump()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace marecg::train
