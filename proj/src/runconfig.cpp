#include "lbs/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "lbs/error.hpp"

namespace lbs {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty())
        throw UsageError("cli", "invalid value '" + v + "' for key '" + key + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("cli", "invalid boolean '" + v + "' for key '" + key + "'");
}

std::string format(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define LBS_INT(name, member)                                                                         \
    Field{name, [](RunConfig& c, const std::string& v) { c.member = parse_number<decltype(c.member)>(name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }}
#define LBS_REAL(name, member)                                                                              \
    Field{name, [](RunConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); }, \
          [](const RunConfig& c) { return format(c.member); }}
#define LBS_BOOL(name, member)                                                                          \
    Field{name, [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
          [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define LBS_STR(name, member) \
    Field{name, [](RunConfig& c, const std::string& v) { c.member = v; }, [](const RunConfig& c) { return c.member; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        LBS_STR("data", data_path),
        LBS_STR("out", out_path),
        LBS_INT("latent_dim", train.model.latent_dim),
        LBS_INT("hidden_dim", train.model.hidden_dim),
        LBS_INT("mlp_hidden", train.model.mlp_hidden),
        LBS_INT("mlp_layers", train.model.mlp_layers),
        LBS_INT("d_model", train.model.d_model),
        LBS_INT("n_layers", train.model.n_layers),
        LBS_INT("n_heads", train.model.n_heads),
        LBS_INT("ff_dim", train.model.ff_dim),
        LBS_INT("summary_tokens", train.model.summary_tokens),
        LBS_INT("prefix_tokens", train.model.prefix_tokens),
        LBS_INT("summary_hidden", train.model.summary_hidden),
        LBS_INT("max_seq_len", train.model.max_seq_len),
        LBS_REAL("lr_start", train.lr_start),
        LBS_REAL("lr_end", train.lr_end),
        LBS_INT("max_epochs", train.max_epochs),
        LBS_INT("patience", train.patience),
        LBS_REAL("free_nats_start", train.free_nats_start),
        LBS_REAL("alpha_val", train.alpha_val),
        LBS_REAL("alpha_kl", train.alpha_kl),
        LBS_REAL("alpha_text", train.alpha_text),
        LBS_INT("mc_samples_eval", train.mc_samples_eval),
        LBS_INT("seed", train.seed),
        LBS_REAL("weight_decay", train.weight_decay),
        LBS_REAL("beta1", train.beta1),
        LBS_REAL("beta2", train.beta2),
        LBS_REAL("adam_eps", train.adam_eps),
        LBS_REAL("grad_clip", train.grad_clip),
        LBS_BOOL("unimodal", train.unimodal),
        LBS_INT("max_steps", train.max_steps),
        LBS_INT("synth_steps", synth.steps),
        LBS_REAL("synth_period", synth.period),
        LBS_REAL("synth_amplitude", synth.amplitude),
        LBS_REAL("synth_slope", synth.slope),
        LBS_REAL("synth_noise_lo", synth.noise_lo),
        LBS_REAL("synth_noise_hi", synth.noise_hi),
        LBS_REAL("synth_event_rate", synth.event_rate),
        LBS_REAL("synth_event_shift", synth.event_shift),
        LBS_INT("synth_event_lead", synth.event_lead),
        LBS_INT("synth_seed", synth.seed),
        LBS_STR("synth_start_date", synth.start_date),
    };
    return f;
}

#undef LBS_INT
#undef LBS_REAL
#undef LBS_BOOL
#undef LBS_STR

const Field& lookup(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw UsageError("cli", "unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, value); }

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("cli", "expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::parse(std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        try {
            set_assignment(t);
        } catch (const UsageError& e) {
            throw UsageError("cli", "config line " + std::to_string(lineno) + ": " + e.message());
        }
    }
}

void RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cli", "cannot open config '" + path + "'");
    parse(in);
}

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
    return out;
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

}  // namespace lbs
