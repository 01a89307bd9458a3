#include "stockformer/config.h"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "stockformer/errors.h"

extern char** environ;

namespace stockformer::config {

using nlohmann::json;

namespace {

// Known keys per section; anything else is rejected.
const std::map<std::string, std::vector<std::string>>& schema() {
    static const std::map<std::string, std::vector<std::string>> s = {
        {"data", {"bars", "adjustments", "exclusions", "metadata", "synthetic"}},
        {"data.synthetic", {"enabled", "stocks", "days", "seed", "signal", "noise", "start_date"}},
        {"splits", {"train_len", "val_len", "test_len", "step"}},
        {"factors", {"ic_threshold", "screen", "threads"}},
        {"wavelet", {"name", "g", "h"}},
        {"model",
         {"t1", "t2", "hidden_dim", "layers", "heads", "kernel", "lambda", "dropout", "lr",
          "decay", "epochs", "batch", "patience", "seed", "embed_smoothing", "struc2vec_iters",
          "struc2vec_tol", "ablation"}},
        {"model.ablation",
         {"no_decouple", "no_temporal", "no_graph", "no_fusion", "no_reg_head", "no_cla_head"}},
        {"strategy",
         {"k", "n_drop", "fee_rate", "stamp_duty_before", "stamp_duty_after", "duty_switch_date",
          "initial_cash", "risk_free", "benchmark"}},
        {"output", {"dir"}},
    };
    return s;
}

void collect_unknown(const json& j, const std::string& prefix, std::vector<std::string>& bad) {
    if (!j.is_object()) return;
    if (prefix.empty()) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!schema().count(it.key())) {
                bad.push_back(it.key());
            } else {
                collect_unknown(it.value(), it.key(), bad);
            }
        }
        return;
    }
    auto known = schema().find(prefix);
    if (known == schema().end()) return;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& keys = known->second;
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
            bad.push_back(prefix + "." + it.key());
        } else if (it.value().is_object()) {
            collect_unknown(it.value(), prefix + "." + it.key(), bad);
        }
    }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json env_overrides() {
    json out = json::object();
    constexpr const char* kPrefix = "STKF_";
    for (char** e = environ; *e; ++e) {
        std::string entry(*e);
        if (entry.rfind(kPrefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(std::string(kPrefix).size(), eq - std::string(kPrefix).size());
        const std::string value = entry.substr(eq + 1);
        const auto sep = key.find("__");
        if (sep == std::string::npos) {
            throw ConfigError("environment override " + entry.substr(0, eq) +
                              " must use STKF_SECTION__KEY");
        }
        std::string section = key.substr(0, sep);
        std::string field = key.substr(sep + 2);
        for (auto& c : section) c = static_cast<char>(std::tolower(c));
        for (auto& c : field) c = static_cast<char>(std::tolower(c));
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::parse_error&) {
            parsed = value;  // plain string
        }
        // a double underscore inside the field addresses one level deeper
        const auto nested = field.find("__");
        if (nested == std::string::npos) {
            out[section][field] = parsed;
        } else {
            out[section][field.substr(0, nested)][field.substr(nested + 2)] = parsed;
        }
    }
    return out;
}

void merge(json& base, const json& patch) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
            merge(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

RunConfig parse(json j) {
    std::vector<std::string> bad;
    collect_unknown(j, "", bad);
    if (!bad.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : bad) msg += " " + k;
        throw ConfigError(msg);
    }

    RunConfig c;
    if (j.contains("data")) {
        const auto& d = j["data"];
        read_into(d, "bars", c.data.bars);
        read_into(d, "adjustments", c.data.adjustments);
        read_into(d, "exclusions", c.data.exclusions);
        read_into(d, "metadata", c.data.metadata);
        if (d.contains("synthetic")) {
            const auto& s = d["synthetic"];
            read_into(s, "enabled", c.data.synthetic.enabled);
            read_into(s, "stocks", c.data.synthetic.stocks);
            read_into(s, "days", c.data.synthetic.days);
            read_into(s, "seed", c.data.synthetic.seed);
            read_into(s, "signal", c.data.synthetic.signal);
            read_into(s, "noise", c.data.synthetic.noise);
            read_into(s, "start_date", c.data.synthetic.start_date);
        }
    }
    if (j.contains("splits")) {
        const auto& s = j["splits"];
        read_into(s, "train_len", c.splits.train_len);
        read_into(s, "val_len", c.splits.val_len);
        read_into(s, "test_len", c.splits.test_len);
        read_into(s, "step", c.splits.step);
    }
    if (j.contains("factors")) {
        const auto& f = j["factors"];
        read_into(f, "ic_threshold", c.factors.ic_threshold);
        read_into(f, "screen", c.factors.screen);
        read_into(f, "threads", c.factors.threads);
    }
    if (j.contains("wavelet")) {
        const auto& w = j["wavelet"];
        read_into(w, "name", c.wavelet.name);
        read_into(w, "g", c.wavelet.g);
        read_into(w, "h", c.wavelet.h);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        read_into(m, "t1", c.model.t1);
        read_into(m, "t2", c.model.t2);
        read_into(m, "hidden_dim", c.model.hidden_dim);
        read_into(m, "layers", c.model.layers);
        read_into(m, "heads", c.model.heads);
        read_into(m, "kernel", c.model.kernel);
        read_into(m, "lambda", c.model.lambda_cla);
        read_into(m, "dropout", c.model.dropout);
        read_into(m, "lr", c.model.lr);
        read_into(m, "decay", c.model.decay);
        read_into(m, "epochs", c.model.epochs);
        read_into(m, "batch", c.model.batch);
        read_into(m, "patience", c.model.patience);
        read_into(m, "seed", c.model.seed);
        read_into(m, "embed_smoothing", c.model.embed_smoothing);
        read_into(m, "struc2vec_iters", c.model.struc2vec_iters);
        read_into(m, "struc2vec_tol", c.model.struc2vec_tol);
        if (m.contains("ablation")) {
            const auto& a = m["ablation"];
            read_into(a, "no_decouple", c.model.ablation.no_decouple);
            read_into(a, "no_temporal", c.model.ablation.no_temporal);
            read_into(a, "no_graph", c.model.ablation.no_graph);
            read_into(a, "no_fusion", c.model.ablation.no_fusion);
            read_into(a, "no_reg_head", c.model.ablation.no_reg_head);
            read_into(a, "no_cla_head", c.model.ablation.no_cla_head);
        }
    }
    if (j.contains("strategy")) {
        const auto& s = j["strategy"];
        read_into(s, "k", c.strategy.k);
        read_into(s, "n_drop", c.strategy.n_drop);
        read_into(s, "fee_rate", c.strategy.fee_rate);
        read_into(s, "stamp_duty_before", c.strategy.stamp_duty_before);
        read_into(s, "stamp_duty_after", c.strategy.stamp_duty_after);
        read_into(s, "duty_switch_date", c.strategy.duty_switch_date);
        read_into(s, "initial_cash", c.strategy.initial_cash);
        read_into(s, "risk_free", c.strategy.risk_free);
        read_into(s, "benchmark", c.strategy.benchmark);
    }
    if (j.contains("output")) read_into(j["output"], "dir", c.output.dir);

    c.strategy.validate();
    c.filters();  // validates wavelet settings
    return c;
}

}  // namespace

wavelet::FilterPair RunConfig::filters() const {
    if (!wavelet.g.empty() || !wavelet.h.empty()) {
        if (wavelet.g.size() != wavelet.h.size() || wavelet.g.empty()) {
            throw ConfigError("wavelet: g and h must be non-empty and the same length");
        }
        return wavelet::FilterPair{wavelet.g, wavelet.h};
    }
    return wavelet::FilterPair::named(wavelet.name);
}

RunConfig from_json_text(const std::string& text, bool apply_env) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (apply_env) merge(j, env_overrides());
    return parse(std::move(j));
}

RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str(), /*apply_env=*/true);
}

std::string default_json() {
    json j;
    j["data"] = {{"bars", ""},
                 {"synthetic",
                  {{"enabled", true}, {"stocks", 6}, {"days", 420}, {"seed", 7}}}};
    j["splits"] = {{"train_len", 120}, {"val_len", 30}, {"test_len", 30}, {"step", 30}};
    j["factors"] = {{"ic_threshold", 0.02}, {"screen", true}};
    j["wavelet"] = {{"name", "haar"}};
    j["model"] = {{"t1", 20},    {"t2", 2},     {"hidden_dim", 16}, {"layers", 2},
                  {"heads", 1},  {"kernel", 2}, {"lambda", 2.0},    {"dropout", 0.2},
                  {"lr", 0.001}, {"decay", 0.1}, {"epochs", 8},     {"batch", 2},
                  {"seed", 42}};
    j["strategy"] = {{"k", 3}, {"n_drop", 1}, {"fee_rate", 0.001}, {"initial_cash", 1000000.0}};
    j["output"] = {{"dir", "out"}};
    return j.dump(2);
}

}  // namespace stockformer::config
