#include "ipldm/config.hpp"

#include <optional>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace ipldm {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void check_range_i(const char* name, int64_t v, int64_t lo, int64_t hi) {
    if (v < lo || v > hi)
        throw DomainError(std::string(name) + "=" + std::to_string(v) + " outside [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

void check_range_d(const char* name, double v, double lo, double hi) {
    if (!(v >= lo && v <= hi))
        throw DomainError(std::string(name) + "=" + fmt_double(v) + " outside [" +
                          fmt_double(lo) + ", " + fmt_double(hi) + "]");
}

}  // namespace

void RunConfig::validate() const {
    profile_from_name(profile);  // throws on unknown
    if (resolution != 32 && resolution != 64 && resolution != 128)
        throw DomainError("resolution must be one of {32, 64, 128}");
    check_range_i("n_subjects", n_subjects, 2, 100000);
    check_range_i("scans_min", scans_min, 1, 16);
    check_range_i("scans_max", scans_max, scans_min, 16);
    if (latent_f != 2 && latent_f != 4 && latent_f != 8)
        throw DomainError("latent_f must be one of {2, 4, 8}");
    if (resolution % latent_f)
        throw DomainError("resolution must be divisible by latent_f");
    check_range_i("latent_c", latent_c, 1, 64);
    check_range_i("ae_base", ae_base, 4, 256);
    check_range_i("ae_steps", ae_steps, 1, 1000000);
    check_range_i("ae_batch", ae_batch, 1, 1024);
    check_range_d("ae_lr", ae_lr, 1e-8, 1.0);
    check_range_d("edge_weight", edge_weight, 0.0, 100.0);
    check_range_i("id_channels", id_channels, 1, 64);
    check_range_i("embed_dim", embed_dim, 2, 4096);
    check_range_i("irl_steps", irl_steps, 1, 1000000);
    check_range_i("irl_batch", irl_batch, 2, 1024);
    check_range_d("irl_lr", irl_lr, 1e-8, 1.0);
    check_range_d("margin", margin, 0.0, 100.0);
    check_range_d("gamma_collapse", gamma_collapse, 0.0, 100.0);
    check_range_i("unet_base", unet_base, 4, 256);
    check_range_i("cond_dim", cond_dim, 8, 1024);
    check_range_i("time_dim", time_dim, 8, 1024);
    check_range_i("unet_steps", unet_steps, 1, 1000000);
    check_range_i("unet_batch", unet_batch, 1, 1024);
    check_range_d("unet_lr", unet_lr, 1e-8, 1.0);
    check_range_i("ctrl_steps", ctrl_steps, 1, 1000000);
    check_range_i("ctrl_batch", ctrl_batch, 1, 1024);
    check_range_d("ctrl_lr", ctrl_lr, 1e-8, 1.0);
    check_range_i("timesteps", timesteps, 1, 10000);
    check_range_d("beta_start", beta_start, 1e-12, 0.999);
    check_range_d("beta_end", beta_end, beta_start, 0.999);
    check_range_i("eval_subjects", eval_subjects, 2, 100000);
    check_range_i("eval_max_pairs", eval_max_pairs, 1, 1000000);
    if (cn && !cc) throw DomainError("flag nesting violated: cn requires cc");
    if (il && !cn) throw DomainError("flag nesting violated: il requires cn");
    if (ip && !il) throw DomainError("flag nesting violated: ip requires il");
}

std::map<std::string, std::string> RunConfig::to_map() const {
    std::map<std::string, std::string> kv;
    kv["profile"] = profile;
    kv["resolution"] = std::to_string(resolution);
    kv["seed"] = std::to_string(seed);
    kv["out"] = out_dir;
    kv["n_subjects"] = std::to_string(n_subjects);
    kv["scans_min"] = std::to_string(scans_min);
    kv["scans_max"] = std::to_string(scans_max);
    kv["latent_f"] = std::to_string(latent_f);
    kv["latent_c"] = std::to_string(latent_c);
    kv["ae_base"] = std::to_string(ae_base);
    kv["ae_steps"] = std::to_string(ae_steps);
    kv["ae_batch"] = std::to_string(ae_batch);
    kv["ae_lr"] = fmt_double(ae_lr);
    kv["edge_weight"] = fmt_double(edge_weight);
    kv["id_channels"] = std::to_string(id_channels);
    kv["embed_dim"] = std::to_string(embed_dim);
    kv["irl_steps"] = std::to_string(irl_steps);
    kv["irl_batch"] = std::to_string(irl_batch);
    kv["irl_lr"] = fmt_double(irl_lr);
    kv["margin"] = fmt_double(margin);
    kv["gamma_collapse"] = fmt_double(gamma_collapse);
    kv["unet_base"] = std::to_string(unet_base);
    kv["cond_dim"] = std::to_string(cond_dim);
    kv["time_dim"] = std::to_string(time_dim);
    kv["unet_steps"] = std::to_string(unet_steps);
    kv["unet_batch"] = std::to_string(unet_batch);
    kv["unet_lr"] = fmt_double(unet_lr);
    kv["ctrl_steps"] = std::to_string(ctrl_steps);
    kv["ctrl_batch"] = std::to_string(ctrl_batch);
    kv["ctrl_lr"] = fmt_double(ctrl_lr);
    kv["timesteps"] = std::to_string(timesteps);
    kv["beta_start"] = fmt_double(beta_start);
    kv["beta_end"] = fmt_double(beta_end);
    kv["cc"] = cc ? "1" : "0";
    kv["cn"] = cn ? "1" : "0";
    kv["il"] = il ? "1" : "0";
    kv["ip"] = ip ? "1" : "0";
    kv["eval_subjects"] = std::to_string(eval_subjects);
    kv["eval_max_pairs"] = std::to_string(eval_max_pairs);
    return kv;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    std::map<std::string, std::string> rest = kv;
    auto take = [&rest](const std::string& key) -> std::optional<std::string> {
        auto it = rest.find(key);
        if (it == rest.end()) return std::nullopt;
        std::string v = it->second;
        rest.erase(it);
        return v;
    };
    auto geti = [&](const std::string& key, int& field) {
        if (auto v = take(key)) {
            try {
                field = std::stoi(*v);
            } catch (const std::exception&) {
                throw DomainError("config key " + key + ": not an integer: '" + *v + "'");
            }
        }
    };
    auto getd = [&](const std::string& key, double& field) {
        if (auto v = take(key)) {
            try {
                field = std::stod(*v);
            } catch (const std::exception&) {
                throw DomainError("config key " + key + ": not a number: '" + *v + "'");
            }
        }
    };
    auto getb = [&](const std::string& key, bool& field) {
        if (auto v = take(key)) {
            if (*v == "1" || *v == "true")
                field = true;
            else if (*v == "0" || *v == "false")
                field = false;
            else
                throw DomainError("config key " + key + ": expected 0/1, got '" + *v + "'");
        }
    };

    if (auto v = take("profile")) cfg.profile = *v;
    geti("resolution", cfg.resolution);
    if (auto v = take("seed")) {
        try {
            cfg.seed = std::stoull(*v);
        } catch (const std::exception&) {
            throw DomainError("config key seed: not an unsigned integer: '" + *v + "'");
        }
    }
    if (auto v = take("out")) cfg.out_dir = *v;
    geti("n_subjects", cfg.n_subjects);
    geti("scans_min", cfg.scans_min);
    geti("scans_max", cfg.scans_max);
    geti("latent_f", cfg.latent_f);
    geti("latent_c", cfg.latent_c);
    geti("ae_base", cfg.ae_base);
    geti("ae_steps", cfg.ae_steps);
    geti("ae_batch", cfg.ae_batch);
    getd("ae_lr", cfg.ae_lr);
    getd("edge_weight", cfg.edge_weight);
    geti("id_channels", cfg.id_channels);
    geti("embed_dim", cfg.embed_dim);
    geti("irl_steps", cfg.irl_steps);
    geti("irl_batch", cfg.irl_batch);
    getd("irl_lr", cfg.irl_lr);
    getd("margin", cfg.margin);
    getd("gamma_collapse", cfg.gamma_collapse);
    geti("unet_base", cfg.unet_base);
    geti("cond_dim", cfg.cond_dim);
    geti("time_dim", cfg.time_dim);
    geti("unet_steps", cfg.unet_steps);
    geti("unet_batch", cfg.unet_batch);
    getd("unet_lr", cfg.unet_lr);
    geti("ctrl_steps", cfg.ctrl_steps);
    geti("ctrl_batch", cfg.ctrl_batch);
    getd("ctrl_lr", cfg.ctrl_lr);
    geti("timesteps", cfg.timesteps);
    getd("beta_start", cfg.beta_start);
    getd("beta_end", cfg.beta_end);
    getb("cc", cfg.cc);
    getb("cn", cfg.cn);
    getb("il", cfg.il);
    getb("ip", cfg.ip);
    geti("eval_subjects", cfg.eval_subjects);
    geti("eval_max_pairs", cfg.eval_max_pairs);

    if (!rest.empty())
        throw DomainError("unknown config key '" + rest.begin()->first + "'");
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            auto issp = [](char c) { return std::isspace(static_cast<unsigned char>(c)); };
            while (!s.empty() && issp(s.front())) s.erase(s.begin());
            while (!s.empty() && issp(s.back())) s.pop_back();
            return s;
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DomainError(path + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (kv.count(key))
            throw DomainError(path + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        kv[key] = val;
    }
    return from_map(kv);
}

void RunConfig::apply_paper_scale() {
    // Published recipe: AE batch 256/320 for 20k steps at 1e-4; U-Net batch
    // 256 for 20k steps at 1e-4; manipulation batch 128 for 10k steps at 1e-5.
    ae_steps = 20000;
    ae_batch = profile == "elderly" ? 320 : 256;
    ae_lr = 1e-4;
    unet_steps = 20000;
    unet_batch = 256;
    unet_lr = 1e-4;
    ctrl_steps = 10000;
    ctrl_batch = 128;
    ctrl_lr = 1e-5;
}

uint64_t RunConfig::stage_hash(const std::string& stage) const {
    static const std::vector<std::string> data_keys = {
        "profile", "resolution", "seed", "n_subjects", "scans_min", "scans_max",
        "latent_f", "latent_c"};
    std::vector<std::string> keys = data_keys;
    auto extend = [&keys](std::initializer_list<const char*> more) {
        for (const char* k : more) keys.push_back(k);
    };
    if (stage == "ae") {
        extend({"ae_base", "ae_steps", "ae_batch", "ae_lr", "edge_weight"});
    } else if (stage == "irl") {
        extend({"ae_base", "ae_steps", "ae_batch", "ae_lr", "edge_weight", "id_channels",
                "embed_dim", "irl_steps", "irl_batch", "irl_lr", "margin", "gamma_collapse",
                "il", "ip"});
    } else if (stage == "unet") {
        extend({"ae_base", "ae_steps", "ae_batch", "ae_lr", "edge_weight", "unet_base",
                "cond_dim", "time_dim", "unet_steps", "unet_batch", "unet_lr", "timesteps",
                "beta_start", "beta_end"});
    } else if (stage == "control") {
        extend({"ae_base", "ae_steps", "ae_batch", "ae_lr", "edge_weight", "id_channels",
                "embed_dim", "irl_steps", "irl_batch", "irl_lr", "margin", "gamma_collapse",
                "il", "ip", "unet_base", "cond_dim", "time_dim", "unet_steps", "unet_batch",
                "unet_lr", "timesteps", "beta_start", "beta_end", "ctrl_steps", "ctrl_batch",
                "ctrl_lr", "cc", "cn"});
    } else {
        throw ContractError("unknown stage '" + stage + "'");
    }
    auto kv = to_map();
    uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const std::string& s) {
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    };
    for (const auto& k : keys) {
        feed(k);
        feed(kv.at(k));
    }
    return h;
}

}  // namespace ipldm
