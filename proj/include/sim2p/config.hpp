#pragma once

// Run configuration: strict INI parsing and the effective-config echo.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sim2p/experiments.hpp"

namespace sim2p::config {

namespace pt = boost::property_tree;

struct DataSection {
    data::CohortConfig cohort;
    data::SplitRatios split;
    int splitCandidates = 20;
};

struct EvalSection {
    int nStep = 100;
    std::string split = "test";  // subjects used by sample and evaluate
    std::string analysisSplit = "val";  // subjects used by sweep-steps and ablate-aux
    std::vector<int> stepList = experiments::default_step_list();
    std::vector<std::string> auxVariables;  // ablate-aux roster; empty = all 13
    int maxSubjects = 0;                    // 0 = every subject in the split
};

struct AdaptSection {
    train::AdaptConfig cfg;
    std::string baseCheckpoint;
};

struct RunConfig {
    std::uint64_t seed = 7;
    bridge::BridgeSchedule schedule;
    net::NetConfig net;
    train::TrainConfig train;
    sampler::SamplerConfig sampler;
    DataSection data;
    AdaptSection adapt;
    EvalSection eval;

    /// Propagates the top-level seed into every module that draws random numbers.
    void apply_seed(std::uint64_t s) {
        seed = s;
        data.cohort.seed = s;
        train.seed = s;
        sampler.seed = s;
    }

    void validate() const {
        schedule.validate();
        net.validate();
        train.validate();
        sampler.validate();
        data.cohort.validate();
        adapt.cfg.validate();
        const auto& r = data.split;
        if (!(r.train > 0 && r.val > 0 && r.test >= 0) || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
            throw ConfigError("data.trainFraction/valFraction/testFraction must be positive and sum to 1");
        if (data.splitCandidates < 1) throw ConfigError("data.splitCandidates must be at least 1");
        if (data.cohort.volumeSide != net.volumeSide)
            throw ConfigError("data.volumeSide (" + std::to_string(data.cohort.volumeSide) + ") must equal net.volumeSide (" +
                              std::to_string(net.volumeSide) + ")");
        if (eval.nStep < 2) throw ConfigError("eval.nStep must be >= 2");
        for (int n : eval.stepList)
            if (n < 2) throw ConfigError("eval.stepList entries must be >= 2");
        if (eval.stepList.empty()) throw ConfigError("eval.stepList must not be empty");
        for (const auto& v : eval.auxVariables) aux_index(v);
        for (const auto& s : {eval.split, eval.analysisSplit})
            if (s != "all" && s != "train" && s != "val" && s != "test")
                throw ConfigError("eval split '" + s + "' must be train, val, test or all");
        if (eval.maxSubjects < 0) throw ConfigError("eval.maxSubjects must be non-negative");
    }
};

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& v) { return v; }

template <class T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

inline void parse_value(const std::string& s, double& out, const std::string& path) {
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (...) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError(path + ": expected a number, got '" + s + "'");
}
inline void parse_value(const std::string& s, int& out, const std::string& path) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError(path + ": expected an integer, got '" + s + "'");
}
inline void parse_value(const std::string& s, std::uint64_t& out, const std::string& path) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError(path + ": expected a non-negative 64-bit integer, got '" + s + "'");
}
inline void parse_value(const std::string& s, bool& out, const std::string& path) {
    if (s == "true" || s == "1") out = true;
    else if (s == "false" || s == "0") out = false;
    else throw ConfigError(path + ": expected true or false, got '" + s + "'");
}
inline void parse_value(const std::string& s, std::string& out, const std::string&) { out = s; }
template <class T>
void parse_value(const std::string& s, std::vector<T>& out, const std::string& path) {
    out.clear();
    for (const auto& item : split_list(s)) {
        T v{};
        parse_value(item, v, path);
        out.push_back(v);
    }
}

inline std::string fmt(bridge::ScheduleKind k) { return bridge::to_string(k); }
inline std::string fmt(net::Fusion f) { return net::to_string(f); }
inline std::string fmt(data::Site s) { return s == data::Site::Local ? "local" : "public"; }
inline std::string fmt(const std::array<double, 3>& a) { return join(std::vector<double>(a.begin(), a.end())); }
inline std::string fmt(const std::vector<std::string>& v) { return join(v); }
inline std::string fmt(const std::vector<int>& v) { return join(v); }

inline void parse_value(const std::string& s, bridge::ScheduleKind& out, const std::string& path) {
    try {
        out = bridge::schedule_kind_from_string(s);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}
inline void parse_value(const std::string& s, net::Fusion& out, const std::string& path) {
    try {
        out = net::fusion_from_string(s);
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}
inline void parse_value(const std::string& s, data::Site& out, const std::string& path) {
    if (s == "public") out = data::Site::Public;
    else if (s == "local") out = data::Site::Local;
    else throw ConfigError(path + ": expected public or local, got '" + s + "'");
}
inline void parse_value(const std::string& s, std::array<double, 3>& out, const std::string& path) {
    std::vector<double> v;
    parse_value(s, v, path);
    if (v.size() != 3) throw ConfigError(path + ": expected three comma-separated numbers (CN,AD,FTD)");
    std::copy(v.begin(), v.end(), out.begin());
}

// Reads known keys out of a ptree and remembers which ones were consumed.
class Reader {
public:
    explicit Reader(const pt::ptree& t) : tree_(t) {}

    template <class T>
    void get(const std::string& section, const std::string& key, T& out) {
        const std::string path = section.empty() ? key : section + "." + key;
        known_.insert(path);
        const pt::ptree* node = section.empty() ? &tree_ : nullptr;
        if (!node) {
            const auto it = tree_.find(section);
            if (it == tree_.not_found()) return;
            node = &it->second;
        }
        const auto it = node->find(key);
        if (it == node->not_found()) return;
        parse_value(it->second.data(), out, path);
    }

    void reject_unknown() const {
        for (const auto& [k, v] : tree_) {
            if (v.empty()) {
                if (!known_.count(k)) throw ConfigError("unknown key '" + k + "'");
                continue;
            }
            for (const auto& [kk, vv] : v)
                if (!known_.count(k + "." + kk)) throw ConfigError("unknown key '" + k + "." + kk + "'");
        }
    }

private:
    const pt::ptree& tree_;
    std::set<std::string> known_;
};

// One table drives both parsing and echo so the two cannot drift apart.
template <class Visit>
void fields(RunConfig& c, Visit&& v) {
    v("", "seed", c.seed);
    v("schedule", "kind", c.schedule.kind);
    v("schedule", "beta0", c.schedule.beta0);
    v("schedule", "tMin", c.schedule.tMin);
    v("schedule", "tMax", c.schedule.tMax);
    v("schedule", "sigmaMaxVE", c.schedule.sigmaMaxVE);
    v("net", "volumeSide", c.net.volumeSide);
    v("net", "patchSide", c.net.patchSide);
    v("net", "embedDim", c.net.embedDim);
    v("net", "nBlocks", c.net.nBlocks);
    v("net", "nHeads", c.net.nHeads);
    v("net", "auxDim", c.net.auxDim);
    v("net", "mlpRatio", c.net.mlpRatio);
    v("net", "timeFreqDim", c.net.timeFreqDim);
    v("net", "sourceChannel", c.net.sourceChannel);
    v("net", "fusion", c.net.fusion);
    v("train", "lr", c.train.lr);
    v("train", "weightDecay", c.train.weightDecay);
    v("train", "batchSize", c.train.batchSize);
    v("train", "maxIters", c.train.maxIters);
    v("train", "valEvery", c.train.valEvery);
    v("train", "valNStep", c.train.valNStep);
    v("train", "lossEmaDecay", c.train.lossEmaDecay);
    v("sampler", "nStep", c.sampler.nStep);
    v("sampler", "rho", c.sampler.rho);
    v("sampler", "emFraction", c.sampler.emFraction);
    v("sampler", "clampPrediction", c.sampler.clampPrediction);
    v("sampler", "clampLo", c.sampler.clampLo);
    v("sampler", "clampHi", c.sampler.clampHi);
    v("sampler", "startOffset", c.sampler.startOffset);
    v("data", "n", c.data.cohort.n);
    v("data", "classMix", c.data.cohort.classMix);
    v("data", "volumeSide", c.data.cohort.volumeSide);
    v("data", "site", c.data.cohort.site);
    v("data", "missingRate", c.data.cohort.missingRate);
    v("data", "idPrefix", c.data.cohort.idPrefix);
    v("data", "trainFraction", c.data.split.train);
    v("data", "valFraction", c.data.split.val);
    v("data", "testFraction", c.data.split.test);
    v("data", "splitCandidates", c.data.splitCandidates);
    v("adapt", "baseCheckpoint", c.adapt.baseCheckpoint);
    v("adapt", "localTrainFraction", c.adapt.cfg.localTrainFraction);
    v("adapt", "auxSubset", c.adapt.cfg.auxSubset);
    v("adapt", "ftIters", c.adapt.cfg.ftIters);
    v("eval", "nStep", c.eval.nStep);
    v("eval", "split", c.eval.split);
    v("eval", "analysisSplit", c.eval.analysisSplit);
    v("eval", "stepList", c.eval.stepList);
    v("eval", "auxVariables", c.eval.auxVariables);
    v("eval", "maxSubjects", c.eval.maxSubjects);
}

}  // namespace detail

/// Parses INI text. Missing keys keep their defaults; unknown keys are errors. The top-level
/// seed is propagated into the modules and validation runs on the result.
inline RunConfig parse(const std::string& text, const std::string& source = "config") {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig c;
    detail::Reader r(tree);
    try {
        detail::fields(c, [&](const std::string& sec, const std::string& key, auto& field) { r.get(sec, key, field); });
        r.reject_unknown();
        c.apply_seed(c.seed);
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return c;
}

inline RunConfig load(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read config file " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), p.string());
}

/// Every field with its resolved value; parse(to_ini(c)) reproduces c.
inline std::string to_ini(RunConfig c) {
    std::ostringstream o;
    std::string current = "\x01";
    detail::fields(c, [&](const std::string& sec, const std::string& key, auto& field) {
        using detail::fmt;
        if (sec != current) {
            if (!sec.empty()) o << "\n[" << sec << "]\n";
            current = sec;
        }
        o << key << " = " << fmt(field) << '\n';
    });
    return o.str();
}

}  // namespace sim2p::config
