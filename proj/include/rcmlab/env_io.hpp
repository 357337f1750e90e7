#pragma once

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rcmlab/conductance.hpp"

namespace rcmlab {

inline nlohmann::json law_to_json(const ConductanceLaw& law) {
    nlohmann::json j;
    j["kind"] = to_string(law.kind);
    switch (law.kind) {
        case LawKind::constant:
            j["value"] = law.value;
            break;
        case LawKind::bernoulli_degenerate:
            j["p0"] = law.p0;
            j["positive_value"] = law.positive_value;
            j["admissible"] = law.degenerate_admissible();
            break;
        case LawKind::polynomial_tail:
            j["p"] = law.p;
            j["eps"] = law.eps;
            break;
        case LawKind::dyadic_trap:
            j["N"] = law.N;
            j["eps"] = law.eps;
            j["M"] = law.M;
            break;
        case LawKind::custom: {
            nlohmann::json t = nlohmann::json::array();
            for (auto& [v, q] : law.table) t.push_back({v, q});
            j["table"] = t;
            break;
        }
    }
    return j;
}

inline ConductanceLaw law_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind");
    if (kind == "constant") return ConductanceLaw::constant(j.at("value"));
    if (kind == "bernoulli_degenerate")
        return ConductanceLaw::bernoulli_degenerate(j.at("p0"), j.value("positive_value", 1.0));
    if (kind == "polynomial_tail")
        return ConductanceLaw::polynomial_tail(j.at("p"), j.at("eps"));
    if (kind == "dyadic_trap")
        return ConductanceLaw::dyadic_trap(j.at("N"), j.at("eps"), j.value("M", 1.0));
    if (kind == "custom") {
        std::vector<std::pair<double, double>> table;
        for (auto& row : j.at("table")) table.emplace_back(row.at(0), row.at(1));
        return ConductanceLaw::custom(std::move(table));
    }
    throw std::invalid_argument("unknown conductance law kind: " + kind);
}

inline nlohmann::json spec_to_json(const LatticeSpec& s) {
    return {{"d1", s.d1},
            {"d2", s.d2},
            {"L", s.L},
            {"metric", to_string(s.metric)},
            {"boundary", to_string(s.boundary)}};
}

inline LatticeSpec spec_from_json(const nlohmann::json& j) {
    LatticeSpec s;
    s.d1 = j.at("d1");
    s.d2 = j.at("d2");
    s.L = j.at("L");
    std::string metric = j.at("metric");
    std::string boundary = j.at("boundary");
    if (metric == "euclidean") s.metric = Metric::euclidean;
    else if (metric == "graph") s.metric = Metric::graph;
    else throw std::invalid_argument("unknown metric: " + metric);
    if (boundary == "absorbing_box") s.boundary = Boundary::absorbing_box;
    else if (boundary == "torus") s.boundary = Boundary::torus;
    else throw std::invalid_argument("unknown boundary: " + boundary);
    return s;
}

/// File layout: "RCME", u64 header length, JSON header, raw little-endian
/// doubles in pair-index order (plus mu when mu_mode is custom).
/// Round-trip is bit-exact.
inline void save_environment(const Environment& env, const std::string& path) {
    nlohmann::json header;
    header["spec"] = spec_to_json(env.lattice->spec());
    header["law"] = law_to_json(env.law);
    header["seed"] = env.seed;
    header["alpha"] = env.alpha;
    header["mu_mode"] = to_string(env.mu_mode);
    header["pair_count"] = env.w.size();
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_environment: cannot open " + path);
    out.write("RCME", 4);
    std::uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(env.w.data()),
              static_cast<std::streamsize>(env.w.size() * sizeof(double)));
    if (env.mu_mode == MuMode::custom)
        out.write(reinterpret_cast<const char*>(env.mu.data()),
                  static_cast<std::streamsize>(env.mu.size() * sizeof(double)));
}

inline Environment load_environment(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_environment: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, "RCME", 4) != 0)
        throw std::runtime_error("load_environment: bad magic in " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    nlohmann::json header = nlohmann::json::parse(hs);

    Environment env;
    env.lattice = std::make_shared<SiteIndex>(spec_from_json(header.at("spec")));
    env.law = law_from_json(header.at("law"));
    env.seed = header.at("seed");
    env.alpha = header.at("alpha");
    std::string mm = header.at("mu_mode");
    env.mu_mode = mm == "counting" ? MuMode::counting
                : mm == "csrw"     ? MuMode::csrw
                                   : MuMode::custom;
    std::size_t pairs = header.at("pair_count");
    env.w.resize(pairs);
    in.read(reinterpret_cast<char*>(env.w.data()),
            static_cast<std::streamsize>(pairs * sizeof(double)));
    const int n = env.lattice->size();
    if (env.mu_mode == MuMode::custom) {
        env.mu.resize(n);
        in.read(reinterpret_cast<char*>(env.mu.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
    } else if (env.mu_mode == MuMode::csrw) {
        env.mu = csrw_measure(env);
    } else {
        env.mu = Eigen::VectorXd::Ones(n);
    }
    if (!in) throw std::runtime_error("load_environment: truncated file " + path);
    return env;
}

} // namespace rcmlab
