#include "bsvie/config.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bsvie {

namespace toml {

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
    std::ostringstream os;
    os << "config parse error (line " << line << "): " << what;
    throw ValidationError(os.str());
}

std::string strip(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool valid_key(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
            return false;
    return true;
}

std::string drop_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

Scalar parse_scalar(const std::string& raw, int line) {
    const std::string s = strip(raw);
    if (s.empty()) fail(line, "empty value");
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') fail(line, "unterminated string");
        return s.substr(1, s.size() - 2);
    }
    if (s == "true") return true;
    if (s == "false") return false;
    const bool looks_float = s.find_first_of(".eE") != std::string::npos &&
                             s.find_first_not_of("+-0123456789.eE") == std::string::npos;
    char* end = nullptr;
    if (!looks_float) {
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (end && *end == '\0') return static_cast<std::int64_t>(v);
    }
    const double d = std::strtod(s.c_str(), &end);
    if (end && *end == '\0') return d;
    fail(line, "cannot parse value '" + s + "'");
}

} // namespace

Document parse(const std::string& text) {
    Document doc;
    std::string current; // empty = top-level pseudo table
    doc[""];

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = strip(drop_comment(raw));
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail(lineno, "unterminated table header");
            const std::string name = strip(line.substr(1, line.size() - 2));
            if (!valid_key(name)) fail(lineno, "bad table name '" + name + "'");
            if (doc.count(name)) fail(lineno, "duplicate table [" + name + "]");
            doc[name];
            current = name;
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(lineno, "expected key = value");
        const std::string key = strip(line.substr(0, eq));
        if (!valid_key(key) || key.find('.') != std::string::npos)
            fail(lineno, "bad key '" + key + "'");
        const std::string value = strip(line.substr(eq + 1));
        if (doc[current].count(key)) fail(lineno, "duplicate key '" + key + "'");

        Value v;
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']') fail(lineno, "unterminated array");
            v.is_array = true;
            const std::string body = value.substr(1, value.size() - 2);
            std::string item;
            std::istringstream items(body);
            while (std::getline(items, item, ',')) {
                if (strip(item).empty()) continue;
                v.array.push_back(parse_scalar(item, lineno));
            }
        } else {
            v.scalar = parse_scalar(value, lineno);
        }
        doc[current][key] = std::move(v);
    }
    return doc;
}

Document parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

} // namespace toml

namespace {

using toml::Scalar;
using toml::Table;
using toml::Value;

double as_double(const Scalar& s, const std::string& where) {
    if (std::holds_alternative<double>(s)) return std::get<double>(s);
    if (std::holds_alternative<std::int64_t>(s))
        return static_cast<double>(std::get<std::int64_t>(s));
    throw ValidationError(where + ": expected a number");
}

std::int64_t as_int(const Scalar& s, const std::string& where) {
    if (std::holds_alternative<std::int64_t>(s)) return std::get<std::int64_t>(s);
    throw ValidationError(where + ": expected an integer");
}

std::string as_string(const Scalar& s, const std::string& where) {
    if (std::holds_alternative<std::string>(s)) return std::get<std::string>(s);
    throw ValidationError(where + ": expected a string");
}

bool as_bool(const Scalar& s, const std::string& where) {
    if (std::holds_alternative<bool>(s)) return std::get<bool>(s);
    throw ValidationError(where + ": expected a boolean");
}

/// Tracks which keys of a table have been consumed; leftovers are errors.
class TableReader {
public:
    TableReader(const toml::Document& doc, std::string name) : name_(std::move(name)) {
        auto it = doc.find(name_);
        if (it != doc.end()) table_ = &it->second;
    }

    bool present() const { return table_ != nullptr; }

    const Value* get(const std::string& key) {
        if (!table_) return nullptr;
        auto it = table_->find(key);
        if (it == table_->end()) return nullptr;
        used_.push_back(key);
        return &it->second;
    }

    double number(const std::string& key, double fallback) {
        const Value* v = get(key);
        return v ? as_double(v->scalar, context(key)) : fallback;
    }
    int integer(const std::string& key, int fallback) {
        const Value* v = get(key);
        return v ? static_cast<int>(as_int(v->scalar, context(key))) : fallback;
    }
    std::string text(const std::string& key, const std::string& fallback) {
        const Value* v = get(key);
        return v ? as_string(v->scalar, context(key)) : fallback;
    }
    bool boolean(const std::string& key, bool fallback) {
        const Value* v = get(key);
        return v ? as_bool(v->scalar, context(key)) : fallback;
    }
    std::optional<double> maybe_number(const std::string& key) {
        const Value* v = get(key);
        if (!v) return std::nullopt;
        return as_double(v->scalar, context(key));
    }

    /// Remaining keys are handed to the caller (e.g. free coefficients) or
    /// rejected.
    std::map<std::string, double> remaining_numbers() {
        std::map<std::string, double> out;
        if (!table_) return out;
        for (const auto& [k, v] : *table_) {
            if (std::find(used_.begin(), used_.end(), k) != used_.end()) continue;
            out[k] = as_double(v.scalar, context(k));
            used_.push_back(k);
        }
        return out;
    }

    void reject_unknown() const {
        if (!table_) return;
        for (const auto& [k, v] : *table_)
            if (std::find(used_.begin(), used_.end(), k) == used_.end())
                throw ValidationError("unknown key '" + (name_.empty() ? k : name_ + "." + k) +
                                      "' in config");
    }

private:
    std::string context(const std::string& key) const {
        return name_.empty() ? key : name_ + "." + key;
    }
    const Table* table_ = nullptr;
    std::string name_;
    std::vector<std::string> used_;
};


} // namespace

RunConfig run_config_from_document(const toml::Document& doc) {
    static const std::vector<std::string> known_tables = {
        "",          "grid",      "backend",  "generator", "generator.constants",
        "free_term", "picard",    "study",    "particles"};
    for (const auto& [name, table] : doc) {
        if (std::find(known_tables.begin(), known_tables.end(), name) == known_tables.end())
            throw ValidationError("unknown table [" + name + "] in config");
        (void)table;
    }

    RunConfig cfg;

    TableReader top(doc, "");
    if (const Value* v = top.get("seed"))
        cfg.seed = static_cast<std::uint64_t>(as_int(v->scalar, "seed"));
    cfg.output_dir = top.text("output_dir", cfg.output_dir);
    top.reject_unknown();

    TableReader grid(doc, "grid");
    cfg.horizon = grid.number("T", cfg.horizon);
    cfg.steps = grid.integer("M", cfg.steps);
    grid.reject_unknown();

    TableReader backend(doc, "backend");
    cfg.backend_mode = backend.text("mode", cfg.backend_mode);
    cfg.scenarios = backend.integer("P", cfg.scenarios);
    cfg.degree = backend.integer("degree", cfg.degree);
    cfg.ridge = backend.number("ridge", cfg.ridge);
    cfg.dimension = backend.integer("d", cfg.dimension);
    cfg.lattice_cap = backend.integer("lattice_cap", cfg.lattice_cap);
    backend.reject_unknown();
    if (cfg.backend_mode != "lattice" && cfg.backend_mode != "regression")
        throw ValidationError("backend.mode must be 'lattice' or 'regression'");

    TableReader gen(doc, "generator");
    cfg.generator_family = gen.text("family", cfg.generator_family);
    cfg.generator_coeffs = gen.remaining_numbers();
    TableReader gen_const(doc, "generator.constants");
    cfg.generator_constants = gen_const.remaining_numbers();

    TableReader ft(doc, "free_term");
    cfg.free_term_family = ft.text("family", cfg.free_term_family);
    cfg.free_term_coeffs = ft.remaining_numbers();

    TableReader pic(doc, "picard");
    cfg.tolerance = pic.maybe_number("tolerance");
    cfg.max_iterations = pic.integer("max_iter", cfg.max_iterations);
    cfg.damping = pic.number("damping", cfg.damping);
    cfg.beta = pic.maybe_number("beta");
    cfg.z_clamp = pic.maybe_number("rz");
    cfg.z_clamp_cap = pic.number("rz_cap", cfg.z_clamp_cap);
    pic.reject_unknown();

    TableReader study(doc, "study");
    cfg.has_study = study.present();
    if (cfg.has_study) {
        const Value* ns = study.get("N");
        if (!ns || !ns->is_array) throw ValidationError("study.N must be an array of integers");
        for (const auto& s : ns->array)
            cfg.study_counts.push_back(static_cast<int>(as_int(s, "study.N")));
        cfg.study_replications = study.integer("K", cfg.study_replications);
        cfg.study_p = study.number("p", cfg.study_p);
        const int study_d = study.integer("d", cfg.dimension);
        if (study_d != cfg.dimension)
            throw ValidationError("study.d must match backend.d");
        cfg.study_variant = study.text("variant", cfg.study_variant);
        cfg.reference_scenarios = study.integer("P_ref", cfg.reference_scenarios);
        cfg.reference_backend = study.text("ref_backend", cfg.reference_backend);
        cfg.study_offdiagonals = study.boolean("offdiagonals", cfg.study_offdiagonals);
        study.reject_unknown();
    }

    TableReader parts(doc, "particles");
    cfg.has_particles = parts.present();
    if (cfg.has_particles) {
        cfg.particle_count = parts.integer("N", cfg.particle_count);
        cfg.particle_scenarios = parts.integer("P", cfg.particle_scenarios);
        cfg.particle_offdiagonals = parts.boolean("offdiagonals", cfg.particle_offdiagonals);
        parts.reject_unknown();
    }

    // Validate the declarative pieces eagerly so errors carry field names.
    (void)GeneratorSpec::family_from_name(cfg.generator_family);
    (void)FreeTermSpec::family_from_name(cfg.free_term_family);
    if (cfg.has_study) (void)variant_from_name(cfg.study_variant);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_document(toml::parse_file(path));
}

std::string RunConfig::canonical() const {
    std::vector<std::string> lines;
    char buf[96];
    const auto num = [&](const std::string& k, double v) {
        std::snprintf(buf, sizeof buf, "%s=%.17g", k.c_str(), v);
        lines.push_back(buf);
    };
    const auto integer = [&](const std::string& k, long long v) {
        std::snprintf(buf, sizeof buf, "%s=%lld", k.c_str(), v);
        lines.push_back(buf);
    };
    const auto text = [&](const std::string& k, const std::string& v) {
        lines.push_back(k + "=\"" + v + "\"");
    };
    const auto flag = [&](const std::string& k, bool v) {
        lines.push_back(k + (v ? "=true" : "=false"));
    };

    // output_dir is deliberately absent: artifacts are identified by what
    // was computed, not where they were written.
    integer("seed", static_cast<long long>(seed));
    num("grid.T", horizon);
    integer("grid.M", steps);
    text("backend.mode", backend_mode);
    integer("backend.P", scenarios);
    integer("backend.degree", degree);
    num("backend.ridge", ridge);
    integer("backend.d", dimension);
    integer("backend.lattice_cap", lattice_cap);
    text("generator.family", generator_family);
    for (const auto& [k, v] : generator_coeffs) num("generator." + k, v);
    for (const auto& [k, v] : generator_constants) num("generator.constants." + k, v);
    text("free_term.family", free_term_family);
    for (const auto& [k, v] : free_term_coeffs) num("free_term." + k, v);
    if (tolerance) num("picard.tolerance", *tolerance);
    integer("picard.max_iter", max_iterations);
    num("picard.damping", damping);
    if (beta) num("picard.beta", *beta);
    if (z_clamp) num("picard.rz", *z_clamp);
    num("picard.rz_cap", z_clamp_cap);
    if (has_study) {
        std::string ns = "study.N=[";
        for (std::size_t i = 0; i < study_counts.size(); ++i) {
            if (i) ns += ',';
            ns += std::to_string(study_counts[i]);
        }
        ns += ']';
        lines.push_back(ns);
        integer("study.K", study_replications);
        num("study.p", study_p);
        text("study.variant", study_variant);
        integer("study.P_ref", reference_scenarios);
        text("study.ref_backend", reference_backend);
        flag("study.offdiagonals", study_offdiagonals);
    }
    if (has_particles) {
        integer("particles.N", particle_count);
        integer("particles.P", particle_scenarios);
        flag("particles.offdiagonals", particle_offdiagonals);
    }

    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    return out;
}

std::uint64_t RunConfig::hash() const {
    // FNV-1a, 64-bit.
    const std::string c = canonical();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char byte : c) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string RunConfig::hash_hex() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, hash());
    return buf;
}

Problem make_problem(const RunConfig& config) {
    Problem pr;
    pr.grid = make_grid(config.horizon, config.steps);
    pr.generator = GeneratorSpec::builtin(
        GeneratorSpec::family_from_name(config.generator_family), config.generator_coeffs);
    for (const auto& [k, v] : config.generator_constants) pr.generator.override_constant(k, v);
    pr.free_term = FreeTermSpec::builtin(
        FreeTermSpec::family_from_name(config.free_term_family), config.free_term_coeffs);
    pr.dimension = config.dimension;
    pr.engine.regression.degree = config.degree;
    pr.engine.regression.ridge = config.ridge;
    if (config.backend_mode == "lattice") {
        if (config.dimension != 1)
            throw ValidationError("the lattice backend forces d = 1");
        pr.engine.backend = CondExpBackend::lattice_exact;
        pr.ensemble = std::make_shared<NoiseEnsemble>(
            NoiseEnsemble::build_lattice(pr.grid, config.lattice_cap));
    } else {
        pr.engine.backend = CondExpBackend::regression;
        pr.ensemble = std::make_shared<NoiseEnsemble>(NoiseEnsemble::sample_paths(
            pr.grid, config.dimension, config.scenarios, config.seed));
    }
    return pr;
}

PicardConfig make_picard_config(const RunConfig& config) {
    PicardConfig pc;
    pc.tolerance = config.tolerance;
    pc.max_iterations = config.max_iterations;
    pc.damping = config.damping;
    pc.beta = config.beta;
    pc.z_clamp = config.z_clamp;
    pc.z_clamp_cap = config.z_clamp_cap;
    return pc;
}

StudyConfig make_study_config(const RunConfig& config) {
    if (!config.has_study) throw ValidationError("config has no [study] table");
    StudyConfig sc;
    sc.particle_counts = config.study_counts;
    sc.replications = config.study_replications;
    sc.p = config.study_p;
    sc.dimension = config.dimension;
    sc.base_seed = config.seed;
    sc.reference_scenarios = config.reference_scenarios;
    sc.reference_backend = config.reference_backend;
    sc.particle_scenarios = config.scenarios;
    sc.variant = variant_from_name(config.study_variant);
    sc.offdiagonals = config.study_offdiagonals;
    return sc;
}

} // namespace bsvie
