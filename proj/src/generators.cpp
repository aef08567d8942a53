#include "bsvie/generators.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bsvie/numeric.hpp"

namespace bsvie {

namespace {

const std::map<std::string, double> kLinearDefaults = {
    {"a", 0.0}, {"b", 0.0}, {"c", 0.0}, {"e", 0.0}, {"m", 0.0}, {"h0", 0.0}};
const std::map<std::string, double> kQuadBoundedDefaults = {
    {"ell_coeff", 1.0}, {"by", 2.0}, {"bz", 1.0}, {"cmu", 1.0}, {"cnu", 1.0}};
const std::map<std::string, double> kQuadStrictDefaults = {
    {"ell_coeff", 1.0}, {"by", 1.0}, {"bz", 1.0}, {"cmu", 1.0}, {"cnu", 1.0}};

std::map<std::string, double> merge_coeffs(const std::map<std::string, double>& defaults,
                                           const std::map<std::string, double>& user,
                                           const std::string& what) {
    std::map<std::string, double> out = defaults;
    for (const auto& [k, v] : user) {
        auto it = out.find(k);
        if (it == out.end())
            throw ValidationError(what + ": unknown coefficient '" + k + "'");
        it->second = v;
    }
    return out;
}

double norm_sq(std::span<const double> z) {
    double s = 0.0;
    for (double c : z) s += c * c;
    return s;
}

} // namespace

LawStats LawStats::from(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim() != 1) throw ValidationError("LawStats: mu must be one-dimensional");
    LawStats s;
    s.w2_mu0 = distance_to_dirac0(2.0, mu);
    s.w2_nu0 = distance_to_dirac0(2.0, nu);
    std::vector<double> terms(static_cast<std::size_t>(mu.size()));
    for (int i = 0; i < mu.size(); ++i)
        terms[static_cast<std::size_t>(i)] = mu.weight(i) * mu.point(i)[0];
    s.mean_mu = stable_sum(std::move(terms));
    return s;
}

GeneratorSpec GeneratorSpec::builtin(GeneratorFamily family,
                                     const std::map<std::string, double>& coeffs) {
    GeneratorSpec g;
    g.family_ = family;
    g.id_ = family_name(family);
    switch (family) {
        case GeneratorFamily::zero:
            if (!coeffs.empty()) throw ValidationError("zero generator takes no coefficients");
            break;
        case GeneratorFamily::linear_lipschitz:
            g.coeffs_ = merge_coeffs(kLinearDefaults, coeffs, "linear-lipschitz");
            break;
        case GeneratorFamily::quad_bounded:
            g.coeffs_ = merge_coeffs(kQuadBoundedDefaults, coeffs, "quad-bounded");
            break;
        case GeneratorFamily::quad_strict:
            g.coeffs_ = merge_coeffs(kQuadStrictDefaults, coeffs, "quad-strict");
            break;
    }
    return g;
}

GeneratorFamily GeneratorSpec::family_from_name(const std::string& name) {
    if (name == "zero") return GeneratorFamily::zero;
    if (name == "linear-lipschitz") return GeneratorFamily::linear_lipschitz;
    if (name == "quad-bounded") return GeneratorFamily::quad_bounded;
    if (name == "quad-strict") return GeneratorFamily::quad_strict;
    throw ValidationError("unknown generator family '" + name + "'");
}

std::string GeneratorSpec::family_name(GeneratorFamily family) {
    switch (family) {
        case GeneratorFamily::zero: return "zero";
        case GeneratorFamily::linear_lipschitz: return "linear-lipschitz";
        case GeneratorFamily::quad_bounded: return "quad-bounded";
        case GeneratorFamily::quad_strict: return "quad-strict";
    }
    return "?";
}

GrowthClass GeneratorSpec::growth_class() const {
    switch (family_) {
        case GeneratorFamily::zero:
        case GeneratorFamily::linear_lipschitz: return GrowthClass::linear;
        case GeneratorFamily::quad_bounded: return GrowthClass::quadratic_bounded_law;
        case GeneratorFamily::quad_strict: return GrowthClass::quadratic_unbounded_law;
    }
    return GrowthClass::linear;
}

double GeneratorSpec::coeff(const std::string& name) const {
    auto it = coeffs_.find(name);
    if (it == coeffs_.end())
        throw ValidationError("generator '" + id_ + "' has no coefficient '" + name + "'");
    return it->second;
}

bool GeneratorSpec::uses_law_of_y() const {
    switch (family_) {
        case GeneratorFamily::zero: return false;
        case GeneratorFamily::linear_lipschitz:
            return coeff("c") != 0.0 || coeff("m") != 0.0;
        case GeneratorFamily::quad_bounded:
        case GeneratorFamily::quad_strict: return coeff("cmu") != 0.0;
    }
    return false;
}

bool GeneratorSpec::uses_law_of_z() const {
    switch (family_) {
        case GeneratorFamily::zero: return false;
        case GeneratorFamily::linear_lipschitz: return coeff("e") != 0.0;
        case GeneratorFamily::quad_bounded:
        case GeneratorFamily::quad_strict: return coeff("cnu") != 0.0;
    }
    return false;
}

bool GeneratorSpec::chaos_supported() const {
    // Quadratic drivers are covered by the chaos results only when they do
    // not depend on the law of Z.
    if (growth_class() == GrowthClass::linear) return true;
    return !uses_law_of_z();
}

SingularKind GeneratorSpec::singular_kind() const {
    switch (family_) {
        case GeneratorFamily::quad_bounded:
            return coeff("ell_coeff") != 0.0 ? SingularKind::pow_one_third : SingularKind::none;
        case GeneratorFamily::quad_strict:
            return coeff("ell_coeff") != 0.0 ? SingularKind::pow_one_half : SingularKind::none;
        default: return SingularKind::none;
    }
}

GeneratorConstants GeneratorSpec::constants(double horizon) const {
    GeneratorConstants c;
    const double T = horizon;
    switch (family_) {
        case GeneratorFamily::zero: c.L = 0.0; break;
        case GeneratorFamily::linear_lipschitz:
            c.L = std::abs(coeff("a")) + std::abs(coeff("b")) + std::abs(coeff("c")) +
                  std::abs(coeff("e")) + std::abs(coeff("m"));
            break;
        case GeneratorFamily::quad_bounded: {
            const double ec = coeff("ell_coeff");
            const double k = std::abs(coeff("cnu")) * std::numbers::pi / 2.0;
            c.gamma = 2.0 * std::abs(coeff("bz"));
            c.beta = std::abs(coeff("by"));
            c.beta0 = std::abs(coeff("cmu"));
            // ell(t,s) = ec (s-t)^(-1/3) + k; K2 bounds sup_t int_t^T ell^2.
            c.K2 = 3.0 * ec * ec * std::cbrt(T) + 3.0 * ec * k * std::pow(T, 2.0 / 3.0) +
                   k * k * T;
            break;
        }
        case GeneratorFamily::quad_strict: {
            const double ec = coeff("ell_coeff");
            c.gamma = 2.0 * std::abs(coeff("bz"));
            c.gamma_tilde = 2.0 * std::abs(coeff("bz"));
            c.beta = std::abs(coeff("by"));
            c.beta0 = std::abs(coeff("cmu"));
            c.gamma0 = std::abs(coeff("cnu"));
            c.alpha = 1.0 / 3.0;
            c.K3 = 2.0 * ec * std::sqrt(T);
            break;
        }
    }
    for (const auto& [name, value] : overrides_) {
        if (name == "L") c.L = value;
        else if (name == "beta") c.beta = value;
        else if (name == "beta0") c.beta0 = value;
        else if (name == "gamma") c.gamma = value;
        else if (name == "gamma0") c.gamma0 = value;
        else if (name == "gamma_tilde") c.gamma_tilde = value;
        else if (name == "alpha") c.alpha = value;
        else if (name == "K1") c.K1 = value;
        else if (name == "K2") c.K2 = value;
        else if (name == "K3") c.K3 = value;
        else throw ValidationError("unknown constant override '" + name + "'");
    }
    return c;
}

void GeneratorSpec::override_constant(const std::string& name, double value) {
    overrides_[name] = value;
}

double GeneratorSpec::ell_pointwise(double t, double s) const {
    switch (singular_kind()) {
        case SingularKind::none: return 0.0;
        case SingularKind::pow_one_third:
            return coeff("ell_coeff") * std::pow(s - t, -1.0 / 3.0);
        case SingularKind::pow_one_half:
            return coeff("ell_coeff") * std::pow(s - t, -0.5);
    }
    return 0.0;
}

double GeneratorSpec::eval(double t, double s, double y, std::span<const double> z,
                           const LawStats& stats) const {
    if (t > s) throw DomainError("generator: t > s is outside the triangle");
    if (singular_kind() != SingularKind::none && s == t)
        throw DomainError(
            "generator: singular weight is not evaluated pointwise on the diagonal; "
            "use integrate_singular_weight");
    return eval_with_ell(t, s, y, z, stats, ell_pointwise(t, s));
}

double GeneratorSpec::eval_with_ell(double t, double s, double y, std::span<const double> z,
                                    const LawStats& stats, double ell_value) const {
    if (t > s) throw DomainError("generator: t > s is outside the triangle");
    switch (family_) {
        case GeneratorFamily::zero: return 0.0;
        case GeneratorFamily::linear_lipschitz: {
            const double z1 = z.empty() ? 0.0 : z[0];
            return coeff("a") * y + coeff("b") * z1 + coeff("c") * stats.w2_mu0 +
                   coeff("e") * stats.w2_nu0 + coeff("m") * stats.mean_mu + coeff("h0");
        }
        case GeneratorFamily::quad_bounded: {
            const double z1 = z.empty() ? 0.0 : z[0];
            return ell_value + coeff("by") * std::abs(y) + coeff("bz") * z1 * z1 +
                   coeff("cmu") * stats.w2_mu0 + coeff("cnu") * std::atan(stats.w2_nu0);
        }
        case GeneratorFamily::quad_strict: {
            return -coeff("bz") * norm_sq(z) + ell_value + coeff("by") * y +
                   coeff("cnu") * std::pow(stats.w2_nu0, 4.0 / 3.0) +
                   coeff("cmu") * stats.w2_mu0;
        }
    }
    return 0.0;
}

double integrate_singular_weight(SingularKind kind, double t, double s_lo, double s_hi) {
    if (s_lo < t) throw DomainError("integrate_singular_weight: s_lo < t");
    if (s_hi < s_lo) throw DomainError("integrate_singular_weight: empty or inverted interval");
    if (s_hi == s_lo) return 0.0;
    switch (kind) {
        case SingularKind::none: return 0.0;
        case SingularKind::pow_one_third:
            return 1.5 * (std::pow(s_hi - t, 2.0 / 3.0) - std::pow(s_lo - t, 2.0 / 3.0));
        case SingularKind::pow_one_half:
            return 2.0 * (std::sqrt(s_hi - t) - std::sqrt(s_lo - t));
    }
    return 0.0;
}

AssumptionReport assumption_report(const GeneratorSpec& spec, double horizon) {
    AssumptionReport r;
    r.generator_id = spec.id();
    r.uses_law_of_y = spec.uses_law_of_y();
    r.uses_law_of_z = spec.uses_law_of_z();
    r.chaos_supported = spec.chaos_supported();
    r.constants = spec.constants(horizon);
    switch (spec.growth_class()) {
        case GrowthClass::linear: r.growth_class = "linear"; break;
        case GrowthClass::quadratic_bounded_law: r.growth_class = "quadratic-bounded-law"; break;
        case GrowthClass::quadratic_unbounded_law:
            r.growth_class = "quadratic-unbounded-law";
            break;
    }

    const auto& c = r.constants;
    if (c.alpha && (*c.alpha < 0.0 || *c.alpha >= 1.0))
        throw ValidationError("assumption_report: alpha must lie in [0,1)");
    if (spec.growth_class() == GrowthClass::linear) {
        if (c.L && *c.L < 0.0) throw ValidationError("assumption_report: L must be nonnegative");
    } else {
        if (!c.gamma || *c.gamma <= 0.0)
            throw ValidationError("assumption_report: gamma must be positive for quadratic classes");
    }
    if (spec.growth_class() == GrowthClass::quadratic_unbounded_law) {
        if (!c.gamma_tilde || *c.gamma_tilde <= 0.0)
            throw ValidationError(
                "assumption_report: gamma_tilde must be positive for the strictly quadratic class");
    }
    if (!r.chaos_supported)
        r.notes.push_back("chaos-unsupported: quadratic driver depending on the law of Z");
    if (c.K2)
        r.notes.push_back("K2 bounds sup_t of the integral of the squared weight ell(t,.)");
    return r;
}

double eval_generator(const GeneratorSpec& spec, double t, double s, double y,
                      std::span<const double> z, const EmpiricalMeasure& mu,
                      const EmpiricalMeasure& nu) {
    return spec.eval(t, s, y, z, LawStats::from(mu, nu));
}

FreeTermSpec FreeTermSpec::builtin(FreeTermFamily family,
                                   const std::map<std::string, double>& coeffs) {
    static const std::map<std::string, double> kConst = {{"c", 0.0}};
    static const std::map<std::string, double> kLinear = {{"a", 1.0}, {"c", 0.0}};
    static const std::map<std::string, double> kBounded = {{"c", 1.0}, {"a", 1.0}, {"b", 0.0}};
    FreeTermSpec f;
    f.family_ = family;
    f.id_ = family_name(family);
    switch (family) {
        case FreeTermFamily::constant: f.coeffs_ = merge_coeffs(kConst, coeffs, "constant"); break;
        case FreeTermFamily::terminal_linear:
            f.coeffs_ = merge_coeffs(kLinear, coeffs, "terminal-linear");
            break;
        case FreeTermFamily::terminal_bounded:
            f.coeffs_ = merge_coeffs(kBounded, coeffs, "terminal-bounded");
            break;
    }
    return f;
}

FreeTermFamily FreeTermSpec::family_from_name(const std::string& name) {
    if (name == "constant") return FreeTermFamily::constant;
    if (name == "terminal-linear") return FreeTermFamily::terminal_linear;
    if (name == "terminal-bounded") return FreeTermFamily::terminal_bounded;
    throw ValidationError("unknown free-term family '" + name + "'");
}

std::string FreeTermSpec::family_name(FreeTermFamily family) {
    switch (family) {
        case FreeTermFamily::constant: return "constant";
        case FreeTermFamily::terminal_linear: return "terminal-linear";
        case FreeTermFamily::terminal_bounded: return "terminal-bounded";
    }
    return "?";
}

bool FreeTermSpec::bounded() const { return family_ != FreeTermFamily::terminal_linear; }

double FreeTermSpec::k1() const {
    if (!bounded()) throw ValidationError("free term is not declared bounded");
    return std::abs(coeff("c"));
}

double FreeTermSpec::coeff(const std::string& name) const {
    auto it = coeffs_.find(name);
    if (it == coeffs_.end())
        throw ValidationError("free term '" + id_ + "' has no coefficient '" + name + "'");
    return it->second;
}

double FreeTermSpec::eval(double t, std::span<const double> terminal_w) const {
    const double w1 = terminal_w.empty() ? 0.0 : terminal_w[0];
    switch (family_) {
        case FreeTermFamily::constant: return coeff("c");
        case FreeTermFamily::terminal_linear: return coeff("a") * w1 + coeff("c");
        case FreeTermFamily::terminal_bounded:
            return coeff("c") * std::tanh(coeff("a") * w1 + coeff("b") * t);
    }
    return 0.0;
}

} // namespace bsvie
