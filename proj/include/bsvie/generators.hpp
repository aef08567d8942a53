#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsvie/errors.hpp"
#include "bsvie/measures.hpp"

namespace bsvie {

enum class GrowthClass { linear, quadratic_bounded_law, quadratic_unbounded_law };
enum class SingularKind { none, pow_one_third, pow_one_half };
enum class GeneratorFamily { zero, linear_lipschitz, quad_bounded, quad_strict };
enum class FreeTermFamily { constant, terminal_linear, terminal_bounded };

/// Everything the driver needs from the two law arguments. The built-in
/// families read measures only through the distance to the Dirac at 0 and
/// the first moment of mu, so solvers can pass these as plain numbers.
struct LawStats {
    double w2_mu0 = 0.0;   // W_2(mu, delta_0)
    double mean_mu = 0.0;  // integral of x d(mu)
    double w2_nu0 = 0.0;   // W_2(nu, delta_0)

    static LawStats from(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
};

/// Assumption metadata attached to a driver. Optional entries are absent
/// when the growth class does not define them.
struct GeneratorConstants {
    std::optional<double> L;            // Lipschitz constant (linear class)
    std::optional<double> beta;         // |y| growth weight
    std::optional<double> beta0;        // W_2(mu, delta_0) growth weight
    std::optional<double> gamma;        // |z|^2 growth weight (x2)
    std::optional<double> gamma0;       // W_2(nu, delta_0)^(1+alpha) weight
    std::optional<double> gamma_tilde;  // one-sided quadratic weight (x2)
    std::optional<double> alpha;        // law-of-Z growth exponent, in [0,1)
    std::optional<double> K1;           // bound on |psi|
    std::optional<double> K2;           // bound on sup_t int_t^T ell(t,s)^2 ds
    std::optional<double> K3;           // bound on sup_t int_t^T ell(t,s) ds
};

/// A driver g(t, s, y, z, mu, nu) from the declarative catalog.
///
/// Built-in families (coefficients in parentheses, defaults in brackets):
///   zero             g = 0
///   linear-lipschitz g = a*y + b*z_1 + c*W2(mu,d0) + e*W2(nu,d0)
///                        + m*mean(mu) + h0                       [all 0]
///   quad-bounded     g = ell_coeff*(s-t)^(-1/3) + by*|y| + bz*|z_1|^2
///                        + cmu*W2(mu,d0) + cnu*arctan(W2(nu,d0)) [1,2,1,1,1]
///   quad-strict      g = -bz*|z|^2 + ell_coeff*(s-t)^(-1/2) + by*y
///                        + cnu*W2(nu,d0)^(4/3) + cmu*W2(mu,d0)   [1,1,1,1,1]
class GeneratorSpec {
public:
    static GeneratorSpec builtin(GeneratorFamily family,
                                 const std::map<std::string, double>& coeffs = {});
    static GeneratorFamily family_from_name(const std::string& name);
    static std::string family_name(GeneratorFamily family);

    const std::string& id() const { return id_; }
    GeneratorFamily family() const { return family_; }
    GrowthClass growth_class() const;
    bool uses_law_of_y() const;
    bool uses_law_of_z() const;
    bool chaos_supported() const;
    SingularKind singular_kind() const;
    double coeff(const std::string& name) const;
    const std::map<std::string, double>& coeffs() const { return coeffs_; }

    /// Constants derived from the coefficients; the horizon enters the
    /// weight-process bounds. User overrides replace derived entries.
    GeneratorConstants constants(double horizon) const;
    void override_constant(const std::string& name, double value);
    const std::map<std::string, double>& constant_overrides() const { return overrides_; }

    /// Pointwise driver value; requires t <= s, and s > t when the driver
    /// carries an integrable singularity on the diagonal.
    double eval(double t, double s, double y, std::span<const double> z,
                const LawStats& stats) const;

    /// Same, with the singular weight replaced by a precomputed cell value
    /// (the exact integral over the diagonal cell divided by dt).
    double eval_with_ell(double t, double s, double y, std::span<const double> z,
                         const LawStats& stats, double ell_value) const;

    /// The singular weight itself at (t, s); 0 for families without one.
    double ell_pointwise(double t, double s) const;

private:
    GeneratorSpec() = default;

    std::string id_;
    GeneratorFamily family_ = GeneratorFamily::zero;
    std::map<std::string, double> coeffs_;
    std::map<std::string, double> overrides_;
};

/// Exact integral of the singular weight over [s_lo, s_hi] for a left
/// endpoint t <= s_lo (antiderivatives (3/2)(s-t)^(2/3) and 2(s-t)^(1/2)).
double integrate_singular_weight(SingularKind kind, double t, double s_lo, double s_hi);

struct AssumptionReport {
    std::string generator_id;
    std::string growth_class;
    bool uses_law_of_y = false;
    bool uses_law_of_z = false;
    bool chaos_supported = true;
    GeneratorConstants constants;
    std::vector<std::string> notes;
};

/// Validates the constants against the declared class and echoes them.
AssumptionReport assumption_report(const GeneratorSpec& spec, double horizon);

/// Evaluation through full empirical measures (the generic entry point).
double eval_generator(const GeneratorSpec& spec, double t, double s, double y,
                      std::span<const double> z, const EmpiricalMeasure& mu,
                      const EmpiricalMeasure& nu);

/// Free term psi(t) as a rule on (t, terminal Brownian state W(T)).
///
/// Families:
///   constant          psi = c
///   terminal-linear   psi = a*W_1(T) + c            (unbounded)
///   terminal-bounded  psi = c * tanh(a*W_1(T) + b*t) (|psi| <= |c|)
class FreeTermSpec {
public:
    static FreeTermSpec builtin(FreeTermFamily family,
                                const std::map<std::string, double>& coeffs = {});
    static FreeTermFamily family_from_name(const std::string& name);
    static std::string family_name(FreeTermFamily family);

    const std::string& id() const { return id_; }
    FreeTermFamily family() const { return family_; }
    bool bounded() const;
    double k1() const;  // valid when bounded()
    double coeff(const std::string& name) const;
    const std::map<std::string, double>& coeffs() const { return coeffs_; }

    double eval(double t, std::span<const double> terminal_w) const;

private:
    FreeTermSpec() = default;

    std::string id_;
    FreeTermFamily family_ = FreeTermFamily::constant;
    std::map<std::string, double> coeffs_;
};

} // namespace bsvie
