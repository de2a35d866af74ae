#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "softds/core_math.hpp"

namespace softds {
namespace {

// Independent reference: shift to z >= 40 in long double and apply the
// Stirling series with more terms than the library uses.
long double log_gamma_reference(long double x) {
    long double shift = 0.0L;
    while (x < 40.0L) {
        shift += std::log(x);
        x += 1.0L;
    }
    const long double inv = 1.0L / x;
    const long double inv2 = inv * inv;
    const long double b[] = {1.0L / 12, -1.0L / 360, 1.0L / 1260, -1.0L / 1680, 1.0L / 1188,
                             -691.0L / 360360, 1.0L / 156, -3617.0L / 122400};
    long double series = 0.0L;
    long double power = inv;
    for (long double c : b) {
        series += c * power;
        power *= inv2;
    }
    return (x - 0.5L) * std::log(x) - x + 0.5L * std::log(2.0L * std::numbers::pi_v<long double>) +
           series - shift;
}

TEST(LogGamma, AnalyticValues) {
    EXPECT_NEAR(log_gamma(1.0), 0.0, 1e-14);
    EXPECT_NEAR(log_gamma(2.0), 0.0, 1e-14);
    EXPECT_NEAR(log_gamma(0.5), 0.5723649429247001, 1e-14);
    EXPECT_NEAR(log_gamma(4.0), std::log(6.0), 1e-14);
}

TEST(LogGamma, MatchesHighPrecisionValues) {
    // reference values from a 40-digit evaluation
    EXPECT_NEAR(log_gamma(3.7), 1.428072326665387921872381, 1e-12);
    EXPECT_NEAR(log_gamma(0.3), 1.095797994818075521677168, 1e-12);
    EXPECT_NEAR(log_gamma(12.5), 18.73434751193644570163412, 1e-12);
    EXPECT_NEAR(log_gamma(0.01), 4.599479878042021722513945, 1e-12);
    EXPECT_NEAR(log_gamma(1e-6), 13.81550998074943166920783, 1e-10);
    // |ln Gamma(1e6)| ~ 1.3e7, so one ulp is ~2e-9: compare relatively
    EXPECT_NEAR(log_gamma(1e6) / 12815504.56914761165997697, 1.0, 1e-15);
}

TEST(LogGamma, MatchesLongDoubleSeries) {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> unit(-6.0, 6.0);
    for (int n = 0; n < 500; ++n) {
        const double x = std::pow(10.0, unit(gen));
        const double ref = static_cast<double>(log_gamma_reference(x));
        EXPECT_NEAR(log_gamma(x), ref, 1e-10 * std::max(1.0, std::abs(ref) / 1e4)) << "x=" << x;
    }
}

TEST(LogGamma, Recurrence) {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> dist(0.0, 100.0);
    for (int n = 0; n < 1000; ++n) {
        double x = dist(gen);
        if (x == 0.0) {
            x = 1e-3;
        }
        EXPECT_NEAR(log_gamma(x + 1.0) - log_gamma(x) - std::log(x), 0.0, 1e-9) << "x=" << x;
    }
}

TEST(LogGamma, DomainErrors) {
    EXPECT_THROW(log_gamma(0.0), std::domain_error);
    EXPECT_THROW(log_gamma(-1.5), std::domain_error);
    EXPECT_THROW(log_gamma(std::nan("")), std::domain_error);
    EXPECT_THROW(log_gamma(INFINITY), std::domain_error);
}

TEST(Digamma, AnalyticValues) {
    EXPECT_NEAR(digamma(1.0), -0.5772156649015329, 1e-13);
    EXPECT_NEAR(digamma(2.0), 0.4227843350984671, 1e-13);
    EXPECT_NEAR(digamma(3.7), 1.167153539361511385873864, 1e-12);
    EXPECT_NEAR(digamma(12.5), 2.48519565127491204815044, 1e-12);
    EXPECT_NEAR(digamma(0.01), -100.560885457868674497481, 1e-11);
    EXPECT_NEAR(digamma(1e6), 13.81551005796419077077462, 1e-12);
    // psi(1e-6) ~ -1e6; ulp ~1.2e-10
    EXPECT_NEAR(digamma(1e-6), -1000000.577214019968668068, 3e-10);
}

TEST(Digamma, FiniteDifferenceOfLogGammaAtPointThree) {
    const double h = 1e-6;
    const double fd = (log_gamma(0.3 + h) - log_gamma(0.3 - h)) / (2.0 * h);
    EXPECT_NEAR(digamma(0.3), fd, 1e-6);
    EXPECT_NEAR(digamma(0.3), -3.502524222200132988964495, 1e-12);
}

TEST(Digamma, Recurrence) {
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> dist(0.0, 100.0);
    for (int n = 0; n < 1000; ++n) {
        double x = dist(gen);
        if (x == 0.0) {
            x = 1e-3;
        }
        EXPECT_NEAR(digamma(x + 1.0) - digamma(x) - 1.0 / x, 0.0, 1e-9) << "x=" << x;
    }
}

TEST(Digamma, IsDerivativeOfLogGamma) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> dist(0.1, 100.0);
    const double h = 1e-6;
    for (int n = 0; n < 500; ++n) {
        const double x = dist(gen);
        const double fd = (log_gamma(x + h) - log_gamma(x - h)) / (2.0 * h);
        const double psi = digamma(x);
        EXPECT_LE(std::abs(fd - psi), 1e-5 * std::max(1.0, std::abs(psi))) << "x=" << x;
    }
}

TEST(Digamma, DomainErrors) {
    EXPECT_THROW(digamma(0.0), std::domain_error);
    EXPECT_THROW(digamma(-2.0), std::domain_error);
}

TEST(LogSumExp, Values) {
    const std::vector<double> zeros{0.0, 0.0};
    EXPECT_NEAR(log_sum_exp(zeros), 0.6931471805599453, 1e-15);
    const std::vector<double> big{1000.0, 1000.0};
    EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
    const std::vector<double> neg{-1.0, -2.0, -3.0};
    const long double naive = std::log(std::exp(-1.0L) + std::exp(-2.0L) + std::exp(-3.0L));
    EXPECT_NEAR(log_sum_exp(neg), static_cast<double>(naive), 1e-15);
    EXPECT_NEAR(log_sum_exp(neg), -0.5923940355556196955170801, 1e-15);
    const std::vector<double> tiny{-700.0, -700.0};
    EXPECT_NEAR(log_sum_exp(tiny), -700.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, EmptyInputThrows) {
    EXPECT_THROW(log_sum_exp(std::vector<double>{}), std::invalid_argument);
}

TEST(NormalizeLog, Values) {
    const auto half = normalize_log(std::vector<double>{0.0, 0.0});
    EXPECT_DOUBLE_EQ(half[0], 0.5);
    EXPECT_DOUBLE_EQ(half[1], 0.5);
    const auto quarter = normalize_log(std::vector<double>{std::log(1.0), std::log(3.0)});
    EXPECT_NEAR(quarter[0], 0.25, 1e-15);
    EXPECT_NEAR(quarter[1], 0.75, 1e-15);
}

TEST(NormalizeLog, ShiftInvarianceAndSimplex) {
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> dist(-500.0, 500.0);
    for (int n = 0; n < 200; ++n) {
        std::vector<double> w(2 + n % 7);
        for (double& v : w) {
            v = dist(gen);
        }
        const double shift = dist(gen);
        std::vector<double> shifted(w);
        for (double& v : shifted) {
            v += shift;
        }
        const auto a = normalize_log(w);
        const auto b = normalize_log(shifted);
        double sum = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            EXPECT_GE(a[j], 0.0);
            EXPECT_NEAR(a[j], b[j], 1e-12);
            sum += a[j];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(DirichletLogDensity, Values) {
    const std::vector<double> center{0.5, 0.5};
    EXPECT_NEAR(dirichlet_log_density(center, std::vector<double>{1.0, 1.0}), 0.0, 1e-14);
    EXPECT_NEAR(dirichlet_log_density(center, std::vector<double>{2.0, 1.0}), 0.0, 1e-14);
    EXPECT_NEAR(dirichlet_log_density(center, std::vector<double>{2.0, 2.0}), 0.4054651081081644, 1e-13);
}

TEST(DirichletLogDensity, RejectsNonPositiveParameters) {
    const std::vector<double> c{0.5, 0.5};
    EXPECT_THROW(dirichlet_log_density(c, std::vector<double>{0.0, 1.0}), std::domain_error);
    EXPECT_THROW(dirichlet_log_density(c, std::vector<double>{-1.0, 1.0}), std::domain_error);
}

TEST(DirichletLogDensity, IntegratesToOneOnThreeSimplex) {
    // E_uniform[Dir(c; a)] * vol = 1, uniform simplex density is 2 for J = 3
    std::mt19937_64 gen(5);
    std::exponential_distribution<double> expo(1.0);
    const std::vector<double> alpha{2.0, 3.5, 1.5};
    const int draws = 100000;
    double mass = 0.0;
    for (int n = 0; n < draws; ++n) {
        std::vector<double> c(3);
        double s = 0.0;
        for (double& v : c) {
            v = expo(gen);
            s += v;
        }
        for (double& v : c) {
            v /= s;
        }
        mass += std::exp(dirichlet_log_density(c, alpha));
    }
    const double estimate = mass / draws / 2.0;
    EXPECT_NEAR(estimate, 1.0, 0.02);
}

} // namespace
} // namespace softds
