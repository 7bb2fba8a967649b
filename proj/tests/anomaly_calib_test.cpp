#include "geonav/anomaly_calib.hpp"

#include <cmath>
#include <gtest/gtest.h>
#include <random>
#include <vector>

#include "geonav/angles.hpp"

using namespace geonav;
using namespace geonav::calib;

// ---------------------------------------------------------------------------
// Discrepancy
// ---------------------------------------------------------------------------

TEST(HeadingDiscrepancy, ZeroForIdenticalSequences) {
    const std::vector<double> a = {10.0, -20.0, 175.0, 0.0};
    EXPECT_DOUBLE_EQ(heading_discrepancy(a, a), 0.0);
}

TEST(HeadingDiscrepancy, ConstantOffset) {
    std::vector<double> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
        a[i] = 30.0 + i;
        b[i] = 20.0 + i;
    }
    EXPECT_DOUBLE_EQ(heading_discrepancy(a, b), 10.0);
}

TEST(HeadingDiscrepancy, WrapsAcrossTheSeam) {
    const std::vector<double> a = {179.0};
    const std::vector<double> b = {-179.0};
    EXPECT_DOUBLE_EQ(heading_discrepancy(a, b), 2.0);
}

TEST(HeadingDiscrepancy, LengthMismatchThrows) {
    const std::vector<double> a = {1.0, 2.0};
    const std::vector<double> b = {1.0};
    EXPECT_THROW(heading_discrepancy(a, b), std::invalid_argument);
    EXPECT_THROW(heading_discrepancy({}, {}), std::invalid_argument);
}

TEST(HeadingDiscrepancy, SymmetricAndTriangleInequality) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> ang(-180.0, 180.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> a(5), b(5), c(5);
        for (int i = 0; i < 5; ++i) {
            a[i] = ang(rng);
            b[i] = ang(rng);
            c[i] = ang(rng);
        }
        EXPECT_DOUBLE_EQ(heading_discrepancy(a, b), heading_discrepancy(b, a));
        EXPECT_LE(heading_discrepancy(a, c),
                  heading_discrepancy(a, b) + heading_discrepancy(b, c) + 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Reference fit
// ---------------------------------------------------------------------------

TEST(FitReference, ZeroVarianceHitsTheFloor) {
    const std::vector<double> window = {10.0, 10.0, 10.0};
    const auto stats = fit_reference(window, 1.0);
    ASSERT_TRUE(stats.has_value());
    EXPECT_DOUBLE_EQ(stats->mu, 10.0);
    EXPECT_DOUBLE_EQ(stats->sigma2, 1.0);
}

TEST(FitReference, TwoPointBiasedVariance) {
    const std::vector<double> window = {0.0, 10.0};
    const auto stats = fit_reference(window, 1.0);
    ASSERT_TRUE(stats.has_value());
    EXPECT_DOUBLE_EQ(stats->mu, 5.0);
    EXPECT_DOUBLE_EQ(stats->sigma2, 25.0); // divisor n, not n-1
}

TEST(FitReference, TooShortIsNotReady) {
    EXPECT_FALSE(fit_reference(std::vector<double>{4.0}).has_value());
    EXPECT_FALSE(fit_reference(std::vector<double>{}).has_value());
}

TEST(FitReference, RecoversGaussianParameters) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist(3.0, 2.0);
    std::vector<double> draws(10000);
    for (double& d : draws) d = dist(rng);
    const auto stats = fit_reference(draws, 1e-6);
    ASSERT_TRUE(stats.has_value());
    EXPECT_NEAR(stats->mu, 3.0, 0.1);
    EXPECT_NEAR(stats->sigma2, 4.0, 0.2);
}

// ---------------------------------------------------------------------------
// Anomaly weight
// ---------------------------------------------------------------------------

TEST(AnomalyWeight, UnityAtTheMean) {
    const AnomalyStats stats{5.0, 4.0, 10};
    EXPECT_DOUBLE_EQ(anomaly_weight(5.0, stats), 1.0);
}

TEST(AnomalyWeight, OneSigmaGivesInverseE) {
    const AnomalyStats stats{5.0, 4.0, 10};
    EXPECT_NEAR(anomaly_weight(7.0, stats), std::exp(-1.0), 1e-12);
}

TEST(AnomalyWeight, FarTailClamps) {
    const AnomalyStats stats{5.0, 4.0, 10};
    EXPECT_DOUBLE_EQ(anomaly_weight(25.0, stats, 1e-3), 1e-3);
}

TEST(AnomalyWeight, StrictlyDecreasingBeforeTheClamp) {
    const AnomalyStats stats{2.0, 9.0, 10};
    double prev = anomaly_weight(2.0, stats, 1e-12);
    for (double e = 2.5; e < 12.0; e += 0.5) {
        const double eta = anomaly_weight(e, stats, 1e-12);
        EXPECT_LT(eta, prev);
        prev = eta;
    }
}

// ---------------------------------------------------------------------------
// Blending
// ---------------------------------------------------------------------------

TEST(BlendHeading, FullWeightPassesAnalyticExactly) {
    EXPECT_DOUBLE_EQ(blend_heading(1.0, 137.25, -12.0), 137.25);
    EXPECT_DOUBLE_EQ(blend_heading(1.0, -179.5, 179.5), -179.5);
}

TEST(BlendHeading, TinyWeightTracksPrediction) {
    EXPECT_NEAR(blend_heading(1e-3, 120.0, -40.0), -40.0, 0.2);
}

TEST(BlendHeading, MidpointOfNearbyHeadings) {
    EXPECT_NEAR(blend_heading(0.5, 10.0, 20.0), 15.0, 1e-9);
}

TEST(BlendHeading, CrossesTheSeamOnTheShortArc) {
    const double blended = blend_heading(0.5, 179.0, -179.0);
    EXPECT_NEAR(std::abs(blended), 180.0, 1e-9);
}

TEST(BlendHeading, StaysOnShorterArc) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ang(-180.0, 180.0);
    std::uniform_real_distribution<double> w(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double a = ang(rng), p = ang(rng), eta = w(rng);
        const double arc = std::abs(wrap_diff_deg(a, p));
        if (arc > 179.0) continue; // antipodal arcs are ambiguous
        const double blended = blend_heading(eta, a, p);
        EXPECT_LE(std::abs(wrap_diff_deg(blended, a)), arc + 1e-9);
        EXPECT_LE(std::abs(wrap_diff_deg(blended, p)), arc + 1e-9);
    }
}
