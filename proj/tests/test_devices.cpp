#include "vreg/devices.hpp"

#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "vreg/errors.hpp"

using namespace vreg;

namespace {

double pv_objective(const PvSpec& spec, double p, double q, double alpha, double beta) {
    return spec.cost(p, q) - alpha * p - beta * q;
}

/// Brute-force oracle: best objective over a dense sweep of the feasible
/// set (production box cut by the capacity disk).
double pv_grid_minimum(const PvSpec& spec, double alpha, double beta, int steps = 400) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= steps; ++i) {
        const double p = spec.p_av_pu * i / steps;
        for (int j = 0; j <= steps; ++j) {
            const double q = -spec.eta_pu + 2.0 * spec.eta_pu * j / steps;
            if (p * p + q * q > spec.eta_pu * spec.eta_pu) continue;
            best = std::min(best, pv_objective(spec, p, q, alpha, beta));
        }
    }
    return best;
}

}  // namespace

TEST_CASE("inverter best response beats a dense grid sweep") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> signal(-2.0, 2.0);
    for (int trial = 0; trial < 40; ++trial) {
        const PvSpec spec = testing::random_pv(rng);
        const double alpha = signal(rng) * spec.cost_p;
        const double beta = signal(rng) * spec.cost_q;
        const PvSetpoint z = pv_best_response(spec, alpha, beta);

        CHECK(spec.feasible(z.p_pu, z.q_pu, 1e-9));
        const double grid_best = pv_grid_minimum(spec, alpha, beta);
        CHECK(pv_objective(spec, z.p_pu, z.q_pu, alpha, beta) <= grid_best + 1e-9);
    }
}

TEST_CASE("inverter response has the expected closed forms at the corners") {
    PvSpec spec{0.8, 1.0, 2.0, 1.0};

    SUBCASE("no incentive: full available power, no reactive output") {
        const PvSetpoint z = pv_best_response(spec, 0.0, 0.0);
        CHECK(z.p_pu == doctest::Approx(0.8));
        CHECK(z.q_pu == doctest::Approx(0.0));
    }
    SUBCASE("interior stationarity under mild incentives") {
        const PvSetpoint z = pv_best_response(spec, -0.4, 0.2);
        CHECK(z.p_pu == doctest::Approx(0.8 - 0.4 / (2.0 * 2.0)));
        CHECK(z.q_pu == doctest::Approx(0.2 / 2.0));
    }
    SUBCASE("curtailment price never drives production negative") {
        const PvSetpoint z = pv_best_response(spec, -100.0, 0.0);
        CHECK(z.p_pu == doctest::Approx(0.0));
    }
    SUBCASE("reactive incentive saturates on the capacity circle") {
        const PvSetpoint z = pv_best_response(spec, 0.0, 50.0);
        CHECK(z.p_pu * z.p_pu + z.q_pu * z.q_pu == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(z.q_pu > 0.9);
    }
    SUBCASE("production incentive is monotone") {
        double last = -1.0;
        for (double alpha = -3.0; alpha <= 3.0; alpha += 0.25) {
            const PvSetpoint z = pv_best_response(spec, alpha, 0.3);
            CHECK(z.p_pu >= last - 1e-12);
            last = z.p_pu;
        }
    }
    SUBCASE("bad parameters are rejected") {
        PvSpec bad = spec;
        bad.cost_p = 0.0;
        CHECK_THROWS_AS(pv_best_response(bad, 0.0, 0.0), ConfigError);
        bad = spec;
        bad.eta_pu = -1.0;
        CHECK_THROWS_AS(pv_best_response(bad, 0.0, 0.0), ConfigError);
    }
}

TEST_CASE("projection onto the inverter set is exact and idempotent") {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> point(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const PvSpec spec = testing::random_pv(rng);
        const double p0 = point(rng), q0 = point(rng);
        const PvSetpoint z = project_to_pv_set(spec, p0, q0);
        CHECK(spec.feasible(z.p_pu, z.q_pu, 1e-9));

        const PvSetpoint again = project_to_pv_set(spec, z.p_pu, z.q_pu);
        CHECK(again.p_pu == doctest::Approx(z.p_pu).epsilon(1e-9));
        CHECK(again.q_pu == doctest::Approx(z.q_pu).epsilon(1e-9));

        // No feasible grid point may sit strictly closer to the query.
        const double dist = std::hypot(z.p_pu - p0, z.q_pu - q0);
        for (int i = 0; i <= 60; ++i) {
            const double p = spec.p_av_pu * i / 60;
            for (int j = 0; j <= 60; ++j) {
                const double q = -spec.eta_pu + 2.0 * spec.eta_pu * j / 60;
                if (!spec.feasible(p, q, 0.0)) continue;
                CHECK(std::hypot(p - p0, q - q0) >= dist - 1e-6);
            }
        }
    }
}

TEST_CASE("gradient-descent response agrees with the analytic quadratic path") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> signal(-1.5, 1.5);
    for (int trial = 0; trial < 10; ++trial) {
        const PvSpec spec = testing::random_pv(rng);
        const double alpha = signal(rng), beta = signal(rng);
        const auto quadratic = [&](double p, double q) {
            return std::pair<double, double>{-2.0 * spec.cost_p * (spec.p_av_pu - p),
                                             2.0 * spec.cost_q * q};
        };
        const PvSetpoint exact = pv_best_response(spec, alpha, beta);
        const PvSetpoint iterated =
            pv_best_response_projected(spec, quadratic, alpha, beta, 1e-10, 200000);
        CHECK(pv_objective(spec, iterated.p_pu, iterated.q_pu, alpha, beta) ==
              doctest::Approx(pv_objective(spec, exact.p_pu, exact.q_pu, alpha, beta))
                  .epsilon(1e-6));
    }
}

TEST_CASE("thermal hull intersects the comfort band with the rate span") {
    TclSpec tcl;
    tcl.t_in_f = 76.5;
    tcl.t_out_f = 92.0;  // drift temperature 78.05
    tcl.theta1 = 0.1;
    tcl.theta2_f_per_w = -0.001;
    tcl.t_min_f = 70.0;
    tcl.t_max_f = 80.0;
    tcl.rates = uniform_rate_grid(4000.0, 2);  // {0, 4000}

    SUBCASE("comfort band wider than the span: hull is the span") {
        const ConsumptionInterval hull = tcl_hull(tcl);
        CHECK(hull.lo_w == doctest::Approx(0.0));
        CHECK(hull.hi_w == doctest::Approx(4000.0));
    }
    SUBCASE("hot start forces a minimum cooling rate") {
        TclSpec hot = tcl;
        hot.t_in_f = 82.0;  // drift 83.0: at least 3000 W to reach 80
        const ConsumptionInterval hull = tcl_hull(hot);
        CHECK(hull.lo_w == doctest::Approx(3000.0));
        CHECK(hull.hi_w == doctest::Approx(4000.0));
        CHECK(hot.temp_after(hull.lo_w) == doctest::Approx(hot.t_max_f));
    }
    SUBCASE("unreachable comfort pins to the closest rate") {
        TclSpec impossible = tcl;
        impossible.t_in_f = 90.0;  // drift 90.2, needs 10200 W
        try {
            tcl_hull(impossible);
            FAIL("expected the hull to be infeasible");
        } catch (const HullInfeasibleError& e) {
            CHECK(e.nearest_rate_w == doctest::Approx(4000.0));
        }
    }
    SUBCASE("comfort band that excludes all rates from below") {
        TclSpec cold = tcl;
        cold.t_in_f = 68.0;  // drift 70.4: anything above 400 W undercools
        cold.rates = uniform_rate_grid(4000.0, 3);  // {0,4000,8000}
        const ConsumptionInterval hull = tcl_hull(cold);
        CHECK(hull.lo_w == doctest::Approx(0.0));
        CHECK(hull.hi_w == doctest::Approx(400.0));
    }
}

TEST_CASE("relaxed thermal response minimizes discomfort plus energy price") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> price(-0.1, 0.1);
    for (int trial = 0; trial < 50; ++trial) {
        const TclSpec tcl = testing::random_tcl(rng);
        const double alpha_w = price(rng);
        const double c = tcl_relaxed_best_response(tcl, alpha_w);
        const ConsumptionInterval hull = tcl_hull(tcl);
        CHECK(c >= hull.lo_w - 1e-9);
        CHECK(c <= hull.hi_w + 1e-9);

        // 1-D scan oracle over the hull.
        const auto objective = [&](double x) { return tcl.cost(x) + alpha_w * x; };
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i <= 4000; ++i)
            best = std::min(best, objective(hull.lo_w + (hull.hi_w - hull.lo_w) * i / 4000.0));
        CHECK(objective(c) <= best + 1e-9);
    }
}

TEST_CASE("zero price relaxes the thermal load to its comfort optimum") {
    TclSpec tcl;
    tcl.t_in_f = 76.5;
    tcl.t_out_f = 92.0;
    tcl.rates = uniform_rate_grid(4000.0, 2);
    // drift 78.05, optimum at (75 - 78.05)/(-0.001) = 3050 W.
    CHECK(tcl_relaxed_best_response(tcl, 0.0) == doctest::Approx(3050.0));
}

TEST_CASE("customer response aggregates devices and reports injections") {
    CustomerSpec customer;
    customer.node = 3;
    customer.pvs.push_back(PvSpec{0.5, 0.6, 2.0, 1.0});
    customer.pvs.push_back(PvSpec{0.2, 0.3, 1.0, 0.5});
    TclSpec tcl;
    tcl.t_in_f = 76.5;
    tcl.t_out_f = 92.0;
    tcl.rates = uniform_rate_grid(4000.0, 2);
    customer.tcls.push_back(tcl);

    const double base_kva = 1000.0;
    const CustomerResponse response = customer_best_response(customer, 0.0, 0.0, base_kva);
    REQUIRE(response.decision.fast.size() == 2);
    REQUIRE(response.decision.slow.size() == 1);
    CHECK_FALSE(response.hull_infeasible);
    CHECK(response.decision.fast[0].p_pu == doctest::Approx(0.5));
    CHECK(response.decision.fast[1].p_pu == doctest::Approx(0.2));
    CHECK(response.decision.slow[0].relaxed_w == doctest::Approx(3050.0));
    // Realized rate defaults to the relaxed value until a sampler replaces it.
    CHECK(response.decision.slow[0].realized_w == doctest::Approx(3050.0));

    const double expected_p = 0.5 + 0.2 - 3050.0 / 1000.0 / base_kva;
    CHECK(response.decision.injection_p_pu(base_kva) == doctest::Approx(expected_p));
    CHECK(response.decision.injection_q_pu() == doctest::Approx(0.0));
    CHECK(response.decision.relaxed_injection_p_pu(base_kva) == doctest::Approx(expected_p));

    // Objective is the sum of the device terms at the chosen setpoints.
    const double expected_objective =
        customer.pvs[0].cost(0.5, 0.0) + customer.pvs[1].cost(0.2, 0.0) + tcl.cost(3050.0);
    CHECK(response.objective == doctest::Approx(expected_objective));
}

TEST_CASE("infeasible thermal hulls pin the device and flag the response") {
    CustomerSpec customer;
    customer.node = 1;
    TclSpec impossible;
    impossible.t_in_f = 90.0;
    impossible.t_out_f = 95.0;
    impossible.rates = uniform_rate_grid(4000.0, 2);
    customer.tcls.push_back(impossible);

    const CustomerResponse response = customer_best_response(customer, 0.0, 0.0, 1000.0);
    CHECK(response.hull_infeasible);
    REQUIRE(response.decision.slow.size() == 1);
    CHECK(response.decision.slow[0].pinned);
    CHECK(response.decision.slow[0].realized_w == doctest::Approx(4000.0));
    CHECK(response.decision.slow[0].relaxed_w == doctest::Approx(4000.0));
}

TEST_CASE("fast re-solve keeps the held slow decisions") {
    CustomerSpec customer;
    customer.node = 2;
    customer.pvs.push_back(PvSpec{0.5, 0.6, 2.0, 1.0});
    TclSpec tcl;
    tcl.t_in_f = 76.5;
    tcl.t_out_f = 92.0;
    tcl.rates = uniform_rate_grid(4000.0, 2);
    customer.tcls.push_back(tcl);

    CustomerDecision held = customer_best_response(customer, 0.0, 0.0, 1000.0).decision;
    held.slow[0].realized_w = 4000.0;  // as if the sampler drew the upper rate

    const CustomerResponse fast = fast_conditional_best_response(customer, -0.8, 0.1, held, 1000.0);
    CHECK(fast.decision.slow[0].realized_w == doctest::Approx(4000.0));
    CHECK(fast.decision.fast[0].p_pu == doctest::Approx(0.5 - 0.8 / 4.0));

    CustomerDecision wrong = held;
    wrong.slow.clear();
    CHECK_THROWS_AS(fast_conditional_best_response(customer, 0.0, 0.0, wrong, 1000.0),
                    ShapeError);
}

TEST_CASE("customer cost evaluates realized and relaxed decisions") {
    CustomerSpec customer;
    customer.node = 1;
    customer.pvs.push_back(PvSpec{0.5, 0.6, 2.0, 1.0});
    TclSpec tcl;
    tcl.t_in_f = 76.5;
    tcl.t_out_f = 92.0;
    tcl.rates = uniform_rate_grid(4000.0, 2);
    customer.tcls.push_back(tcl);

    CustomerDecision decision = customer_best_response(customer, 0.0, 0.0, 1000.0).decision;
    decision.slow[0].realized_w = 4000.0;
    const double realized = customer_cost(customer, decision);
    const double relaxed = customer_cost_relaxed(customer, decision);
    CHECK(realized == doctest::Approx(customer.pvs[0].cost(0.5, 0.0) + tcl.cost(4000.0)));
    CHECK(relaxed == doctest::Approx(customer.pvs[0].cost(0.5, 0.0) + tcl.cost(3050.0)));
}
