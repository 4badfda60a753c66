/*
 * clmfit: constrained local model landmark fitting with convolutional experts
 *
 * Copyright 2026 The clmfit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "doctest.h"
#include "support.hpp"

#include "clmfit/cen.hpp"

#include <thread>

using namespace clmfit;
using namespace clmfit::testing;

TEST_CASE("response_map equals the sliding-window oracle")
{
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> size(11, 25);
    std::uniform_int_distribution<int> ch(1, 9);
    for (int trial = 0; trial < 25; ++trial) {
        const CenModel m = random_cen({ch(rng), ch(rng), ch(rng)}, rng);
        const Eigen::MatrixXd roi = random_roi(size(rng), rng);
        const ResponseMap map = response_map(roi, m);
        const Eigen::MatrixXd want = naive_response(roi, m);
        REQUIRE(map.rows() == roi.rows() - 10);
        REQUIRE(map.cols() == roi.cols() - 10);
        CHECK((map.values - want).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("intensity-affine changes leave the map unchanged")
{
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> a(0.05, 20.0);
    std::uniform_real_distribution<double> b(-500.0, 500.0);
    for (int trial = 0; trial < 10; ++trial) {
        const CenModel m = random_cen({6, 4, 3}, rng);
        const Eigen::MatrixXd roi = random_roi(17, rng);
        const Eigen::MatrixXd moved = (a(rng) * roi).array() + b(rng);
        CHECK((response_map(moved, m).values - response_map(roi, m).values).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("outputs are probabilities")
{
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const CenModel m = random_cen({5, 5, 5}, rng);
        const ResponseMap map = response_map(random_roi(15, rng), m);
        CHECK(map.values.minCoeff() > 0.0);
        CHECK(map.values.maxCoeff() < 1.0);
    }
}

TEST_CASE("flat windows normalize to zero")
{
    const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(13, 13, 77.0);
    const Eigen::MatrixXd w = normalized_windows(flat);
    CHECK(w.cwiseAbs().maxCoeff() == 0.0);
    std::mt19937_64 rng(24);
    const CenModel m = random_cen({4, 3, 2}, rng);
    CHECK((response_map(flat, m).values - naive_response(flat, m)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("raising one expert never lowers the output")
{
    std::mt19937_64 rng(25);
    const CenModel m = random_cen({4, 4, 6}, rng);
    const Eigen::MatrixXd roi = random_roi(11, rng);
    const double base = response_map(roi, m).values(0, 0);
    for (int e = 0; e < 6; ++e) {
        CenModel up = m;
        up.expert_bias(e) += 3.0;
        CHECK(response_map(roi, up).values(0, 0) >= base);
    }
}

TEST_CASE("mirrored flips the appearance left-right")
{
    std::mt19937_64 rng(26);
    const CenModel m = random_cen({5, 3, 2}, rng);
    const Eigen::MatrixXd roi = random_roi(15, rng);
    const Eigen::MatrixXd flipped = roi.rowwise().reverse();
    const Eigen::MatrixXd want = response_map(roi, m).values.rowwise().reverse();
    CHECK((response_map(flipped, mirrored(m)).values - want).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(mirrored(mirrored(m)) == m);
}

TEST_CASE("models are shareable across threads")
{
    std::mt19937_64 rng(27);
    const CenModel m = random_cen({8, 6, 4}, rng);
    const Eigen::MatrixXd roi = random_roi(21, rng);
    const Eigen::MatrixXd want = response_map(roi, m).values;
    std::vector<Eigen::MatrixXd> got(4);
    std::vector<std::thread> pool;
    for (int t = 0; t < 4; ++t) {
        pool.emplace_back([&, t] { got[t] = response_map(roi, m).values; });
    }
    for (auto& th : pool) {
        th.join();
    }
    for (const auto& g : got) {
        CHECK(g == want);
    }
}

TEST_CASE("validate names the offending field")
{
    std::mt19937_64 rng(28);
    CenModel m = random_cen({3, 2, 2}, rng);
    CHECK_NOTHROW(validate(m));
    m.combiner_weights(1) = -0.5;
    try {
        validate(m);
        FAIL("negative combiner weight accepted");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("combiner.w[1]") != std::string::npos);
    }
    CHECK_NOTHROW(validate(m, true));
    m.hidden_weights(0, 1) = std::nan("");
    CHECK_THROWS_AS(validate(m, true), Error);
    CHECK_THROWS_AS(normalized_windows(Eigen::MatrixXd::Zero(10, 10)), Error);
    CHECK_THROWS_AS(normalized_windows(Eigen::MatrixXd::Zero(12, 13)), Error);
}
