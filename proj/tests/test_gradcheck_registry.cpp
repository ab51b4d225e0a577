#include <gtest/gtest.h>

#include <set>

#include "darkforge/gradcheck_registry.hpp"

using namespace darkforge;

TEST(GradCheckRegistry, CoversEveryBlock) {
  std::set<std::string> names;
  for (const auto& c : gradcheck_registry()) EXPECT_TRUE(names.insert(c.name).second) << c.name;
  for (const char* required : {"conv2d", "transposed_conv2", "maxpool2", "leaky_relu", "sigmoid", "depth_to_space",
                               "channel_attention", "l1_loss", "l2_loss", "dbf_toy", "dble_toy"})
    EXPECT_TRUE(names.count(required)) << required;
}

TEST(GradCheckRegistry, AllCasesPass) {
  const auto results = run_gradchecks(gradcheck_registry());
  ASSERT_EQ(results.size(), gradcheck_registry().size());
  double total = 0;
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, kGradCheckTolerance) << r.name;
    total += r.seconds;
  }
  EXPECT_LT(total, 60.0);
}

TEST(GradCheckRegistry, ToleranceIsApplied) {
  const std::vector<GradCheckCase> cases = {{"fixed", [] { return 1e-3; }}};
  EXPECT_FALSE(run_gradchecks(cases)[0].passed);
  EXPECT_TRUE(run_gradchecks(cases, 1e-2)[0].passed);
}
