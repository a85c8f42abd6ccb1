#pragma once

#include <string_view>

namespace qte::cli {

/// Published simulation results for the three spline-mixture variants.
struct ReferenceValue {
  int design;
  int J;
  std::string_view method;  // score type: double, ps-only, x-only
  std::string_view metric;  // "rmse" (at tau) or "aab" (sd given)
  double tau;               // 0 for aab
  double value;
  double sd;                // 0 when not reported
};

// clang-format off
// Designs 2 to 4 have no confounder count; their rows carry J = 0.
inline constexpr ReferenceValue kReference[] = {
  {1, 0, "double",  "rmse", 0.10, 0.10, 0}, {1, 0, "ps-only", "rmse", 0.10, 0.09, 0}, {1, 0, "x-only", "rmse", 0.10, 0.11, 0},
  {1, 0, "double",  "rmse", 0.25, 0.16, 0}, {1, 0, "ps-only", "rmse", 0.25, 0.16, 0}, {1, 0, "x-only", "rmse", 0.25, 0.16, 0},
  {1, 0, "double",  "rmse", 0.50, 0.21, 0}, {1, 0, "ps-only", "rmse", 0.50, 0.22, 0}, {1, 0, "x-only", "rmse", 0.50, 0.21, 0},
  {1, 0, "double",  "rmse", 0.75, 0.12, 0}, {1, 0, "ps-only", "rmse", 0.75, 0.15, 0}, {1, 0, "x-only", "rmse", 0.75, 0.12, 0},
  {1, 0, "double",  "rmse", 0.90, 0.11, 0}, {1, 0, "ps-only", "rmse", 0.90, 0.13, 0}, {1, 0, "x-only", "rmse", 0.90, 0.13, 0},
  {1, 0, "double",  "aab",  0.00, 0.12, 0.06}, {1, 0, "ps-only", "aab", 0.00, 0.13, 0.07}, {1, 0, "x-only", "aab", 0.00, 0.12, 0.06},

  {1, 2, "double",  "rmse", 0.10, 0.15, 0}, {1, 2, "ps-only", "rmse", 0.10, 0.16, 0}, {1, 2, "x-only", "rmse", 0.10, 0.17, 0},
  {1, 2, "double",  "rmse", 0.25, 0.21, 0}, {1, 2, "ps-only", "rmse", 0.25, 0.24, 0}, {1, 2, "x-only", "rmse", 0.25, 0.21, 0},
  {1, 2, "double",  "rmse", 0.50, 0.24, 0}, {1, 2, "ps-only", "rmse", 0.50, 0.30, 0}, {1, 2, "x-only", "rmse", 0.50, 0.30, 0},
  {1, 2, "double",  "rmse", 0.75, 0.17, 0}, {1, 2, "ps-only", "rmse", 0.75, 0.20, 0}, {1, 2, "x-only", "rmse", 0.75, 0.23, 0},
  {1, 2, "double",  "rmse", 0.90, 0.19, 0}, {1, 2, "ps-only", "rmse", 0.90, 0.22, 0}, {1, 2, "x-only", "rmse", 0.90, 0.21, 0},
  {1, 2, "double",  "aab",  0.00, 0.17, 0.06}, {1, 2, "ps-only", "aab", 0.00, 0.19, 0.10}, {1, 2, "x-only", "aab", 0.00, 0.19, 0.08},

  {2, 0, "double",  "rmse", 0.10, 0.14, 0}, {2, 0, "ps-only", "rmse", 0.10, 0.13, 0}, {2, 0, "x-only", "rmse", 0.10, 0.15, 0},
  {2, 0, "double",  "rmse", 0.25, 0.16, 0}, {2, 0, "ps-only", "rmse", 0.25, 0.16, 0}, {2, 0, "x-only", "rmse", 0.25, 0.19, 0},
  {2, 0, "double",  "rmse", 0.50, 0.20, 0}, {2, 0, "ps-only", "rmse", 0.50, 0.23, 0}, {2, 0, "x-only", "rmse", 0.50, 0.23, 0},
  {2, 0, "double",  "rmse", 0.75, 0.21, 0}, {2, 0, "ps-only", "rmse", 0.75, 0.26, 0}, {2, 0, "x-only", "rmse", 0.75, 0.24, 0},
  {2, 0, "double",  "rmse", 0.90, 0.18, 0}, {2, 0, "ps-only", "rmse", 0.90, 0.20, 0}, {2, 0, "x-only", "rmse", 0.90, 0.19, 0},
  {2, 0, "double",  "aab",  0.00, 0.15, 0.07}, {2, 0, "ps-only", "aab", 0.00, 0.16, 0.09}, {2, 0, "x-only", "aab", 0.00, 0.17, 0.09},

  {3, 0, "double",  "rmse", 0.10, 0.08, 0}, {3, 0, "ps-only", "rmse", 0.10, 0.08, 0}, {3, 0, "x-only", "rmse", 0.10, 0.08, 0},
  {3, 0, "double",  "rmse", 0.25, 0.09, 0}, {3, 0, "ps-only", "rmse", 0.25, 0.12, 0}, {3, 0, "x-only", "rmse", 0.25, 0.09, 0},
  {3, 0, "double",  "rmse", 0.50, 0.12, 0}, {3, 0, "ps-only", "rmse", 0.50, 0.17, 0}, {3, 0, "x-only", "rmse", 0.50, 0.12, 0},
  {3, 0, "double",  "rmse", 0.75, 0.16, 0}, {3, 0, "ps-only", "rmse", 0.75, 0.19, 0}, {3, 0, "x-only", "rmse", 0.75, 0.17, 0},
  {3, 0, "double",  "rmse", 0.90, 0.13, 0}, {3, 0, "ps-only", "rmse", 0.90, 0.14, 0}, {3, 0, "x-only", "rmse", 0.90, 0.13, 0},
  {3, 0, "double",  "aab",  0.00, 0.09, 0.04}, {3, 0, "ps-only", "aab", 0.00, 0.12, 0.05}, {3, 0, "x-only", "aab", 0.00, 0.10, 0.04},

  {4, 0, "double",  "rmse", 0.10, 0.01, 0}, {4, 0, "ps-only", "rmse", 0.10, 0.01, 0}, {4, 0, "x-only", "rmse", 0.10, 0.01, 0},
  {4, 0, "double",  "rmse", 0.25, 0.02, 0}, {4, 0, "ps-only", "rmse", 0.25, 0.02, 0}, {4, 0, "x-only", "rmse", 0.25, 0.02, 0},
  {4, 0, "double",  "rmse", 0.50, 0.03, 0}, {4, 0, "ps-only", "rmse", 0.50, 0.03, 0}, {4, 0, "x-only", "rmse", 0.50, 0.04, 0},
  {4, 0, "double",  "rmse", 0.75, 0.06, 0}, {4, 0, "ps-only", "rmse", 0.75, 0.06, 0}, {4, 0, "x-only", "rmse", 0.75, 0.06, 0},
  {4, 0, "double",  "rmse", 0.90, 0.12, 0}, {4, 0, "ps-only", "rmse", 0.90, 0.11, 0}, {4, 0, "x-only", "rmse", 0.90, 0.12, 0},
  {4, 0, "double",  "aab",  0.00, 0.04, 0.02}, {4, 0, "ps-only", "aab", 0.00, 0.04, 0.02}, {4, 0, "x-only", "aab", 0.00, 0.04, 0.02},
};
// clang-format on

}  // namespace qte::cli
