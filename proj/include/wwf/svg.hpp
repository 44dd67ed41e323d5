#pragma once

// Static SVG charts: forecast bands per county and variable-importance bars.

#include <string>
#include <vector>

#include "wwf/evaluation.hpp"

namespace wwf::svg {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
};

// Actuals as a line, each forecast block as a median line inside its
// lower/upper quantile band.
std::string forecast_chart(const std::string& title, const CountyPanel& panel, const BacktestResult& result,
                           const std::string& provenance);

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values, const std::string& provenance);

}  // namespace wwf::svg
