#pragma once

// Independent-oracle checks for every computed example value, reported as a
// table that names how each expected value was obtained.

#include <iosfwd>
#include <string>
#include <vector>

namespace spatialrl::harness {

struct OracleResult {
  std::string module;
  std::string check;
  std::string method;    // how the expected value is obtained
  std::string expected;
  std::string observed;
  bool pass = false;
};

std::vector<OracleResult> run_oracles();

// Fixed-width table, one row per check, followed by a pass count line.
void print_oracle_table(std::ostream& os, const std::vector<OracleResult>& rows);

}  // namespace spatialrl::harness
