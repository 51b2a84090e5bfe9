#pragma once

// Command-line front end. Subcommands:
//   gen-synth --config F [--seed N]
//   pretrain  --config F
//   train     --config F --from CHECKPOINT
//   baseline  --config F
//   eval      --checkpoint P --corpus Q [--manifest M]
//   gradcheck [--full]
//   attn-dump --checkpoint P --corpus Q --out R
// Every subcommand accepts --seed and repeated --set key=value overrides.

#include <iosfwd>
#include <string>
#include <vector>

namespace mgan {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int missing_file = 2;
inline constexpr int config_error = 3;
inline constexpr int gradcheck_failed = 4;
}  // namespace exit_code

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mgan
