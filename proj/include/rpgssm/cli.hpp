#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rpgssm/data.hpp"

namespace rpgssm::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kIo = 3,
    kNumeric = 4,
    kShape = 5,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// <prefix>.obs.rpgt, <prefix>.truth.rpgt, <prefix>.meta.json
void save_dataset(const std::string& prefix, const data::Dataset& ds);
data::Dataset load_dataset(const std::string& prefix);

}  // namespace rpgssm::cli
