#include "rpgssm/cli.hpp"

int main(int argc, char** argv) { return rpgssm::cli::run(argc, argv); }
