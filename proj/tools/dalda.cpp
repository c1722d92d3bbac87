#include "dalda/cli.hpp"

int main(int argc, char** argv) { return dalda::cli::run_main(argc, argv); }
