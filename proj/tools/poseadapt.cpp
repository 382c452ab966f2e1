#include "poseadapt/cli.hpp"

int main(int argc, char** argv) { return poseadapt::cli::run_cli(argc, argv); }
