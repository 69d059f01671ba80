#include "cli.hpp"

int main(int argc, char** argv) { return spkemb::cli::run_cli(argc, argv); }
