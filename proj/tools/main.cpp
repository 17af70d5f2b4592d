#include "cli.hpp"

int main(int argc, char** argv) { return latent_steer::run_cli({argv + 1, argv + argc}); }
