#include <nudge/cli.hpp>

int main(int argc, char** argv) { return nudge::cli::run(argc, argv); }
