#include "cli.hpp"

int main(int argc, char** argv)
{
    return docsynth::cli::run(argc, argv);
}
