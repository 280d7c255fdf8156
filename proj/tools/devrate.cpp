#include <devrate/cli.hpp>

int
main(int argc, char** argv)
{
  return devrate::cli::run(argc, argv);
}
