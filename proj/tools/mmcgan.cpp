// Command-line entry point. Subcommands are filled in as the pipeline
// stages land; see README for usage.
#include <cstdio>

int main() {
  std::puts("mmcgan: no subcommand given (CLI under construction)");
  return 2;
}
