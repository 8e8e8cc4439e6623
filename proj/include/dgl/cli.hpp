#pragma once

namespace dgl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// dglab entry point. Results go to files; stdout gets the output directory.
int run_cli(int argc, const char* const* argv);

}  // namespace dgl
