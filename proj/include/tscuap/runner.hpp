#pragma once

// Command-line front end: subcommands craft | eval | transfer | ablate |
// sweep | render | report.
//
// Configuration is layered: built-in defaults, then a JSON config file
// (--config), then explicit flags. Every run writes into a fresh directory
// under --runs-dir holding config.json (the resolved configuration, usable
// as --config to reproduce the run), status.json and the outputs.

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

#include "tscuap/core.hpp"

namespace tscuap::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,  // bad flags, unknown subcommand, invalid configuration
    kRegistry = 3,
    kIo = 4,     // I/O and file format errors
    kNumeric = 5,
    kInterrupted = 130,
};

/// Invalid configuration; carries every violation found.
class ConfigError : public ValidationError {
public:
    explicit ConfigError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const { return violations_; }

private:
    std::vector<std::string> violations_;
};

std::vector<std::string> subcommands();

/// Runs one invocation. args excludes the program name. Errors are written
/// to `err` as a single JSON object {"error": {...}}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

/// Set by SIGINT/SIGTERM once install_signal_handlers() has run.
std::atomic<bool>& interrupt_flag();
void install_signal_handlers();

}  // namespace tscuap::cli
