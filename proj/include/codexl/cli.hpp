#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "codexl/models.hpp"

namespace codexl {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Parses argv (argv[0] is the program name) and runs one subcommand:
// ingest, tokenize, train, eval, bench or sample.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

// Feeds `prompt` through the model, then draws `length` further tokens from
// softmax(logits / temperature), threading memory throughout. Temperature 0
// takes the argmax (lowest id on ties). Returns prompt + generated ids.
std::vector<std::int32_t> generate(const LanguageModel<float>& model, std::span<const std::int32_t> prompt,
                                   std::size_t length, double temperature, std::uint64_t seed);

}  // namespace codexl
